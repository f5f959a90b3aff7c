"""Training objective: expected cross-entropy, fairness penalty, view
consistency, and their class-balanced composition.

Every loss returns its value together with the gradient with respect to
evidence; the network backward pass takes it from there. Since
alpha = e + beta with a constant prior, d/de and d/dalpha coincide.

Batch objective used for training, for a minibatch of B samples::

    J = mean_n w_{y_n} [ace(fused_n) + sum_v ace(view_n^v)]
        + lambda * mean_n(w_{y_n}) * [FD(fused) + sum_v FD(view^v)]
        + beta_con * mean_n con_n

which is the per-sample objective averaged over the batch, with the
fairness degree FD computed once per batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DimensionError
from .numerics import digamma, trigamma
from .sl_core import (
    DirichletParams,
    class_mean_evidence,
    fuse_evidence,
    variance,
    variance_grad,
)


def _check_labels(labels: np.ndarray, k: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ArgumentError(f"labels must lie in [0, {k})")
    return labels.astype(np.int64)


# -- expected cross-entropy -------------------------------------------------


def ace_batch(alpha: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """psi(S) - psi(alpha_y) per row and its gradient w.r.t. alpha (= w.r.t. e)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    b, k = alpha.shape
    labels = _check_labels(labels, k)
    s = alpha.sum(axis=1)
    rows = np.arange(b)
    a_y = alpha[rows, labels]
    values = digamma(s) - digamma(a_y)
    grad = np.repeat(trigamma(s)[:, None], k, axis=1)
    grad[rows, labels] -= trigamma(a_y)
    return values, grad


def ace_loss(d: DirichletParams, label: int) -> tuple[float, np.ndarray]:
    values, grad = ace_batch(d.alpha[None, :], np.array([label]))
    return float(values[0]), grad[0]


# -- fairness degree ----------------------------------------------------------


def fairness_term(evidence: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch fairness degree over true-class evidence, and its gradient.

    Only e_{n, y_n} enters; class k's mean is taken over the B_k batch rows
    labelled k, and classes absent from the batch are skipped. With m
    present classes the gradient on e_{n, y_n} is 2 (mean_y - grand) / (m B_y).
    """
    evidence = np.asarray(evidence, dtype=np.float64)
    if evidence.ndim != 2 or evidence.shape[0] == 0:
        raise ArgumentError("fairness term needs a non-empty (B, K) batch")
    b, k = evidence.shape
    labels = _check_labels(labels, k)
    means = class_mean_evidence(evidence, labels)
    present = ~np.isnan(means)
    m = int(present.sum())
    grand = means[present].mean()
    dev = np.where(present, means - grand, 0.0)
    value = float(np.sum(dev[present] ** 2) / m)
    counts = np.bincount(labels, minlength=k)
    grad = np.zeros_like(evidence)
    rows = np.arange(b)
    grad[rows, labels] = 2.0 * dev[labels] / (m * counts[labels])
    return value, grad


def acc_loss(
    d: DirichletParams,
    label: int,
    batch_evidence: np.ndarray,
    batch_labels: np.ndarray,
    lambda_t: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Single-sample ace plus lambda times the batch fairness degree.

    Returns:
        (value, gradient w.r.t. this sample's evidence, gradient w.r.t. the
        batch evidence array).
    """
    if not 0.0 <= lambda_t <= 1.0:
        raise ArgumentError("lambda_t must lie in [0, 1]")
    ace, g_sample = ace_loss(d, label)
    fd, g_batch = fairness_term(batch_evidence, batch_labels)
    return ace + lambda_t * fd, g_sample, lambda_t * g_batch


# -- consistency ------------------------------------------------------------


def consistency_batch(alpha: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ordered-pair dissonance sum per sample and its gradient.

    Args:
        alpha: shape (V, B, K).

    Returns:
        values of shape (B,) and gradient of shape (V, B, K).
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 3:
        raise DimensionError(f"expected (V, B, K) concentrations, got shape {alpha.shape}")
    var = variance(alpha)
    diff = var[:, None] - var[None, :]  # (V, V, B, K)
    values = np.abs(diff).sum(axis=(0, 1, 3))
    # each unordered pair appears twice; sign(0) = 0 is the subgradient at ties
    d_var = 2.0 * np.sign(diff).sum(axis=1)
    grad = np.einsum("vbk,vbkj->vbj", d_var, variance_grad(alpha))
    return values, grad


def consistency_loss(views: list[DirichletParams]) -> tuple[float, np.ndarray]:
    """Sum over ordered view pairs of their dissonance; gradient shape (V, K)."""
    if not views:
        raise ArgumentError("need at least one view")
    k = views[0].num_classes
    if any(v.num_classes != k for v in views):
        raise DimensionError("views disagree on the number of classes")
    values, grad = consistency_batch(np.stack([v.alpha for v in views])[:, None, :])
    return float(values[0]), grad[:, 0, :]


# -- weights and schedule ---------------------------------------------------


def class_balance_weights(class_counts, normalize: bool = True) -> np.ndarray:
    """Per-class weights 1/N_k, rescaled to unit mean when ``normalize``."""
    counts = np.asarray(class_counts, dtype=np.float64)
    if np.any(counts < 1):
        raise ArgumentError("every class needs at least one training sample")
    w = 1.0 / counts
    return w / w.mean() if normalize else w


def lambda_schedule(epoch: int, total_epochs: int) -> float:
    """Linear ramp from 0 at epoch 0 to 1 at ``total_epochs``."""
    if total_epochs < 1:
        raise ArgumentError("total_epochs must be >= 1")
    return float(min(1.0, max(0.0, epoch / total_epochs)))


# -- full objective -----------------------------------------------------------


@dataclass
class LossBreakdown:
    """Batch-level loss terms.

    ``ace_*`` entries are already class-weighted batch means; ``fairness_*``
    are raw batch fairness degrees; ``weight_mean`` is the batch mean of
    the class weights that multiplies the fairness terms.
    """

    ace_per_view: np.ndarray
    ace_fused: float
    fairness_per_view: np.ndarray
    fairness_fused: float
    consistency: float
    total: float
    lambda_t: float
    beta_con: float
    weight_mean: float

    def recomposed(self) -> float:
        supervised = self.ace_fused + float(np.sum(self.ace_per_view))
        fair = self.fairness_fused + float(np.sum(self.fairness_per_view))
        return supervised + self.lambda_t * self.weight_mean * fair + self.beta_con * self.consistency

    def terms(self) -> dict[str, float]:
        out = {"ace_fused": self.ace_fused, "fd_fused": self.fairness_fused}
        for v, (a, f) in enumerate(zip(self.ace_per_view, self.fairness_per_view)):
            out[f"ace_view{v}"] = float(a)
            out[f"fd_view{v}"] = float(f)
        out["consistency"] = self.consistency
        out["total"] = self.total
        return out


def total_loss(
    view_evidence: np.ndarray,
    labels: np.ndarray,
    prior: np.ndarray,
    class_weights: np.ndarray,
    lambda_t: float,
    beta_con: float,
    exact_fusion_grad: bool = False,
) -> tuple[LossBreakdown, np.ndarray]:
    """Evaluate the batch objective and its gradient w.r.t. every view's evidence.

    Args:
        view_evidence: shape (V, B, K).
        labels: shape (B,).
        prior: Dirichlet prior weights, shape (K,) when shared by all views
            and the fused opinion, or (V + 1, K) with one row per view and
            the last row for the fused opinion.
        class_weights: per-class weights, shape (K,).
        lambda_t: fairness coefficient in [0, 1].
        beta_con: consistency weight.
        exact_fusion_grad: also differentiate through the fusion
            confidences c_v = 1 - u_v; by default they are held constant in
            the backward pass.

    Returns:
        The breakdown and the gradient of shape (V, B, K).
    """
    e = np.asarray(view_evidence, dtype=np.float64)
    if e.ndim != 3:
        raise DimensionError(f"expected (V, B, K) evidence, got shape {e.shape}")
    n_views, b, k = e.shape
    prior = np.asarray(prior, dtype=np.float64)
    if prior.shape == (k,):
        prior = np.broadcast_to(prior, (n_views + 1, k))
    if prior.shape != (n_views + 1, k) or np.asarray(class_weights).shape != (k,):
        raise DimensionError("prior and class weights must have one entry per class")
    view_prior, fused_prior = prior[:n_views], prior[n_views]
    labels = _check_labels(labels, k)
    w_view = view_prior.sum(axis=1)  # (V,)
    w = np.asarray(class_weights, dtype=np.float64)[labels]
    w_mean = float(w.mean())

    u = w_view[:, None] / (w_view[:, None] + e.sum(axis=2))  # (V, B)
    fused = fuse_evidence(e, u)
    conf = 1.0 - u
    conf_total = conf.sum(axis=0)
    degenerate = conf_total <= 0.0
    fuse_w = np.where(degenerate[None], 1.0 / n_views, conf / np.where(degenerate, 1.0, conf_total)[None])

    grad = np.zeros_like(e)

    ace_f, g_ace_f = ace_batch(fused + fused_prior, labels)
    g_fused = (w / b)[:, None] * g_ace_f
    ace_views = np.empty(n_views)
    for v in range(n_views):
        vals, g = ace_batch(e[v] + view_prior[v], labels)
        ace_views[v] = float(np.mean(w * vals))
        grad[v] += (w / b)[:, None] * g

    fd_views = np.empty(n_views)
    fd_f, g_fd_f = fairness_term(fused, labels)
    fair_scale = lambda_t * w_mean
    if fair_scale:
        g_fused += fair_scale * g_fd_f
    for v in range(n_views):
        fd_views[v], g = fairness_term(e[v], labels)
        if fair_scale:
            grad[v] += fair_scale * g

    cons_vals, g_cons = consistency_batch(e + view_prior[:, None, :])
    consistency = float(cons_vals.mean())
    if beta_con:
        grad += (beta_con / b) * g_cons

    # back through the fusion
    grad += fuse_w[:, :, None] * g_fused[None]
    if exact_fusion_grad:
        d_conf = np.einsum("bk,vbk->vb", g_fused, e - fused[None]) / np.where(degenerate, 1.0, conf_total)[None]
        d_conf = np.where(degenerate[None], 0.0, d_conf)
        s = w_view[:, None] + e.sum(axis=2)
        grad += (d_conf * w_view[:, None] / (s * s))[:, :, None]

    breakdown = LossBreakdown(
        ace_per_view=ace_views,
        ace_fused=float(np.mean(w * ace_f)),
        fairness_per_view=fd_views,
        fairness_fused=fd_f,
        consistency=consistency,
        total=0.0,
        lambda_t=float(lambda_t),
        beta_con=float(beta_con),
        weight_mean=w_mean,
    )
    breakdown.total = breakdown.recomposed()
    return breakdown, grad
