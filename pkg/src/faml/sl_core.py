"""Subjective-logic algebra over Dirichlet evidence.

Typed single-instance operations (``dirichlet_from_evidence``, ``project`` ...)
sit on top of array kernels (``variance``, ``fuse_evidence`` ...) that take
a trailing class axis and broadcast over any leading batch axes. Training
code uses the kernels directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ArgumentError, DimensionError, NumericError

_SUM_TOL = 1e-9


def _vector(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def _same_length(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"{what}: length {a.shape[-1]} != {b.shape[-1]}")


@dataclass(frozen=True)
class EvidenceVector:
    values: np.ndarray

    def __post_init__(self):
        v = _vector(self.values, "evidence")
        if v.size < 2:
            raise DimensionError("evidence needs at least two classes")
        if np.any(v < 0):
            raise NumericError("evidence must be non-negative")
        object.__setattr__(self, "values", v)

    @property
    def num_classes(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class PriorVector:
    """Per-class Dirichlet prior weights; all ones is the standard EDL prior."""

    values: np.ndarray
    weight_total: float = field(init=False)

    def __post_init__(self):
        v = _vector(self.values, "prior")
        if v.size < 2:
            raise DimensionError("prior needs at least two classes")
        if np.any(v <= 0):
            raise NumericError("prior weights must be strictly positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weight_total", float(v.sum()))

    @classmethod
    def uniform(cls, num_classes: int, weight: float = 1.0) -> "PriorVector":
        return cls(np.full(num_classes, float(weight)))

    @property
    def num_classes(self) -> int:
        return self.values.size

    def base_rates(self) -> "ProbabilityVector":
        """Base rates implied by the prior, a_k = beta_k / W."""
        return ProbabilityVector(self.values / self.weight_total)


@dataclass(frozen=True)
class DirichletParams:
    alpha: np.ndarray
    strength: float = field(init=False)

    def __post_init__(self):
        a = _vector(self.alpha, "alpha")
        if np.any(a <= 0):
            raise NumericError("Dirichlet concentrations must be positive")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "strength", float(a.sum()))

    @property
    def num_classes(self) -> int:
        return self.alpha.size


@dataclass(frozen=True)
class ProbabilityVector:
    probs: np.ndarray

    def __post_init__(self):
        p = _vector(self.probs, "probabilities")
        if np.any(p < 0) or abs(p.sum() - 1.0) > _SUM_TOL:
            raise NumericError("probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, num_classes: int) -> "ProbabilityVector":
        return cls(np.full(num_classes, 1.0 / num_classes))


@dataclass(frozen=True)
class Opinion:
    """Multinomial opinion: belief masses, uncertainty mass and base rates."""

    belief: np.ndarray
    uncertainty: float
    base_rates: np.ndarray

    def __post_init__(self):
        b = _vector(self.belief, "belief")
        a = _vector(self.base_rates, "base rates")
        _same_length(b, a, "belief vs base rates")
        u = float(self.uncertainty)
        if np.any(b < 0) or u < 0 or np.any(a < 0):
            raise NumericError("opinion components must be non-negative")
        if abs(b.sum() + u - 1.0) > _SUM_TOL:
            raise NumericError(f"belief + uncertainty = {b.sum() + u!r}, expected 1")
        if abs(a.sum() - 1.0) > _SUM_TOL:
            raise NumericError("base rates must sum to 1")
        object.__setattr__(self, "belief", b)
        object.__setattr__(self, "base_rates", a)
        object.__setattr__(self, "uncertainty", u)

    @property
    def num_classes(self) -> int:
        return self.belief.size


# --------------------------------------------------------------------------
# array kernels (trailing axis = classes)
# --------------------------------------------------------------------------


def variance(alpha: np.ndarray) -> np.ndarray:
    """Marginal Dirichlet variances alpha_k (S - alpha_k) / (S^2 (S + 1))."""
    alpha = np.asarray(alpha, dtype=np.float64)
    s = alpha.sum(axis=-1, keepdims=True)
    return alpha * (s - alpha) / (s * s * (s + 1.0))


def variance_grad(alpha: np.ndarray) -> np.ndarray:
    """Jacobian d Var_k / d alpha_j, shape (..., K, K) indexed [k, j]."""
    alpha = np.asarray(alpha, dtype=np.float64)
    s = alpha.sum(axis=-1, keepdims=True)
    denom = s * s * (s + 1.0)
    num = alpha * (s - alpha)
    # alpha_j moves both alpha_k (when j == k) and S.
    d_ds = alpha / denom - num * (3.0 * s * s + 2.0 * s) / (denom * denom)
    jac = np.broadcast_to(d_ds[..., :, None], alpha.shape + alpha.shape[-1:]).copy()
    k = alpha.shape[-1]
    idx = np.arange(k)
    jac[..., idx, idx] += (s - 2.0 * alpha) / denom
    return jac


def uncertainty_mass(evidence: np.ndarray, prior: np.ndarray) -> np.ndarray:
    """u = W / (W + sum_k e_k) for each evidence row."""
    w = float(np.sum(prior))
    return w / (w + np.asarray(evidence, dtype=np.float64).sum(axis=-1))


def fuse_evidence(evidence: np.ndarray, uncertainty: np.ndarray) -> np.ndarray:
    """Confidence-weighted mean over the view axis.

    Args:
        evidence: shape (V, ..., K).
        uncertainty: shape (V, ...), one mass per view and instance.

    Returns:
        Fused evidence, shape (..., K). Where every view has u = 1 the
        plain mean over views is returned instead.
    """
    evidence = np.asarray(evidence, dtype=np.float64)
    conf = 1.0 - np.asarray(uncertainty, dtype=np.float64)
    total = conf.sum(axis=0)
    degenerate = total <= 0.0
    safe_total = np.where(degenerate, 1.0, total)
    weights = np.where(degenerate[None], 1.0 / evidence.shape[0], conf / safe_total[None])
    return np.einsum("v...,v...k->...k", weights, evidence)


def fairness_degree_array(evidence: np.ndarray, labels: np.ndarray | None = None) -> float:
    """Variance over classes of class-wise mean evidence.

    Without labels the class-wise mean of class k is the mean of column k
    over all rows. With labels it is the mean of e_{n,k} over the rows with
    ``labels == k`` (evidence on the true class); classes with no rows are
    left out of the variance.
    """
    evidence = np.asarray(evidence, dtype=np.float64)
    if evidence.ndim != 2 or evidence.shape[0] == 0:
        raise ArgumentError("fairness degree needs a non-empty (N, K) evidence array")
    means = class_mean_evidence(evidence, labels)
    means = means[~np.isnan(means)]
    return float(np.mean((means - means.mean()) ** 2))


def class_mean_evidence(evidence: np.ndarray, labels: np.ndarray | None = None) -> np.ndarray:
    """Per-class mean evidence (NaN for a class with no labelled rows)."""
    evidence = np.asarray(evidence, dtype=np.float64)
    if labels is None:
        return evidence.mean(axis=0)
    labels = np.asarray(labels)
    n, k = evidence.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} does not match {n} rows")
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    sums = np.bincount(labels, weights=evidence[np.arange(n), labels], minlength=k)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1.0), np.nan)


# --------------------------------------------------------------------------
# typed operations
# --------------------------------------------------------------------------


def dirichlet_from_evidence(e: EvidenceVector, prior: PriorVector) -> DirichletParams:
    _same_length(e.values, prior.values, "evidence vs prior")
    return DirichletParams(e.values + prior.values)


def opinion_from_dirichlet(
    d: DirichletParams,
    prior: PriorVector,
    base_rates: ProbabilityVector | None = None,
) -> Opinion:
    """Belief b_k = (alpha_k - beta_k)/S and uncertainty u = W/S.

    With the unit prior this is the usual b_k = e_k/S, u = K/S. When
    ``base_rates`` is omitted they are taken from the prior.
    """
    _same_length(d.alpha, prior.values, "Dirichlet vs prior")
    if base_rates is None:
        base_rates = prior.base_rates()
    _same_length(d.alpha, base_rates.probs, "Dirichlet vs base rates")
    evidence = d.alpha - prior.values
    if np.any(evidence < -1e-12 * max(1.0, d.strength)):
        raise NumericError("Dirichlet parameters lie below the prior")
    belief = np.maximum(evidence, 0.0) / d.strength
    u = prior.weight_total / d.strength
    return Opinion(belief, u, base_rates.probs)


def opinion_from_evidence(
    e: EvidenceVector,
    prior: PriorVector,
    base_rates: ProbabilityVector | None = None,
) -> Opinion:
    return opinion_from_dirichlet(dirichlet_from_evidence(e, prior), prior, base_rates)


def project(o: Opinion) -> ProbabilityVector:
    """Projected probability P_k = b_k + a_k u."""
    p = o.belief + o.base_rates * o.uncertainty
    # absorb rounding so the result passes ProbabilityVector validation
    return ProbabilityVector(p / p.sum())


def aggregate_weighted(views: Sequence[tuple[EvidenceVector, float]]) -> EvidenceVector:
    """Fuse per-view evidence with weights c_v = 1 - u_v.

    For two views this is (c_A e_A + c_B e_B) / (c_A + c_B). More views use
    the same V-way weighted mean, which does not depend on view order.
    """
    if len(views) == 0:
        raise ArgumentError("need at least one view")
    evs = [e.values for e, _ in views]
    k = evs[0].size
    for ev in evs[1:]:
        if ev.size != k:
            raise DimensionError(f"view evidence lengths differ: {ev.size} != {k}")
    us = np.array([float(u) for _, u in views])
    if np.any((us < 0) | (us > 1)) or not np.all(np.isfinite(us)):
        raise NumericError("uncertainties must lie in [0, 1]")
    fused = fuse_evidence(np.stack(evs), us)
    return EvidenceVector(np.maximum(fused, 0.0))


def dirichlet_variance(d: DirichletParams) -> np.ndarray:
    return variance(d.alpha)


def dissonance(a: DirichletParams, b: DirichletParams) -> float:
    """Sum over classes of |Var_k(a) - Var_k(b)|."""
    _same_length(a.alpha, b.alpha, "dissonance")
    return float(np.abs(variance(a.alpha) - variance(b.alpha)).sum())


def opinion_dissonance(a: Opinion, b: Opinion, prior_a: PriorVector, prior_b: PriorVector | None = None) -> float:
    """Dissonance between two opinions, via the Dirichlets they summarize."""
    return dissonance(opinion_to_dirichlet(a, prior_a), opinion_to_dirichlet(b, prior_b or prior_a))


def opinion_to_dirichlet(o: Opinion, prior: PriorVector) -> DirichletParams:
    """Invert ``opinion_from_dirichlet``: S = W/u, alpha = b S + beta."""
    _same_length(o.belief, prior.values, "opinion vs prior")
    if o.uncertainty <= 0:
        raise NumericError("dogmatic opinion (u = 0) has no finite Dirichlet")
    s = prior.weight_total / o.uncertainty
    return DirichletParams(o.belief * s + prior.values)


def fairness_degree(evidences: Iterable[EvidenceVector], labels: Sequence[int] | None = None) -> float:
    """Variance of the class-wise average evidence over a set of samples."""
    rows = [e.values for e in evidences]
    if not rows:
        raise ArgumentError("fairness degree of an empty set")
    k = rows[0].size
    if any(r.size != k for r in rows):
        raise DimensionError("evidence vectors have different lengths")
    return fairness_degree_array(np.stack(rows), None if labels is None else np.asarray(labels))
