"""Per-view evidential MLP with a hand-written backward pass.

Hidden layers use ReLU; the head maps pre-activations to non-negative
evidence with softplus (default), exp or ReLU. Everything is batched:
``forward`` takes (B, d) and returns (B, K).
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, NumericError, StateError

CHECKPOINT_VERSION = 1
ACTIVATIONS = ("softplus", "exp", "relu")


@dataclass
class NetConfig:
    input_dim: int
    num_classes: int
    hidden_dims: list[int] | None = None
    seed: int = 0
    activation: str = "softplus"

    def __post_init__(self):
        if self.hidden_dims is None:
            self.hidden_dims = [max(64, self.input_dim // 2)]
        self.hidden_dims = [int(h) for h in self.hidden_dims]
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ConfigError("layer widths must be positive")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.num_classes]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _head(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "softplus":
        return np.logaddexp(0.0, z)
    if kind == "exp":
        return np.exp(np.clip(z, None, 30.0))
    return np.maximum(z, 0.0)


def _head_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "softplus":
        return _sigmoid(z)
    if kind == "exp":
        return np.where(z < 30.0, np.exp(np.minimum(z, 30.0)), 0.0)
    return (z > 0).astype(np.float64)


class EvidentialNet:
    """Fully connected evidence network.

    Parameters are stored as ``[W0, b0, W1, b1, ...]`` with ``W_i`` shaped
    (fan_out, fan_in). A network is single-writer: ``forward`` caches the
    activations that ``backward`` consumes.
    """

    def __init__(self, cfg: NetConfig, params: list[np.ndarray] | None = None):
        self.cfg = cfg
        self.params = params if params is not None else self._init_params()
        self._cache: tuple[list[np.ndarray], list[np.ndarray]] | None = None

    def _init_params(self) -> list[np.ndarray]:
        rng = np.random.default_rng(self.cfg.seed)
        params = []
        sizes = self.cfg.layer_sizes
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            params.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            params.append(np.zeros(fan_out))
        return params

    @property
    def num_layers(self) -> int:
        return len(self.params) // 2

    def copy(self) -> "EvidentialNet":
        return EvidentialNet(self.cfg, [p.copy() for p in self.params])

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Evidence for a batch of inputs (or a single vector)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.cfg.input_dim:
            raise DimensionError(f"expected inputs of width {self.cfg.input_dim}, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite network input")
        acts = [x]
        pre = []
        h = x
        for i in range(self.num_layers):
            w, b = self.params[2 * i], self.params[2 * i + 1]
            z = h @ w.T + b
            pre.append(z)
            h = np.maximum(z, 0.0) if i < self.num_layers - 1 else _head(z, self.cfg.activation)
            acts.append(h)
        self._cache = (acts, pre)
        return h[0] if single else h

    def backward(self, grad_evidence: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients given dLoss/d(evidence) for the cached batch."""
        if self._cache is None:
            raise StateError("backward called without a preceding forward pass")
        acts, pre = self._cache
        g = np.asarray(grad_evidence, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        if g.shape != acts[-1].shape:
            raise DimensionError(f"upstream gradient shape {g.shape} != output shape {acts[-1].shape}")
        grads: list[np.ndarray] = [None] * len(self.params)  # type: ignore[list-item]
        delta = g * _head_grad(pre[-1], self.cfg.activation)
        for i in reversed(range(self.num_layers)):
            grads[2 * i] = delta.T @ acts[i]
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.params[2 * i]) * (pre[i - 1] > 0)
        return grads

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat_params(self, flat: np.ndarray) -> None:
        offset = 0
        for p in self.params:
            n = p.size
            p[...] = flat[offset : offset + n].reshape(p.shape)
            offset += n

    # -- checkpointing -----------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Write config and parameters to a ``.npz`` file (bit-exact)."""
        meta = {"version": CHECKPOINT_VERSION, "config": asdict(self.cfg)}
        arrays = {f"p{i}": p for i, p in enumerate(self.params)}
        buf = io.BytesIO()
        np.savez(buf, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> "EvidentialNet":
        with np.load(Path(path), allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ConfigError(f"unsupported checkpoint version {meta.get('version')!r}")
            cfg = NetConfig(**meta["config"])
            n = 2 * (len(cfg.layer_sizes) - 1)
            params = [data[f"p{i}"].copy() for i in range(n)]
        net = cls(cfg, params)
        for p, (fan_in, fan_out) in zip(params[::2], zip(cfg.layer_sizes[:-1], cfg.layer_sizes[1:])):
            if p.shape != (fan_out, fan_in):
                raise ConfigError(f"checkpoint weight shape {p.shape} does not match config")
        return net


@dataclass
class Adam:
    """Adam with the weight-decay term added to the gradient (classic L2)."""

    lr: float = 1e-3
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """Update ``params`` in place."""
        if len(params) != len(grads):
            raise DimensionError("params and grads differ in length")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            if self.weight_decay:
                g = g + self.weight_decay * p
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
