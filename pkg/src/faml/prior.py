"""Adaptive Dirichlet prior from recorded training predictions.

For class k with N_k training samples of which C_k were predicted
correctly in the recorded epoch, beta_k = gamma * N_k / max(1, C_k),
i.e. gamma over the class recall. The prior is held at all ones during
warm-up and refreshed on a fixed interval afterwards.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError
from .sl_core import PriorVector


@dataclass(frozen=True)
class PriorSchedule:
    warmup_epochs: int = 20
    refresh_interval: int = 5
    gamma: float = 1.0

    def __post_init__(self):
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be >= 0")
        if self.refresh_interval < 1:
            raise ConfigError("refresh_interval must be >= 1")
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ConfigError("gamma must be finite and positive")

    def is_refresh_epoch(self, epoch: int) -> bool:
        return epoch >= self.warmup_epochs and (epoch - self.warmup_epochs) % self.refresh_interval == 0


@dataclass(frozen=True)
class TrajectoryRecord:
    """Predicted class for every training sample in one epoch."""

    epoch: int
    predicted: np.ndarray

    def to_csv(self, path: str | Path, labels: np.ndarray, append: bool = False) -> None:
        """Write ``epoch,sample_index,predicted,label`` rows."""
        path = Path(path)
        new = not append or not path.exists()
        with path.open("a" if append else "w", newline="") as fh:
            writer = csv.writer(fh)
            if new:
                writer.writerow(["epoch", "sample_index", "predicted", "label"])
            for i, (p, y) in enumerate(zip(self.predicted, labels)):
                writer.writerow([self.epoch, i, int(p), int(y)])


def correct_counts(predicted: np.ndarray, labels: np.ndarray, num_classes: int) -> np.ndarray:
    hits = labels[predicted == labels]
    return np.bincount(hits, minlength=num_classes)


def compute_prior(
    record: TrajectoryRecord,
    labels: np.ndarray,
    class_counts: np.ndarray,
    gamma: float,
) -> PriorVector:
    """beta_k = gamma * N_k / max(1, correct_k)."""
    labels = np.asarray(labels)
    predicted = np.asarray(record.predicted)
    if predicted.shape != labels.shape:
        raise DimensionError(f"{predicted.size} predictions for {labels.size} labels")
    counts = np.asarray(class_counts, dtype=np.float64)
    k = counts.size
    if np.any(counts < 1):
        raise ConfigError("every class needs at least one training sample")
    correct = correct_counts(predicted, labels, k)
    # ratio first: with full recall N_k / C_k is exactly 1, so beta_k == gamma
    return PriorVector(gamma * (counts / np.maximum(correct, 1)))


def active_prior(
    epoch: int,
    schedule: PriorSchedule,
    latest: PriorVector | None,
    num_classes: int,
) -> PriorVector:
    """Prior in force at ``epoch``: unit prior before warm-up, else the latest one."""
    if epoch < schedule.warmup_epochs or latest is None:
        return PriorVector.uniform(num_classes)
    return latest
