"""Accuracy by region, expected calibration error, evidence diagnostics and
the JSON/CSV outputs built from them."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import RegionPartition
from .errors import ArgumentError, DimensionError
from .sl_core import fairness_degree_array

REGIONS = ("head", "medium", "tail")
REPORT_SCHEMA_VERSION = 1


def _aligned(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"misaligned inputs: {a.shape} vs {b.shape}")
    return a, b


def region_mask(labels: np.ndarray, classes) -> np.ndarray:
    return np.isin(labels, sorted(classes))


def accuracy(predictions, labels, partition: RegionPartition | None = None) -> dict[str, float | None]:
    """Overall and per-region accuracy.

    Regions are defined by the true class. A region with no samples maps
    to ``None``.
    """
    pred, labels = _aligned(predictions, labels)
    if labels.size == 0:
        raise ArgumentError("accuracy of an empty set")
    hit = pred == labels
    out: dict[str, float | None] = {"all": float(hit.mean())}
    if partition is not None:
        for name in REGIONS:
            mask = region_mask(labels, getattr(partition, name))
            out[name] = float(hit[mask].mean()) if mask.any() else None
    return out


def bin_index(confidences: np.ndarray, num_bins: int) -> np.ndarray:
    """Equal-width bins (b/M, (b+1)/M]; 0 goes to the first bin.

    An edge is the double nearest b/M, so a confidence of exactly 0.2 with
    15 bins lands in bin 2, not bin 3.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    idx = np.clip(np.ceil(conf * num_bins).astype(np.int64) - 1, 0, num_bins - 1)
    # conf * M can round up past an exact edge (0.2 * 15 > 3); edges go down
    on_edge = (idx > 0) & (conf <= idx / num_bins)
    return idx - on_edge


def ece(confidences, correct, num_bins: int = 15) -> float:
    """Expected calibration error sum_b (n_b / N) |acc_b - conf_b|."""
    conf, correct = _aligned(np.asarray(confidences, dtype=np.float64), np.asarray(correct, dtype=bool))
    if conf.size == 0:
        raise ArgumentError("ECE of an empty set")
    if np.any((conf < 0) | (conf > 1)):
        raise ArgumentError("confidences must lie in [0, 1]")
    bins = bin_index(conf, num_bins)
    n = np.bincount(bins, minlength=num_bins)
    conf_sum = np.bincount(bins, weights=conf, minlength=num_bins)
    hit_sum = np.bincount(bins, weights=correct.astype(np.float64), minlength=num_bins)
    used = n > 0
    gap = np.abs(hit_sum[used] - conf_sum[used])  # n_b * |acc_b - conf_b|
    return float(gap.sum() / conf.size)


def evidence_strength_report(evidence, labels, num_classes: int | None = None) -> np.ndarray:
    """Mean total evidence sum_k e_k per true class (NaN for absent classes)."""
    evidence = np.asarray(evidence, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if evidence.ndim != 2 or evidence.shape[0] == 0:
        raise ArgumentError("need a non-empty (N, K) evidence array")
    if labels.shape != (evidence.shape[0],):
        raise DimensionError("labels do not match evidence rows")
    k = num_classes or evidence.shape[1]
    totals = evidence.sum(axis=1)
    counts = np.bincount(labels, minlength=k)
    sums = np.bincount(labels, weights=totals, minlength=k)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def _mean_by_class(values: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    counts = np.bincount(labels, minlength=k)
    sums = np.bincount(labels, weights=values, minlength=k)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


@dataclass
class EvalReport:
    acc_all: float
    acc_head: float | None
    acc_med: float | None
    acc_tail: float | None
    ece_all: float
    ece_head: float | None
    ece_med: float | None
    ece_tail: float | None
    fairness_degree_per_view: list[float]
    fused_fairness_degree: float
    mean_evidence_per_class: list[float | None]
    mean_uncertainty_per_class: list[float | None]
    num_samples: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = REPORT_SCHEMA_VERSION
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def read(cls, path: str | Path) -> "EvalReport":
        d = json.loads(Path(path).read_text())
        d.pop("schema_version", None)
        return cls(**d)


def _nan_to_none(values) -> list[float | None]:
    return [None if (v is None or math.isnan(v)) else float(v) for v in values]


def build_report(
    probs: np.ndarray,
    fused_evidence: np.ndarray,
    view_evidence: np.ndarray,
    uncertainty: np.ndarray,
    labels: np.ndarray,
    partition: RegionPartition | None,
    num_bins: int = 15,
) -> EvalReport:
    """Assemble an ``EvalReport`` from fused predictions on a labelled set.

    Args:
        probs: fused projected probabilities, shape (N, K).
        fused_evidence: shape (N, K).
        view_evidence: shape (V, N, K).
        uncertainty: fused uncertainty mass per sample, shape (N,).
        labels: shape (N,).
        partition: head/medium/tail classes, or None when K < 3.
    """
    labels = np.asarray(labels, dtype=np.int64)
    k = probs.shape[1]
    pred = probs.argmax(axis=1)
    conf = probs.max(axis=1)
    hit = pred == labels
    acc = accuracy(pred, labels, partition)
    eces: dict[str, float | None] = {"all": ece(conf, hit, num_bins)}
    for name in REGIONS:
        if partition is None:
            eces[name] = None
            continue
        mask = region_mask(labels, getattr(partition, name))
        eces[name] = ece(conf[mask], hit[mask], num_bins) if mask.any() else None
    return EvalReport(
        acc_all=acc["all"],
        acc_head=acc.get("head"),
        acc_med=acc.get("medium"),
        acc_tail=acc.get("tail"),
        ece_all=eces["all"],
        ece_head=eces["head"],
        ece_med=eces["medium"],
        ece_tail=eces["tail"],
        fairness_degree_per_view=[fairness_degree_array(ev, labels) for ev in view_evidence],
        fused_fairness_degree=fairness_degree_array(fused_evidence, labels),
        mean_evidence_per_class=_nan_to_none(evidence_strength_report(fused_evidence, labels, k)),
        mean_uncertainty_per_class=_nan_to_none(_mean_by_class(uncertainty, labels, k)),
        num_samples=int(labels.size),
    )


# -- plot data -----------------------------------------------------------------


def write_evidence_strength_csv(path: str | Path, report: EvalReport, partition: RegionPartition | None) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "region", "mean_evidence", "mean_uncertainty"])
        for k, (e, u) in enumerate(zip(report.mean_evidence_per_class, report.mean_uncertainty_per_class)):
            region = partition.region_of(k) if partition is not None else ""
            w.writerow([k, region, "" if e is None else repr(e), "" if u is None else repr(u)])


def write_uncertainty_histogram_csv(
    path: str | Path,
    uncertainty: np.ndarray,
    labels: np.ndarray,
    partition: RegionPartition | None,
    num_bins: int = 20,
) -> None:
    """Counts of fused uncertainty per equal-width bin, split by region."""
    groups = {"all": np.ones(labels.size, dtype=bool)}
    if partition is not None:
        groups.update({name: region_mask(labels, getattr(partition, name)) for name in REGIONS})
    edges = np.linspace(0.0, 1.0, num_bins + 1)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", "bin_low", "bin_high", "count"])
        for name, mask in groups.items():
            counts, _ = np.histogram(uncertainty[mask], bins=edges)
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                w.writerow([name, repr(float(lo)), repr(float(hi)), int(c)])
