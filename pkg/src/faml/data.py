"""Multi-view datasets: CSV I/O, normalization, splitting, long-tail
subsampling, head/medium/tail regions and a synthetic generator.

On-disk layout of a dataset directory::

    view_0.csv ... view_{V-1}.csv   one row per sample, no header
    labels.csv                      one integer label per line
    dataset.json                    optional; {"num_views": V, ...}
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    AlignmentError,
    ArgumentError,
    DataError,
    LabelRangeError,
    MissingFileError,
    ParseError,
)

log = logging.getLogger(__name__)

_VIEW_RE = re.compile(r"view_(\d+)\.csv$")
DESCRIPTOR = "dataset.json"


@dataclass
class MultiViewDataset:
    """Row-aligned views plus labels.

    ``indices`` are the sample ids in the source dataset, carried through
    every subset so that train/test disjointness can be checked.
    """

    views: list[np.ndarray]
    labels: np.ndarray
    num_classes: int
    indices: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.labels.shape[0]
        self.views = [np.asarray(v, dtype=np.float64) for v in self.views]
        if not self.views:
            raise DataError("dataset has no views")
        for i, v in enumerate(self.views):
            if v.ndim != 2 or v.shape[0] != n:
                raise AlignmentError(f"view {i} has shape {v.shape}, expected {n} rows")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise LabelRangeError(f"labels must lie in [0, {self.num_classes})")
        if self.indices is None:
            self.indices = np.arange(n)
        self.indices = np.asarray(self.indices, dtype=np.int64)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def num_views(self) -> int:
        return len(self.views)

    @property
    def dims(self) -> list[int]:
        return [v.shape[1] for v in self.views]

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, rows: np.ndarray) -> "MultiViewDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return MultiViewDataset(
            [v[rows] for v in self.views], self.labels[rows], self.num_classes, self.indices[rows]
        )


# -- I/O ----------------------------------------------------------------------


def _read_matrix(path: Path) -> np.ndarray:
    rows = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                bad = next(c for c in row if not _is_float(c))
                raise ParseError(f"{path}:{lineno}: non-numeric cell {bad!r}") from None
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise ParseError(f"{path}: rows have differing column counts {sorted(widths)}")
    return np.array(rows, dtype=np.float64)


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _read_labels(path: Path) -> np.ndarray:
    labels = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: label {line!r} is not an integer") from None
    return np.array(labels, dtype=np.int64)


def load_multiview(directory: str | Path, num_classes: int | None = None) -> MultiViewDataset:
    """Read a dataset directory.

    Args:
        directory: folder holding ``view_*.csv`` and ``labels.csv``.
        num_classes: K; inferred as ``max(label) + 1`` when omitted.

    Raises:
        MissingFileError, AlignmentError, ParseError, LabelRangeError.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingFileError(f"dataset directory {directory} does not exist")
    label_path = directory / "labels.csv"
    if not label_path.exists():
        raise MissingFileError(f"missing label file {label_path}")
    found = sorted(
        (int(m.group(1)), p) for p in directory.iterdir() if (m := _VIEW_RE.match(p.name))
    )
    if not found:
        raise MissingFileError(f"no view_*.csv files in {directory}")
    for expected, (idx, _) in enumerate(found):
        if idx != expected:
            raise MissingFileError(f"missing view file {directory / f'view_{expected}.csv'}")
    descriptor = directory / DESCRIPTOR
    if descriptor.exists():
        try:
            declared = int(json.loads(descriptor.read_text())["num_views"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"{descriptor}: cannot read num_views ({exc})") from None
        if declared > len(found):
            raise MissingFileError(f"missing view file {directory / f'view_{len(found)}.csv'}")

    labels = _read_labels(label_path)
    views = []
    for _, path in found:
        mat = _read_matrix(path)
        if mat.shape[0] != labels.shape[0]:
            raise AlignmentError(
                f"{path.name} has {mat.shape[0]} rows but {label_path.name} has {labels.shape[0]}"
            )
        if views and mat.shape[0] != views[0][1].shape[0]:
            raise AlignmentError(
                f"{path.name} has {mat.shape[0]} rows but {views[0][0].name} has {views[0][1].shape[0]}"
            )
        views.append((path, mat))
    if labels.size and labels.min() < 0:
        raise LabelRangeError(f"{label_path}: negative label {labels.min()}")
    k = int(labels.max()) + 1 if num_classes is None else int(num_classes)
    if labels.size and labels.max() >= k:
        raise LabelRangeError(f"{label_path}: label {labels.max()} out of range for {k} classes")
    return MultiViewDataset([m for _, m in views], labels, k)


def save_multiview(ds: MultiViewDataset, directory: str | Path) -> None:
    """Write ``ds`` in the directory layout read by ``load_multiview``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, v in enumerate(ds.views):
        with (directory / f"view_{i}.csv").open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            for row in v:
                writer.writerow([repr(float(x)) for x in row])
    (directory / "labels.csv").write_text("".join(f"{int(y)}\n" for y in ds.labels))
    write_manifest(
        directory / DESCRIPTOR, {"num_views": ds.num_views, "dims": ds.dims, "num_classes": ds.num_classes}
    )


def write_manifest(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# -- normalization ------------------------------------------------------------


@dataclass(frozen=True)
class Normalizer:
    """Per-view z-score statistics fitted on a set of rows."""

    means: list[np.ndarray]
    stds: list[np.ndarray]
    source_checksum: str

    @classmethod
    def fit(cls, train: MultiViewDataset) -> "Normalizer":
        means = [v.mean(axis=0) for v in train.views]
        stds = [np.where(s > 0, s, 1.0) for s in (v.std(axis=0) for v in train.views)]
        return cls(means, stds, index_checksum(train.indices))

    def apply(self, ds: MultiViewDataset) -> MultiViewDataset:
        if len(self.means) != ds.num_views:
            raise AlignmentError("normalizer and dataset disagree on the number of views")
        views = [(v - m) / s for v, m, s in zip(ds.views, self.means, self.stds)]
        return MultiViewDataset(views, ds.labels, ds.num_classes, ds.indices)


def index_checksum(indices: np.ndarray) -> str:
    return hashlib.sha256(np.sort(np.asarray(indices, dtype=np.int64)).tobytes()).hexdigest()


# -- splitting / subsampling ----------------------------------------------------


def stratified_split(
    ds: MultiViewDataset, test_fraction: float = 0.2, seed: int = 0
) -> tuple[MultiViewDataset, MultiViewDataset]:
    """Per-class proportional split into (train, test)."""
    if not 0.0 < test_fraction < 1.0:
        raise ArgumentError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_rows, test_rows = [], []
    for k in range(ds.num_classes):
        rows = np.flatnonzero(ds.labels == k)
        if rows.size == 0:
            continue
        if rows.size < 2:
            raise DataError(f"class {k} has {rows.size} sample; a split needs at least 2")
        rows = rng.permutation(rows)
        n_test = int(np.clip(np.floor(rows.size * test_fraction + 0.5), 1, rows.size - 1))
        test_rows.append(rows[:n_test])
        train_rows.append(rows[n_test:])
    train_idx = np.sort(np.concatenate(train_rows))
    test_idx = np.sort(np.concatenate(test_rows))
    return ds.subset(train_idx), ds.subset(test_idx)


def pareto_counts(max_count: int, num_classes: int, ratio: float) -> np.ndarray:
    """Geometric long-tail profile n_r = round(max_count * ratio^(-r/(K-1)))."""
    if ratio < 1:
        raise ArgumentError("imbalance ratio must be >= 1")
    r = np.arange(num_classes)
    return np.floor(max_count * ratio ** (-r / max(num_classes - 1, 1)) + 0.5).astype(np.int64)


def pareto_subsample(train: MultiViewDataset, ratio: float = 10.0, seed: int = 0) -> MultiViewDataset:
    """Draw a long-tailed subset of ``train``.

    Classes are ranked by a seeded permutation; rank r keeps
    ``pareto_counts(N_max, K, ratio)[r]`` samples, N_max being the
    largest per-class availability. Targets above availability are clipped
    with a warning.
    """
    if ratio < 1:
        raise ArgumentError("imbalance ratio must be >= 1")
    rng = np.random.default_rng(seed)
    k = train.num_classes
    avail = train.class_counts
    order = rng.permutation(k)
    targets = pareto_counts(int(avail.max()), k, ratio)
    keep = []
    for rank, cls in enumerate(order):
        rows = np.flatnonzero(train.labels == cls)
        n = int(targets[rank])
        if n > rows.size:
            warnings.warn(f"class {cls}: wanted {n} samples, only {rows.size} available", stacklevel=2)
            n = rows.size
        keep.append(rng.choice(rows, size=n, replace=False))
    return train.subset(np.sort(np.concatenate(keep)))


# -- regions ------------------------------------------------------------------


@dataclass(frozen=True)
class RegionPartition:
    head: frozenset[int]
    medium: frozenset[int]
    tail: frozenset[int]

    def region_of(self, k: int) -> str:
        for name in ("head", "medium", "tail"):
            if k in getattr(self, name):
                return name
        raise KeyError(k)

    def as_dict(self) -> dict[str, list[int]]:
        return {"head": sorted(self.head), "medium": sorted(self.medium), "tail": sorted(self.tail)}


def region_partition(class_counts: Sequence[int]) -> RegionPartition:
    """Split classes into thirds by descending count (ties: lower index first).

    Leftover classes go to head first, then medium.
    """
    counts = np.asarray(class_counts)
    k = counts.size
    if k < 3:
        raise ArgumentError("region partition needs at least 3 classes")
    order = sorted(range(k), key=lambda c: (-int(counts[c]), c))
    base, rem = divmod(k, 3)
    n_head = base + (rem > 0)
    n_med = base + (rem > 1)
    return RegionPartition(
        frozenset(order[:n_head]),
        frozenset(order[n_head : n_head + n_med]),
        frozenset(order[n_head + n_med :]),
    )


# -- synthetic data -------------------------------------------------------------


def synth_generate(
    num_classes: int,
    num_views: int,
    dims: Sequence[int] | int,
    samples_per_class: int,
    separation: float,
    seed: int = 0,
) -> MultiViewDataset:
    """Isotropic Gaussian clusters, one per (class, view).

    Each cluster mean is a seeded random unit direction times
    ``separation``; noise has unit variance in every coordinate.
    """
    if isinstance(dims, int):
        dims = [dims] * num_views
    if len(dims) != num_views:
        raise ArgumentError(f"{len(dims)} dims given for {num_views} views")
    if num_classes < 2 or num_views < 1 or samples_per_class < 1 or min(dims) < 1 or separation < 0:
        raise ArgumentError("synth arguments must be positive")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    views = []
    for d in dims:
        dirs = rng.standard_normal((num_classes, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        centers = separation * dirs
        views.append(centers[labels] + rng.standard_normal((labels.size, d)))
    return MultiViewDataset(views, labels, num_classes)
