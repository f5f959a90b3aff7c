"""Training loop, evaluation, run directories and the ablation/gamma grids.

One epoch: shuffle; for every minibatch run each view network, fuse
evidence with confidence weights, evaluate the class-balanced objective
under the active prior, back-propagate into every view network and take
an Adam step. The fused argmax of every training sample is recorded and,
on refresh epochs, turned into a new adaptive prior.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .config import DataConfig, TrainConfig, config_from_dict
from .data import (
    MultiViewDataset,
    Normalizer,
    RegionPartition,
    index_checksum,
    pareto_subsample,
    region_partition,
    stratified_split,
    write_manifest,
)
from .errors import ConfigError, DataError, DimensionError, TrainingAborted
from .losses import class_balance_weights, lambda_schedule, total_loss
from .metrics import (
    EvalReport,
    build_report,
    write_evidence_strength_csv,
    write_uncertainty_histogram_csv,
)
from .net import Adam, EvidentialNet, NetConfig
from .prior import TrajectoryRecord, active_prior, compute_prior
from .sl_core import PriorVector, fuse_evidence

log = logging.getLogger(__name__)

# Table-2 rows: (adaptive prior, fairness, consistency)
ABLATION_ROWS: tuple[tuple[bool, bool, bool], ...] = (
    (False, False, False),
    (True, False, False),
    (True, True, False),
    (True, False, True),
    (True, True, True),
)

# Steps of the loop that are inferred rather than given verbatim.
RECONSTRUCTED_STEPS = {
    "fusion_inside_training_graph": True,
    "prior_refresh_uses_previous_epoch_predictions": True,
    "fairness_degree_per_minibatch": True,
    "fusion_confidences_constant_in_backward": True,
    "class_weights_normalized_to_unit_mean": True,
}


# -- inference ------------------------------------------------------------------


@dataclass
class FusedOutput:
    view_evidence: np.ndarray  # (V, N, K)
    fused_evidence: np.ndarray  # (N, K)
    probs: np.ndarray  # (N, K)
    uncertainty: np.ndarray  # (N,)

    @property
    def predictions(self) -> np.ndarray:
        return self.probs.argmax(axis=1)


def fuse_and_project(
    view_evidence: np.ndarray, priors: np.ndarray, prior_base_rates: bool = True
) -> FusedOutput:
    """Fuse per-view evidence and project the fused opinion.

    Args:
        view_evidence: shape (V, N, K).
        priors: shape (V + 1, K); the last row is the fused prior.
        prior_base_rates: base rates beta_k / W if True, else 1/K.
    """
    n_views = view_evidence.shape[0]
    w_view = priors[:n_views].sum(axis=1)
    u_view = w_view[:, None] / (w_view[:, None] + view_evidence.sum(axis=2))
    fused = fuse_evidence(view_evidence, u_view)
    beta = priors[n_views]
    w = beta.sum()
    s = fused.sum(axis=1) + w
    u = w / s
    rates = beta / w if prior_base_rates else np.full(beta.size, 1.0 / beta.size)
    probs = fused / s[:, None] + rates[None, :] * u[:, None]
    return FusedOutput(view_evidence, fused, probs, u)


@dataclass
class Model:
    """Trained view networks plus the prior they were last trained under."""

    nets: list[EvidentialNet]
    priors: np.ndarray  # (V + 1, K)
    prior_base_rates: bool = True

    def predict(self, views: Sequence[np.ndarray]) -> FusedOutput:
        if len(views) != len(self.nets):
            raise DimensionError(f"{len(views)} views given, model has {len(self.nets)}")
        ev = np.stack([net.forward(x) for net, x in zip(self.nets, views)])
        return fuse_and_project(ev, self.priors, self.prior_base_rates)

    def save(self, run_dir: Path) -> None:
        for v, net in enumerate(self.nets):
            net.save(run_dir / f"view_{v}.npz")
        payload = {"priors": self.priors.tolist(), "prior_base_rates": self.prior_base_rates}
        (run_dir / "prior.json").write_text(json.dumps(payload, indent=2) + "\n")

    @classmethod
    def load(cls, run_dir: str | Path) -> "Model":
        run_dir = Path(run_dir)
        prior_path = run_dir / "prior.json"
        if not prior_path.exists():
            raise DataError(f"missing {prior_path}")
        payload = json.loads(prior_path.read_text())
        priors = np.array(payload["priors"], dtype=np.float64)
        nets = []
        for v in range(priors.shape[0] - 1):
            path = run_dir / f"view_{v}.npz"
            if not path.exists():
                raise DataError(f"missing checkpoint {path}")
            nets.append(EvidentialNet.load(path))
        k = priors.shape[1]
        if any(net.cfg.num_classes != k for net in nets):
            raise ConfigError("checkpoint class count does not match prior")
        return cls(nets, priors, bool(payload["prior_base_rates"]))


def evaluate(model: Model, ds_test: MultiViewDataset, partition: RegionPartition | None) -> EvalReport:
    """Forward-only evaluation of the fused model on a labelled set."""
    dims = [net.cfg.input_dim for net in model.nets]
    if ds_test.dims != dims:
        raise ConfigError(f"test views have dims {ds_test.dims}, checkpoints expect {dims}")
    out = model.predict(ds_test.views)
    return build_report(out.probs, out.fused_evidence, out.view_evidence, out.uncertainty, ds_test.labels, partition)


# -- data preparation -------------------------------------------------------------


@dataclass
class PreparedData:
    train: MultiViewDataset
    test: MultiViewDataset
    partition: RegionPartition | None
    normalizer: Normalizer
    seed: int
    data_cfg: DataConfig

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "test_fraction": self.data_cfg.test_fraction,
            "imbalance_ratio": self.data_cfg.imbalance_ratio,
            "train_indices": self.train.indices.tolist(),
            "test_indices": self.test.indices.tolist(),
            "train_class_counts": self.train.class_counts.tolist(),
            "test_class_counts": self.test.class_counts.tolist(),
            "regions": self.partition.as_dict() if self.partition else None,
            "normalizer_source_checksum": self.normalizer.source_checksum,
        }


def prepare_data(ds: MultiViewDataset, data_cfg: DataConfig, seed: int) -> PreparedData:
    """Balanced test split, long-tailed training subset, train-only z-scoring."""
    train, test = stratified_split(ds, data_cfg.test_fraction, seed)
    train = pareto_subsample(train, data_cfg.imbalance_ratio, seed)
    norm = Normalizer.fit(train)
    partition = region_partition(train.class_counts) if ds.num_classes >= 3 else None
    return PreparedData(norm.apply(train), norm.apply(test), partition, norm, seed, data_cfg)


def dataset_checksum(ds: MultiViewDataset) -> str:
    h = hashlib.sha256()
    for v in ds.views:
        h.update(np.ascontiguousarray(v).tobytes())
    h.update(ds.labels.tobytes())
    return h.hexdigest()


# -- training -----------------------------------------------------------------------


@dataclass
class TrainArtifacts:
    model: Model
    report: EvalReport
    history: list[dict[str, float]]
    manifest: dict
    config: TrainConfig
    test_output: FusedOutput | None = None
    test_labels: np.ndarray | None = None
    partition: RegionPartition | None = None
    records: list[TrajectoryRecord] = field(default_factory=list)


def _recorded(out: FusedOutput, source: str) -> np.ndarray:
    if source == "projected":
        return out.predictions
    return out.fused_evidence.argmax(axis=1)


def _net_seed(seed: int, view: int) -> int:
    return int(np.random.SeedSequence([seed, view]).generate_state(1, dtype=np.uint64)[0] >> 1)


def _check_inputs(ds_train: MultiViewDataset, ds_test: MultiViewDataset | None, cfg: TrainConfig) -> None:
    if ds_train.num_classes < 2:
        raise DimensionError("need at least two classes")
    if np.any(ds_train.class_counts < 1):
        raise DataError("every class needs at least one training sample")
    if ds_test is not None:
        if ds_test.dims != ds_train.dims:
            raise DimensionError(f"train dims {ds_train.dims} != test dims {ds_test.dims}")
        if ds_test.num_classes != ds_train.num_classes:
            raise DimensionError("train and test disagree on the number of classes")
        if np.intersect1d(ds_train.indices, ds_test.indices).size:
            raise DataError("test samples appear in the training set")


def train(
    ds_train: MultiViewDataset,
    ds_test: MultiViewDataset | None,
    cfg: TrainConfig,
    partition: RegionPartition | None = None,
) -> TrainArtifacts:
    """Train one view network per view; returns the final model, report and history."""
    _check_inputs(ds_train, ds_test, cfg)
    n_views, k, n = ds_train.num_views, ds_train.num_classes, len(ds_train)
    labels = ds_train.labels
    counts = ds_train.class_counts
    class_w = class_balance_weights(counts)
    sched = cfg.schedule
    adaptive, use_fair, use_con = cfg.ablation.adaptive_prior, cfg.ablation.fairness, cfg.ablation.consistency
    beta_con = cfg.beta_con if use_con else 0.0
    if partition is None and k >= 3:
        partition = region_partition(counts)

    nets = [
        EvidentialNet(NetConfig(d, k, list(cfg.hidden_dims) if cfg.hidden_dims else None, _net_seed(cfg.seed, v), cfg.activation))
        for v, d in enumerate(ds_train.dims)
    ]
    opts = [Adam(lr=cfg.lr, weight_decay=cfg.weight_decay) for _ in nets]
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1_000_003]))

    uniform = np.ones(k)
    latest: list[PriorVector] | None = None  # per view (if per_view_prior) + fused
    last_fused_pred = np.full(n, -1, dtype=np.int64)
    last_view_pred = np.full((n_views, n), -1, dtype=np.int64)
    history: list[dict[str, float]] = []
    records: list[TrajectoryRecord] = []
    lambda_span = max(1, cfg.epochs - 1)
    model = Model(nets, np.ones((n_views + 1, k)), cfg.prior_base_rates)

    for epoch in range(cfg.epochs):
        if adaptive and epoch > 0 and sched.is_refresh_epoch(epoch):
            if cfg.fresh_eval_prior:
                out = model.predict(ds_train.views)
                fused_pred = _recorded(out, cfg.trajectory_source)
                view_pred = out.view_evidence.argmax(axis=2)
            else:
                fused_pred, view_pred = last_fused_pred, last_view_pred
            fused_prior = compute_prior(TrajectoryRecord(epoch - 1, fused_pred), labels, counts, sched.gamma)
            if cfg.per_view_prior:
                latest = [compute_prior(TrajectoryRecord(epoch - 1, p), labels, counts, sched.gamma) for p in view_pred]
            else:
                latest = [fused_prior] * n_views
            latest.append(fused_prior)
        if adaptive and latest is not None:
            priors = np.stack([active_prior(epoch, sched, p, k).values for p in latest])
        else:
            priors = np.tile(uniform, (n_views + 1, 1))
        model.priors = priors
        lam = lambda_schedule(epoch, lambda_span) if use_fair else 0.0

        order = shuffle_rng.permutation(n)
        sums: dict[str, float] = {}
        for b_idx, start in enumerate(range(0, n, cfg.batch_size)):
            rows = order[start : start + cfg.batch_size]
            x = [view[rows] for view in ds_train.views]
            y = labels[rows]
            with np.errstate(over="ignore", invalid="ignore"):
                ev = np.stack([net.forward(xv) for net, xv in zip(nets, x)])
            if not np.all(np.isfinite(ev)):
                raise TrainingAborted(epoch, b_idx, "evidence")
            parts, grad = total_loss(ev, y, priors, class_w, lam, beta_con, cfg.exact_fusion_grad)
            for name, value in parts.terms().items():
                if not np.isfinite(value):
                    raise TrainingAborted(epoch, b_idx, name)
                sums[name] = sums.get(name, 0.0) + value * rows.size
            if not np.all(np.isfinite(grad)):
                raise TrainingAborted(epoch, b_idx, "gradient")
            for net, opt, g in zip(nets, opts, grad):
                opt.step(net.params, net.backward(g))
            fused_out = fuse_and_project(ev, priors, cfg.prior_base_rates)
            last_fused_pred[rows] = _recorded(fused_out, cfg.trajectory_source)
            last_view_pred[:, rows] = ev.argmax(axis=2)

        records.append(TrajectoryRecord(epoch, last_fused_pred.copy()))
        row: dict[str, float] = {"epoch": epoch, "lambda_t": lam}
        row.update({name: total / n for name, total in sums.items()})
        row["train_recall_acc"] = float(np.mean(last_fused_pred == labels))
        if ds_test is not None and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs - 1):
            row["test_acc"] = float(np.mean(model.predict(ds_test.views).predictions == ds_test.labels))
        else:
            row["test_acc"] = float("nan")
        for c in range(k):
            row[f"prior_{c}"] = float(priors[n_views, c])
        history.append(row)

    report = None
    test_out = None
    if ds_test is not None:
        test_out = model.predict(ds_test.views)
        report = build_report(
            test_out.probs, test_out.fused_evidence, test_out.view_evidence, test_out.uncertainty, ds_test.labels, partition
        )
    manifest = {
        "package_version": __version__,
        "config": cfg.to_dict(),
        "net_seeds": [net.cfg.seed for net in nets],
        "train_checksum": index_checksum(ds_train.indices),
        "test_checksum": index_checksum(ds_test.indices) if ds_test is not None else None,
        "reconstructed": True,
        "reconstructed_steps": RECONSTRUCTED_STEPS,
    }
    return TrainArtifacts(
        model, report, history, manifest, cfg, test_out,
        ds_test.labels if ds_test is not None else None, partition, records,
    )


# -- run directories ----------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, float):
        return "" if np.isnan(value) else repr(value)
    return str(value)


def write_history(path: Path, history: list[dict[str, float]]) -> None:
    columns = list(history[0].keys()) if history else []
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in history:
            w.writerow([_fmt(row.get(c, float("nan"))) for c in columns])


def read_history(path: Path) -> list[dict[str, float]]:
    with path.open(newline="") as fh:
        return [{k: (float(v) if v != "" else float("nan")) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_run(run_dir: str | Path, art: TrainArtifacts, prepared: PreparedData | None = None, extra: dict | None = None) -> Path:
    """Write config, manifest, history, checkpoints, report and plot data."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.toml").write_text(art.config.to_toml())
    manifest = dict(art.manifest)
    if prepared is not None:
        manifest["data"] = prepared.manifest()
        np.savez(
            run_dir / "normalizer.npz",
            **{f"mean_{i}": m for i, m in enumerate(prepared.normalizer.means)},
            **{f"std_{i}": s for i, s in enumerate(prepared.normalizer.stds)},
        )
    if extra:
        manifest.update(extra)
    write_manifest(run_dir / "manifest.json", manifest)
    write_history(run_dir / "history.csv", art.history)
    art.model.save(run_dir)
    if art.report is not None:
        art.report.write(run_dir / "report.json")
    if art.test_output is not None:
        write_test_predictions(run_dir / "test_predictions.csv", art.test_output, art.test_labels)
    return run_dir


def write_test_predictions(path: Path, out: FusedOutput, labels: np.ndarray) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        k = out.probs.shape[1]
        w.writerow(["row", "label", "predicted", "confidence", "uncertainty"] + [f"evidence_{c}" for c in range(k)])
        for i, (y, p, c, u, e) in enumerate(
            zip(labels, out.predictions, out.probs.max(axis=1), out.uncertainty, out.fused_evidence)
        ):
            w.writerow([i, int(y), int(p), repr(float(c)), repr(float(u))] + [repr(float(x)) for x in e])


def load_normalizer(run_dir: Path, num_views: int, source_checksum: str) -> Normalizer:
    path = run_dir / "normalizer.npz"
    if not path.exists():
        raise DataError(f"missing {path}")
    with np.load(path) as data:
        means = [data[f"mean_{i}"].copy() for i in range(num_views)]
        stds = [data[f"std_{i}"].copy() for i in range(num_views)]
    return Normalizer(means, stds, source_checksum)


def load_run_config(run_dir: str | Path) -> TrainConfig:
    manifest = json.loads((Path(run_dir) / "manifest.json").read_text())
    return config_from_dict(manifest["config"])


def emit_plot_data(run_dir: str | Path, out_dir: str | Path | None = None) -> dict[str, Path]:
    """Derive plot-data CSVs from a finished run directory (no retraining)."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir is not None else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = run_dir / "report.json"
    if not report_path.exists():
        raise DataError(f"missing {report_path}")
    report = EvalReport.read(report_path)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    regions = (manifest.get("data") or {}).get("regions")
    partition = (
        RegionPartition(frozenset(regions["head"]), frozenset(regions["medium"]), frozenset(regions["tail"]))
        if regions
        else None
    )
    written = {}
    path = out_dir / "evidence_strength.csv"
    write_evidence_strength_csv(path, report, partition)
    written["evidence_strength"] = path
    pred_path = run_dir / "test_predictions.csv"
    if pred_path.exists():
        with pred_path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        labels = np.array([int(r["label"]) for r in rows], dtype=np.int64)
        unc = np.array([float(r["uncertainty"]) for r in rows])
        path = out_dir / "uncertainty_hist.csv"
        write_uncertainty_histogram_csv(path, unc, labels, partition)
        written["uncertainty_hist"] = path
    return written


# -- experiment grids -----------------------------------------------------------------


@dataclass
class RunResult:
    label: str
    seed: int
    report: EvalReport
    history: list[dict[str, float]]


def run_once(ds: MultiViewDataset, cfg: TrainConfig, seed: int, label: str = "") -> RunResult:
    """Prepare data with ``seed`` and train with the same seed."""
    cfg = replace(cfg, seed=seed)
    prepared = prepare_data(ds, cfg.data, seed)
    art = train(prepared.train, prepared.test, cfg, prepared.partition)
    return RunResult(label, seed, art.report, art.history)


def _map(fn, jobs: list, workers: int) -> list:
    if workers <= 1:
        return [fn(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


def ablation_label(flags: tuple[bool, bool, bool]) -> str:
    names = [n for n, on in zip(("prior", "fairness", "consistency"), flags) if on]
    return "+".join(names) if names else "baseline"


def ablation_matrix(
    cfg: TrainConfig, ds: MultiViewDataset, seeds: Iterable[int] = range(5), workers: int = 1
) -> list[list[RunResult]]:
    """Train the five Table-2 flag combinations for every seed.

    Returns one list of per-seed results per row, in ``ABLATION_ROWS`` order.
    """
    seeds = list(seeds)
    jobs = [
        (ds, cfg.with_ablation(*flags), s, ablation_label(flags)) for flags in ABLATION_ROWS for s in seeds
    ]
    flat = _map(run_once, jobs, workers)
    return [flat[i * len(seeds) : (i + 1) * len(seeds)] for i in range(len(ABLATION_ROWS))]


def gamma_sweep(
    cfg: TrainConfig, ds: MultiViewDataset, gammas: Sequence[float], seeds: Iterable[int] = range(5), workers: int = 1
) -> list[list[RunResult]]:
    seeds = list(seeds)
    jobs = [
        (ds, replace(cfg, schedule=replace(cfg.schedule, gamma=float(g))), s, f"gamma={g}")
        for g in gammas
        for s in seeds
    ]
    flat = _map(run_once, jobs, workers)
    return [flat[i * len(seeds) : (i + 1) * len(seeds)] for i in range(len(gammas))]


SUMMARY_FIELDS = ("acc_all", "acc_head", "acc_med", "acc_tail", "ece_all", "fused_fairness_degree")


def summarize(results: list[RunResult]) -> dict[str, float]:
    """Mean and (population) std over seeds for the headline metrics."""
    out: dict[str, float] = {"n_seeds": len(results)}
    for name in SUMMARY_FIELDS:
        vals = np.array([getattr(r.report, name) for r in results], dtype=np.float64)
        vals = vals[~np.isnan(vals)] if vals.size else vals
        out[f"{name}_mean"] = float(vals.mean()) if vals.size else float("nan")
        out[f"{name}_std"] = float(vals.std()) if vals.size else float("nan")
    return out
