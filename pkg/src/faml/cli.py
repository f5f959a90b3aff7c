"""Command-line entry point.

Subcommands: ``train``, ``eval``, ``synth``, ``sweep-gamma``, ``ablate``
and ``report``. Outputs go under ``--out``; when omitted they go under
``$FAML_OUTPUT_ROOT/<subcommand>`` (``./runs`` if the variable is unset).

Exit codes: 0 success, 1 unexpected internal error, 2 usage or config
error, 3 data error, 4 numeric abort.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from .config import TrainConfig, load_config
from .data import RegionPartition, load_multiview, save_multiview, synth_generate, write_manifest
from .errors import ArgumentError, ConfigError, DataError, DimensionError, FamlError, NumericError
from .metrics import EvalReport
from .trainer import (
    ABLATION_ROWS,
    SUMMARY_FIELDS,
    Model,
    ablation_matrix,
    dataset_checksum,
    emit_plot_data,
    evaluate,
    gamma_sweep,
    load_normalizer,
    prepare_data,
    summarize,
    train,
    write_run,
)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

OUTPUT_ROOT_ENV = "FAML_OUTPUT_ROOT"

log = logging.getLogger("faml")


def output_dir(out: str | None, subcommand: str) -> Path:
    if out:
        return Path(out)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / subcommand


def _parse_floats(text: str) -> list[float]:
    try:
        values = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None
    if not values:
        raise ConfigError("empty value list")
    return values


def _parse_ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from None


def _config(path: str | None, overrides: tuple[str, ...]) -> TrainConfig:
    return load_config(path, list(overrides))


def _write_rows(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


config_option = click.option("--config", "config_path", type=click.Path(dir_okay=False), help="TOML config file.")
set_option = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Config override; repeatable.")
out_option = click.option("--out", type=click.Path(file_okay=False), help="Output directory.")
data_option = click.option("--data", "data_dir", required=True, type=click.Path(), help="Dataset directory.")
classes_option = click.option("--num-classes", type=int, default=None, help="K; inferred from labels if omitted.")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose: bool) -> None:
    """Fairness-aware multi-view evidential learning."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@cli.command("train")
@data_option
@classes_option
@config_option
@set_option
@out_option
def train_cmd(data_dir, num_classes, config_path, overrides, out):
    """Train on a dataset directory and write a run directory."""
    cfg = _config(config_path, overrides)
    ds = load_multiview(data_dir, num_classes)
    prepared = prepare_data(ds, cfg.data, cfg.seed)
    art = train(prepared.train, prepared.test, cfg, prepared.partition)
    run_dir = write_run(
        output_dir(out, "train"), art, prepared, {"dataset_checksum": dataset_checksum(ds), "num_classes": ds.num_classes}
    )
    click.echo(f"{run_dir}: acc_all={art.report.acc_all:.4f} ece_all={art.report.ece_all:.4f}")


@cli.command("eval")
@click.option("--run", "run_dir", required=True, type=click.Path(), help="Run directory written by train.")
@data_option
@out_option
def eval_cmd(run_dir, data_dir, out):
    """Re-evaluate saved checkpoints on the run's held-out split."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"missing {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    ds = load_multiview(data_dir, manifest.get("num_classes"))
    expected = manifest.get("dataset_checksum")
    if expected and dataset_checksum(ds) != expected:
        raise DataError(f"{data_dir} is not the dataset the run in {run_dir} was trained on")
    model = Model.load(run_dir)
    data = manifest["data"]
    test = ds.subset(np.array(data["test_indices"], dtype=np.int64))
    norm = load_normalizer(run_dir, ds.num_views, data["normalizer_source_checksum"])
    regions = data.get("regions")
    partition = (
        RegionPartition(frozenset(regions["head"]), frozenset(regions["medium"]), frozenset(regions["tail"]))
        if regions
        else None
    )
    report = evaluate(model, norm.apply(test), partition)
    dest = output_dir(out, "eval")
    dest.mkdir(parents=True, exist_ok=True)
    report.write(dest / "report.json")
    click.echo(f"{dest / 'report.json'}: acc_all={report.acc_all:.4f}")


@cli.command("synth")
@click.option("--k", "num_classes", type=int, default=3, show_default=True)
@click.option("--views", type=int, default=2, show_default=True)
@click.option("--dims", default="8", show_default=True, help="One width, or one per view (comma-separated).")
@click.option("--samples-per-class", type=int, default=200, show_default=True)
@click.option("--separation", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@out_option
def synth_cmd(num_classes, views, dims, samples_per_class, separation, seed, out):
    """Write a synthetic Gaussian multi-view dataset."""
    widths = _parse_ints(dims)
    if len(widths) == 1:
        widths = widths * views
    ds = synth_generate(num_classes, views, widths, samples_per_class, separation, seed)
    dest = output_dir(out, "synth")
    save_multiview(ds, dest)
    write_manifest(
        dest / "synth.json",
        {"k": num_classes, "views": views, "dims": widths, "samples_per_class": samples_per_class,
         "separation": separation, "seed": seed},
    )
    click.echo(f"{dest}: {len(ds)} samples, {views} views, {num_classes} classes")


@cli.command("sweep-gamma")
@data_option
@classes_option
@click.option("--values", default="0.1,0.5,1,5,10", show_default=True, help="Comma-separated gamma values.")
@click.option("--seeds", type=int, default=5, show_default=True, help="Seeds 0..n-1 per gamma.")
@click.option("--workers", type=int, default=1, show_default=True)
@config_option
@set_option
@out_option
def sweep_gamma_cmd(data_dir, num_classes, values, seeds, workers, config_path, overrides, out):
    """Accuracy as a function of gamma, one CSV row per value."""
    gammas = _parse_floats(values)
    if any(g <= 0 for g in gammas):
        raise ConfigError("gamma values must be positive")
    if seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    cfg = _config(config_path, overrides)
    ds = load_multiview(data_dir, num_classes)
    grid = gamma_sweep(cfg, ds, gammas, range(seeds), workers)
    header = ["gamma", "n_seeds"] + [f"{f}_{s}" for f in SUMMARY_FIELDS for s in ("mean", "std")]
    header += [f"acc_all_seed{s}" for s in range(seeds)]
    rows = []
    for g, results in zip(gammas, grid):
        summary = summarize(results)
        rows.append(
            [g, seeds]
            + [summary[f"{f}_{s}"] for f in SUMMARY_FIELDS for s in ("mean", "std")]
            + [r.report.acc_all for r in results]
        )
    dest = output_dir(out, "sweep-gamma")
    _write_rows(dest / "gamma_sweep.csv", header, rows)
    click.echo(str(dest / "gamma_sweep.csv"))


@cli.command("ablate")
@data_option
@classes_option
@click.option("--seeds", type=int, default=5, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@config_option
@set_option
@out_option
def ablate_cmd(data_dir, num_classes, seeds, workers, config_path, overrides, out):
    """Train the five component combinations and tabulate them."""
    if seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    cfg = _config(config_path, overrides)
    ds = load_multiview(data_dir, num_classes)
    grid = ablation_matrix(cfg, ds, range(seeds), workers)
    header = ["adaptive_prior", "fairness", "consistency", "n_seeds"]
    header += [f"{f}_{s}" for f in SUMMARY_FIELDS for s in ("mean", "std")]
    rows = []
    for flags, results in zip(ABLATION_ROWS, grid):
        summary = summarize(results)
        rows.append([*(str(f).lower() for f in flags), seeds] + [summary[f"{f}_{s}"] for f in SUMMARY_FIELDS for s in ("mean", "std")])
    dest = output_dir(out, "ablate")
    _write_rows(dest / "ablation.csv", header, rows)
    click.echo(str(dest / "ablation.csv"))


@cli.command("report")
@click.option("--run", "run_dir", required=True, type=click.Path(), help="Run directory written by train.")
@out_option
def report_cmd(run_dir, out):
    """Emit plot-data CSVs and a summary from a finished run directory."""
    dest = Path(out) if out else Path(run_dir)
    written = emit_plot_data(run_dir, dest)
    report = EvalReport.read(Path(run_dir) / "report.json")
    summary = {
        name: getattr(report, name)
        for name in ("acc_all", "acc_head", "acc_med", "acc_tail", "ece_all", "fused_fairness_degree")
    }
    (dest / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for path in written.values():
        click.echo(str(path))
    click.echo(str(dest / "summary.json"))


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, ArgumentError, click.UsageError)):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, DimensionError)):
        return EXIT_DATA
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    return EXIT_INTERNAL


def main(argv: list[str] | None = None) -> int:
    """Run the CLI and return (or exit with) a documented status code."""
    try:
        cli.main(args=argv, prog_name="faml", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("faml: aborted", err=True)
        return _exit(EXIT_INTERNAL, argv)
    except click.UsageError as exc:
        click.echo(f"faml: usage error: {exc.format_message()}", err=True)
        return _exit(EXIT_CONFIG, argv)
    except (FamlError, ValueError, ArithmeticError, OSError) as exc:
        code = exit_code_for(exc)
        kind = {EXIT_CONFIG: "config error", EXIT_DATA: "data error", EXIT_NUMERIC: "numeric abort"}.get(code, "error")
        click.echo(f"faml: {kind}: {exc}", err=True)
        return _exit(code, argv)
    return _exit(EXIT_OK, argv)


def _exit(code: int, argv) -> int:
    if argv is None:
        sys.exit(code)
    return code


if __name__ == "__main__":
    main()
