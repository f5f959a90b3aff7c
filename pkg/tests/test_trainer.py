import math
from dataclasses import replace

import numpy as np
import pytest

from faml.config import config_from_dict
from faml.data import MultiViewDataset, synth_generate
from faml.errors import DataError, DimensionError, NumericError, TrainingAborted
from faml.losses import class_balance_weights, total_loss
from faml.net import Adam, EvidentialNet, NetConfig
from faml.trainer import (
    ABLATION_ROWS,
    Model,
    ablation_matrix,
    emit_plot_data,
    evaluate,
    fuse_and_project,
    gamma_sweep,
    prepare_data,
    read_history,
    summarize,
    train,
    write_run,
)

SMALL = config_from_dict(
    {"epochs": 12, "batch_size": 16, "lr": 0.01, "hidden_dims": [12], "eval_every": 4,
     "schedule": {"warmup_epochs": 3, "refresh_interval": 2, "gamma": 1.0}}
)


@pytest.fixture(scope="module")
def prepared():
    ds = synth_generate(3, 2, [5, 4], 60, 1.5, seed=0)
    return prepare_data(ds, SMALL.data, seed=0)


def history_terms(history):
    return [{k: v for k, v in row.items() if not (isinstance(v, float) and math.isnan(v))} for row in history]


class TestFuseAndProject:
    def test_matches_typed_pipeline(self):
        from faml.sl_core import EvidenceVector, PriorVector, aggregate_weighted, opinion_from_evidence, project

        rng = np.random.default_rng(0)
        ev = rng.uniform(0, 4, (3, 5, 4))
        priors = rng.uniform(0.5, 2, (4, 4))
        out = fuse_and_project(ev, priors)
        for n in range(5):
            pairs = []
            for v in range(3):
                e = EvidenceVector(ev[v, n])
                pairs.append((e, opinion_from_evidence(e, PriorVector(priors[v])).uncertainty))
            fused = aggregate_weighted(pairs)
            np.testing.assert_allclose(out.fused_evidence[n], fused.values, rtol=1e-12)
            op = opinion_from_evidence(fused, PriorVector(priors[3]))
            np.testing.assert_allclose(out.probs[n], project(op).probs, rtol=1e-12)
            assert out.uncertainty[n] == pytest.approx(op.uncertainty, rel=1e-12)

    def test_pinned_base_rates(self):
        ev = np.zeros((1, 1, 3))
        out = fuse_and_project(ev, np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]), prior_base_rates=False)
        np.testing.assert_allclose(out.probs[0], [1 / 3] * 3)


class TestTrain:
    def test_deterministic(self, prepared):
        a = train(prepared.train, prepared.test, SMALL, prepared.partition)
        b = train(prepared.train, prepared.test, SMALL, prepared.partition)
        assert a.report.to_json() == b.report.to_json()
        assert history_terms(a.history) == history_terms(b.history)

    def test_history_columns_and_lambda(self, prepared):
        art = train(prepared.train, prepared.test, SMALL, prepared.partition)
        assert len(art.history) == SMALL.epochs
        lams = [row["lambda_t"] for row in art.history]
        np.testing.assert_allclose(lams, np.arange(SMALL.epochs) / (SMALL.epochs - 1))
        expected = {"epoch", "lambda_t", "ace_fused", "fd_fused", "ace_view0", "ace_view1", "fd_view0", "fd_view1",
                    "consistency", "total", "train_recall_acc", "test_acc", "prior_0", "prior_1", "prior_2"}
        assert set(art.history[0]) == expected
        # lambda_t = 0 at epoch 0: the total has no fairness contribution
        row = art.history[0]
        assert row["total"] == pytest.approx(
            row["ace_fused"] + row["ace_view0"] + row["ace_view1"] + SMALL.beta_con * row["consistency"], rel=1e-12
        )
        evaluated = [r["epoch"] for r in art.history if not math.isnan(r["test_acc"])]
        assert evaluated == [0, 4, 8, 11]

    def test_prior_columns_follow_schedule(self, prepared):
        art = train(prepared.train, prepared.test, SMALL, prepared.partition)
        priors = np.array([[row[f"prior_{c}"] for c in range(3)] for row in art.history])
        assert np.all(priors[:3] == 1.0)
        # constant between refreshes (refresh at 3, 5, 7, ...)
        for start in (3, 5, 7, 9):
            np.testing.assert_array_equal(priors[start], priors[start + 1])
        assert np.all(priors >= SMALL.schedule.gamma)

    def test_flags_off_is_plain_edl(self, prepared):
        cfg = SMALL.with_ablation(False, False, False)
        art = train(prepared.train, prepared.test, cfg, prepared.partition)
        ref = reference_plain_edl(prepared.train, cfg)
        assert len(ref) == len(art.history)
        for got, want in zip(art.history, ref):
            assert got["lambda_t"] == 0.0
            assert got["total"] == want
            assert all(got[f"prior_{c}"] == 1.0 for c in range(3))

    def test_consistency_flag_equals_zero_weight(self, prepared):
        off = train(prepared.train, None, SMALL.with_ablation(True, True, False))
        zero = train(prepared.train, None, replace(SMALL, beta_con=0.0))
        assert [r["total"] for r in off.history] == [r["total"] for r in zero.history]

    def test_perfect_recall_keeps_unit_prior(self):
        ds = synth_generate(3, 2, [6, 6], 40, 25.0, seed=2)
        prep = prepare_data(ds, SMALL.data, seed=0)
        cfg = replace(SMALL.with_ablation(True, False, False), schedule=replace(SMALL.schedule, warmup_epochs=6))
        art = train(prep.train, prep.test, cfg, prep.partition)
        # every epoch feeding a refresh (5, 7, 9) has perfect recall
        assert all(row["train_recall_acc"] == 1.0 for row in art.history[5:])
        for row in art.history:
            assert all(row[f"prior_{c}"] == 1.0 for c in range(3))

    def test_leakage_guard(self, prepared):
        with pytest.raises(DataError):
            train(prepared.train, prepared.train, SMALL)

    def test_dim_mismatch(self, prepared):
        other = synth_generate(3, 2, [3, 3], 5, 1.0)
        other = MultiViewDataset(other.views, other.labels, 3, other.indices + 10_000)
        with pytest.raises(DimensionError):
            train(prepared.train, other, SMALL)

    def test_divergence_aborts(self, prepared):
        with pytest.raises(TrainingAborted) as exc:
            train(prepared.train, None, replace(SMALL, lr=1e300))
        assert isinstance(exc.value, NumericError) and exc.value.epoch == 0

    def test_per_view_prior_runs(self, prepared):
        art = train(prepared.train, prepared.test, replace(SMALL, per_view_prior=True, fresh_eval_prior=True))
        assert art.model.priors.shape == (3, 3)

    def test_exact_fusion_grad_runs(self, prepared):
        art = train(prepared.train, None, replace(SMALL, exact_fusion_grad=True, epochs=3))
        assert all(np.isfinite(r["total"]) for r in art.history)


def reference_plain_edl(ds, cfg):
    """Independent loop: unit prior, no fairness, no consistency."""
    from faml.trainer import _net_seed

    k = ds.num_classes
    nets = [EvidentialNet(NetConfig(d, k, list(cfg.hidden_dims), _net_seed(cfg.seed, v))) for v, d in enumerate(ds.dims)]
    opts = [Adam(lr=cfg.lr, weight_decay=cfg.weight_decay) for _ in nets]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1_000_003]))
    w = class_balance_weights(ds.class_counts)
    totals = []
    n = len(ds)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        acc = 0.0
        for start in range(0, n, cfg.batch_size):
            rows = order[start : start + cfg.batch_size]
            ev = np.stack([net.forward(v[rows]) for net, v in zip(nets, ds.views)])
            parts, grad = total_loss(ev, ds.labels[rows], np.ones(k), w, 0.0, 0.0)
            acc += parts.total * rows.size
            for net, opt, g in zip(nets, opts, grad):
                opt.step(net.params, net.backward(g))
        totals.append(acc / n)
    return totals


class TestEvaluate:
    def test_twice_identical_and_matches_train_report(self, prepared):
        art = train(prepared.train, prepared.test, SMALL, prepared.partition)
        a = evaluate(art.model, prepared.test, prepared.partition)
        b = evaluate(art.model, prepared.test, prepared.partition)
        assert a == b
        assert a.to_json() == art.report.to_json()

    def test_regions_recombine(self, prepared):
        art = train(prepared.train, prepared.test, SMALL, prepared.partition)
        r = art.report
        y = prepared.test.labels
        total = 0.0
        for name, acc in (("head", r.acc_head), ("medium", r.acc_med), ("tail", r.acc_tail)):
            m = int(np.isin(y, list(getattr(prepared.partition, name))).sum())
            total += acc * m
        assert total / y.size == pytest.approx(r.acc_all, abs=1e-12)


class TestRunDirectory:
    def test_write_load_report(self, prepared, tmp_path):
        art = train(prepared.train, prepared.test, SMALL, prepared.partition)
        run = write_run(tmp_path / "run", art, prepared)
        for name in ("config.toml", "manifest.json", "history.csv", "report.json", "view_0.npz", "view_1.npz"):
            assert (run / name).exists()
        model = Model.load(run)
        assert evaluate(model, prepared.test, prepared.partition) == art.report
        hist = read_history(run / "history.csv")
        assert [r["total"] for r in hist] == [r["total"] for r in art.history]
        written = emit_plot_data(run, tmp_path / "plots")
        assert set(written) == {"evidence_strength", "uncertainty_hist"}

    def test_report_needs_run(self, tmp_path):
        with pytest.raises(DataError):
            emit_plot_data(tmp_path)


class TestGrids:
    def test_ablation_rows(self):
        ds = synth_generate(3, 2, [4, 4], 30, 1.5, seed=1)
        cfg = replace(SMALL, epochs=4)
        grid = ablation_matrix(cfg, ds, seeds=[0, 1], workers=2)
        assert len(grid) == len(ABLATION_ROWS) and all(len(r) == 2 for r in grid)
        assert grid[0][0].label == "baseline" and grid[-1][0].label == "prior+fairness+consistency"
        summary = summarize(grid[0])
        assert summary["n_seeds"] == 2 and 0 <= summary["acc_all_mean"] <= 1

    def test_threads_match_serial(self):
        ds = synth_generate(3, 2, [4, 4], 30, 1.5, seed=1)
        cfg = replace(SMALL, epochs=3)
        a = gamma_sweep(cfg, ds, [0.5, 2.0], seeds=[0, 1], workers=1)
        b = gamma_sweep(cfg, ds, [0.5, 2.0], seeds=[0, 1], workers=3)
        assert [[r.report.to_json() for r in row] for row in a] == [[r.report.to_json() for r in row] for row in b]
