from fractions import Fraction

import numpy as np
import pytest

from faml.errors import ArgumentError, DimensionError
from faml.losses import (
    ace_batch,
    ace_loss,
    acc_loss,
    class_balance_weights,
    consistency_batch,
    consistency_loss,
    fairness_term,
    lambda_schedule,
    total_loss,
)
from faml.numerics import finite_diff_check
from faml.sl_core import DirichletParams, EvidenceVector, fairness_degree, fuse_evidence

D = DirichletParams


def random_instance(rng, max_views=3, max_classes=5, batch=(2, 7)):
    v = int(rng.integers(1, max_views + 1))
    k = int(rng.integers(2, max_classes + 1))
    b = int(rng.integers(*batch))
    e = rng.uniform(0.05, 6.0, (v, b, k))
    y = rng.integers(0, k, b)
    prior = rng.uniform(0.3, 4.0, k)
    cw = rng.uniform(0.2, 3.0, k)
    return e, y, prior, cw


class TestAce:
    def test_flat_two_class(self):
        value, _ = ace_loss(D([1, 1]), 0)
        assert abs(value - 1.0) <= 1e-12

    def test_telescoping(self):
        value, _ = ace_loss(D([2, 1, 1]), 0)
        assert value == pytest.approx(float(Fraction(1, 2) + Fraction(1, 3)), abs=1e-12)

    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            k = int(rng.integers(2, 6))
            alpha = rng.uniform(0.2, 20.0, k)
            y = int(rng.integers(k))
            rep = finite_diff_check(lambda a: ace_loss(D(a), y)[0], lambda a: ace_loss(D(a), y)[1], alpha)
            assert rep.max_relative_error <= 1e-4, rep

    def test_invalid_label(self):
        with pytest.raises(ArgumentError):
            ace_loss(D([1, 1]), 2)

    def test_all_on_true_class_minimizes(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            k = int(rng.integers(2, 6))
            budget = rng.uniform(0.1, 50)
            y = int(rng.integers(k))
            best = np.ones(k)
            best[y] += budget
            other = np.ones(k) + budget * rng.dirichlet(np.ones(k))
            assert ace_loss(D(best), y)[0] <= ace_loss(D(other), y)[0] + 1e-12

    def test_batch_matches_single(self):
        alpha = np.array([[1.0, 2.0, 3.0], [4.0, 0.5, 0.5]])
        vals, grads = ace_batch(alpha, np.array([2, 0]))
        for i, y in enumerate([2, 0]):
            v, g = ace_loss(D(alpha[i]), y)
            assert vals[i] == v
            np.testing.assert_array_equal(grads[i], g)


class TestFairnessTerm:
    def test_value_matches_fairness_degree(self):
        rng = np.random.default_rng(2)
        ev = rng.uniform(0, 5, (9, 3))
        y = np.array([0, 0, 1, 2, 2, 2, 1, 0, 1])
        value, _ = fairness_term(ev, y)
        assert value == pytest.approx(fairness_degree([EvidenceVector(r) for r in ev], labels=y), rel=1e-13)

    def test_identical_class_means(self):
        ev = np.array([[2.0, 0.0], [0.0, 2.0]])
        value, grad = fairness_term(ev, np.array([0, 1]))
        assert value == 0.0
        assert np.all(grad == 0)

    def test_gradient_closed_form(self):
        # two classes, class means 1 and 3, grand mean 2, m = 2:
        # d/de_{n, y_n} = 2 (mean_y - 2) / (2 * B_y)
        ev = np.array([[1.0, 5.0], [1.0, 0.0], [9.0, 3.0]])
        y = np.array([0, 0, 1])
        value, grad = fairness_term(ev, y)
        assert value == 1.0
        expect = np.zeros_like(ev)
        expect[0, 0] = expect[1, 0] = 2 * (1 - 2) / (2 * 2)
        expect[2, 1] = 2 * (3 - 2) / (2 * 1)
        np.testing.assert_allclose(grad, expect, rtol=1e-15)

    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            b, k = int(rng.integers(2, 9)), int(rng.integers(2, 6))
            ev = rng.uniform(0.0, 5.0, (b, k))
            y = rng.integers(0, k, b)
            rep = finite_diff_check(
                lambda x: fairness_term(x.reshape(b, k), y)[0],
                lambda x: fairness_term(x.reshape(b, k), y)[1].ravel(),
                ev.ravel(),
            )
            assert rep.max_relative_error <= 1e-4, rep

    def test_empty_batch(self):
        with pytest.raises(ArgumentError):
            fairness_term(np.zeros((0, 3)), np.zeros(0, dtype=int))


class TestAccLoss:
    def test_lambda_zero_equals_ace(self):
        d = D([3.0, 1.5, 2.0])
        batch = np.random.default_rng(4).uniform(0, 3, (5, 3))
        value, g, g_batch = acc_loss(d, 1, batch, np.array([0, 1, 2, 0, 1]), 0.0)
        ace, g_ace = ace_loss(d, 1)
        assert value == ace
        np.testing.assert_array_equal(g, g_ace)
        assert np.all(g_batch == 0)

    def test_equal_class_means_add_nothing(self):
        d = D([2.0, 2.0])
        batch = np.array([[3.0, 1.0], [1.0, 3.0]])
        value, _, g_batch = acc_loss(d, 0, batch, np.array([0, 1]), 0.7)
        assert value == ace_loss(d, 0)[0]
        assert np.all(g_batch == 0)

    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            k, b = int(rng.integers(2, 5)), int(rng.integers(2, 7))
            alpha = rng.uniform(0.5, 8.0, k)
            batch = rng.uniform(0.0, 6.0, (b, k))
            yb = rng.integers(0, k, b)
            y = int(rng.integers(k))
            lam = float(rng.uniform())
            x0 = np.concatenate([alpha, batch.ravel()])

            def f(x):
                return acc_loss(D(x[:k]), y, x[k:].reshape(b, k), yb, lam)[0]

            def g(x):
                _, gs, gb = acc_loss(D(x[:k]), y, x[k:].reshape(b, k), yb, lam)
                return np.concatenate([gs, gb.ravel()])

            assert finite_diff_check(f, g, x0).max_relative_error <= 1e-4

    def test_lambda_out_of_range(self):
        with pytest.raises(ArgumentError):
            acc_loss(D([1, 1]), 0, np.ones((2, 2)), np.array([0, 1]), 1.5)


class TestConsistency:
    def test_single_view(self):
        value, grad = consistency_loss([D([1.0, 3.0])])
        assert value == 0.0 and np.all(grad == 0)

    def test_identical_views(self):
        value, grad = consistency_loss([D([2.0, 5.0, 1.0])] * 3)
        assert value == 0.0 and np.all(grad == 0)

    def test_worked_value(self):
        value, _ = consistency_loss([D([1, 1]), D([2, 2])])
        assert value == pytest.approx(2 / 15, rel=1e-13)

    def test_permutation_invariant_and_nonnegative(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            views = [D(rng.uniform(0.5, 9, 4)) for _ in range(3)]
            a, _ = consistency_loss(views)
            b, _ = consistency_loss(views[::-1])
            assert a >= 0
            assert a == pytest.approx(b, rel=1e-13)

    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            v, k = int(rng.integers(2, 4)), int(rng.integers(2, 6))
            alpha = rng.uniform(0.5, 8.0, (v, k)).ravel()

            def f(x):
                return consistency_loss([D(r) for r in x.reshape(v, k)])[0]

            analytic = consistency_loss([D(r) for r in alpha.reshape(v, k)])[1].ravel()
            h = 1e-6
            for i in range(alpha.size):
                e = np.zeros_like(alpha)
                e[i] = h
                numeric = (f(alpha + e) - f(alpha - e)) / (2 * h)
                if analytic[i] == 0.0:
                    # a view whose variance is the median of the others has
                    # cancelling |.| terms; only rounding noise remains
                    assert abs(numeric) <= 1e-9
                else:
                    assert abs(analytic[i] - numeric) <= 1e-4 * max(abs(analytic[i]), abs(numeric))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            consistency_loss([D([1, 1]), D([1, 1, 1])])

    def test_batch_shape(self):
        vals, grad = consistency_batch(np.ones((2, 5, 3)) + np.arange(3))
        assert vals.shape == (5,) and grad.shape == (2, 5, 3)


class TestSchedule:
    def test_endpoints_and_midpoint(self):
        assert lambda_schedule(0, 10) == 0.0
        assert lambda_schedule(10, 10) == 1.0
        assert lambda_schedule(5, 10) == 0.5

    def test_clamped(self):
        assert lambda_schedule(20, 10) == 1.0


class TestClassWeights:
    def test_raw_is_inverse_count(self):
        w = class_balance_weights([10, 20, 40], normalize=False)
        np.testing.assert_allclose(w, [0.1, 0.05, 0.025])

    def test_doubling_count_halves_weight(self):
        a = class_balance_weights([10, 20, 40], normalize=False)
        b = class_balance_weights([10, 40, 40], normalize=False)
        assert b[1] == a[1] / 2

    def test_normalized_unit_mean_preserves_ratios(self):
        w = class_balance_weights([10, 20, 40])
        assert w.mean() == pytest.approx(1.0)
        assert w[0] / w[2] == pytest.approx(4.0)

    def test_uniform_counts_give_ones(self):
        np.testing.assert_allclose(class_balance_weights([7, 7, 7]), 1.0)


class TestTotalLoss:
    def test_single_view_reduces_to_twice_ace(self):
        rng = np.random.default_rng(8)
        e = rng.uniform(0, 5, (1, 6, 3))
        y = rng.integers(0, 3, 6)
        parts, _ = total_loss(e, y, np.ones(3), np.ones(3), 0.0, 0.0)
        vals, _ = ace_batch(e[0] + 1.0, y)
        assert parts.total == pytest.approx(2 * vals.mean(), rel=1e-12)
        assert parts.consistency == 0.0

    def test_recomposition(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            e, y, prior, cw = random_instance(rng)
            parts, _ = total_loss(e, y, prior, cw, 0.6, 0.8)
            assert parts.total == pytest.approx(parts.recomposed(), rel=1e-9)
            manual = (
                parts.ace_fused
                + parts.ace_per_view.sum()
                + 0.6 * parts.weight_mean * (parts.fairness_fused + parts.fairness_per_view.sum())
                + 0.8 * parts.consistency
            )
            assert parts.total == pytest.approx(manual, rel=1e-9)

    def test_class_weight_scales_supervised_part(self):
        e = np.array([[[2.0, 1.0], [0.5, 3.0]]])
        y = np.array([0, 1])
        a, _ = total_loss(e, y, np.ones(2), np.array([1.0, 1.0]), 0.0, 0.0)
        b, _ = total_loss(e, y, np.ones(2), np.array([1.0, 0.5]), 0.0, 0.0)
        va, _ = ace_batch(e[0] + 1, y)
        assert a.total - b.total == pytest.approx(2 * 0.5 * va[1] / 2, rel=1e-12)

    def test_exact_gradient_finite_differences(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            e, y, prior, cw = random_instance(rng)
            lam, bc = float(rng.uniform()), float(rng.uniform(0, 2))
            shape = e.shape

            def f(x):
                return total_loss(x.reshape(shape), y, prior, cw, lam, bc, exact_fusion_grad=True)[0].total

            def g(x):
                return total_loss(x.reshape(shape), y, prior, cw, lam, bc, exact_fusion_grad=True)[1].ravel()

            assert finite_diff_check(f, g, e.ravel()).max_relative_error <= 1e-4

    def test_default_gradient_holds_fusion_weights_fixed(self):
        # With c_v frozen at their values at the point, the default gradient
        # is the exact gradient of the frozen-weight objective.
        rng = np.random.default_rng(11)
        for _ in range(30):
            e, y, prior, cw = random_instance(rng, max_views=3)
            if e.shape[0] < 2:
                continue
            lam, bc = 0.5, 1.0
            shape = e.shape
            w_tot = prior.sum()
            u0 = w_tot / (w_tot + e.sum(axis=2))

            def frozen(x):
                x = x.reshape(shape)
                fused = fuse_evidence(x, u0)
                # rebuild the objective with frozen fusion weights
                parts_views, _ = total_loss(x, y, prior, cw, lam, bc)
                ace_f, _ = ace_batch(fused + prior, y)
                ft, _ = fairness_term(fused, y)
                w = cw[y]
                return (
                    parts_views.total
                    - parts_views.ace_fused
                    - lam * parts_views.weight_mean * parts_views.fairness_fused
                    + float(np.mean(w * ace_f))
                    + lam * float(w.mean()) * ft
                )

            def g(x):
                return total_loss(x.reshape(shape), y, prior, cw, lam, bc)[1].ravel()

            assert finite_diff_check(frozen, g, e.ravel()).max_relative_error <= 1e-4

    def test_per_view_priors(self):
        rng = np.random.default_rng(12)
        e, y, _, cw = random_instance(rng, max_views=2)
        priors = rng.uniform(0.5, 3.0, (e.shape[0] + 1, e.shape[2]))

        def f(x):
            return total_loss(x.reshape(e.shape), y, priors, cw, 0.3, 0.5, exact_fusion_grad=True)[0].total

        def g(x):
            return total_loss(x.reshape(e.shape), y, priors, cw, 0.3, 0.5, exact_fusion_grad=True)[1].ravel()

        assert finite_diff_check(f, g, e.ravel()).max_relative_error <= 1e-4

    def test_shared_prior_equals_tiled(self):
        rng = np.random.default_rng(13)
        e, y, prior, cw = random_instance(rng)
        a, ga = total_loss(e, y, prior, cw, 0.4, 0.9)
        b, gb = total_loss(e, y, np.tile(prior, (e.shape[0] + 1, 1)), cw, 0.4, 0.9)
        assert a.total == b.total
        np.testing.assert_array_equal(ga, gb)

    def test_nonnegative(self):
        rng = np.random.default_rng(14)
        for _ in range(50):
            e, y, prior, cw = random_instance(rng)
            assert total_loss(e, y, prior, cw, 1.0, 1.0)[0].total >= 0

    def test_bad_shapes(self):
        with pytest.raises(DimensionError):
            total_loss(np.ones((2, 3)), np.zeros(2, dtype=int), np.ones(3), np.ones(3), 0, 0)
        with pytest.raises(DimensionError):
            total_loss(np.ones((1, 2, 3)), np.zeros(2, dtype=int), np.ones(4), np.ones(3), 0, 0)
