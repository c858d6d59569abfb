"""Convex-envelope certificates: hull construction, dual values, ascent."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motbound.envelope import (convex_envelope, dual_value, evaluate_dual,
                               extended_grid, improve_u2, u2_from_csv, u2_to_csv)
from motbound.errors import GridCoverage
from motbound.fixtures import instance_a_marginals, smooth_pair, smooth_u2
from motbound.mot import MotProblem, bound
from motbound.payoff import forward_start_straddle

CERT_TOL = 1e-8

value_lists = st.lists(st.integers(-64, 64).map(lambda k: k / 8.0),
                       min_size=2, max_size=12)


def hull_values(xs, ys) -> np.ndarray:
    return convex_envelope(xs, ys)(np.asarray(xs, dtype=float))


class TestConvexEnvelope:
    def test_tent_collapses_to_chord(self):
        env = convex_envelope([0.0, 1.0, 2.0], [0.0, 2.0, 0.0])
        assert env(1.0) == pytest.approx(0.0, abs=1e-15)
        assert env(0.5) == pytest.approx(0.0, abs=1e-15)

    def test_convex_input_unchanged(self):
        xs = [0.0, 1.0, 2.0, 3.0]
        ys = [3.0, 0.0, 0.0, 3.0]
        np.testing.assert_allclose(hull_values(xs, ys), ys, atol=1e-15)

    def test_rejects_degenerate_input(self):
        with pytest.raises(ValueError):
            convex_envelope([0.0], [1.0])
        with pytest.raises(ValueError):
            convex_envelope([0.0, 0.0], [1.0, 1.0])

    @settings(max_examples=200, deadline=None)
    @given(value_lists)
    def test_below_input_convex_idempotent(self, ys):
        xs = np.arange(len(ys), dtype=float)
        env = convex_envelope(xs, ys)
        vals = env(xs)
        assert np.all(vals <= np.asarray(ys) + 1e-12)
        slopes = np.diff(vals) / np.diff(xs)
        assert np.all(np.diff(slopes) >= -1e-12)
        np.testing.assert_allclose(hull_values(xs, vals), vals, atol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(value_lists, st.integers(0, 10 ** 6))
    def test_monotone_in_the_input(self, ys, seed):
        xs = np.arange(len(ys), dtype=float)
        bump = np.random.default_rng(seed).uniform(0.0, 2.0, size=len(ys))
        lower = hull_values(xs, ys)
        upper = hull_values(xs, np.asarray(ys) + bump)
        assert np.all(lower <= upper + 1e-12)

    def test_near_duplicate_points_stay_convex(self):
        # regression: two pairs of x values one ulp apart once produced a
        # "hull" with a vertex above the true envelope (the cross product
        # cancels catastrophically on near-collinear triples)
        xs = np.array([
            -1.5076340360826694, -1.0996891962405628, -0.9090909090909092,
            -0.8181818181818181, -0.7272727272727272, -0.5454545454545454,
            -0.5454545454545453, -0.3636363636363637, -0.27272727272727265,
            -0.18181818181818182, -5.724587470723465e-17, 2.0354088784794514e-16,
            0.18181818181818177, 0.2727272727272732, 0.3636363636363637,
            0.5454545454545456, 0.545454545454546, 0.7272727272727272,
            0.8181818181818185, 0.9090909090909092, 1.099689196240564,
            1.5076340360826692,
        ])
        ys = np.array([
            0.6165109518983085, 0.7031975808112451, 0.8235512883771254,
            0.7630167599912094, 0.810859161894923, 0.8210599556672892,
            0.8210599556672893, 0.8596876355829038, 0.6971054635214663,
            0.7072131049059283, 0.363636363636364, 0.3636363636363635,
            0.3331242079424138, 0.13603243862581232, 0.111509841655873,
            0.06242962841310659, 0.06242962841310645, 0.04177630131358906,
            -0.05120673446781715, 0.04401589446863996, -0.16850147559912587,
            -0.25294462860477074,
        ])
        env = convex_envelope(xs, ys)
        vals = env(xs)
        assert np.all(vals <= ys + 1e-12)
        slopes = np.diff(env.values) / np.diff(env.knots)
        assert np.all(np.diff(slopes) >= -1e-9)


class TestDualValue:
    def test_zero_u2_straddle_gives_zero(self):
        mu1, mu2 = instance_a_marginals().marginals
        grid = extended_grid(mu1, mu2)
        assert dual_value(np.zeros(grid.size), forward_start_straddle(), mu1, mu2) \
            == pytest.approx(0.0, abs=1e-15)

    def test_lp_dual_recovers_the_bound_instance_a(self):
        system = instance_a_marginals()
        res = bound(MotProblem(system, forward_start_straddle(), "lower"))
        mu1, mu2 = system.marginals
        grid = extended_grid(mu1, mu2)
        v = dual_value(res.hedge.statics[1](grid), forward_start_straddle(), mu1, mu2)
        assert v == pytest.approx(res.value, abs=1e-9)

    def test_lp_dual_recovers_the_bound_smooth(self):
        system = smooth_pair(51)
        res = bound(MotProblem(system, forward_start_straddle(), "lower"))
        mu1, mu2 = system.marginals
        grid = extended_grid(mu1, mu2)
        v = dual_value(res.hedge.statics[1](grid), forward_start_straddle(), mu1, mu2)
        assert v == pytest.approx(res.value, abs=1e-6)

    def test_closed_form_u2_near_limit_value(self):
        mu1, mu2 = smooth_pair(101).marginals
        grid = extended_grid(mu1, mu2)
        v = dual_value(smooth_u2(grid), forward_start_straddle(), mu1, mu2)
        assert v == pytest.approx(1.0 / 3.0, abs=5e-3)

    def test_random_u2_never_exceeds_the_bound(self):
        system = instance_a_marginals()
        res = bound(MotProblem(system, forward_start_straddle(), "lower"))
        mu1, mu2 = system.marginals
        grid = extended_grid(mu1, mu2)
        rng = np.random.default_rng(7)
        for _ in range(100):
            u2 = rng.uniform(-3.0, 3.0, size=grid.size)
            assert dual_value(u2, forward_start_straddle(), mu1, mu2) \
                <= res.value + CERT_TOL

    def test_constant_shift_is_free(self):
        mu1, mu2 = instance_a_marginals().marginals
        grid = extended_grid(mu1, mu2)
        u2 = np.random.default_rng(3).uniform(-1.0, 1.0, size=grid.size)
        base = dual_value(u2, forward_start_straddle(), mu1, mu2)
        shifted = dual_value(u2 + 1.7, forward_start_straddle(), mu1, mu2)
        assert shifted == pytest.approx(base, abs=1e-12)

    def test_coverage_error(self):
        mu1, mu2 = instance_a_marginals().marginals
        with pytest.raises(GridCoverage):
            dual_value([0.0, 0.0], forward_start_straddle(), mu1, mu2,
                       grid=[-0.5, 0.5])

    def test_size_mismatch(self):
        mu1, mu2 = instance_a_marginals().marginals
        with pytest.raises(ValueError):
            dual_value([0.0, 0.0], forward_start_straddle(), mu1, mu2)


class TestImprove:
    def test_zero_start_reaches_instance_a_value(self):
        mu1, mu2 = instance_a_marginals().marginals
        grid = extended_grid(mu1, mu2)
        out = improve_u2(np.zeros(grid.size), forward_start_straddle(), mu1, mu2, 200)
        assert out.value == pytest.approx(7.0 / 6.0, abs=1e-3)
        assert out.value <= 7.0 / 6.0 + CERT_TOL

    def test_monotone_in_sweeps(self):
        mu1, mu2 = instance_a_marginals().marginals
        grid = extended_grid(mu1, mu2)
        values = [improve_u2(np.zeros(grid.size), forward_start_straddle(),
                             mu1, mu2, k).value for k in (0, 1, 2, 3)]
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))

    @pytest.mark.parametrize("system_maker", [instance_a_marginals, lambda: smooth_pair(11)])
    def test_lp_dual_start_cannot_improve(self, system_maker):
        system = system_maker()
        res = bound(MotProblem(system, forward_start_straddle(), "lower"))
        mu1, mu2 = system.marginals
        grid = extended_grid(mu1, mu2)
        start = res.hedge.statics[1](grid)
        before = dual_value(start, forward_start_straddle(), mu1, mu2)
        assert before == pytest.approx(res.value, abs=1e-9)
        out = improve_u2(start, forward_start_straddle(), mu1, mu2, 1)
        assert out.value >= before - 1e-12
        assert out.value - before <= CERT_TOL
        assert out.value <= res.value + CERT_TOL

    def test_zero_iters_is_evaluate(self):
        mu1, mu2 = instance_a_marginals().marginals
        grid = extended_grid(mu1, mu2)
        u2 = np.random.default_rng(11).uniform(-1.0, 1.0, size=grid.size)
        out = improve_u2(u2, forward_start_straddle(), mu1, mu2, 0)
        assert out.value == pytest.approx(
            dual_value(u2, forward_start_straddle(), mu1, mu2), abs=1e-15)
        np.testing.assert_array_equal(out.u2, u2)

    def test_deterministic(self):
        mu1, mu2 = instance_a_marginals().marginals
        grid = extended_grid(mu1, mu2)
        a = improve_u2(np.zeros(grid.size), forward_start_straddle(), mu1, mu2, 5)
        b = improve_u2(np.zeros(grid.size), forward_start_straddle(), mu1, mu2, 5)
        assert a.value == b.value
        np.testing.assert_array_equal(a.u2, b.u2)


class TestEvaluateDual:
    def test_envelopes_cached_per_atom(self):
        mu1, mu2 = instance_a_marginals().marginals
        grid = extended_grid(mu1, mu2)
        out = evaluate_dual(np.zeros(grid.size), forward_start_straddle(), mu1, mu2)
        assert len(out.per_s1_envelopes) == mu1.points.size
        for x, env in zip(mu1.points, out.per_s1_envelopes):
            # straddle slice minus zero is already convex, so the hull is exact
            assert env(x) == pytest.approx(0.0, abs=1e-15)


class TestExtendedGrid:
    def test_merges_atoms_that_agree_to_rounding(self):
        from motbound.measures import DiscreteMeasure
        a = 6.0 / 11.0
        b = np.nextafter(a, 1.0)
        mu1 = DiscreteMeasure(np.array([-1.0, a]), np.array([0.5, 0.5]))
        mu2 = DiscreteMeasure(np.array([-2.0, b, 2.0]),
                              np.array([0.4, 0.2, 0.4]))
        grid = extended_grid(mu1, mu2)
        assert grid.size == 4
        assert np.all(np.diff(grid) > 1e-12)


class TestCsv:
    def test_round_trip(self):
        grid = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
        u2 = np.array([0.5, -0.25, 0.0, 1.0 / 3.0, -2.0])
        pts, vals = u2_from_csv(u2_to_csv(grid, u2))
        np.testing.assert_allclose(pts, grid, atol=1e-12)
        np.testing.assert_allclose(vals, u2, atol=1e-12)

    def test_sorts_and_accepts_headerless(self):
        pts, vals = u2_from_csv("1.0,2.0\n-1.0,3.0\n")
        np.testing.assert_array_equal(pts, [-1.0, 1.0])
        np.testing.assert_array_equal(vals, [3.0, 2.0])
