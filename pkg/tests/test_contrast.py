import math

import numpy as np
import pytest
from conftest import random_surface
from hypothesis import given
from hypothesis import strategies as st
from oracles import naive_contrast_U, naive_sigma_hat

from fwdvar.contrast import (
    ContrastConfig,
    ContrastEvaluator,
    _start_points,
    contrast_F,
    contrast_U,
    minimize_contrast,
    sigma_hat,
)
from fwdvar.errors import ConfigError, EstimationError
from fwdvar.kernels import CustomKernel, KernelSpec, ParamBox, constant_kernel
from fwdvar.simulate import SimConfig, simulate_surface
from fwdvar.surface import CumulativeVarianceSurface, MaturityGrid, TimeGrid

EXP = KernelSpec("exponential")
SPL = KernelSpec("shifted_power_law", 0.01)
NPL = KernelSpec("negative_power_law")
BOX = ParamBox([0.01, -3.0], [10.0, 3.0])


def numpy_kernel(spec):
    """The same kernel hidden behind the generic (non-compiled) code path."""
    return CustomKernel(spec.eval, spec.grad, q=spec.q)


def linear_surface(n=4, d=5, slope=0.1):
    # I_t^{T_j} = slope * j on every row, ignoring the zero convention on purpose
    v = np.tile(slope * np.arange(d + 1, dtype=float), (n + 1, 1))
    return CumulativeVarianceSurface(TimeGrid(n), MaturityGrid.uniform(d), v)


class TestSigmaHat:
    def test_constant_kernel_telescopes(self):
        s = linear_surface()
        k = CustomKernel(lambda th, t: np.full(np.shape(t), 2.0), lambda th, t: np.zeros((1,) + np.shape(t)), q=1)
        # lags are all positive on row 0, so sigma_hat^j = 2 * (I^j - I^0) = 0.2 j
        np.testing.assert_allclose(sigma_hat(s, k, [0.0], 0), 0.2 * np.arange(1, 6), rtol=1e-14)

    def test_matches_naive_loop(self, rng):
        for spec in (EXP, SPL, NPL):
            s = random_surface(rng, 15, 9, uniform=False)
            for i in (0, 4, 15):
                np.testing.assert_allclose(
                    sigma_hat(s, spec, [0.7, 0.4], i), naive_sigma_hat(s, spec, [0.7, 0.4], i), rtol=1e-12, atol=1e-15
                )

    def test_index_range(self, rng):
        with pytest.raises(IndexError):
            sigma_hat(random_surface(rng, 5, 3), EXP, [1.0, 1.0], 6)


class TestContrastF:
    def test_unit_example(self):
        # |s|^2 / d = 1 - eps makes the log vanish, |x|^2 = |s|^2 makes the ratio 1
        eps, d = 1e-3, 4
        s = np.full(d, math.sqrt(1 - eps))
        assert contrast_F(s, s, eps) == pytest.approx(1.0, abs=1e-15)

    def test_log_two_example(self):
        eps, d = 1e-3, 4
        s = np.full(d, math.sqrt(2 - eps))
        x = np.full(d, math.sqrt((2 - eps) / 2 - eps / 2))
        assert contrast_F(s, x, eps) == pytest.approx(math.log(2) + 0.5, abs=1e-12)
        assert math.log(2) + 0.5 == pytest.approx(1.193147, abs=1e-6)

    @given(xx=st.floats(0.0, 50.0), d=st.integers(1, 30), eps=st.floats(1e-6, 1.0))
    def test_scalar_minimizer(self, xx, d, eps):
        # as a function of a = |s|^2 / d the term is minimized at a = |x|^2 / d
        def F(a):
            return math.log(a + eps) + (xx + eps * d) / (d * a + eps * d)

        a_star = xx / d
        for a in (a_star * 0.5, a_star + 0.1, a_star * 2 + 1e-3):
            assert F(a_star) <= F(a) + 1e-12

    @given(d=st.integers(1, 10), eps=st.floats(1e-8, 1.0), seed=st.integers(0, 10_000))
    def test_bounded_below_by_log_eps(self, d, eps, seed):
        r = np.random.default_rng(seed)
        assert contrast_F(r.normal(size=d), r.normal(size=d), eps) >= math.log(eps)

    @pytest.mark.parametrize("eps", [0.0, -1e-3])
    def test_rejects_non_positive_epsilon(self, eps):
        with pytest.raises(ConfigError, match="epsilon"):
            contrast_F(np.ones(3), np.ones(3), eps)


class TestContrastU:
    def test_single_step_reduces_to_F(self, rng):
        s = random_surface(rng, 1, 6)
        row = sigma_hat(s, EXP, [1.0, 0.5], 0)
        x = (s.values[1, 1:] - s.values[0, 1:]) * 1.0
        assert contrast_U(s, EXP, [1.0, 0.5], 1e-3) == pytest.approx(contrast_F(row, x, 1e-3), rel=1e-13)

    @pytest.mark.parametrize("spec", [EXP, SPL, NPL])
    def test_compiled_and_numpy_paths_match_oracle(self, spec, rng):
        for _ in range(3):
            s = random_surface(rng, int(rng.integers(5, 30)), int(rng.integers(3, 12)), uniform=False)
            xi = [rng.uniform(0.2, 3.0), rng.uniform(-1.0, 1.0)]
            eps = 10 ** rng.uniform(-5, -1)
            want = naive_contrast_U(s, spec, xi, eps)
            assert ContrastEvaluator(s, spec, eps).value(xi) == pytest.approx(want, rel=1e-10, abs=1e-12)
            assert ContrastEvaluator(s, numpy_kernel(spec), eps).value(xi) == pytest.approx(want, rel=1e-10, abs=1e-12)

    def test_accepts_config_or_float(self, rng):
        s = random_surface(rng, 8, 4)
        assert contrast_U(s, EXP, [1.0, 1.0], ContrastConfig(epsilon=1e-2)) == contrast_U(s, EXP, [1.0, 1.0], 1e-2)

    def test_evaluator_rejects_zero_epsilon(self, rng):
        with pytest.raises(ConfigError):
            ContrastEvaluator(random_surface(rng, 4, 3), EXP, 0.0)

    def test_counts_evaluations(self, rng):
        ev = ContrastEvaluator(random_surface(rng, 6, 3), EXP, 1e-3)
        for _ in range(3):
            ev([1.0, 0.0])
        assert ev.evaluations == 3

    def test_true_parameter_usually_beats_a_shifted_one(self):
        # at n = 2000 the contrast at theta0 lies below the contrast half a unit away
        cfg = SimConfig(EXP, [1.0, -1.0], TimeGrid(2000), MaturityGrid.uniform(200))
        wins = 0
        for seed in range(20):
            s = simulate_surface(SimConfig(cfg.kernel, cfg.theta0, cfg.time_grid, cfg.maturity_grid, seed=seed))
            ev = ContrastEvaluator(s, EXP, 1e-3)
            wins += ev.value([1.0, -1.0]) <= ev.value([1.5, -0.5])
        assert wins >= 19


class TestConfig:
    def test_defaults(self):
        c = ContrastConfig()
        assert (c.epsilon, c.multistart_count, c.simplex_tolerance, c.max_iterations) == (1e-3, 9, 1e-6, 2000)

    @pytest.mark.parametrize(
        "kw", [{"epsilon": 0.0}, {"epsilon": float("nan")}, {"multistart_count": 0}, {"descents": -1}, {"max_iterations": -1}]
    )
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            ContrastConfig(**kw)

    def test_square_count_gives_grid_with_corners(self):
        pts = _start_points(np.array([0.0, -1.0]), np.array([1.0, 1.0]), 9)
        assert pts.shape == (9, 2)
        assert [0.0, -1.0] in pts.tolist() and [1.0, 1.0] in pts.tolist()

    def test_other_counts_use_latin_hypercube(self):
        pts = _start_points(np.array([0.0, -1.0]), np.array([1.0, 1.0]), 7)
        assert pts.shape == (7, 2)
        assert np.all(pts >= [0.0, -1.0]) and np.all(pts <= [1.0, 1.0])
        # one point per stratum in each coordinate
        assert sorted(np.floor(pts[:, 0] * 7).astype(int)) == list(range(7))


@pytest.fixture(scope="module")
def surface():
    return simulate_surface(SimConfig(EXP, [1.0, -1.0], TimeGrid(400), MaturityGrid.uniform(120), seed=5))


class TestMinimize:
    def test_recovers_parameter_roughly(self, surface):
        est = minimize_contrast(surface, EXP, BOX)
        assert est.converged
        assert abs(est.theta_hat[0] - 1.0) < 0.3 and abs(est.theta_hat[1] + 1.0) < 0.5
        assert not est.at_boundary.any()
        assert est.contrast_value == pytest.approx(contrast_U(surface, EXP, est.theta_hat, 1e-3), rel=1e-12)

    def test_profiled_and_plain_searches_agree(self, surface):
        a = minimize_contrast(surface, EXP, BOX, ContrastConfig(profile_scale=True))
        b = minimize_contrast(surface, EXP, BOX, ContrastConfig(profile_scale=False, multistart_count=25, descents=3))
        assert b.contrast_value >= a.contrast_value - 1e-9
        np.testing.assert_allclose(a.theta_hat, b.theta_hat, atol=2e-3)

    def test_minimum_is_local(self, surface):
        est = minimize_contrast(surface, EXP, BOX)
        ev = ContrastEvaluator(surface, EXP, 1e-3)
        for step in ([1e-3, 0], [-1e-3, 0], [0, 1e-3], [0, -1e-3]):
            assert ev.value(est.theta_hat + step) >= est.contrast_value - 1e-12

    def test_fixed_component_is_exact(self, surface):
        est = minimize_contrast(surface, EXP, BOX, fixed={0: 1.0})
        assert est.theta_hat[0] == 1.0
        np.testing.assert_array_equal(est.free, [1])
        assert not est.at_boundary[0]

    def test_degenerate_box(self, surface):
        box = ParamBox([1.2, -0.7], [1.2, -0.7])
        est = minimize_contrast(surface, EXP, box)
        np.testing.assert_array_equal(est.theta_hat, [1.2, -0.7])
        assert est.free.size == 0 and est.converged

    def test_two_point_box_without_descent_picks_best_corner(self, surface):
        box = ParamBox([1.0, -1.0], [1.0, 1.0])
        est = minimize_contrast(surface, EXP, box, ContrastConfig(multistart_count=2, descents=0, profile_scale=False))
        ev = ContrastEvaluator(surface, EXP, 1e-3)
        best = min([[1.0, -1.0], [1.0, 1.0]], key=ev.value)
        np.testing.assert_array_equal(est.theta_hat, best)

    def test_ties_break_towards_lexicographically_smallest(self):
        # an all-zero surface makes the contrast constant in theta
        s = CumulativeVarianceSurface(TimeGrid(3), MaturityGrid.uniform(3), np.zeros((4, 4)))
        box = ParamBox([0.5, -1.0], [1.5, 1.0])
        est = minimize_contrast(s, EXP, box, ContrastConfig(descents=0, profile_scale=False))
        np.testing.assert_array_equal(est.theta_hat, [0.5, -1.0])

    def test_boundary_flag(self, surface):
        box = ParamBox([0.01, 0.5], [10.0, 3.0])
        est = minimize_contrast(surface, EXP, box)
        assert est.at_boundary[1] and est.theta_hat[1] == pytest.approx(0.5)

    def test_fixed_outside_box(self, surface):
        with pytest.raises(ConfigError):
            minimize_contrast(surface, EXP, BOX, fixed={0: 50.0})
        with pytest.raises(ConfigError):
            minimize_contrast(surface, EXP, BOX, fixed={2: 1.0})

    def test_dimension_mismatch(self, surface):
        with pytest.raises(ValueError):
            minimize_contrast(surface, constant_kernel(), BOX)

    def test_overflow_everywhere(self, surface):
        k = CustomKernel(lambda th, t: np.full(np.shape(t), np.inf), lambda th, t: np.zeros((1,) + np.shape(t)), q=1)
        with pytest.raises(EstimationError):
            minimize_contrast(surface, k, ParamBox([0.0], [1.0]), ContrastConfig(profile_scale=False))

    def test_result_dict(self, surface):
        d = minimize_contrast(surface, EXP, BOX, fixed={0: 1.0}).as_dict()
        assert set(d) == {"theta_hat", "contrast_value", "converged", "at_boundary", "evaluations", "epsilon", "free"}
        assert d["free"] == [1]
