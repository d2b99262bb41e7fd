"""Risk functionals and closed-form robust margins."""

import numpy as np
import pytest

from drlyap import (AmbiguitySpec, ConfigError, ContractError, ShapeError,
                    UncertaintySampleSet, V, V_dot, cvar, cvar_result,
                    dr_exponential_margin, dr_margin_general,
                    dr_pointwise_margin, guarantee_product, lipschitz_term,
                    pendulum, pointwise_margins, select_index_j, var,
                    wasserstein_radius)
from drlyap.dro import RiskEvalResult

from test_lyapunov import quadratic_only_pair, random_pair


def rockafellar_min(values, epsilon):
    """Brute-force CVaR: minimize mean((v + t)+)/eps - t over t.

    The objective is piecewise linear with breakpoints at t = -v_i, so
    evaluating at every breakpoint plus a dense bracketing grid yields
    the exact minimum up to float rounding.
    """
    v = np.asarray(values, dtype=np.float64)
    lo, hi = -v.max() - 1.0, -v.min() + 1.0
    cand = np.concatenate([-v, np.linspace(lo, hi, 2001)])
    obj = np.mean(np.maximum(v[None, :] + cand[:, None], 0.0),
                  axis=1) / epsilon - cand
    return float(obj.min())


def make_spec(samples, radius=0.01, epsilon=0.1):
    return AmbiguitySpec(samples=UncertaintySampleSet(samples=samples),
                         radius=radius, epsilon=epsilon)


class TestVar:
    def test_five_atoms(self):
        assert var([1, 2, 3, 4, 5], 0.4) == 3.0

    def test_all_equal(self):
        for eps in (0.05, 0.3, 0.9):
            assert var([2.5] * 7, eps) == 2.5

    def test_small_epsilon_gives_max(self, rng):
        v = rng.standard_normal(9)
        assert var(v, 0.05) == v.max()

    def test_quantile_definition(self, rng):
        # smallest t with fraction(values <= t) >= 1 - eps
        for _ in range(200):
            v = rng.standard_normal(int(rng.integers(1, 12)))
            eps = float(rng.uniform(0.01, 0.99))
            t = var(v, eps)
            assert np.mean(v <= t) >= 1.0 - eps - 1e-12
            below = v[v < t]
            if below.size:
                assert np.mean(v <= below.max()) < 1.0 - eps + 1e-12

    def test_rejects_empty_and_bad_epsilon(self):
        with pytest.raises(ShapeError):
            var([], 0.5)
        with pytest.raises(ConfigError):
            var([1.0], 0.0)
        with pytest.raises(ConfigError):
            var([1.0], 1.0)


class TestCvar:
    def test_five_atoms(self):
        # tail mean of {4, 5} at eps = 0.4
        assert cvar([1, 2, 3, 4, 5], 0.4) == pytest.approx(4.5, abs=1e-12)

    def test_all_equal(self):
        for eps in (0.05, 0.5, 0.95):
            assert cvar([-3.0] * 6, eps) == pytest.approx(-3.0, abs=0)

    def test_epsilon_at_most_one_over_n_gives_max(self, rng):
        v = rng.standard_normal(10)
        assert cvar(v, 0.1) == v.max()
        assert cvar(v, 0.03) == v.max()

    def test_matches_bruteforce(self, rng):
        for _ in range(300):
            n = int(rng.integers(1, 25))
            v = 10.0 * rng.standard_normal(n)
            eps = float(rng.uniform(0.02, 0.98))
            assert abs(cvar(v, eps) - rockafellar_min(v, eps)) < 1e-9

    def test_dominates_var(self, rng):
        for _ in range(1000):
            v = rng.standard_normal(int(rng.integers(1, 15)))
            eps = float(rng.uniform(0.01, 0.99))
            assert cvar(v, eps) >= var(v, eps) - 1e-12

    def test_result_detail(self):
        res = cvar_result([1.0, 5.0, 3.0], 0.5)
        assert isinstance(res, RiskEvalResult)
        # descending order of the values themselves
        assert np.array_equal(res.sorted_indices, [1, 2, 0])
        j = select_index_j(3, 0.5)
        h_j = sorted([1.0, 5.0, 3.0], reverse=True)[j - 1]
        assert res.optimal_t == -h_j

    def test_optimal_t_attains_minimum(self, rng):
        for _ in range(100):
            v = rng.standard_normal(int(rng.integers(2, 10)))
            eps = float(rng.uniform(0.05, 0.95))
            res = cvar_result(v, eps)
            t = res.optimal_t
            attained = np.mean(np.maximum(v + t, 0.0)) / eps - t
            assert attained == pytest.approx(res.value, abs=1e-12)

    def test_tie_invariance(self):
        # permuting tied entries cannot change the value
        v = np.array([2.0, 2.0, -1.0, 2.0, 0.5])
        for perm in ([0, 1, 2, 3, 4], [3, 1, 0, 4, 2], [4, 3, 2, 1, 0]):
            assert cvar(v[perm], 0.3) == cvar(v, 0.3)


class TestSelectIndex:
    def test_example(self):
        assert select_index_j(10, 0.25) == 3

    def test_first_interval_case(self):
        assert select_index_j(10, 0.1) == 1
        assert select_index_j(10, 0.05) == 1

    def test_single_sample(self):
        for eps in (0.01, 0.5, 0.99):
            assert select_index_j(1, eps) == 1

    def test_defining_inequalities(self, rng):
        for _ in range(1000):
            N = int(rng.integers(1, 60))
            eps = float(rng.uniform(0.01, 0.99))
            j = select_index_j(N, eps)
            assert 1 <= j <= N
            assert (j - 1) / N < eps + 1e-9
            assert j / N >= eps - 1e-9


class TestWassersteinRadius:
    def test_reference_value(self):
        r = wasserstein_radius(10, np.exp(-1.0), 1.0, 1.0, 2)
        assert r == pytest.approx(0.1 ** 0.5, rel=1e-12)

    def test_decreases_with_samples(self):
        radii = [wasserstein_radius(N, 0.05, 2.0, 1.5, 2)
                 for N in (5, 20, 80, 320)]
        assert all(a > b for a, b in zip(radii, radii[1:]))

    def test_dimension_exponent(self):
        base = np.log(1.0 / 0.05)
        r2 = wasserstein_radius(100, 0.05, 1.0, 1.0, 2)
        r3 = wasserstein_radius(100, 0.05, 1.0, 1.0, 3)
        assert r2 == pytest.approx((base / 100) ** 0.5, rel=1e-12)
        assert r3 == pytest.approx((base / 100) ** (1 / 3), rel=1e-12)
        # k = 1 is promoted to the k = 2 exponent
        assert wasserstein_radius(100, 0.05, 1.0, 1.0, 1) == r2

    def test_small_sample_branch_needs_rho(self):
        # N below log(c1/eps_bar)/c2 switches the exponent to 1/rho
        with pytest.raises(ConfigError):
            wasserstein_radius(2, 0.05, 100.0, 0.1, 2)
        r = wasserstein_radius(2, 0.05, 100.0, 0.1, 2, rho=4.0)
        ratio = np.log(100.0 / 0.05) / 0.1
        assert r == pytest.approx((ratio / 2) ** 0.25, rel=1e-12)

    def test_rejects_bad_constants(self):
        with pytest.raises(ConfigError):
            wasserstein_radius(10, 0.05, 0.0, 1.0, 2)
        with pytest.raises(ConfigError):
            wasserstein_radius(10, 1.5, 1.0, 1.0, 2)
        with pytest.raises(ConfigError):
            wasserstein_radius(0, 0.05, 1.0, 1.0, 2)


class TestDrMarginGeneral:
    def test_constant_values_example(self):
        spec = make_spec(np.zeros((5, 1)), radius=0.01, epsilon=0.1)
        out = dr_margin_general([-10.0] * 5, spec, 1.0)
        assert out == pytest.approx(-9.9, abs=1e-12)

    def test_zero_radius_reduces_to_cvar(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 20))
            h = np.sort(rng.standard_normal(n))[::-1]
            eps = float(rng.uniform(0.05, 0.95))
            spec = make_spec(np.zeros((n, 1)), radius=0.0, epsilon=eps)
            assert dr_margin_general(h, spec, 3.7) == cvar(h, eps)

    def test_first_interval_closed_form(self, rng):
        h = np.array([2.0, -1.0, -5.0, -5.5])
        spec = make_spec(np.zeros((4, 1)), radius=0.2, epsilon=0.25)
        out = dr_margin_general(h, spec, 1.5)
        assert out == pytest.approx((0.2 / 0.25) * 1.5 + 2.0, abs=1e-12)

    def test_monotone_in_radius_and_values(self, rng):
        h = np.sort(rng.standard_normal(8))[::-1]
        base = make_spec(np.zeros((8, 1)), radius=0.1, epsilon=0.3)
        bigger_r = make_spec(np.zeros((8, 1)), radius=0.5, epsilon=0.3)
        assert dr_margin_general(h, bigger_r, 1.0) \
            >= dr_margin_general(h, base, 1.0)
        for i in range(8):
            bumped = h.copy()
            bumped[i] += 0.5
            bumped = np.sort(bumped)[::-1]
            assert dr_margin_general(bumped, base, 1.0) \
                >= dr_margin_general(h, base, 1.0) - 1e-12

    def test_matches_bruteforce(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 20))
            h = np.sort(10 * rng.standard_normal(n))[::-1]
            eps = float(rng.uniform(0.05, 0.95))
            r = float(rng.uniform(0.0, 1.0))
            L = float(rng.uniform(0.0, 2.0))
            spec = make_spec(np.zeros((n, 1)), radius=r, epsilon=eps)
            want = (r / eps) * L + rockafellar_min(h, eps)
            assert dr_margin_general(h, spec, L) == pytest.approx(
                want, abs=1e-9)

    def test_rejects_unsorted_and_negative_lipschitz(self):
        spec = make_spec(np.zeros((3, 1)))
        with pytest.raises(ContractError):
            dr_margin_general([1.0, 2.0, 0.0], spec, 1.0)
        with pytest.raises(ContractError):
            dr_margin_general([2.0, 1.0, 0.0], spec, -0.1)

    def test_ties_allowed(self):
        spec = make_spec(np.zeros((4, 1)), radius=0.0, epsilon=0.5)
        out = dr_margin_general([1.0, 1.0, 1.0, 0.0], spec, 0.0)
        assert out == pytest.approx(1.0, abs=1e-12)


class TestPointwiseMargin:
    def test_zero_at_origin(self, rng):
        pair = random_pair(rng)
        spec = make_spec(rng.standard_normal((5, 2)))
        out = dr_pointwise_margin(pair, pendulum(), spec, np.zeros(2))
        assert out == pytest.approx(0.0, abs=1e-12)

    def test_hand_assembled_formula(self, rng):
        pair = random_pair(rng)
        sys = pendulum()
        spec = make_spec(0.05 * rng.standard_normal((5, 2)),
                         radius=0.02, epsilon=0.3)
        x = np.array([2.0, -1.0])
        vdots = [V_dot(pair, sys, x, xi=xi) for xi in spec.samples.samples]
        want = (spec.radius / spec.epsilon) * lipschitz_term(pair, sys, x) \
            + cvar(vdots, spec.epsilon) + pair.gamma * np.linalg.norm(x)
        assert dr_pointwise_margin(pair, sys, spec, x) == pytest.approx(
            want, rel=1e-12)

    def test_single_zero_sample_reduces_to_nominal(self, rng):
        pair = random_pair(rng)
        sys = pendulum()
        spec = make_spec(np.zeros((1, 2)), radius=0.0, epsilon=0.5)
        x = np.array([1.5, 2.0])
        want = V_dot(pair, sys, x) + pair.gamma * np.linalg.norm(x)
        assert dr_pointwise_margin(pair, sys, spec, x) == pytest.approx(
            want, rel=1e-12)

    def test_batch_matches_scalar(self, rng):
        pair = random_pair(rng)
        sys = pendulum()
        spec = make_spec(0.05 * rng.standard_normal((4, 2)))
        X = rng.uniform([0, -8], [2 * np.pi, 8], size=(12, 2))
        batch = pointwise_margins(pair, sys, spec, X)
        for i in range(12):
            assert batch[i] == pytest.approx(
                dr_pointwise_margin(pair, sys, spec, X[i]), rel=1e-12)

    def test_max_form_when_epsilon_small(self, rng):
        pair = random_pair(rng)
        sys = pendulum()
        spec = make_spec(0.05 * rng.standard_normal((5, 2)),
                         radius=0.01, epsilon=0.1)
        x = np.array([3.0, 1.0])
        vdots = [V_dot(pair, sys, x, xi=xi) for xi in spec.samples.samples]
        want = (spec.radius / spec.epsilon) * lipschitz_term(pair, sys, x) \
            + max(vdots) + pair.gamma * np.linalg.norm(x)
        assert dr_pointwise_margin(pair, sys, spec, x) == pytest.approx(
            want, rel=1e-12)


class TestExponentialMargin:
    def test_zero_at_origin(self, rng):
        pair = random_pair(rng)
        spec = make_spec(rng.standard_normal((3, 2)))
        out = dr_exponential_margin(pair, pendulum(), spec, np.zeros(2), 0.7)
        assert out == pytest.approx(0.0, abs=1e-12)

    def test_additivity(self, rng):
        pair = random_pair(rng)
        sys = pendulum()
        spec = make_spec(0.05 * rng.standard_normal((4, 2)))
        x = np.array([1.0, -2.0])
        base = dr_pointwise_margin(pair, sys, spec, x)
        assert dr_exponential_margin(pair, sys, spec, x, 0.0) == base
        out = dr_exponential_margin(pair, sys, spec, x, 0.5)
        assert out == pytest.approx(base + 0.5 * V(pair, x), rel=1e-12)

    def test_rejects_negative_alpha(self, rng):
        pair = random_pair(rng)
        spec = make_spec(np.zeros((1, 2)))
        with pytest.raises(ConfigError):
            dr_exponential_margin(pair, pendulum(), spec, np.ones(2), -0.1)


class TestGuaranteeProduct:
    def test_factors(self):
        out = guarantee_product(0.1, 0.05)
        assert out["risk_factor"] == pytest.approx(0.9)
        assert out["ambiguity_factor"] == pytest.approx(0.95)
        assert out["product"] == pytest.approx(0.855)


class TestAmbiguitySpecValidation:
    def test_epsilon_range(self):
        s = UncertaintySampleSet(samples=np.zeros((2, 1)))
        for eps in (0.0, 1.0, -0.2):
            with pytest.raises(ConfigError):
                AmbiguitySpec(samples=s, radius=0.1, epsilon=eps)

    def test_negative_radius(self):
        s = UncertaintySampleSet(samples=np.zeros((2, 1)))
        with pytest.raises(ConfigError):
            AmbiguitySpec(samples=s, radius=-0.1, epsilon=0.5)

    def test_wasserstein_order_fixed(self):
        s = UncertaintySampleSet(samples=np.zeros((2, 1)))
        with pytest.raises(ConfigError):
            AmbiguitySpec(samples=s, radius=0.1, epsilon=0.5, p=2)

    def test_sample_count_property(self):
        s = UncertaintySampleSet(samples=np.zeros((7, 3)))
        spec = AmbiguitySpec(samples=s, radius=0.1, epsilon=0.5)
        assert spec.N == 7
