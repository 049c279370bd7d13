import numpy as np
import pytest

from randpolicy.balance import fit_stabilized_weights
from randpolicy.basis import (indicator_basis, orthonormalize,
                              shifted_legendre_basis, tensor_polynomial_basis)
from randpolicy.data import ContinuousInterval, Dataset, Discrete
from randpolicy.errors import ConfigError, OverlapViolation
from randpolicy.nuisance import crossfit
from randpolicy.policy import BinaryLogistic, GaussianLink, LinearFeatures
from randpolicy.simulate import dose_benchmark, run_dgp
from randpolicy.welfare import (PolicyEstimate, bootstrap_se, build_objective,
                                maximize)


def fd_grad(fn, theta, h=1e-5):
    out = np.empty_like(theta)
    for j in range(len(theta)):
        e = np.zeros_like(theta)
        e[j] = h
        out[j] = (fn(theta + e) - fn(theta - e)) / (2 * h)
    return out


class TestTruePropensity:
    def test_hand_computed_two_units(self):
        # n=2, Y=(1,3), T=(0,1), f = 1/2: with pi(1|x) -> 1 the average is
        # (0 * 1/0.5 + 1 * 3/0.5) / 2 = 3.
        data = Dataset([1.0, 3.0], [0.0, 1.0], [[0.0], [0.0]],
                       Discrete((0.0, 1.0)))
        fam = BinaryLogistic(LinearFeatures(1))
        obj = build_objective("tp", data, fam,
                              propensity=lambda t, X: np.full(len(X), 0.5))
        value, _ = obj.value_grad(np.array([60.0, 0.0]))
        assert value == pytest.approx(3.0, abs=1e-9)

    def test_policy_equal_to_propensity_gives_mean_outcome(self):
        rng = np.random.default_rng(0)
        n = 60
        t = (rng.random(n) < 0.5).astype(float)
        data = Dataset(rng.normal(size=n), t, rng.random((n, 1)),
                       Discrete((0.0, 1.0)))
        fam = BinaryLogistic(LinearFeatures(1, columns=(), intercept=True))
        theta = np.array([0.0])       # pi(1|x) = 1/2 = f(1|x)
        obj = build_objective(
            "tp", data, fam, propensity=lambda t_, X: np.full(len(X), 0.5))
        value, _ = obj.value_grad(theta)
        assert value == pytest.approx(data.y.mean(), abs=1e-12)

    def test_overlap_violation(self):
        data = Dataset([1.0, 2.0], [0.0, 1.0], [[0.1], [0.2]],
                       Discrete((0.0, 1.0)))
        fam = BinaryLogistic(LinearFeatures(1))
        with pytest.raises(OverlapViolation):
            build_objective("tp", data, fam,
                            propensity=lambda t, X: np.array([0.5, 1e-9]))


class _StubNuisance:
    """Duck-typed stand-in with constant fitted nuisances."""

    def __init__(self, omega, m_value):
        self.omega, self.m_value = omega, m_value

    def weights_at_data(self, data):
        return np.full(data.n, self.omega)

    def mean_at_data(self, data):
        return np.full(data.n, self.m_value)

    def mean_table(self, t_points, data):
        return np.full((data.n, len(np.atleast_1d(t_points))), self.m_value)


class TestDoublyRobust:
    def test_vanishing_residual_single_unit(self):
        # y = m_hat = 2 everywhere: the correction term dies and the value is
        # the conditional-value part, 2, with zero gradient for any theta.
        data = Dataset([2.0], [1.0], [[0.4]], Discrete((0.0, 1.0)))
        fam = BinaryLogistic(LinearFeatures(1))
        obj = build_objective("dr", data, fam,
                              nuisances=_StubNuisance(omega=2.0, m_value=2.0))
        for theta in (np.zeros(2), np.array([0.7, -0.3])):
            value, grad = obj.value_grad(theta)
            assert value == pytest.approx(2.0, abs=1e-12)
            np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    def test_gaussian_policy_needs_interval_space(self):
        data = Dataset([1.0, 2.0], [0.0, 1.0], [[0.1], [0.2]],
                       Discrete((0.0, 1.0)))
        fam = GaussianLink(LinearFeatures(1), 0.3)
        with pytest.raises(ConfigError):
            build_objective("dr", data, fam,
                            nuisances=_StubNuisance(1.0, 0.0))


class TestGradientConsistency:
    def _dose_objectives(self):
        spec = dose_benchmark()
        data, _ = run_dgp(spec, 300, 17)
        fam = GaussianLink(LinearFeatures(2), 0.35)
        bt = orthonormalize(shifted_legendre_basis(data.space, 5))
        bx = orthonormalize(
            tensor_polynomial_basis(2, (2, 2), max_functions=6), data.x)
        wfit = fit_stabilized_weights(data, bt, bx)
        nuis = crossfit(data, 2, 3, shifted_legendre_basis(data.space, 6),
                        tensor_polynomial_basis(2, (2, 2), max_functions=6),
                        shifted_legendre_basis(data.space, 3),
                        tensor_polynomial_basis(2, (0, 0)))
        return [
            build_objective("tp", data, fam,
                            propensity=spec.propensity_density),
            build_objective("ep", data, fam, weight_fit=wfit),
            build_objective("dr", data, fam, nuisances=nuis),
        ]

    def test_all_estimators_match_finite_differences(self):
        rng = np.random.default_rng(23)
        for obj in self._dose_objectives():
            for _ in range(6):
                theta = rng.uniform(-0.8, 0.8, 3)
                value, grad = obj.value_grad(theta)
                numeric = fd_grad(lambda th: obj.value_grad(th)[0], theta)
                np.testing.assert_allclose(
                    grad, numeric, atol=1e-6 * (1 + np.abs(grad).max()))


class TestEpReducesToTp:
    def test_saturated_constant_propensity(self):
        # Exactly half treated, so the empirical shares equal the constant
        # true propensity and the fitted weights equal 1/f exactly.
        rng = np.random.default_rng(4)
        n = 40
        t = np.array([0.0, 1.0] * (n // 2))
        data = Dataset(rng.normal(size=n), t, rng.random((n, 2)),
                       Discrete((0.0, 1.0)))
        fam = BinaryLogistic(LinearFeatures(2))
        wfit = fit_stabilized_weights(
            data, indicator_basis(data.space),
            orthonormalize(tensor_polynomial_basis(2, (0, 0)), data.x))
        ep = build_objective("ep", data, fam, weight_fit=wfit)
        tp = build_objective("tp", data, fam,
                             propensity=lambda t_, X: np.full(len(X), 0.5))
        for theta in (np.zeros(3), np.array([0.5, -1.0, 0.2]),
                      np.array([-2.0, 1.0, 1.0])):
            assert ep.value_grad(theta)[0] == pytest.approx(
                tp.value_grad(theta)[0], abs=1e-8)


class TestMaximize:
    def test_deterministic(self, dose_spec, dose_family, dose_data):
        obj = build_objective("tp", dose_data, dose_family,
                              propensity=dose_spec.propensity_density)
        a = maximize(obj, seed=5, restarts=3)
        b = maximize(obj, seed=5, restarts=3)
        np.testing.assert_array_equal(a.theta, b.theta)
        assert isinstance(a, PolicyEstimate)
        assert a.estimator == "tp"

    def test_ascent_over_start_points(self, dose_spec, dose_family, dose_data):
        obj = build_objective("tp", dose_data, dose_family,
                              propensity=dose_spec.propensity_density)
        est = maximize(obj, seed=5, restarts=4)
        rng = np.random.default_rng(5)
        starts = [np.zeros(3)] + [rng.uniform(-2, 2, 3) for _ in range(3)]
        for s in starts:
            assert est.welfare >= obj.value_grad(s)[0] - 1e-10


class TestBootstrap:
    def _fit_fn(self, fam, spec):
        def fit(ds, seed):
            obj = build_objective("tp", ds, fam,
                                  propensity=spec.propensity_density)
            return maximize(obj, seed=seed, restarts=2, max_iter=60)
        return fit

    def test_zero_draws_rejected(self, dose_spec, dose_family, dose_data):
        with pytest.raises(ConfigError):
            bootstrap_se(dose_data, self._fit_fn(dose_family, dose_spec),
                         0, seed=1)

    def test_deterministic(self, dose_spec, dose_family):
        data, _ = run_dgp(dose_spec, 150, 3)
        fit = self._fit_fn(dose_family, dose_spec)
        a = bootstrap_se(data, fit, 8, seed=11)
        b = bootstrap_se(data, fit, 8, seed=11)
        np.testing.assert_array_equal(a.se, b.se)
        np.testing.assert_array_equal(a.draws, b.draws)

    def test_degenerate_outcome_gives_zero_welfare_se(self):
        # y identically zero makes every welfare draw exactly zero.
        rng = np.random.default_rng(8)
        n = 80
        t = np.array([0.0, 1.0] * (n // 2))
        data = Dataset(np.zeros(n), t, rng.random((n, 1)),
                       Discrete((0.0, 1.0)))
        fam = BinaryLogistic(LinearFeatures(1))

        def fit(ds, seed):
            obj = build_objective(
                "tp", ds, fam, propensity=lambda t_, X: np.full(len(X), 0.5))
            return maximize(obj, seed=seed, restarts=2, max_iter=40)

        boot = bootstrap_se(data, fit, 10, seed=2)
        assert boot.welfare_se == pytest.approx(0.0, abs=1e-12)
        assert boot.n_failed == 0
