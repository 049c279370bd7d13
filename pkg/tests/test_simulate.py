from dataclasses import replace

import numpy as np
import pytest

from randpolicy.data import Discrete
from randpolicy.errors import ConfigError, NumericalError
from randpolicy.policy import BinaryLogistic, GaussianLink, LinearFeatures
from randpolicy.quadrature import QuadratureRule
from randpolicy.simulate import (DiscreteDgp, McStudy, OracleEvaluator,
                                 benchmark_family, benchmark_study,
                                 binary_benchmark, dgp_from_config,
                                 dose_benchmark, monte_carlo,
                                 random_binary_dgp, run_dgp)


class TestRunDgp:
    def test_deterministic(self, dose_spec):
        a, _ = run_dgp(dose_spec, 200, 42)
        b, _ = run_dgp(dose_spec, 200, 42)
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.t, b.t)
        np.testing.assert_array_equal(a.x, b.x)

    def test_assignment_frequency_at_fixed_x(self):
        # Pin the covariates so the binomial check has a single p(x).
        spec = binary_benchmark()
        x_star = np.array([0.3, 0.6])
        fixed = replace(spec, x_sampler=lambda n, rng: np.tile(x_star, (n, 1)))
        n = 40_000
        data, _ = run_dgp(fixed, n, 7)
        p = float(spec.propensity_density(np.ones(1), x_star[None, :])[0])
        freq = float(np.mean(data.t == 1.0))
        assert abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / n)

    def test_noise_variance_matches_spec(self, dose_spec):
        n = 100_000
        data, aux = run_dgp(dose_spec, n, 3)
        resid = data.y - dose_spec.mean_surface(data.t, data.x)
        target = dose_spec.noise_half ** 2 / 3.0
        assert np.var(resid) == pytest.approx(target, rel=0.05)
        np.testing.assert_allclose(resid, aux["noise"], atol=1e-9)

    def test_discrete_potentials_consistent(self):
        spec = binary_benchmark()
        data, aux = run_dgp(spec, 500, 11)
        arm = aux["arm"]
        np.testing.assert_array_equal(
            data.y, aux["potentials"][np.arange(500), arm])


class TestOracle:
    def test_degenerate_arm_probability_via_hook_policy(self):
        # The logistic family cannot reach pi = 1 exactly, so drive it there
        # with a saturating parameter: welfare approaches the mean of the
        # treated-arm surface.
        spec = binary_benchmark()
        fam = BinaryLogistic(LinearFeatures(2))
        ev = OracleEvaluator(spec, fam, 150_000, seed=5)
        w = ev.welfare(np.array([80.0, 0.0, 0.0]))
        m1_mean = spec.mean_surface(1.0, ev.X).mean()
        assert w == pytest.approx(m1_mean, abs=1e-9)

    def test_no_effect_means_constant_welfare(self):
        base = binary_benchmark()
        spec = replace(base, arm_means=(base.arm_means[0], base.arm_means[0]))
        ev = OracleEvaluator(spec, BinaryLogistic(LinearFeatures(2)),
                             120_000, seed=5)
        vals = [ev.welfare(th) for th in (np.zeros(3), np.array([3., -1., 2.]),
                                          np.array([-5., 0., 4.]))]
        assert max(vals) - min(vals) <= 1e-12

    def test_closed_form_hook_matches_quadrature(self, dose_spec, dose_family):
        hooked = OracleEvaluator(dose_spec, dose_family, 120_000, seed=9)
        generic = OracleEvaluator(replace(dose_spec, smoothed_mean=None),
                                  dose_family, 120_000, seed=9,
                                  quad=QuadratureRule(96))
        for theta in (np.array([0.25, 0.25, 0.15]), np.array([0.0, 0.4, -0.2])):
            assert hooked.welfare(theta) == pytest.approx(
                generic.welfare(theta), abs=1e-6)

    def test_oracle_matches_action_sampling(self, dose_spec, dose_family):
        # Independent route: draw actions from the policy, average the mean
        # surface at the drawn doses (the noise is centered).
        ev = OracleEvaluator(dose_spec, dose_family, 100_000, seed=13)
        theta = np.array([0.3, 0.1, 0.2])
        rng = np.random.default_rng(31)
        doses = dose_family.sample_batch(theta, ev.X, rng)
        vals = dose_spec.mean_surface(doses, ev.X)
        se = vals.std(ddof=1) / np.sqrt(len(vals))
        assert ev.welfare(theta) == pytest.approx(vals.mean(), abs=3 * se)

    def test_optimum_interior_for_dose_benchmark(self, dose_spec, dose_family):
        ev = OracleEvaluator(dose_spec, dose_family, 150_000, seed=1)
        theta, w, boundary = ev.optimum(seed=2)
        assert not boundary
        np.testing.assert_allclose(theta, [0.25, 0.25, 0.15], atol=5e-3)

    def test_antisymmetric_effect_centers_intercept(self):
        # x1 symmetric about 0 and effect odd in x1: the best logistic dose
        # direction carries no intercept even though it saturates the box.
        def probs(X):
            return np.full((len(np.atleast_2d(X)), 2), 0.5)

        spec = DiscreteDgp(
            "antisym", 1, Discrete((0.0, 1.0)), probs,
            (lambda X: np.zeros(len(np.atleast_2d(X))),
             lambda X: 2.0 * np.atleast_2d(X)[:, 0]),
            (1.0, 1.0),
            x_sampler=lambda n, rng: rng.uniform(-1, 1, (n, 1)))
        fam = BinaryLogistic(LinearFeatures(1))
        ev = OracleEvaluator(spec, fam, 120_000, seed=3)
        theta, _, boundary = ev.optimum(seed=4)
        assert boundary
        assert abs(theta[0]) <= 0.5 and theta[1] == pytest.approx(50.0)

    def test_dominant_effect_hits_boundary(self):
        base = binary_benchmark()
        spec = replace(base, arm_means=(
            base.arm_means[0],
            lambda X: base.arm_means[0](X) + 5.0))
        ev = OracleEvaluator(spec, BinaryLogistic(LinearFeatures(2)),
                             100_000, seed=3)
        # within a compact parameter box the dominant effect drives the
        # intercept onto the box face, which the boundary flag reports
        theta, _, boundary = ev.optimum(seed=4, bound=10.0)
        assert boundary and theta[0] == pytest.approx(10.0)

    def test_optimum_cached_and_deterministic(self, dose_spec, dose_family):
        ev = OracleEvaluator(dose_spec, dose_family, 100_000, seed=6)
        first = ev.optimum(seed=7)
        again = ev.optimum(seed=999)     # cache ignores the new seed
        assert first is again
        ev2 = OracleEvaluator(dose_spec, dose_family, 100_000, seed=6)
        np.testing.assert_array_equal(first[0], ev2.optimum(seed=7)[0])


class TestMonteCarlo:
    def _tiny_study(self, **kw):
        defaults = dict(replications=4, sample_sizes=(500,), n_test=100_000,
                        n_jobs=1)
        defaults.update(kw)
        return benchmark_study(**defaults)

    def test_no_effect_gives_zero_regret(self):
        base = binary_benchmark()
        spec = replace(base, arm_means=(base.arm_means[0], base.arm_means[0]))
        study = McStudy(dgp=spec, family=BinaryLogistic(LinearFeatures(2)),
                        sample_sizes=(300,), replications=3,
                        estimators=("tp",), n_test=100_000, base_seed=1,
                        restarts=2, n_jobs=1)
        report = monte_carlo(study)
        assert abs(report.cell("tp", 300).regrets).max() <= 1e-9

    def test_seed_isolation(self):
        small = monte_carlo(self._tiny_study(replications=2))
        large = monte_carlo(self._tiny_study(replications=4))
        for est in ("tp", "ep", "dr"):
            a = small.cell(est, 500)
            b = large.cell(est, 500)
            np.testing.assert_array_equal(a.regrets, b.regrets[:2])

    def test_parallel_matches_serial(self):
        serial = monte_carlo(self._tiny_study(n_jobs=1))
        parallel = monte_carlo(self._tiny_study(n_jobs=2))
        for key, cell in serial.cells.items():
            np.testing.assert_array_equal(cell.regrets,
                                          parallel.cells[key].regrets)

    def test_regret_nonnegative_against_cached_optimum(self):
        report = monte_carlo(self._tiny_study(replications=6))
        for cell in report.cells.values():
            assert cell.regrets.min() >= -1e-9

    def test_failure_threshold_enforced(self, dose_spec):
        # A weight basis larger than the sample makes every ep fit fail.
        study = McStudy(dgp=dose_spec, family=benchmark_family(),
                        sample_sizes=(500,), replications=2,
                        estimators=("ep",), n_test=100_000, base_seed=3,
                        ep_cfg={"t_degree": 99}, n_jobs=1)
        with pytest.raises(NumericalError):
            monte_carlo(study)

    def test_report_rows(self):
        report = monte_carlo(self._tiny_study())
        rows = list(report.draw_rows())
        assert len(rows) == 3 * 4
        est, n, rep, regret, n_regret = rows[0]
        assert n_regret == pytest.approx(n * regret)
        hist = list(report.histogram_rows(bins=10))
        assert sum(c for *_, c in hist) == len(rows)
        payload = report.to_jsonable()
        assert payload["cells"][0]["n_reps"] == 4


class TestRegistry:
    def test_named_dgps(self):
        assert dgp_from_config({"name": "dose-benchmark"}).name \
            == "dose-benchmark"
        assert dgp_from_config({"name": "binary-linear-effect"}).d_x == 2
        assert "random-binary" in dgp_from_config(
            {"name": "random-binary", "seed": 3}).name
        with pytest.raises(ConfigError):
            dgp_from_config({"name": "nope"})

    def test_random_binary_overlap(self):
        for seed in range(5):
            spec = random_binary_dgp(seed)
            X = np.random.default_rng(0).random((2000, 2))
            P = spec.arm_probs(X)
            assert P.min() > 0.05 and P.max() < 0.95
