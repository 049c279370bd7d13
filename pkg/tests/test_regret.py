import numpy as np
import pytest
from scipy import stats

from randpolicy.data import Dataset, Discrete
from randpolicy.errors import DegenerateCurvature, KernelNotPSD, NotPSD
from randpolicy.policy import BinaryLogistic, GaussianLink, LinearFeatures
from randpolicy.regret import (_psd_factor, estimate_curvature,
                               estimate_efficient_cov, estimate_tp_noise_cov,
                               gp_sup_compare, influence_values, make_report,
                               regret_limit_moments, sample_regret_limit,
                               sqrt_psd, threshold_policy_matrix)
from randpolicy.simulate import random_binary_dgp, run_dgp


def binary_m(m0, m1):
    def m(t, X):
        X = np.atleast_2d(X)
        t = np.asarray(t, dtype=float)
        vals1, vals0 = m1(X), m0(X)
        if t.ndim == 0:
            return vals1 if t == 1.0 else vals0
        return np.where(t == 1.0, vals1, vals0)
    return m


class TestCurvature:
    def test_flat_welfare_is_degenerate(self):
        fam = BinaryLogistic(LinearFeatures(2))
        X = np.random.default_rng(0).random((50, 2))
        with pytest.raises(DegenerateCurvature):
            estimate_curvature(fam, np.zeros(3),
                               binary_m(lambda X: np.zeros(len(X)),
                                        lambda X: np.zeros(len(X))), X)

    def test_binary_toy_against_fd_of_exact_welfare(self):
        # Oracle: central second differences of the exact plug-in welfare
        # S(theta) = mean_i sum_k m(k, x_i) pi_theta(k | x_i).
        rng = np.random.default_rng(1)
        X = rng.random((200, 2))
        fam = BinaryLogistic(LinearFeatures(2))
        m = binary_m(lambda X: 0.2 * X[:, 0],
                     lambda X: 1.0 + X[:, 0] - X[:, 1] ** 2)
        theta = np.array([0.3, -0.5, 0.4])

        def S(th):
            P = fam.prob_matrix(th, X)
            M = np.column_stack([m(0.0, X), m(1.0, X)])
            return float((P * M).sum(axis=1).mean())

        h = 1e-4
        p = 3
        H_fd = np.empty((p, p))
        for j in range(p):
            ej = np.zeros(p)
            ej[j] = h
            H_fd[j, j] = (S(theta + ej) - 2 * S(theta) + S(theta - ej)) / h ** 2
            for k in range(j + 1, p):
                ek = np.zeros(p)
                ek[k] = h
                H_fd[j, k] = H_fd[k, j] = (
                    S(theta + ej + ek) - S(theta + ej - ek)
                    - S(theta - ej + ek) + S(theta - ej - ek)) / (4 * h * h)
        H = estimate_curvature(fam, theta, m, X)
        np.testing.assert_allclose(H, -H_fd, atol=1e-4)
        np.testing.assert_array_equal(H, H.T)

    def test_fd_method_agrees_with_analytic(self):
        rng = np.random.default_rng(2)
        X = rng.random((100, 2))
        fam = GaussianLink(LinearFeatures(2), 0.4)

        def m(t, X_):
            X_ = np.atleast_2d(X_)
            return 2.0 - (np.asarray(t, float) - X_[:, 0]) ** 2

        theta = np.array([0.2, 0.5, 0.1])
        Ha = estimate_curvature(fam, theta, m, X, method="analytic")
        Hf = estimate_curvature(fam, theta, m, X, method="fd")
        np.testing.assert_allclose(Ha, Hf, atol=1e-4)


class TestInfluence:
    def _toy(self):
        data = Dataset([2.0, 1.0, 0.0], [1.0, 0.0, 1.0],
                       [[0.3], [0.6], [0.9]], Discrete((0.0, 1.0)))
        fam = BinaryLogistic(LinearFeatures(1, columns=(), intercept=True))
        m = binary_m(lambda X: np.zeros(len(X)), lambda X: np.ones(len(X)))
        return data, fam, m

    def test_hand_computed_three_units(self):
        # theta=0 intercept-only: pi1=1/2, dpi1=1/4, dmu = 1/4. With w = 2:
        # phidot = (3/4, -1/4, -1/4), centered (2/3, -1/3, -1/3),
        # cov = 2/9; with H = [[2]]: V = 1/18.
        data, fam, m = self._toy()
        phi_dot, tp_extra = influence_values(
            fam, np.zeros(1), data, m, lambda t, X: np.full(len(X), 2.0),
            propensity=lambda t, X: np.full(len(X), 0.5))
        np.testing.assert_allclose(phi_dot.ravel(), [0.75, -0.25, -0.25],
                                   atol=1e-12)
        V = estimate_efficient_cov(np.array([[2.0]]), phi_dot)
        assert V[0, 0] == pytest.approx(1.0 / 18.0, abs=1e-12)
        # tp direction: d = m/f * dpi - dmu = (1/4, -1/4, 1/4);
        # uncentered mean square 1/16; sandwich by H^{-1}: 1/64.
        np.testing.assert_allclose(tp_extra.ravel(), [0.25, -0.25, 0.25],
                                   atol=1e-12)
        S = estimate_tp_noise_cov(np.array([[2.0]]), tp_extra)
        assert S[0, 0] == pytest.approx(1.0 / 64.0, abs=1e-12)

    def test_zero_residuals_and_constant_dmu_give_zero_v(self):
        data, fam, m = self._toy()
        y_eq_m = Dataset(m(data.t, data.x), data.t, data.x, data.space)
        phi_dot, _ = influence_values(fam, np.zeros(1), y_eq_m, m,
                                      lambda t, X: np.full(len(X), 2.0))
        V = estimate_efficient_cov(np.array([[2.0]]), phi_dot)
        assert V[0, 0] == pytest.approx(0.0, abs=1e-14)

    def test_zero_mean_surface_gives_zero_noise_cov(self):
        data, fam, _ = self._toy()
        zero_m = binary_m(lambda X: np.zeros(len(X)),
                          lambda X: np.zeros(len(X)))
        _, tp_extra = influence_values(
            fam, np.zeros(1), data, zero_m, lambda t, X: np.full(len(X), 2.0),
            propensity=lambda t, X: np.full(len(X), 0.5))
        S = estimate_tp_noise_cov(np.array([[2.0]]), tp_extra)
        np.testing.assert_allclose(S, 0.0, atol=1e-14)

    def test_psd(self):
        rng = np.random.default_rng(3)
        data = Dataset(rng.normal(size=40), rng.integers(0, 2, 40) * 1.0,
                       rng.random((40, 2)), Discrete((0.0, 1.0)))
        fam = BinaryLogistic(LinearFeatures(2))
        m = binary_m(lambda X: X[:, 0], lambda X: 1 + X[:, 1])
        phi_dot, tp_extra = influence_values(
            fam, np.array([0.2, 0.1, -0.3]), data, m,
            lambda t, X: np.full(len(X), 2.0),
            propensity=lambda t, X: np.full(len(X), 0.5))
        H = np.array([[2.0, 0.1, 0.0], [0.1, 1.5, 0.2], [0.0, 0.2, 1.0]])
        for mat in (estimate_efficient_cov(H, phi_dot),
                    estimate_tp_noise_cov(H, tp_extra)):
            assert np.linalg.eigvalsh(mat).min() >= -1e-10


class TestRegretMoments:
    def test_identity_two_dim(self):
        mom = regret_limit_moments(np.eye(2), np.eye(2), np.zeros((2, 2)))
        assert mom.mean == pytest.approx(1.0, abs=1e-12)
        assert mom.variance == pytest.approx(1.0, abs=1e-12)

    def test_scalar_case(self):
        mom = regret_limit_moments(np.array([[2.0]]), np.array([[3.0]]),
                                   np.array([[1.0]]))
        np.testing.assert_allclose(mom.eigenvalues, [8.0], atol=1e-12)
        assert mom.mean == pytest.approx(4.0, abs=1e-12)
        assert mom.variance == pytest.approx(32.0, abs=1e-12)

    def test_non_gaussian_leaves_variance_to_sampler(self):
        mom = regret_limit_moments(np.eye(2), np.eye(2), 0.5 * np.eye(2),
                                   u_gaussian=False)
        assert mom.variance is None
        assert mom.chi_square_term == pytest.approx(1.0)
        assert mom.cross_term == pytest.approx(1.0)

    def test_random_instance_matches_sampler(self):
        rng = np.random.default_rng(5)
        A = rng.normal(size=(3, 3))
        H = A @ A.T + 0.5 * np.eye(3)
        B = rng.normal(size=(3, 3))
        V = B @ B.T
        C = rng.normal(size=(3, 3))
        S = C @ C.T
        mom = regret_limit_moments(H, V, S)
        draws = sample_regret_limit(H, V, S, 1_000_000, seed=9)
        se_mean = draws.std(ddof=1) / np.sqrt(len(draws))
        assert draws.mean() == pytest.approx(mom.mean, abs=3 * se_mean)
        var_se = np.sqrt(np.var((draws - draws.mean()) ** 2) / len(draws))
        assert draws.var(ddof=1) == pytest.approx(mom.variance,
                                                  abs=5 * var_se)

    def test_psd_order_monotonicity(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            A = rng.normal(size=(3, 3))
            H = A @ A.T + 0.3 * np.eye(3)
            B = rng.normal(size=(3, 3))
            V1 = B @ B.T
            C = rng.normal(size=(3, 3))
            V2 = V1 + C @ C.T          # V1 <= V2 in the PSD order
            m1 = regret_limit_moments(H, V1).mean
            m2 = regret_limit_moments(H, V2).mean
            assert m1 <= m2 + 1e-12

    def test_not_psd_raises(self):
        with pytest.raises(NotPSD):
            regret_limit_moments(np.eye(2), np.diag([1.0, -0.5]))
        with pytest.raises(DegenerateCurvature):
            regret_limit_moments(np.diag([1.0, 0.0]), np.eye(2))


class TestSampler:
    def test_chi_square_identity(self):
        draws = sample_regret_limit(np.eye(1), np.eye(1), None, 100_000,
                                    seed=0)
        assert draws.min() >= 0
        d = stats.kstest(draws, lambda x: stats.chi2.cdf(2 * x, df=1))
        assert d.statistic < 0.01

    def test_noise_shifts_mean_upward(self):
        base = sample_regret_limit(np.eye(2), np.eye(2), None, 100_000, seed=1)
        noisy = sample_regret_limit(np.eye(2), np.eye(2), 0.8 * np.eye(2),
                                    100_000, seed=1)
        assert noisy.mean() > base.mean()

    def test_deterministic(self):
        a = sample_regret_limit(np.eye(2), np.eye(2), 0.1 * np.eye(2), 1000,
                                seed=7)
        b = sample_regret_limit(np.eye(2), np.eye(2), 0.1 * np.eye(2), 1000,
                                seed=7)
        np.testing.assert_array_equal(a, b)

    def test_matrix_sqrt(self):
        rng = np.random.default_rng(8)
        A = rng.normal(size=(4, 4))
        H = A @ A.T + 0.1 * np.eye(4)
        R = sqrt_psd(H)
        assert np.linalg.norm(R @ R - H) <= 1e-10 * np.linalg.norm(H)


class TestReport:
    def test_report_fields_and_quantiles(self):
        rep = make_report(np.eye(2), np.eye(2), None, n_draws=20_000, seed=3)
        assert rep.regret_mean == pytest.approx(1.0, abs=1e-12)
        levels = [lv for lv, _ in rep.quantiles]
        assert levels == [0.5, 0.9, 0.95, 0.99]
        # quantile of (1/2) chi^2_2 at 0.5 is log(2) ~ 0.693
        assert rep.quantiles[0][1] == pytest.approx(np.log(2.0), abs=0.02)
        payload = rep.to_jsonable()
        assert set(payload) >= {"curvature", "efficient_cov", "noise_cov",
                                "eigenvalues", "regret_mean", "regret_var",
                                "quantiles"}


class TestGpSup:
    def _oracle_sample(self, seed, n=30_000, hetero=True):
        spec = random_binary_dgp(seed, hetero=hetero)
        data, _ = run_dgp(spec, n, seed + 1)
        X = data.x
        m0 = spec.mean_surface(0.0, X)
        m1 = spec.mean_surface(1.0, X)
        p1 = spec.propensity_density(np.ones(n), X)
        return data, m0, m1, p1

    def test_threshold_matrix(self):
        P = threshold_policy_matrix(np.array([0.1, 0.5, 0.9]),
                                    np.array([0.0, 0.5, 1.0]))
        np.testing.assert_array_equal(
            P, [[1, 0, 0], [1, 1, 0], [1, 1, 0]])

    def test_equal_kernels_when_mean_surfaces_vanish(self):
        # With m0 = m1 = 0 the two influence forms coincide pointwise, so
        # common draws give identical suprema.
        rng = np.random.default_rng(10)
        n = 20_000
        X = rng.random((n, 2))
        t = (rng.random(n) < 0.5).astype(float)
        y = rng.normal(size=n)            # centered outcome: m == 0
        P = threshold_policy_matrix(X[:, 0], np.linspace(0.05, 0.95, 40))
        res = gp_sup_compare(P, y, t, np.zeros(n), np.zeros(n),
                             np.full(n, 0.5), 2000, seed=3)
        np.testing.assert_allclose(res.kernel_tp, res.kernel_ep, atol=1e-10)
        assert res.e_sup_tp == pytest.approx(res.e_sup_ep, abs=1e-10)

    def test_single_policy_folded_normal(self):
        data, m0, m1, p1 = self._oracle_sample(4)
        P = threshold_policy_matrix(data.x[:, 0], np.array([0.5]))
        res = gp_sup_compare(P, data.y, data.t, m0, m1, p1, 50_000, seed=5)
        for e_sup, kern in ((res.e_sup_tp, res.kernel_tp),
                            (res.e_sup_ep, res.kernel_ep)):
            sigma = np.sqrt(kern[0, 0])
            target = sigma * np.sqrt(2 / np.pi)
            se = sigma * np.sqrt(1 - 2 / np.pi) / np.sqrt(50_000)
            assert e_sup == pytest.approx(target, abs=3 * se)

    def test_estimated_weights_never_worse(self):
        data, m0, m1, p1 = self._oracle_sample(6)
        P = threshold_policy_matrix(data.x[:, 0], np.linspace(0.05, 0.95, 60))
        res = gp_sup_compare(P, data.y, data.t, m0, m1, p1, 4000, seed=7)
        assert res.e_sup_ep <= res.e_sup_tp + 2 * res.paired_diff_se
        assert res.increment_ok

    def test_kernel_not_psd_detected(self):
        with pytest.raises(KernelNotPSD):
            _psd_factor(np.array([[1.0, 0.0], [0.0, -0.5]]), "test")


def test_chi_square_moment_identity():
    # H = V = I_d, no noise: the limit is (1/2) chi^2_d with mean and
    # variance both d/2.
    for d in (1, 2, 3):
        draws = sample_regret_limit(np.eye(d), np.eye(d), None, 200_000,
                                    seed=40 + d)
        se_mean = draws.std(ddof=1) / np.sqrt(len(draws))
        assert draws.mean() == pytest.approx(d / 2, abs=3 * se_mean)
        sq = (draws - draws.mean()) ** 2
        se_var = sq.std(ddof=1) / np.sqrt(len(draws))
        assert draws.var(ddof=1) == pytest.approx(d / 2, abs=5 * se_var)


def test_softmax_second_derivative_contraction_against_fd():
    from randpolicy.policy import Softmax

    rng = np.random.default_rng(0)
    X = rng.random((150, 2))
    fam = Softmax(LinearFeatures(2), Discrete((0.0, 1.0, 2.0)))

    def m(t, X_):
        X_ = np.atleast_2d(X_)
        t = np.asarray(t, float)
        return 1.0 + t * X_[:, 0] - 0.5 * (t == 2.0) * X_[:, 1]

    M = np.column_stack([m(lvl, X) for lvl in fam.levels])
    theta = rng.uniform(-0.8, 0.8, fam.dim_theta)
    raw = fam.mean_weighted_hessian(theta, X, M)

    def S(th):
        P = fam.prob_matrix(th, X)
        return float((P * M).sum(axis=1).mean())

    p = fam.dim_theta
    h = 1e-4
    H_fd = np.empty((p, p))
    for j in range(p):
        ej = np.zeros(p)
        ej[j] = h
        H_fd[j, j] = (S(theta + ej) - 2 * S(theta) + S(theta - ej)) / h ** 2
        for k in range(j + 1, p):
            ek = np.zeros(p)
            ek[k] = h
            H_fd[j, k] = H_fd[k, j] = (
                S(theta + ej + ek) - S(theta + ej - ek)
                - S(theta - ej + ek) + S(theta - ej - ek)) / (4 * h * h)
    np.testing.assert_allclose(raw, H_fd, atol=1e-6)
