import numpy as np
import pytest

from randpolicy.optimize import maximize_bfgs, maximize_multistart


def concave_quadratic(theta):
    # Closed-form oracle: argmax at 1 with value 5.
    return -float((theta[0] - 1.0) ** 2) + 5.0, np.array([-2.0 * (theta[0] - 1.0)])


class TestBfgs:
    def test_concave_quadratic_oracle(self):
        res = maximize_bfgs(concave_quadratic, np.zeros(1), tol_grad=1e-9)
        assert res.converged
        assert res.theta[0] == pytest.approx(1.0, abs=1e-6)
        assert res.value == pytest.approx(5.0, abs=1e-12)

    def test_multidimensional_quadratic(self):
        A = np.array([[3.0, 0.5, 0.0], [0.5, 2.0, 0.2], [0.0, 0.2, 1.0]])
        b = np.array([1.0, -2.0, 0.5])
        target = np.linalg.solve(A, b)

        def vg(theta):
            return (-0.5 * theta @ A @ theta + b @ theta,
                    b - A @ theta)

        res = maximize_bfgs(vg, np.zeros(3), tol_grad=1e-10)
        assert res.converged
        np.testing.assert_allclose(res.theta, target, atol=1e-7)

    def test_box_projection_and_boundary_flag(self):
        def vg(theta):
            return float(theta[0]), np.array([1.0])

        res = maximize_bfgs(vg, np.zeros(1), tol_grad=1e-9, bound=50.0,
                            max_iter=500)
        assert res.theta[0] == pytest.approx(50.0)
        assert res.boundary and not res.converged


class TestMultistart:
    def test_best_of_restarts_on_bimodal(self):
        # Two local maxima; the global one has value 2 at theta = 3.
        def vg(theta):
            t = theta[0]
            v = 2.0 * np.exp(-((t - 3.0) ** 2)) + 1.0 * np.exp(-((t + 2.0) ** 2))
            g = (2.0 * np.exp(-((t - 3.0) ** 2)) * (-2 * (t - 3.0))
                 + 1.0 * np.exp(-((t + 2.0) ** 2)) * (-2 * (t + 2.0)))
            return float(v), np.array([g])

        best, n_conv = maximize_multistart(vg, 1, seed=0, restarts=12,
                                           tol_grad=1e-9, start_scale=4.0)
        assert best.theta[0] == pytest.approx(3.0, abs=1e-5)
        assert n_conv >= 1

    def test_ascent_property(self):
        def vg(theta):
            return concave_quadratic(theta)

        best, _ = maximize_multistart(vg, 1, seed=4, restarts=5, tol_grad=1e-9)
        for start in (np.zeros(1), np.array([1.7])):
            assert best.value >= concave_quadratic(start)[0]

    def test_deterministic_in_seed(self):
        def vg(theta):
            return concave_quadratic(theta)

        a, _ = maximize_multistart(vg, 1, seed=9, restarts=6, tol_grad=1e-9)
        b, _ = maximize_multistart(vg, 1, seed=9, restarts=6, tol_grad=1e-9)
        np.testing.assert_array_equal(a.theta, b.theta)
