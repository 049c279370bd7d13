"""Stabilized inverse-propensity weights via an entropy-tilting dual.

The weight function is w(t,x) = exp(-u(t)' L v(x) - 1), with L maximizing
the smooth strictly concave sample dual

    G_n(L) = (1/n) sum_i rho(u_i' L v_i) - (integral of u)' L (mean of v),

rho(s) = -exp(-s-1). Stationarity of the dual is exactly the balancing
constraint, so a converged fit balances the weighted sample moments of
u(T) v(X)' against their product-measure counterparts.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import Basis
from .data import Dataset
from .errors import DataError, NotConverged

__all__ = ["WeightFit", "fit_stabilized_weights", "balance_residual",
           "weight_l2_error"]

TOL_GRAD = 1e-9
TOL_BALANCE = 1e-7
MAX_ITER = 500
_ARMIJO_C = 1e-4
_SHRINK = 0.5


@dataclass(frozen=True)
class WeightFit:
    """Fitted dual coefficients plus the bases that define the weight."""

    lam: np.ndarray                 # K1 x K2
    basis_t: Basis
    basis_x: Basis
    integrate_u: np.ndarray         # cached integral of the treatment basis
    converged: bool
    dual_value: float
    iterations: int
    grad_max: float
    history: tuple = field(default=(), repr=False)

    def weights(self, t, X) -> np.ndarray:
        """Evaluate w(t, x) > 0 at a batch of points."""
        U = np.atleast_2d(self.basis_t.eval(np.atleast_1d(t)))
        V = np.atleast_2d(self.basis_x.eval(np.atleast_2d(X)))
        s = np.einsum("ij,jk,ik->i", U, self.lam, V)
        return np.exp(-s - 1.0)

    def weight(self, t, x) -> float:
        return float(self.weights(np.atleast_1d(float(t)), np.atleast_2d(x))[0])


def _design(data: Dataset, basis_t: Basis, basis_x: Basis):
    U = basis_t.eval(data.t)
    V = basis_x.eval(data.x)
    W = np.einsum("ij,ik->ijk", U, V).reshape(data.n, -1)
    return U, V, np.ascontiguousarray(W)


def fit_stabilized_weights(data: Dataset, basis_t: Basis, basis_x: Basis,
                           tol_grad: float = TOL_GRAD,
                           max_iter: int = MAX_ITER) -> WeightFit:
    """Damped-Newton maximization of the entropy dual.

    The Hessian is exact and negative definite wherever the dual is finite;
    each step is a Cholesky solve plus an Armijo backtracking line search,
    so the dual value is nondecreasing across iterations. Requires
    n >= K1*K2 and orthonormalized bases.
    """
    K1, K2 = basis_t.size, basis_x.size
    if data.n < K1 * K2:
        raise DataError(f"need n >= K1*K2 = {K1 * K2}, got n = {data.n}")
    U, V, W = _design(data, basis_t, basis_x)
    q = basis_t.integrate()
    target = np.kron(q, V.mean(axis=0))
    n = data.n

    def dual(lam_vec):
        s = W @ lam_vec
        with np.errstate(over="ignore"):
            om = np.exp(-s - 1.0)
        return -om.mean() - target @ lam_vec, om

    lam = np.zeros(K1 * K2)
    value, om = dual(lam)
    history = []
    grad_max = np.inf
    for it in range(max_iter):
        grad = W.T @ om / n - target
        grad_max = float(np.max(np.abs(grad)))
        history.append((it, value, grad_max))
        if grad_max <= tol_grad:
            return WeightFit(lam.reshape(K1, K2), basis_t, basis_x, q,
                             True, value, it, grad_max, tuple(history))
        neg_hess = (W * om[:, None]).T @ W / n
        try:
            c = np.linalg.cholesky(neg_hess)
            step = np.linalg.solve(c.T, np.linalg.solve(c, grad))
        except np.linalg.LinAlgError:
            # SingularHessian fallback: plain gradient ascent step
            step = grad / max(np.max(np.abs(grad)), 1.0)
        slope = grad @ step
        if slope <= 0:
            step, slope = grad, grad @ grad
        # Armijo in gain form (an underflowing threshold must not be absorbed
        # into the comparison); near the optimum the dual gain sinks below
        # the float64 resolution of the n-term sum, so fall back to the trial
        # that most shrinks the gradient norm.
        noise = 1e-12 * (1.0 + abs(value))
        alpha, accepted, fallback = 1.0, None, None
        while alpha > 1e-13:
            lam_try = lam + alpha * step
            trial, om_trial = dual(lam_try)
            if np.isfinite(trial):
                if trial - value >= _ARMIJO_C * alpha * slope and trial > value:
                    accepted = (lam_try, trial, om_trial)
                    break
                if trial >= value - noise:
                    g_try = float(np.max(np.abs(W.T @ om_trial / n - target)))
                    if (g_try <= grad_max * (1.0 - 1e-6)
                            and (fallback is None or g_try < fallback[0])):
                        fallback = (g_try, lam_try, trial, om_trial)
            alpha *= _SHRINK
        if accepted is None and fallback is not None:
            accepted = fallback[1:]
        if accepted is None:
            break
        lam, value, om = accepted
    fit = WeightFit(lam.reshape(K1, K2), basis_t, basis_x, q,
                    False, value, max_iter, grad_max, tuple(history))
    raise NotConverged(
        f"weight dual did not reach grad tol {tol_grad:g} in {max_iter} "
        f"iterations (grad max {grad_max:.3e})", fit=fit)


def balance_residual(fit: WeightFit, data: Dataset) -> np.ndarray:
    """LHS - RHS of the balancing constraint, a K1 x K2 matrix."""
    U = fit.basis_t.eval(data.t)
    V = fit.basis_x.eval(data.x)
    om = fit.weights(data.t, data.x)
    lhs = (U * om[:, None]).T @ V / data.n
    rhs = np.outer(fit.integrate_u, V.mean(axis=0))
    return lhs - rhs


def weight_l2_error(fit: WeightFit, data: Dataset, true_omega) -> float:
    """Root-mean-square in-sample gap between fitted and oracle weights."""
    om_hat = fit.weights(data.t, data.x)
    om = np.asarray(true_omega(data.t, data.x), dtype=float).ravel()
    return float(np.sqrt(np.mean((om_hat - om) ** 2)))
