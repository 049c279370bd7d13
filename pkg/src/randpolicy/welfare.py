"""The three welfare estimators, their maximization, and bootstrap errors.

Each objective evaluates a sample welfare criterion and its analytic
theta-gradient in one pass over the data (through the compiled kernels when
available):

  tp:  (1/n) sum_i pi_theta(T_i|X_i) Y_i / f(T_i|X_i)       (known propensity)
  ep:  (1/n) sum_i w_hat(T_i,X_i) pi_theta(T_i|X_i) Y_i      (entropy weights)
  dr:  (1/n) sum_i [w_hat^(-l) pi_theta (Y_i - m_hat^(-l)) + mu_hat^(-l)_theta(X_i)]
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import gaussian_objective, softmax_objective
from .balance import WeightFit
from .data import ContinuousInterval, Dataset
from .errors import (BootstrapFitFailure, ConfigError, OverlapViolation,
                     RandPolicyError)
from .nuisance import CrossFitNuisance
from .optimize import THETA_BOUND, maximize_multistart
from .policy import GaussianLink, PolicyFamily
from .quadrature import QuadratureRule

__all__ = ["PolicyEstimate", "WelfareObjective", "build_objective", "maximize",
           "bootstrap_se", "BootstrapResult", "F_MIN"]

F_MIN = 1e-6


@dataclass(frozen=True)
class PolicyEstimate:
    theta: np.ndarray
    welfare: float
    estimator: str
    grad_max: float
    restarts_used: int
    converged: bool
    boundary: bool


class WelfareObjective:
    """Common evaluation machinery; subclasses fill the per-unit terms."""

    estimator = "?"

    def __init__(self, data: Dataset, family: PolicyFamily, a: np.ndarray,
                 mu_table: np.ndarray | None = None,
                 t_nodes: np.ndarray | None = None,
                 node_weights: np.ndarray | None = None):
        self.data = data
        self.family = family
        self.n = data.n
        self._phi = np.ascontiguousarray(family.features(data.x))
        self._a = np.ascontiguousarray(a, dtype=float)
        self._mu_table = None if mu_table is None else \
            np.ascontiguousarray(mu_table, dtype=float)
        self._gaussian = isinstance(family, GaussianLink)
        if self._gaussian:
            self._t = np.ascontiguousarray(data.t)
            self._t_nodes = t_nodes
            self._node_weights = node_weights
        else:
            self._arm = np.ascontiguousarray(
                family._arm_index(data.t), dtype=np.int64)
            self._p_feat = family.features.dim

    def value_grad(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self._gaussian:
            return gaussian_objective(
                self._phi, np.ascontiguousarray(theta), self._t, self._a,
                self.family.sigma, self._mu_table, self._t_nodes,
                self._node_weights)
        theta_mat = np.ascontiguousarray(theta.reshape(-1, self._p_feat))
        value, grad = softmax_objective(self._phi, theta_mat, self._arm,
                                        self._a, self._mu_table)
        return value, grad.ravel()

    def value(self, theta):
        return self.value_grad(theta)[0]


class TruePropensityObjective(WelfareObjective):
    estimator = "tp"

    def __init__(self, data, family, propensity, f_min=F_MIN):
        f = np.asarray(propensity(data.t, data.x), dtype=float).ravel()
        if f.min() < f_min or not np.all(np.isfinite(f)):
            raise OverlapViolation(
                f"propensity at an observation is below f_min={f_min:g}")
        super().__init__(data, family, data.y / f)


class EstimatedWeightObjective(WelfareObjective):
    estimator = "ep"

    def __init__(self, data, family, weight_fit: WeightFit):
        om = weight_fit.weights(data.t, data.x)
        super().__init__(data, family, om * data.y)
        self.weight_fit = weight_fit


class DoublyRobustObjective(WelfareObjective):
    estimator = "dr"

    def __init__(self, data, family, nuisances: CrossFitNuisance,
                 quad: QuadratureRule = QuadratureRule()):
        om = nuisances.weights_at_data(data)
        m_at = nuisances.mean_at_data(data)
        a = om * (data.y - m_at)
        if isinstance(family, GaussianLink):
            if not isinstance(data.space, ContinuousInterval):
                raise ConfigError(
                    "doubly robust fitting with a Gaussian dose policy needs "
                    "an interval treatment space for the outcome sieve")
            tq, wq = quad.interval(data.space.lo, data.space.hi)
            table = nuisances.mean_table(tq, data)
            super().__init__(data, family, a, table,
                             np.ascontiguousarray(tq), np.ascontiguousarray(wq))
        else:
            table = nuisances.mean_table(family.levels, data)
            super().__init__(data, family, a, table)
        self.nuisances = nuisances


def build_objective(kind: str, data: Dataset, family: PolicyFamily, *,
                    propensity=None, weight_fit=None, nuisances=None,
                    quad: QuadratureRule = QuadratureRule(),
                    f_min: float = F_MIN) -> WelfareObjective:
    if kind == "tp":
        if propensity is None:
            raise ConfigError("tp needs the true propensity f(t|x)")
        return TruePropensityObjective(data, family, propensity, f_min)
    if kind == "ep":
        if weight_fit is None:
            raise ConfigError("ep needs a fitted stabilized weight")
        return EstimatedWeightObjective(data, family, weight_fit)
    if kind == "dr":
        if nuisances is None:
            raise ConfigError("dr needs cross-fitted nuisances")
        return DoublyRobustObjective(data, family, nuisances, quad)
    raise ConfigError(f"unknown estimator {kind!r}")


def default_tol(n: int) -> float:
    """First-order tolerance emulating the o(n^-1/2) stationarity the
    asymptotics assume."""
    return 1e-7 / np.sqrt(n)


def maximize(objective: WelfareObjective, seed: int, restarts: int = 8,
             tol_grad: float | None = None, max_iter: int = 200,
             bound: float = THETA_BOUND) -> PolicyEstimate:
    """Multi-start quasi-Newton ascent of a welfare objective."""
    tol = default_tol(objective.n) if tol_grad is None else tol_grad
    best, n_conv = maximize_multistart(
        objective.value_grad, objective.family.dim_theta, seed,
        restarts=restarts, tol_grad=tol, max_iter=max_iter, bound=bound)
    return PolicyEstimate(best.theta, best.value, objective.estimator,
                          best.grad_max, restarts, n_conv > 0 and best.converged,
                          best.boundary)


@dataclass(frozen=True)
class BootstrapResult:
    se: np.ndarray
    draws: np.ndarray          # n_draws x dim_theta (failed rows dropped)
    welfare_draws: np.ndarray
    n_failed: int

    @property
    def welfare_se(self) -> float:
        if len(self.welfare_draws) > 1:
            return float(self.welfare_draws.std(ddof=1))
        return 0.0


def bootstrap_se(data: Dataset, fit, n_draws: int, seed: int,
                 max_failure_frac: float = 0.10) -> BootstrapResult:
    """Nonparametric bootstrap of a full refit.

    `fit` maps (Dataset, seed) -> PolicyEstimate and must re-estimate its
    nuisances on the resampled data. Draws that raise a package error are
    counted; more than `max_failure_frac` of them aborts.
    """
    if n_draws < 1:
        raise ConfigError("bootstrap needs at least one draw")
    root = np.random.default_rng(seed)
    idx_seeds = root.integers(0, 2 ** 63 - 1, size=(n_draws, 2))
    draws, welfare, n_failed = [], [], 0
    for b in range(n_draws):
        rng_b = np.random.default_rng(int(idx_seeds[b, 0]))
        idx = rng_b.integers(0, data.n, size=data.n)
        try:
            est = fit(data.subset(idx), int(idx_seeds[b, 1]))
            draws.append(est.theta)
            welfare.append(est.welfare)
        except RandPolicyError:
            n_failed += 1
    if n_failed > max_failure_frac * n_draws:
        raise BootstrapFitFailure(n_failed, n_draws)
    stacked = np.array(draws)
    se = stacked.std(axis=0, ddof=1) if len(stacked) > 1 \
        else np.zeros(stacked.shape[1])
    return BootstrapResult(se, stacked, np.array(welfare), n_failed)
