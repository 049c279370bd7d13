"""Parametric randomized policy families.

Every family maps a parameter vector to a proper probability measure on its
treatment space and exposes analytic first and second derivatives in the
parameter. Point-mass (deterministic) kernels are rejected at construction:
nothing downstream is valid for them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ContinuousLine, Discrete
from .errors import (ConfigError, DeterministicPolicyError, QuadratureFailure,
                     TreatmentOutOfSpace)
from .quadrature import QuadratureRule

__all__ = [
    "LinearFeatures", "BinaryLogistic", "Softmax", "GaussianLink",
    "SIGMA_MIN", "family_from_config",
]

SIGMA_MIN = 0.05
_SQRT2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class LinearFeatures:
    """Feature map x -> (1, x[cols]) (the intercept is optional)."""

    d_x: int
    columns: tuple | None = None
    intercept: bool = True

    @property
    def dim(self) -> int:
        k = self.d_x if self.columns is None else len(self.columns)
        return k + (1 if self.intercept else 0)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.d_x:
            raise ConfigError(f"feature map expects {self.d_x} covariates, "
                              f"got {X.shape[1]}")
        cols = X if self.columns is None else X[:, list(self.columns)]
        if self.intercept:
            return np.column_stack([np.ones(len(X)), cols])
        return np.ascontiguousarray(cols)


def _check_theta(theta, dim):
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.shape != (dim,):
        raise ConfigError(f"theta must have length {dim}, got {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ConfigError("theta contains non-finite entries")
    return theta


class PolicyFamily:
    """Shared single-point wrappers around the batch implementations."""

    def density(self, theta, t, x) -> float:
        return float(self.density_batch(theta, np.atleast_1d(float(t)),
                                        np.atleast_2d(x))[0])

    def grad_density(self, theta, t, x) -> np.ndarray:
        return self.grad_density_batch(theta, np.atleast_1d(float(t)),
                                       np.atleast_2d(x))[0]

    def conditional_value(self, theta, m, x, quad=QuadratureRule()):
        mu, g = self.conditional_value_batch(theta, m, np.atleast_2d(x), quad)
        return float(mu[0]), g[0]

    def sample(self, theta, x, rng) -> float:
        return float(self.sample_batch(theta, np.atleast_2d(x), rng)[0])


class _DiscreteFamily(PolicyFamily):
    """Common machinery for families over finitely many arms."""

    @property
    def levels(self) -> tuple:
        return self.space.levels

    def _arm_index(self, t: np.ndarray) -> np.ndarray:
        levels = np.array(self.levels)
        idx = np.searchsorted(levels, t)
        idx = np.clip(idx, 0, len(levels) - 1)
        ok = levels[idx] == t
        if not ok.all():
            raise TreatmentOutOfSpace(
                f"treatment {t[~ok][0]!r} is not one of the policy's arms")
        return idx

    def density_batch(self, theta, t, X):
        P = self.prob_matrix(theta, X)
        return P[np.arange(len(P)), self._arm_index(np.asarray(t, float))]

    def grad_density_batch(self, theta, t, X):
        G = self.grad_prob_matrix(theta, X)
        return G[np.arange(len(G)), self._arm_index(np.asarray(t, float))]

    def conditional_value_batch(self, theta, m, X, quad=QuadratureRule()):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        P = self.prob_matrix(theta, X)
        G = self.grad_prob_matrix(theta, X)
        M = np.column_stack([np.asarray(m(lvl, X), dtype=float).ravel()
                             for lvl in self.levels])
        if not np.all(np.isfinite(M)):
            raise QuadratureFailure("conditional mean is non-finite on an arm")
        mu = np.einsum("ik,ik->i", P, M)
        grad = np.einsum("ikp,ik->ip", G, M)
        return mu, grad

    def sample_batch(self, theta, X, rng):
        P = self.prob_matrix(theta, np.atleast_2d(X))
        u = rng.random(len(P))
        cum = np.cumsum(P, axis=1)
        idx = (u[:, None] > cum).sum(axis=1)
        return np.array(self.levels)[idx]


@dataclass(frozen=True)
class BinaryLogistic(_DiscreteFamily):
    """Two arms; the probability of the high arm is logistic in the features."""

    features: LinearFeatures
    space: Discrete = Discrete((0.0, 1.0))

    def __post_init__(self):
        if len(self.space.levels) != 2:
            raise ConfigError("BinaryLogistic needs exactly two levels")

    @property
    def dim_theta(self) -> int:
        return self.features.dim

    def _p1(self, theta, X):
        eta = self.features(X) @ _check_theta(theta, self.dim_theta)
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + np.exp(-eta))

    def prob_matrix(self, theta, X):
        p = self._p1(theta, X)
        return np.column_stack([1.0 - p, p])

    def grad_prob_matrix(self, theta, X):
        Phi = self.features(X)
        p = self._p1(theta, X)
        g1 = (p * (1.0 - p))[:, None] * Phi
        return np.stack([-g1, g1], axis=1)

    def mean_weighted_hessian(self, theta, X, arm_values):
        """(1/n) sum_i sum_k w[i,k] d^2 pi_k / dtheta^2 for w = arm_values."""
        Phi = self.features(X)
        p = self._p1(theta, X)
        sig2 = p * (1.0 - p) * (1.0 - 2.0 * p)
        w = (arm_values[:, 1] - arm_values[:, 0]) * sig2
        return (Phi * w[:, None]).T @ Phi / len(Phi)


@dataclass(frozen=True)
class Softmax(_DiscreteFamily):
    """Multinomial-logit policy over K arms with the first arm as reference."""

    features: LinearFeatures
    space: Discrete

    @property
    def n_arms(self) -> int:
        return len(self.space.levels)

    @property
    def dim_theta(self) -> int:
        return (self.n_arms - 1) * self.features.dim

    def _theta_mat(self, theta):
        return _check_theta(theta, self.dim_theta).reshape(
            self.n_arms - 1, self.features.dim)

    def prob_matrix(self, theta, X):
        eta = self.features(X) @ self._theta_mat(theta).T
        eta = np.column_stack([np.zeros(len(eta)), eta])
        eta -= eta.max(axis=1, keepdims=True)
        e = np.exp(eta)
        return e / e.sum(axis=1, keepdims=True)

    def grad_prob_matrix(self, theta, X):
        Phi = self.features(X)
        P = self.prob_matrix(theta, X)
        n, K = P.shape
        p_feat = Phi.shape[1]
        # d pi_k / d theta_b = pi_k (1{k=b} - pi_b) phi,  b = 1..K-1
        delta = np.zeros((K, K - 1))
        delta[1:, :] = np.eye(K - 1)
        coef = P[:, :, None] * (delta[None, :, :] - P[:, None, 1:])
        G = coef[:, :, :, None] * Phi[:, None, None, :]
        return G.reshape(n, K, (K - 1) * p_feat)

    def mean_weighted_hessian(self, theta, X, arm_values):
        Phi = self.features(X)
        P = self.prob_matrix(theta, X)
        n, K = P.shape
        p_feat = Phi.shape[1]
        delta = np.zeros((K, K - 1))
        delta[1:, :] = np.eye(K - 1)
        # d^2 pi_k / (d eta_a d eta_b) =
        #   pi_k [(1{k=a}-pi_a)(1{k=b}-pi_b) - pi_a (1{a=b}-pi_b)]
        dka = delta[None, :, :] - P[:, None, 1:]
        eye = np.eye(K - 1)
        C = (P[:, :, None, None] * (dka[:, :, :, None] * dka[:, :, None, :]
             - (P[:, None, 1:, None] * (eye[None, None] - P[:, None, None, 1:]))))
        W = np.einsum("ik,ikab->iab", arm_values, C)
        PhiPhi = np.einsum("ip,iq->ipq", Phi, Phi)
        H = np.einsum("iab,ipq->apbq", W, PhiPhi) / n
        return H.reshape(self.dim_theta, self.dim_theta)


@dataclass(frozen=True)
class GaussianLink(PolicyFamily):
    """Gaussian dose policy N(theta'phi(x), sigma^2) on the real line.

    sigma is a fixed hyperparameter, never learned; sigma >= SIGMA_MIN keeps
    densities uniformly bounded and rules out point masses.
    """

    features: LinearFeatures
    sigma: float
    space: ContinuousLine = ContinuousLine()

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma < SIGMA_MIN:
            raise DeterministicPolicyError(
                f"sigma={self.sigma} below {SIGMA_MIN}: the policy degenerates "
                "toward a point mass, which is not estimable in this framework")

    @property
    def dim_theta(self) -> int:
        return self.features.dim

    def _eta(self, theta, X):
        return self.features(X) @ _check_theta(theta, self.dim_theta)

    def density_batch(self, theta, t, X):
        t = np.asarray(t, dtype=float)
        if not np.all(np.isfinite(t)):
            raise TreatmentOutOfSpace("treatment must be finite")
        z = (t - self._eta(theta, np.atleast_2d(X))) / self.sigma
        return np.exp(-0.5 * z * z) / (self.sigma * _SQRT2PI)

    def grad_density_batch(self, theta, t, X):
        X = np.atleast_2d(X)
        t = np.asarray(t, dtype=float)
        eta = self._eta(theta, X)
        z = (t - eta) / self.sigma
        dens = np.exp(-0.5 * z * z) / (self.sigma * _SQRT2PI)
        return (dens * z / self.sigma)[:, None] * self.features(X)

    def conditional_value_batch(self, theta, m, X, quad=QuadratureRule()):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        eta = self._eta(theta, X)
        z, w = quad.standard_normal()
        # mu(x) = E m(eta + sigma Z, x); d mu/d eta = E m * Z / sigma
        M = np.empty((len(X), len(z)))
        for k, zk in enumerate(z):
            M[:, k] = np.asarray(m(eta + self.sigma * zk, X), dtype=float).ravel()
        if not np.all(np.isfinite(M)):
            raise QuadratureFailure("conditional mean non-finite at a quadrature node")
        mu = M @ w
        dmu = M @ (w * z) / self.sigma
        return mu, dmu[:, None] * self.features(X)

    def mean_weighted_hessian(self, theta, X, m, quad=QuadratureRule()):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Phi = self.features(X)
        eta = self._eta(theta, X)
        z, w = quad.standard_normal()
        acc = np.zeros(len(X))
        for zk, wk in zip(z, w):
            mk = np.asarray(m(eta + self.sigma * zk, X), dtype=float).ravel()
            acc += wk * mk * (zk * zk - 1.0)
        c = acc / self.sigma ** 2
        return (Phi * c[:, None]).T @ Phi / len(X)

    def sample_batch(self, theta, X, rng):
        X = np.atleast_2d(X)
        return self._eta(theta, X) + self.sigma * rng.standard_normal(len(X))


def family_from_config(cfg: dict, d_x: int):
    """Build a policy family from a config mapping (the CLI's format)."""
    kind = cfg.get("kind")
    cols = cfg.get("feature_columns")
    feats = LinearFeatures(d_x, None if cols is None else tuple(cols),
                           intercept=bool(cfg.get("intercept", True)))
    if kind == "binary_logistic":
        levels = tuple(cfg.get("levels", (0.0, 1.0)))
        return BinaryLogistic(feats, Discrete(levels))
    if kind == "softmax":
        if "levels" not in cfg:
            raise ConfigError("softmax policy config needs 'levels'")
        return Softmax(feats, Discrete(tuple(cfg["levels"])))
    if kind == "gaussian_link":
        if "sigma" not in cfg:
            raise ConfigError("gaussian_link policy config needs 'sigma'")
        return GaussianLink(feats, float(cfg["sigma"]))
    raise ConfigError(f"unknown policy kind {kind!r}")
