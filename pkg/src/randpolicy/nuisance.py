"""Conditional-mean estimation by sieve ridge regression, and the cross-fit
orchestration that produces out-of-fold nuisances for the doubly robust
estimator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .balance import WeightFit, fit_stabilized_weights
from .basis import Basis, orthonormalize
from .data import Dataset, FoldAssignment, split_folds
from .errors import FoldTooSmall, SingularDesign

__all__ = ["MeanFit", "CrossFitNuisance", "fit_conditional_mean", "crossfit",
           "default_ridge"]


def default_ridge(gram_trace: float, k: int) -> float:
    return 1e-6 * gram_trace / max(k, 1)


@dataclass(frozen=True)
class MeanFit:
    """Ridge regression of the outcome on the tensor basis u(t) (x) v(x).

    Columns are centered so the intercept is unpenalized; predictions are
    clipped to twice the largest training outcome magnitude, which keeps the
    fitted function bounded whenever the outcomes are.
    """

    basis_t: Basis
    basis_x: Basis
    coef: np.ndarray
    col_means: np.ndarray
    intercept: float
    ridge: float
    clip: float

    def _coef_mat(self) -> np.ndarray:
        return self.coef.reshape(self.basis_t.size, self.basis_x.size)

    def predict(self, t, X) -> np.ndarray:
        U = np.atleast_2d(self.basis_t.eval(np.atleast_1d(t)))
        V = np.atleast_2d(self.basis_x.eval(np.atleast_2d(X)))
        vals = (self.intercept - self.col_means @ self.coef
                + np.einsum("ij,jk,ik->i", U, self._coef_mat(), V))
        return np.clip(vals, -self.clip, self.clip)

    def table(self, t_points, X) -> np.ndarray:
        """Matrix of predictions m(t_k, x_i): rows follow X, columns t_points.

        This is the building block for conditional-value integration: arm
        tables for discrete treatments, quadrature-node tables otherwise.
        """
        U = np.atleast_2d(self.basis_t.eval(np.asarray(t_points, dtype=float)))
        V = np.atleast_2d(self.basis_x.eval(np.atleast_2d(X)))
        base = self.intercept - self.col_means @ self.coef
        vals = base + V @ self._coef_mat().T @ U.T
        return np.clip(vals, -self.clip, self.clip)

    def as_function(self):
        """Adapter with the (t_or_level, X) -> values signature used by the
        policy conditional-value routines.

        Line-supported policies integrate over all of R while the sieve only
        exists on its treatment interval, so the fitted surface is extended
        constantly beyond the interval ends (the extension region carries
        negligible policy mass in any design with interior doses).
        """
        from .data import ContinuousInterval
        domain = self.basis_t.domain

        def m(t, X):
            X = np.atleast_2d(X)
            t = np.asarray(t, dtype=float)
            if t.ndim == 0:
                t = np.full(len(X), float(t))
            if isinstance(domain, ContinuousInterval):
                t = np.clip(t, domain.lo, domain.hi)
            return self.predict(t, X)
        return m


def fit_conditional_mean(data: Dataset, basis_t: Basis, basis_x: Basis,
                         ridge: float | None = None) -> MeanFit:
    """Penalized least squares on the tensor sieve.

    ridge=None applies the default trace-scaled stabilizer; ridge=0 demands a
    full-column-rank (centered) design and raises SingularDesign otherwise.
    """
    U = basis_t.eval(data.t)
    V = basis_x.eval(data.x)
    B = np.einsum("ij,ik->ijk", U, V).reshape(data.n, -1)
    col_means = B.mean(axis=0)
    Bc = B - col_means
    ybar = float(data.y.mean())
    yc = data.y - ybar
    gram = Bc.T @ Bc
    if ridge is None:
        ridge = default_ridge(float(np.trace(gram)), B.shape[1])
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    A = gram + ridge * np.eye(B.shape[1])
    try:
        c = np.linalg.cholesky(A)
        coef = np.linalg.solve(c.T, np.linalg.solve(c, Bc.T @ yc))
    except np.linalg.LinAlgError:
        if ridge == 0.0:
            raise SingularDesign(
                "centered design is rank deficient; use ridge > 0") from None
        raise
    clip = 2.0 * float(np.max(np.abs(data.y)))
    return MeanFit(basis_t, basis_x, coef, col_means, ybar, float(ridge), clip)


@dataclass(frozen=True)
class CrossFitNuisance:
    """Per-fold nuisances, each trained on the fold's complement."""

    folds: FoldAssignment
    mean_fits: tuple
    weight_fits: tuple

    def route(self, i: int) -> int:
        return int(self.folds.fold_of[i])

    def weights_at_data(self, data: Dataset) -> np.ndarray:
        out = np.empty(data.n)
        for ell, fit in enumerate(self.weight_fits):
            idx = self.folds.indices(ell)
            out[idx] = fit.weights(data.t[idx], data.x[idx])
        return out

    def mean_at_data(self, data: Dataset) -> np.ndarray:
        out = np.empty(data.n)
        for ell, fit in enumerate(self.mean_fits):
            idx = self.folds.indices(ell)
            out[idx] = fit.predict(data.t[idx], data.x[idx])
        return out

    def mean_table(self, t_points, data: Dataset) -> np.ndarray:
        """Out-of-fold predictions m^(-fold_i)(t_k, x_i) as an n x len(t) table."""
        t_points = np.asarray(t_points, dtype=float)
        out = np.empty((data.n, len(t_points)))
        for ell, fit in enumerate(self.mean_fits):
            idx = self.folds.indices(ell)
            out[idx] = fit.table(t_points, data.x[idx])
        return out

    def nuisance_errors(self, data: Dataset, true_m, true_omega):
        """Diagnostic for the product-rate condition: in-sample L2 errors of
        the out-of-fold fits and their product."""
        m_err = float(np.sqrt(np.mean(
            (self.mean_at_data(data) - true_m(data.t, data.x)) ** 2)))
        w_err = float(np.sqrt(np.mean(
            (self.weights_at_data(data) - true_omega(data.t, data.x)) ** 2)))
        return m_err, w_err, m_err * w_err


def crossfit(data: Dataset, n_folds: int, seed: int,
             mean_basis_t: Basis, mean_basis_x: Basis,
             weight_basis_t: Basis, weight_basis_x: Basis,
             ridge: float | None = None,
             tol_grad: float = 1e-9) -> CrossFitNuisance:
    """Train L mean fits and L weight fits, each on a fold's complement.

    Covariate bases are orthonormalized on each training complement;
    treatment bases against the analytic measure once.
    """
    folds = split_folds(data.n, n_folds, seed)
    mt = orthonormalize(mean_basis_t)
    wt = orthonormalize(weight_basis_t)
    need = max(mean_basis_t.size * mean_basis_x.size,
               weight_basis_t.size * weight_basis_x.size)
    mean_fits, weight_fits = [], []
    for ell in range(n_folds):
        comp = folds.complement(ell)
        if len(comp) < need:
            raise FoldTooSmall(
                f"fold complement has {len(comp)} rows < {need} basis functions")
        train = data.subset(comp)
        mx = orthonormalize(mean_basis_x, train.x)
        wx = orthonormalize(weight_basis_x, train.x)
        mean_fits.append(fit_conditional_mean(train, mt, mx, ridge))
        weight_fits.append(fit_stabilized_weights(train, wt, wx,
                                                  tol_grad=tol_grad))
    return CrossFitNuisance(folds, tuple(mean_fits), tuple(weight_fits))
