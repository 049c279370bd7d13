"""Plug-in regret asymptotics.

Estimates the welfare curvature H, the efficiency bound for the policy
parameter, and the extra noise covariance paid by weighting with the true
propensity; turns them into the limiting regret distribution (closed-form
moments plus a quadratic-form sampler); and compares expected suprema of the
limiting welfare processes of the two weighting schemes on a grid of binary
policies.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import DegenerateCurvature, KernelNotPSD, NotPSD
from .policy import GaussianLink, PolicyFamily
from .quadrature import QuadratureRule

__all__ = [
    "estimate_curvature", "influence_values", "estimate_efficient_cov",
    "estimate_tp_noise_cov", "RegretLimitMoments", "regret_limit_moments",
    "sample_regret_limit", "AsymptoticReport", "make_report",
    "threshold_policy_matrix", "gp_sup_compare", "GpSupResult",
]

_DEGENERATE_RATIO = 1e-8
_PSD_TOL = 1e-8


def sqrt_psd(mat: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Symmetric square root; eigenvalues below -tol*scale raise NotPSD."""
    sym = 0.5 * (mat + mat.T)
    eigval, eigvec = np.linalg.eigh(sym)
    scale = max(float(eigval.max()), 0.0)
    if eigval.min() < -_PSD_TOL * max(scale, 1e-300):
        raise NotPSD(f"{name} has eigenvalue {eigval.min():.3e} < 0")
    return eigvec @ np.diag(np.sqrt(np.clip(eigval, 0.0, None))) @ eigvec.T


def _check_curvature(H: np.ndarray) -> np.ndarray:
    H = 0.5 * (H + H.T)
    eigs = np.linalg.eigvalsh(H)
    if eigs.min() <= _DEGENERATE_RATIO * max(eigs.max(), 0.0):
        raise DegenerateCurvature(
            f"curvature eigenvalues {eigs}: welfare is locally flat or "
            "indefinite at the given parameter")
    return H


def estimate_curvature(family: PolicyFamily, theta, m, X,
                       method: str = "analytic",
                       quad: QuadratureRule = QuadratureRule(),
                       fd_step: float = 1e-4) -> np.ndarray:
    """Minus the average second derivative of the plug-in conditional value,
    H_hat = -(1/n) sum_i  integral m(t, X_i) d^2_theta pi_theta(t|X_i) dt.

    `method='fd'` instead second-differences the smoothed plug-in welfare
    (1/n) sum_i mu_theta(X_i); it is the slow cross-check path.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    theta = np.asarray(theta, dtype=float)
    if method == "analytic":
        if isinstance(family, GaussianLink):
            raw = family.mean_weighted_hessian(theta, X, m, quad)
        else:
            M = np.column_stack([np.asarray(m(lvl, X), dtype=float).ravel()
                                 for lvl in family.levels])
            raw = family.mean_weighted_hessian(theta, X, M)
        return _check_curvature(-raw)
    if method != "fd":
        raise ValueError(f"unknown method {method!r}")

    def S(th):
        return float(family.conditional_value_batch(th, m, X, quad)[0].mean())

    p = len(theta)
    H = np.empty((p, p))
    h = fd_step * (1.0 + np.abs(theta))
    base = S(theta)
    for j in range(p):
        ej = np.zeros(p)
        ej[j] = h[j]
        H[j, j] = (S(theta + ej) - 2.0 * base + S(theta - ej)) / h[j] ** 2
        for k in range(j + 1, p):
            ek = np.zeros(p)
            ek[k] = h[k]
            H[j, k] = H[k, j] = (
                S(theta + ej + ek) - S(theta + ej - ek)
                - S(theta - ej + ek) + S(theta - ej - ek)
            ) / (4.0 * h[j] * h[k])
    return _check_curvature(-H)


def influence_values(family: PolicyFamily, theta, data: Dataset, m, omega,
                     propensity=None, quad: QuadratureRule = QuadratureRule()):
    """Per-unit policy-parameter scores.

    Returns (phi_dot, tp_extra): phi_dot rows are the efficient score
    d_theta mu(X_i) + w_i d_theta pi(T_i|X_i) (Y_i - m(T_i,X_i)); tp_extra
    rows are the orthogonal direction m/f * d_theta pi - d_theta mu that the
    true-propensity weighting fails to project out (None without propensity).
    """
    X = data.x
    _, dmu = family.conditional_value_batch(theta, m, X, quad)
    dpi = family.grad_density_batch(theta, data.t, X)
    m_at = np.asarray(m(data.t, X), dtype=float).ravel()
    w = np.asarray(omega(data.t, X), dtype=float).ravel()
    phi_dot = dmu + (w * (data.y - m_at))[:, None] * dpi
    tp_extra = None
    if propensity is not None:
        f = np.asarray(propensity(data.t, X), dtype=float).ravel()
        tp_extra = (m_at / f)[:, None] * dpi - dmu
    return phi_dot, tp_extra


def estimate_efficient_cov(H: np.ndarray, phi_dot: np.ndarray) -> np.ndarray:
    """Sandwich H^{-1} Cov(phi_dot) H^{-1} with the centered sample covariance."""
    Hinv = np.linalg.inv(_check_curvature(H))
    centered = phi_dot - phi_dot.mean(axis=0)
    cov = centered.T @ centered / len(phi_dot)
    return Hinv @ cov @ Hinv


def estimate_tp_noise_cov(H: np.ndarray, tp_extra: np.ndarray) -> np.ndarray:
    """Sandwich of the uncentered outer-product average of the orthogonal
    direction (its population mean is zero at the optimum)."""
    Hinv = np.linalg.inv(_check_curvature(H))
    outer = tp_extra.T @ tp_extra / len(tp_extra)
    return Hinv @ outer @ Hinv


@dataclass(frozen=True)
class RegretLimitMoments:
    mean: float
    variance: float | None          # closed form only when the noise is Gaussian
    eigenvalues: np.ndarray         # of H^{1/2} (V + Sigma_U) H^{1/2}, descending
    chi_square_term: float          # (1/2) sum of squared eigenvalues of H^{1/2} V H^{1/2}
    cross_term: float               # tr(H^{1/2} V H Sigma_U H^{1/2})


def regret_limit_moments(H, V, Sigma_U=None, u_gaussian=True) -> RegretLimitMoments:
    """Moments of the limiting scaled regret (1/2)(G+U)' H (G+U).

    mean = (1/2) tr(H^{1/2}(V + Sigma_U) H^{1/2}); with Gaussian U the
    variance is (1/2) of the sum of squared eigenvalues of the same matrix.
    For non-Gaussian U the quartic term Var(U'HU) is left to the sampler and
    variance is None (the decomposable terms are still reported).
    """
    H = _check_curvature(np.asarray(H, dtype=float))
    p = H.shape[0]
    V = np.asarray(V, dtype=float)
    S = np.zeros((p, p)) if Sigma_U is None else np.asarray(Sigma_U, dtype=float)
    Hs = sqrt_psd(H, "H")
    sqrt_psd(V, "V")
    sqrt_psd(S, "Sigma_U")
    A = Hs @ (V + S) @ Hs
    eigs = np.sort(np.linalg.eigvalsh(0.5 * (A + A.T)))[::-1]
    mean = 0.5 * float(eigs.sum())
    AV = Hs @ V @ Hs
    lam_v = np.linalg.eigvalsh(0.5 * (AV + AV.T))
    chi_term = 0.5 * float((lam_v ** 2).sum())
    cross = float(np.trace(Hs @ V @ H @ S @ Hs))
    variance = 0.5 * float((eigs ** 2).sum()) if u_gaussian else None
    return RegretLimitMoments(mean, variance, eigs, chi_term, cross)


def sample_regret_limit(H, V, Sigma_U, n_draws: int, seed: int,
                        chunk: int = 200_000) -> np.ndarray:
    """Monte Carlo draws of (1/2)(G+U)'H(G+U), G ~ N(0,V) independent of
    U ~ N(0,Sigma_U); deterministic in the seed."""
    H = np.asarray(H, dtype=float)
    p = H.shape[0]
    sqV = sqrt_psd(np.asarray(V, dtype=float), "V")
    S = np.zeros((p, p)) if Sigma_U is None else np.asarray(Sigma_U, dtype=float)
    sqS = sqrt_psd(S, "Sigma_U")
    rng = np.random.default_rng(seed)
    out = np.empty(n_draws)
    done = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        Z = rng.standard_normal((m, p)) @ sqV
        if S.any():
            Z += rng.standard_normal((m, p)) @ sqS
        elif Sigma_U is not None:
            rng.standard_normal((m, p))   # keep the stream layout stable
        out[done:done + m] = 0.5 * np.einsum("ij,jk,ik->i", Z, H, Z)
        done += m
    return out


@dataclass(frozen=True)
class AsymptoticReport:
    curvature: np.ndarray
    efficient_cov: np.ndarray
    noise_cov: np.ndarray
    eigenvalues: np.ndarray
    regret_mean: float
    regret_var: float | None
    quantiles: tuple

    def to_jsonable(self) -> dict:
        return {
            "curvature": self.curvature.tolist(),
            "efficient_cov": self.efficient_cov.tolist(),
            "noise_cov": self.noise_cov.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "regret_mean": self.regret_mean,
            "regret_var": self.regret_var,
            "quantiles": [[lv, val] for lv, val in self.quantiles],
        }


def make_report(H, V, Sigma_U=None, u_gaussian=True, n_draws: int = 100_000,
                seed: int = 0, levels=(0.5, 0.9, 0.95, 0.99)) -> AsymptoticReport:
    p = np.asarray(H).shape[0]
    S = np.zeros((p, p)) if Sigma_U is None else np.asarray(Sigma_U, dtype=float)
    mom = regret_limit_moments(H, V, S, u_gaussian)
    draws = sample_regret_limit(H, V, S, n_draws, seed)
    qs = tuple((float(lv), float(np.quantile(draws, lv))) for lv in levels)
    return AsymptoticReport(np.asarray(H, float), np.asarray(V, float), S,
                            mom.eigenvalues, mom.mean, mom.variance, qs)


# --------------------------------------------------------------------------
# Welfare-process supremum comparison on a binary-treatment policy grid.
# --------------------------------------------------------------------------

def threshold_policy_matrix(x1: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Policies 1{x1 >= c} for each threshold c: an n x G 0/1 matrix."""
    return (np.asarray(x1)[:, None] >= np.asarray(grid)[None, :]).astype(float)


@dataclass(frozen=True)
class GpSupResult:
    e_sup_tp: float
    e_sup_ep: float
    sups_tp: np.ndarray
    sups_ep: np.ndarray
    paired_diff_se: float
    increment_gap_min: float        # min over pairs of D_tp - D_ep + allowance
    increment_ok: bool
    kernel_tp: np.ndarray
    kernel_ep: np.ndarray


def _kernel(P: np.ndarray, tau: np.ndarray, base: np.ndarray) -> np.ndarray:
    """Covariance over the sample of tau*P[:,g] + base across grid columns."""
    n = len(tau)
    M2 = (P * (tau * tau)[:, None]).T @ P / n
    r = P.T @ (tau * base) / n
    mu = P.T @ tau / n + base.mean()
    C = M2 + r[:, None] + r[None, :] + np.mean(base * base) - np.outer(mu, mu)
    return 0.5 * (C + C.T)


def _psd_factor(C: np.ndarray, name: str) -> np.ndarray:
    eigval, eigvec = np.linalg.eigh(C)
    tol = _PSD_TOL * max(float(np.trace(C)), 1e-300)
    if eigval.min() < -tol:
        raise KernelNotPSD(f"{name} kernel eigenvalue {eigval.min():.3e} "
                           f"below -{tol:.3e}")
    return eigvec * np.sqrt(np.clip(eigval, 0.0, None))[None, :]


def gp_sup_compare(P: np.ndarray, y, t, m0, m1, p_score, n_draws: int,
                   seed: int, allowance_se: float = 4.0) -> GpSupResult:
    """Expected suprema of the limiting welfare processes over a policy grid.

    P is the n x G policy matrix evaluated on a large oracle sample; y and t
    the outcomes/treatments of that sample; m0, m1, p_score the oracle
    nuisance values at its covariates. Gaussian vectors for the two schemes
    are drawn from empirical covariance kernels using common normal draws,
    so the supremum difference is a paired comparison. Also verifies the
    increment-variance domination that underpins the comparison, with a
    `allowance_se`-standard-error cushion for kernel-estimation noise.
    """
    y = np.asarray(y, float).ravel()
    t = np.asarray(t, float).ravel()
    m0 = np.asarray(m0, float).ravel()
    m1 = np.asarray(m1, float).ravel()
    p_score = np.asarray(p_score, float).ravel()
    w1, w0 = 1.0 / p_score, 1.0 / (1.0 - p_score)
    tau_tp = w1 * t * y - w0 * (1.0 - t) * y
    base_tp = w0 * (1.0 - t) * y
    tau_ep = (w1 * t * (y - m1) - w0 * (1.0 - t) * (y - m0)) + (m1 - m0)
    base_ep = w0 * (1.0 - t) * (y - m0) + m0

    C_tp = _kernel(P, tau_tp, base_tp)
    C_ep = _kernel(P, tau_ep, base_ep)

    # Increment variances D_j[g,h] = Var(phi_j(pi_g) - phi_j(pi_h)).
    d_tp = np.diag(C_tp)
    d_ep = np.diag(C_ep)
    D_tp = d_tp[:, None] + d_tp[None, :] - 2.0 * C_tp
    D_ep = d_ep[:, None] + d_ep[None, :] - 2.0 * C_ep
    n = len(y)
    is_binary = np.isin(P, (0.0, 1.0)).all()
    if is_binary:
        # For 0/1 policies (pi_g - pi_h)^2 is itself 0/1, so the sampling
        # variance of the increment-gap estimate has a closed moment form.
        w_diff = tau_tp ** 2 - tau_ep ** 2
        E_w = _pair_means(P, w_diff)
        E_w2 = _pair_means(P, w_diff ** 2)
        var_gap = np.clip(E_w2 - E_w ** 2, 0.0, None) / n
        allowance = allowance_se * np.sqrt(var_gap)
    else:
        allowance = allowance_se * (np.abs(D_tp) + np.abs(D_ep)) / np.sqrt(n)
    gap = D_tp - D_ep + allowance
    off = ~np.eye(len(C_tp), dtype=bool)
    increment_gap_min = float(gap[off].min()) if off.any() else 0.0

    F_tp = _psd_factor(C_tp, "tp")
    F_ep = _psd_factor(C_ep, "ep")
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n_draws, P.shape[1]))
    sups_tp = np.abs(Z @ F_tp.T).max(axis=1)
    sups_ep = np.abs(Z @ F_ep.T).max(axis=1)
    diff = sups_tp - sups_ep
    se = float(diff.std(ddof=1) / np.sqrt(n_draws))
    return GpSupResult(float(sups_tp.mean()), float(sups_ep.mean()),
                       sups_tp, sups_ep, se, increment_gap_min,
                       increment_gap_min >= 0.0, C_tp, C_ep)


def _pair_means(P: np.ndarray, w: np.ndarray) -> np.ndarray:
    """E_n[w * (P_g - P_h)^2] for 0/1 policy columns, via moment matrices."""
    n = len(w)
    wbar_g = P.T @ w / n
    M = (P * w[:, None]).T @ P / n
    return wbar_g[:, None] + wbar_g[None, :] - 2.0 * M
