"""Synthetic data-generating processes, oracle welfare evaluation on large
test samples, and the Monte Carlo engine that compares the three policy
estimators replication by replication."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ._kernels import softmax_objective
from .balance import fit_stabilized_weights
from .basis import (indicator_basis, orthonormalize, shifted_legendre_basis,
                    tensor_polynomial_basis)
from .data import ContinuousInterval, Dataset, Discrete
from .errors import ConfigError, NumericalError, OverlapViolation, RandPolicyError
from .nuisance import crossfit
from .optimize import THETA_BOUND, maximize_multistart
from .policy import GaussianLink, LinearFeatures, PolicyFamily
from .quadrature import QuadratureRule
from .welfare import build_objective, default_tol, maximize

__all__ = [
    "DiscreteDgp", "ContinuousDoseDgp", "run_dgp", "OracleEvaluator",
    "McStudy", "McReport", "monte_carlo", "dose_benchmark", "binary_benchmark",
    "benchmark_study", "random_binary_dgp", "dgp_from_config",
]

F_MIN_PROBE = 1e-4


def _uniform_x(d_x):
    def sampler(n, rng):
        return rng.random((n, d_x))
    return sampler


@dataclass(frozen=True)
class EmpiricalSampler:
    """Bootstrap covariate draws from a fixed pool (CSV-calibrated designs)."""

    pool: np.ndarray

    def __call__(self, n, rng):
        idx = rng.integers(0, len(self.pool), size=n)
        return self.pool[idx]


@dataclass(frozen=True)
class DiscreteDgp:
    """Finitely many arms: per-arm mean surfaces and assignment probabilities."""

    name: str
    d_x: int
    space: Discrete
    arm_probs: object               # X -> (n, K) probabilities
    arm_means: tuple                # per arm: X -> (n,)
    noise_half: tuple               # per arm: centered-uniform half width
    x_sampler: object = None

    def __post_init__(self):
        if self.x_sampler is None:
            object.__setattr__(self, "x_sampler", _uniform_x(self.d_x))

    @property
    def levels(self):
        return self.space.levels

    def mean_surface(self, t, X):
        X = np.atleast_2d(X)
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            k = self.space.level_index(float(t))
            return np.asarray(self.arm_means[k](X), dtype=float).ravel()
        out = np.empty(len(X))
        for k, lvl in enumerate(self.levels):
            mask = t == lvl
            if mask.any():
                out[mask] = np.asarray(self.arm_means[k](X[mask]),
                                       dtype=float).ravel()
        return out

    def propensity_density(self, t, X):
        X = np.atleast_2d(X)
        P = np.asarray(self.arm_probs(X), dtype=float)
        levels = np.array(self.levels)
        idx = np.searchsorted(levels, np.asarray(t, dtype=float))
        return P[np.arange(len(X)), np.clip(idx, 0, len(levels) - 1)]

    def omega(self, t, X):
        return 1.0 / self.propensity_density(t, X)


@dataclass(frozen=True)
class ContinuousDoseDgp:
    """A dose on a compact interval with a smooth outcome surface m(t, x)."""

    name: str
    d_x: int
    space: ContinuousInterval
    density: object                 # f(t, X) -> (n,)
    draw_t: object                  # (X, rng) -> (n,)
    mean_surface: object            # m(t, X) -> (n,), t scalar or (n,)
    noise_half: float
    smoothed_mean: object = None    # optional (eta, X, sigma) -> (mu, dmu)
    x_sampler: object = None

    def __post_init__(self):
        if self.x_sampler is None:
            object.__setattr__(self, "x_sampler", _uniform_x(self.d_x))

    def propensity_density(self, t, X):
        return np.asarray(self.density(np.asarray(t, float), np.atleast_2d(X)),
                          dtype=float).ravel()

    def omega(self, t, X):
        return 1.0 / self.propensity_density(t, X)


def run_dgp(spec, n: int, seed: int):
    """Draw a sample: covariates, then treatment, then outcome noise.

    Returns (Dataset, aux) where aux carries the oracle-only pieces (per-arm
    potential outcomes for discrete specs, the noise for continuous ones).
    """
    rng = np.random.default_rng(seed)
    X = spec.x_sampler(n, rng)
    if isinstance(spec, DiscreteDgp):
        P = np.asarray(spec.arm_probs(X), dtype=float)
        if P.min() < F_MIN_PROBE:
            raise OverlapViolation(
                f"assignment probability {P.min():.2e} below probe floor")
        u = rng.random(n)
        arm = (u[:, None] > np.cumsum(P, axis=1)).sum(axis=1)
        levels = np.array(spec.levels)
        potentials = np.empty((n, len(levels)))
        for k in range(len(levels)):
            eps = rng.uniform(-spec.noise_half[k], spec.noise_half[k], n)
            potentials[:, k] = np.asarray(spec.arm_means[k](X)).ravel() + eps
        t = levels[arm]
        y = potentials[np.arange(n), arm]
        return Dataset(y, t, X, spec.space), {"potentials": potentials, "arm": arm}
    t = np.asarray(spec.draw_t(X, rng), dtype=float)
    f = spec.propensity_density(t, X)
    if f.min() <= 0:
        raise OverlapViolation("drawn treatment has zero logging density")
    eps = rng.uniform(-spec.noise_half, spec.noise_half, n)
    y = np.asarray(spec.mean_surface(t, X), dtype=float).ravel() + eps
    return Dataset(y, t, X, spec.space), {"noise": eps}


class OracleEvaluator:
    """Welfare of any policy evaluated on a fixed large test sample, with the
    policy randomization and the outcome noise both integrated out."""

    def __init__(self, spec, family: PolicyFamily, n_test: int, seed: int,
                 quad: QuadratureRule = QuadratureRule()):
        self.spec = spec
        self.family = family
        self.quad = quad
        rng = np.random.default_rng(seed)
        self.X = spec.x_sampler(n_test, rng)
        self._phi = np.ascontiguousarray(family.features(self.X))
        self._discrete = isinstance(spec, DiscreteDgp)
        if self._discrete:
            self._M = np.ascontiguousarray(np.column_stack(
                [np.asarray(fn(self.X), dtype=float).ravel()
                 for fn in spec.arm_means]))
            self._zero_a = np.zeros(n_test)
            self._zero_arm = np.zeros(n_test, dtype=np.int64)
        self._use_hook = (isinstance(spec, ContinuousDoseDgp)
                          and spec.smoothed_mean is not None
                          and isinstance(family, GaussianLink))
        self._optimum = None

    def value_grad(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self._discrete:
            value, grad = softmax_objective(
                self._phi, np.ascontiguousarray(
                    theta.reshape(-1, self.family.features.dim)),
                self._zero_arm, self._zero_a, self._M)
            return value, grad.ravel()
        if self._use_hook:
            eta = self._phi @ theta
            mu, dmu = self.spec.smoothed_mean(eta, self.X, self.family.sigma)
            return float(np.mean(mu)), self._phi.T @ dmu / len(self.X)
        mu, dmu = self.family.conditional_value_batch(
            theta, self.spec.mean_surface, self.X, self.quad)
        return float(mu.mean()), dmu.mean(axis=0)

    def welfare(self, theta) -> float:
        return self.value_grad(theta)[0]

    def optimum(self, seed: int = 0, restarts: int = 8,
                max_iter: int = 300, bound: float = THETA_BOUND):
        """Cached multi-start maximum of the oracle welfare on the test sample."""
        if self._optimum is None:
            tol = default_tol(len(self.X))
            best, _ = maximize_multistart(self.value_grad,
                                          self.family.dim_theta, seed,
                                          restarts=restarts, tol_grad=tol,
                                          max_iter=max_iter, bound=bound)
            self._optimum = (best.theta, best.value, best.boundary)
        return self._optimum


# --------------------------------------------------------------------------
# Estimator configuration and per-replication fitting.
# --------------------------------------------------------------------------

def _treatment_basis(space, degree):
    if isinstance(space, Discrete):
        return indicator_basis(space)
    return shifted_legendre_basis(space, degree)


def _covariate_basis(d_x, degrees, max_functions, n):
    if degrees == "default":
        cap = min(1 + d_x + d_x * (d_x + 1) // 2,
                  int(np.floor(n ** (1.0 / 3.0))))
        return tensor_polynomial_basis(d_x, (2,) * d_x, max_functions=max(cap, 1))
    return tensor_polynomial_basis(d_x, degrees, max_functions=max_functions)


def _scaled_degree(rule, n):
    coef, lo, hi = rule
    return int(np.clip(round(coef * np.sqrt(n)), lo, hi)) - 1


DEFAULT_EP = {"t_degree": 3, "t_degree_rule": None,
              "x_degrees": "default", "x_max_functions": None}
DEFAULT_DR = {"folds": 2, "weight_t_degree": 3, "weight_x_degrees": 0,
              "weight_x_max_functions": None,
              "mean_t_degree": 3, "mean_x_degrees": "default",
              "mean_x_max_functions": None, "ridge": None}


def fit_estimator(kind: str, data: Dataset, family: PolicyFamily, spec,
                  seeds, ep_cfg=None, dr_cfg=None, restarts: int = 8,
                  max_iter: int = 200, bound: float = THETA_BOUND,
                  quad: QuadratureRule = QuadratureRule()):
    """Fit one of the three estimators on a dataset drawn from `spec`."""
    ep_cfg = {**DEFAULT_EP, **(ep_cfg or {})}
    dr_cfg = {**DEFAULT_DR, **(dr_cfg or {})}
    opt_seed, aux_seed = int(seeds[0]), int(seeds[1])
    if kind == "tp":
        obj = build_objective("tp", data, family,
                              propensity=spec.propensity_density)
    elif kind == "ep":
        deg = ep_cfg["t_degree"] if ep_cfg["t_degree_rule"] is None \
            else _scaled_degree(ep_cfg["t_degree_rule"], data.n)
        bt = orthonormalize(_treatment_basis(data.space, deg))
        bx = orthonormalize(_covariate_basis(data.d_x, ep_cfg["x_degrees"],
                                             ep_cfg["x_max_functions"], data.n),
                            data.x)
        wfit = fit_stabilized_weights(data, bt, bx)
        obj = build_objective("ep", data, family, weight_fit=wfit)
    elif kind == "dr":
        d_x = data.d_x
        nuis = crossfit(
            data, int(dr_cfg["folds"]), aux_seed,
            _treatment_basis(data.space, dr_cfg["mean_t_degree"]),
            _covariate_basis(d_x, dr_cfg["mean_x_degrees"],
                             dr_cfg["mean_x_max_functions"], data.n),
            _treatment_basis(data.space, dr_cfg["weight_t_degree"]),
            _covariate_basis(d_x, dr_cfg["weight_x_degrees"],
                             dr_cfg["weight_x_max_functions"], data.n),
            ridge=dr_cfg["ridge"])
        obj = build_objective("dr", data, family, nuisances=nuis, quad=quad)
    else:
        raise ConfigError(f"unknown estimator {kind!r}")
    return maximize(obj, seed=opt_seed, restarts=restarts, max_iter=max_iter,
                    bound=bound)


# --------------------------------------------------------------------------
# Monte Carlo study.
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class McStudy:
    dgp: object
    family: PolicyFamily
    sample_sizes: tuple = (500, 1000, 1500)
    replications: int = 500
    estimators: tuple = ("tp", "ep", "dr")
    n_test: int = 1_000_000
    base_seed: int = 20_240_501
    restarts: int = 4
    max_iter: int = 200
    ep_cfg: dict = field(default_factory=dict)
    dr_cfg: dict = field(default_factory=dict)
    n_jobs: int = 0                   # 0: use the available CPUs, capped at 8
    max_failure_frac: float = 0.02

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("need at least one replication")
        if self.n_test < 100_000:
            raise ConfigError("oracle evaluation needs n_test >= 100000")


@dataclass(frozen=True)
class McCell:
    estimator: str
    n: int
    regrets: np.ndarray              # per surviving replication
    rep_ids: np.ndarray

    @property
    def n_regret(self):
        return self.n * self.regrets

    @property
    def mean(self):
        return float(self.regrets.mean())

    @property
    def sd(self):
        return float(self.regrets.std(ddof=1))


@dataclass(frozen=True)
class McReport:
    study: McStudy
    theta_star: np.ndarray
    w_star: float
    boundary: bool
    cells: dict                      # (estimator, n) -> McCell
    failures: tuple                  # (n, rep, estimator, message)

    def cell(self, estimator, n) -> McCell:
        return self.cells[(estimator, int(n))]

    def to_jsonable(self):
        return {
            "theta_star": self.theta_star.tolist(),
            "w_star": self.w_star,
            "boundary_optimum": self.boundary,
            "sample_sizes": list(self.study.sample_sizes),
            "replications": self.study.replications,
            "cells": [
                {"estimator": e, "n": n, "mean_regret": c.mean,
                 "sd_regret": c.sd, "mean_n_regret": float(c.n_regret.mean()),
                 "sd_n_regret": float(c.n_regret.std(ddof=1)),
                 "n_reps": len(c.regrets)}
                for (e, n), c in sorted(self.cells.items())
            ],
            "n_failures": len(self.failures),
        }

    def draw_rows(self):
        """Rows (estimator, n, rep, regret, n*regret) for CSV emission."""
        for (e, n), c in sorted(self.cells.items()):
            for rep, r in zip(c.rep_ids, c.regrets):
                yield e, n, int(rep), float(r), float(n * r)

    def histogram_rows(self, bins: int = 40):
        for (e, n), c in sorted(self.cells.items()):
            counts, edges = np.histogram(c.n_regret, bins=bins)
            for lo, hi, ct in zip(edges[:-1], edges[1:], counts):
                yield e, n, float(lo), float(hi), int(ct)


_ACTIVE: dict = {}


def _rep_seeds(base_seed, n, rep):
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(n, rep))
    return ss.generate_state(6)


def _run_rep(task):
    n, rep = task
    study: McStudy = _ACTIVE["study"]
    evaluator: OracleEvaluator = _ACTIVE["evaluator"]
    w_star = _ACTIVE["w_star"]
    states = _rep_seeds(study.base_seed, n, rep)
    data, _ = run_dgp(study.dgp, n, int(states[0]))
    out = {}
    for j, kind in enumerate(study.estimators):
        try:
            est = fit_estimator(kind, data, study.family, study.dgp,
                                (states[1 + j], states[5]),
                                ep_cfg=study.ep_cfg, dr_cfg=study.dr_cfg,
                                restarts=study.restarts,
                                max_iter=study.max_iter)
            out[kind] = float(w_star - evaluator.welfare(est.theta))
        except RandPolicyError as exc:
            out[kind] = f"error: {exc}"
    return n, rep, out


def monte_carlo(study: McStudy) -> McReport:
    """Run the replication grid, oracle-score every fitted policy, aggregate.

    Replication (n, r) is seeded from (base_seed, n, r) alone, so results are
    invariant to the total number of replications and to scheduling.
    """
    evaluator = OracleEvaluator(study.dgp, study.family, study.n_test,
                                seed=study.base_seed)
    theta_star, w_star, boundary = evaluator.optimum(seed=study.base_seed,
                                                     restarts=8)
    _ACTIVE["study"] = study
    _ACTIVE["evaluator"] = evaluator
    _ACTIVE["w_star"] = w_star
    tasks = [(n, r) for n in study.sample_sizes
             for r in range(study.replications)]
    n_jobs = study.n_jobs or min(8, os.cpu_count() or 1)
    results = {}
    if n_jobs > 1 and len(tasks) > 1:
        import multiprocessing as mp
        ctx = mp.get_context("fork")
        with ProcessPoolExecutor(max_workers=n_jobs, mp_context=ctx) as pool:
            for n, rep, out in pool.map(_run_rep, tasks, chunksize=8):
                results[(n, rep)] = out
    else:
        for task in tasks:
            n, rep, out = _run_rep(task)
            results[(n, rep)] = out
    failures = []
    cells = {}
    for n in study.sample_sizes:
        per_est = {e: ([], []) for e in study.estimators}
        for rep in range(study.replications):
            out = results[(n, rep)]
            for e in study.estimators:
                if isinstance(out[e], str):
                    failures.append((n, rep, e, out[e]))
                else:
                    per_est[e][0].append(out[e])
                    per_est[e][1].append(rep)
        for e, (vals, ids) in per_est.items():
            cells[(e, n)] = McCell(e, n, np.array(vals), np.array(ids))
    failed_reps = {(n, rep) for n, rep, _, _ in failures}
    frac = len(failed_reps) / max(len(tasks), 1)
    if frac > study.max_failure_frac:
        raise NumericalError(
            f"{len(failed_reps)}/{len(tasks)} replications failed "
            f"({100 * frac:.1f}% > {100 * study.max_failure_frac:.0f}%)")
    return McReport(study, theta_star, w_star, boundary, cells,
                    tuple(failures))


# --------------------------------------------------------------------------
# Named data-generating processes.
# --------------------------------------------------------------------------

def dose_benchmark() -> ContinuousDoseDgp:
    """Default benchmark: a dose policy problem with an interior optimum.

    Uniform logging on [-1, 2]; outcome surface a Gaussian-in-dose bump of
    height 6 over a base level 2, peaking at t0(x) = 0.25 + 0.25 x1 + 0.15 x2;
    centered uniform noise on [-5, 5]. With a Gaussian dose policy the best
    linear dose rule reproduces t0 exactly, so the optimal parameter is the
    interior point (0.25, 0.25, 0.15) for features (1, x1, x2).
    """
    lo, hi = -1.0, 2.0
    base, height, width = 2.0, 6.0, 0.35

    def t0(X):
        return 0.25 + 0.25 * X[:, 0] + 0.15 * X[:, 1]

    def mean_surface(t, X):
        X = np.atleast_2d(X)
        return base + height * np.exp(-(np.asarray(t, float) - t0(X)) ** 2
                                      / (2.0 * width ** 2))

    def density(t, X):
        t = np.asarray(t, float)
        return np.where((t >= lo) & (t <= hi), 1.0 / (hi - lo), 0.0)

    def draw_t(X, rng):
        return rng.uniform(lo, hi, len(X))

    def smoothed_mean(eta, X, sigma):
        s2 = sigma ** 2 + width ** 2
        z = np.asarray(eta, float) - t0(np.atleast_2d(X))
        bump = height * (width / np.sqrt(s2)) * np.exp(-z * z / (2.0 * s2))
        return base + bump, bump * (-z / s2)

    return ContinuousDoseDgp("dose-benchmark", 2, ContinuousInterval(lo, hi),
                             density, draw_t, mean_surface, 5.0, smoothed_mean)


def benchmark_family(sigma: float = 0.35) -> GaussianLink:
    return GaussianLink(LinearFeatures(2), sigma)


def binary_benchmark() -> DiscreteDgp:
    """Binary job-program style design: logistic assignment in x1, constant
    base outcome, linear treatment effect 5(x1 - x2), noise U[-10, 10].

    The optimal logistic policy for this design sits on the parameter box
    boundary (the effect's sign is linearly separable), which the optimizer
    reports through its boundary flag; regret asymptotics that assume an
    interior optimum do not apply here.
    """
    def p1(X):
        return 1.0 / (1.0 + np.exp(-(0.5 - 0.5 * X[:, 0])))

    def arm_probs(X):
        p = p1(np.atleast_2d(X))
        return np.column_stack([1.0 - p, p])

    return DiscreteDgp("binary-linear-effect", 2, Discrete((0.0, 1.0)),
                       arm_probs,
                       (lambda X: np.full(len(np.atleast_2d(X)), 10.0),
                        lambda X: 10.0 + 5.0 * (X[:, 0] - X[:, 1])),
                       (10.0, 10.0))


def random_binary_dgp(seed: int, hetero: bool = True) -> DiscreteDgp:
    """A randomly drawn binary design with smooth propensity and outcome
    surfaces, for stress-testing the welfare-process comparisons."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(-0.8, 0.8, 3)
    b0 = rng.uniform(-2.0, 2.0, 3)
    b1 = rng.uniform(-2.0, 2.0, 3)
    shift = rng.uniform(0.5, 3.0)
    scale = 0.0 if not hetero else rng.uniform(0.5, 4.0)

    def p1(X):
        eta = a[0] + a[1] * X[:, 0] + a[2] * X[:, 1]
        return 0.08 + 0.84 / (1.0 + np.exp(-eta))

    def arm_probs(X):
        p = p1(np.atleast_2d(X))
        return np.column_stack([1.0 - p, p])

    def m0(X):
        X = np.atleast_2d(X)
        return b0[0] + b0[1] * X[:, 0] + b0[2] * X[:, 1] ** 2

    def m1(X):
        X = np.atleast_2d(X)
        return (shift + m0(X)
                + scale * (b1[0] + b1[1] * np.sin(3.0 * X[:, 0])
                           + b1[2] * X[:, 1]))

    return DiscreteDgp(f"random-binary-{seed}", 2, Discrete((0.0, 1.0)),
                       arm_probs, (m0, m1),
                       (rng.uniform(1.0, 4.0), rng.uniform(1.0, 4.0)))


def benchmark_study(replications: int = 500, sample_sizes=(500, 1000, 1500),
                    n_test: int = 400_000, base_seed: int = 20_240_501,
                    estimators=("tp", "ep", "dr"), n_jobs: int = 0) -> McStudy:
    """The acceptance-grade study configuration on the dose benchmark."""
    return McStudy(
        dgp=dose_benchmark(), family=benchmark_family(),
        sample_sizes=tuple(sample_sizes), replications=replications,
        estimators=tuple(estimators), n_test=n_test, base_seed=base_seed,
        restarts=4,
        ep_cfg={"t_degree_rule": (0.36, 4, 16), "x_degrees": (2, 2),
                "x_max_functions": 6},
        dr_cfg={"folds": 2, "weight_t_degree": 3, "weight_x_degrees": (0, 0),
                "mean_t_degree": 11, "mean_x_degrees": (2, 2),
                "mean_x_max_functions": 6, "ridge": None},
        n_jobs=n_jobs)


def dgp_from_config(cfg: dict):
    """Resolve a DGP description from a config mapping (CLI format)."""
    name = cfg.get("name")
    if name == "dose-benchmark":
        return dose_benchmark()
    if name == "binary-linear-effect":
        return binary_benchmark()
    if name == "random-binary":
        return random_binary_dgp(int(cfg.get("seed", 0)))
    raise ConfigError(f"unknown dgp {name!r}; available: dose-benchmark, "
                      "binary-linear-effect, random-binary")
