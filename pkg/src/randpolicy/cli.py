"""Batch command-line front end.

Subcommands: learn, weights, simulate, asymptotics, gpsup, replay. Every run
writes its outputs plus a manifest (resolved arguments, seed, version) into
the output directory; `replay` re-executes a manifest and must reproduce the
outputs byte for byte. Exit codes: 2 configuration error, 3 data error,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from ._kernels import IMPLEMENTATION
from .balance import balance_residual, fit_stabilized_weights
from .basis import orthonormalize
from .data import (ContinuousInterval, ContinuousLine, Discrete, load_csv)
from .errors import ConfigError, DataError, NumericalError, RandPolicyError
from .expressions import compile_expression
from .nuisance import fit_conditional_mean
from .policy import BinaryLogistic, GaussianLink, Softmax, family_from_config
from .regret import (estimate_curvature, estimate_efficient_cov,
                     estimate_tp_noise_cov, influence_values, make_report,
                     gp_sup_compare, sample_regret_limit,
                     threshold_policy_matrix)
from .simulate import (DiscreteDgp, McStudy, OracleEvaluator, benchmark_study,
                       dgp_from_config, dose_benchmark, fit_estimator,
                       monte_carlo, run_dgp, _covariate_basis, _treatment_basis,
                       DEFAULT_DR, DEFAULT_EP)
from .welfare import bootstrap_se, build_objective, maximize

__all__ = ["main", "dispatch"]


# ------------------------------------------------------------------ helpers
def _parse_space(text: str):
    kind, _, rest = text.partition(":")
    if kind == "discrete":
        return Discrete(tuple(float(v) for v in rest.split(",")))
    if kind == "interval":
        lo, hi = (float(v) for v in rest.split(","))
        return ContinuousInterval(lo, hi)
    if kind == "line":
        return ContinuousLine()
    raise ConfigError(f"bad treatment space {text!r}; use discrete:l1,l2,... "
                      "| interval:lo,hi | line")


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v
                             for v in row])


def _manifest(outdir, command, args):
    # The output directory is not part of the run's identity: replay
    # supplies its own, and outputs must be byte-identical across out dirs.
    recorded = {k: v for k, v in args.items() if k != "out"}
    payload = {"command": command, "version": __version__,
               "kernel": IMPLEMENTATION, "seed": args.get("seed"),
               "args": recorded}
    _write_json(os.path.join(outdir, "manifest.json"), payload)


def _load_dataset(args):
    space = _parse_space(args["space"])
    x_cols = [c for c in args["x_cols"].split(",") if c]
    return load_csv(args["data"], args["y_col"], args["t_col"], x_cols, space)


def _propensity_fn(args, data):
    if args.get("propensity_column"):
        col = args["propensity_column"]
        extra = load_csv(args["data"], args["y_col"], args["t_col"],
                         [col], data.space)
        vals = extra.x[:, 0]

        def from_column(t, X):
            if len(np.atleast_1d(t)) != len(vals):
                raise ConfigError("propensity column only covers the "
                                  "observed sample")
            return vals
        return from_column
    if args.get("propensity"):
        return compile_expression(args["propensity"], data.d_x, with_t=True)
    return None


def _estimator_objective(args, data, family, seed):
    kind = args["estimator"]
    wcfg = _load_json(args["weights_config"]) if args.get("weights_config") \
        else {}
    ep_cfg = {**DEFAULT_EP, **wcfg.get("ep", {})}
    dr_cfg = {**DEFAULT_DR, **wcfg.get("dr", {})}
    if kind == "tp":
        prop = _propensity_fn(args, data)
        if prop is None:
            raise ConfigError("tp needs --propensity or --propensity-column")
        return build_objective("tp", data, family, propensity=prop)
    if kind == "ep":
        bt = orthonormalize(_treatment_basis(data.space, ep_cfg["t_degree"]))
        bx = orthonormalize(
            _covariate_basis(data.d_x, _deg(ep_cfg["x_degrees"]),
                             ep_cfg["x_max_functions"], data.n), data.x)
        wfit = fit_stabilized_weights(data, bt, bx)
        return build_objective("ep", data, family, weight_fit=wfit)
    if kind == "dr":
        from .nuisance import crossfit
        nuis = crossfit(
            data, int(dr_cfg["folds"]), seed,
            _treatment_basis(data.space, dr_cfg["mean_t_degree"]),
            _covariate_basis(data.d_x, _deg(dr_cfg["mean_x_degrees"]),
                             dr_cfg["mean_x_max_functions"], data.n),
            _treatment_basis(data.space, dr_cfg["weight_t_degree"]),
            _covariate_basis(data.d_x, _deg(dr_cfg["weight_x_degrees"]),
                             dr_cfg["weight_x_max_functions"], data.n),
            ridge=dr_cfg["ridge"])
        return build_objective("dr", data, family, nuisances=nuis)
    raise ConfigError(f"unknown estimator {kind!r}")


def _deg(d):
    return tuple(d) if isinstance(d, (list, tuple)) else d


# -------------------------------------------------------------- subcommands
def _cmd_learn(args):
    outdir = args["out"]
    os.makedirs(outdir, exist_ok=True)
    data = _load_dataset(args)
    family = family_from_config(_load_json(args["policy"]), data.d_x)
    seed = int(args["seed"])

    def fit(ds, s):
        obj = _estimator_objective(args, ds, family, s)
        return maximize(obj, seed=s, restarts=int(args["restarts"]))

    estimate = fit(data, seed)
    payload = {
        "estimator": args["estimator"],
        "theta": estimate.theta.tolist(),
        "welfare": estimate.welfare,
        "grad_max": estimate.grad_max,
        "converged": estimate.converged,
        "boundary": estimate.boundary,
        "n": data.n,
    }
    if int(args["bootstrap"]) > 0:
        boot = bootstrap_se(data, fit, int(args["bootstrap"]), seed + 1)
        payload["bootstrap_se"] = boot.se.tolist()
        payload["bootstrap_welfare_se"] = boot.welfare_se
        payload["bootstrap_draws"] = len(boot.draws)
        payload["bootstrap_failures"] = boot.n_failed
    _write_json(os.path.join(outdir, "estimate.json"), payload)

    if isinstance(family, (BinaryLogistic, Softmax)):
        probs = family.prob_matrix(estimate.theta, data.x)
        header = ["row"] + [f"prob_arm_{lvl:g}" for lvl in family.levels]
        rows = ([i] + [float(v) for v in probs[i]] for i in range(data.n))
    else:
        eta = family.features(data.x) @ estimate.theta
        header = ["row", "dose_mean", "dose_sd"]
        rows = ([i, float(eta[i]), float(family.sigma)] for i in range(data.n))
    _write_csv(os.path.join(outdir, "assignment_probs.csv"), header, rows)
    _manifest(outdir, "learn", args)
    return 0


def _cmd_weights(args):
    outdir = args["out"]
    os.makedirs(outdir, exist_ok=True)
    data = _load_dataset(args)
    bt_cfg = _load_json(args["basis_t"]) if args.get("basis_t") else {}
    bx_cfg = _load_json(args["basis_x"]) if args.get("basis_x") else {}
    bt = orthonormalize(_treatment_basis(data.space,
                                         int(bt_cfg.get("degree", 3))))
    bx = orthonormalize(
        _covariate_basis(data.d_x, _deg(bx_cfg.get("degrees", "default")),
                         bx_cfg.get("max_functions"), data.n), data.x)
    fit = fit_stabilized_weights(data, bt, bx, tol_grad=float(args["tol"]))
    resid = balance_residual(fit, data)
    _write_json(os.path.join(outdir, "weights.json"), {
        "lambda": fit.lam.tolist(),
        "dual_value": fit.dual_value,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "grad_max": fit.grad_max,
        "balance_residual_max": float(np.abs(resid).max()),
    })
    _write_csv(os.path.join(outdir, "iterations.csv"),
               ["iteration", "dual_value", "grad_max"],
               ((i, float(v), float(g)) for i, v, g in fit.history))
    om = fit.weights(data.t, data.x)
    _write_csv(os.path.join(outdir, "unit_weights.csv"),
               ["row", "t", "weight"],
               ((i, float(data.t[i]), float(om[i])) for i in range(data.n)))
    _manifest(outdir, "weights", args)
    return 0


def _cmd_simulate(args):
    outdir = args["out"]
    os.makedirs(outdir, exist_ok=True)
    cfg = _load_json(args["study"])
    if cfg.get("name") == "benchmark":
        study = benchmark_study(
            replications=int(cfg.get("replications", 500)),
            sample_sizes=tuple(cfg.get("sample_sizes", (500, 1000, 1500))),
            n_test=int(cfg.get("n_test", 400_000)),
            base_seed=int(cfg.get("seed", args["seed"])),
            estimators=tuple(cfg.get("estimators", ("tp", "ep", "dr"))),
            n_jobs=int(args["threads"]))
    else:
        dgp = dgp_from_config(cfg.get("dgp", {}))
        family = family_from_config(cfg["policy"], dgp.d_x)
        study = McStudy(
            dgp=dgp, family=family,
            sample_sizes=tuple(cfg.get("sample_sizes", (500, 1000, 1500))),
            replications=int(cfg.get("replications", 100)),
            estimators=tuple(cfg.get("estimators", ("tp", "ep", "dr"))),
            n_test=int(cfg.get("n_test", 1_000_000)),
            base_seed=int(cfg.get("seed", args["seed"])),
            ep_cfg=cfg.get("ep", {}), dr_cfg=cfg.get("dr", {}),
            n_jobs=int(args["threads"]))
    report = monte_carlo(study)
    _write_json(os.path.join(outdir, "report.json"), report.to_jsonable())
    _write_csv(os.path.join(outdir, "regret_draws.csv"),
               ["estimator", "n", "rep", "regret", "n_times_regret"],
               report.draw_rows())
    _write_csv(os.path.join(outdir, "histogram.csv"),
               ["estimator", "n", "bin_lo", "bin_hi", "count"],
               report.histogram_rows())
    _manifest(outdir, "simulate", args)
    return 0


def _cmd_asymptotics(args):
    outdir = args["out"]
    os.makedirs(outdir, exist_ok=True)
    seed = int(args["seed"])
    if args.get("dgp"):
        spec = dgp_from_config({"name": args["dgp"], "seed": seed})
        family = family_from_config(_load_json(args["policy"]), spec.d_x) \
            if args.get("policy") else _default_family_for(spec)
        evaluator = OracleEvaluator(spec, family, int(args["n_oracle"]), seed)
        theta, _, _ = evaluator.optimum(seed=seed)
        data, _ = run_dgp(spec, int(args["n_oracle"]), seed + 1)
        m_fn = spec.mean_surface
        omega = spec.omega
        prop = spec.propensity_density
    else:
        data = _load_dataset(args)
        family = family_from_config(_load_json(args["policy"]), data.d_x)
        prop = _propensity_fn(args, data)
        bt = orthonormalize(_treatment_basis(data.space, 3))
        bx = orthonormalize(_covariate_basis(data.d_x, "default", None,
                                             data.n), data.x)
        mean_fit = fit_conditional_mean(data, bt, bx)
        weight_fit = fit_stabilized_weights(data, bt, bx)
        m_fn = mean_fit.as_function()
        omega = weight_fit.weights
        if args.get("theta"):
            theta = np.asarray(json.loads(args["theta"]), dtype=float)
        else:
            obj = _estimator_objective(args, data, family, seed)
            theta = maximize(obj, seed=seed,
                             restarts=int(args["restarts"])).theta
    H = estimate_curvature(family, theta, m_fn, data.x)
    phi_dot, tp_extra = influence_values(family, theta, data, m_fn, omega,
                                         propensity=prop)
    V = estimate_efficient_cov(H, phi_dot)
    S = estimate_tp_noise_cov(H, tp_extra) if tp_extra is not None else None
    use_noise = args["estimator"] == "tp" and S is not None
    report = make_report(H, V, S if use_noise else None, seed=seed)
    payload = report.to_jsonable()
    payload["theta"] = np.asarray(theta, dtype=float).tolist()
    payload["estimator"] = args["estimator"]
    _write_json(os.path.join(outdir, "report.json"), payload)
    draws = sample_regret_limit(H, V, report.noise_cov if use_noise else None,
                                int(args["draws"]), seed)
    _write_csv(os.path.join(outdir, "regret_limit_draws.csv"),
               ["draw", "value"], ((i, float(v)) for i, v in enumerate(draws)))
    _manifest(outdir, "asymptotics", args)
    return 0


def _default_family_for(spec):
    from .policy import LinearFeatures
    if isinstance(spec, DiscreteDgp):
        if len(spec.levels) == 2:
            return BinaryLogistic(LinearFeatures(spec.d_x),
                                  Discrete(spec.levels))
        return Softmax(LinearFeatures(spec.d_x), Discrete(spec.levels))
    return GaussianLink(LinearFeatures(spec.d_x), 0.35)


def _cmd_gpsup(args):
    outdir = args["out"]
    os.makedirs(outdir, exist_ok=True)
    seed = int(args["seed"])
    spec = dgp_from_config({"name": args["dgp"], "seed": seed})
    if not isinstance(spec, DiscreteDgp) or len(spec.levels) != 2:
        raise ConfigError("gpsup needs a binary-treatment dgp")
    data, _ = run_dgp(spec, int(args["n_sample"]), seed)
    X = data.x
    grid = np.linspace(X[:, 0].min(), X[:, 0].max(), int(args["grid_size"]))
    P = threshold_policy_matrix(X[:, 0], grid)
    lo, hi = spec.levels
    m0 = spec.mean_surface(float(lo), X)
    m1 = spec.mean_surface(float(hi), X)
    p1 = spec.propensity_density(np.full(data.n, hi), X)
    result = gp_sup_compare(P, data.y, (data.t == hi).astype(float),
                            m0, m1, p1, int(args["draws"]), seed)
    _write_json(os.path.join(outdir, "gpsup.json"), {
        "e_sup_tp": result.e_sup_tp,
        "e_sup_ep": result.e_sup_ep,
        "paired_diff_se": result.paired_diff_se,
        "increment_gap_min": result.increment_gap_min,
        "increment_ok": result.increment_ok,
        "grid_size": int(args["grid_size"]),
        "draws": int(args["draws"]),
    })
    _write_csv(os.path.join(outdir, "sups.csv"),
               ["draw", "sup_tp", "sup_ep"],
               ((i, float(a), float(b)) for i, (a, b)
                in enumerate(zip(result.sups_tp, result.sups_ep))))
    _manifest(outdir, "gpsup", args)
    return 0


def _cmd_replay(args):
    manifest = _load_json(args["manifest"])
    saved = dict(manifest["args"])
    saved["out"] = args["out"]
    return _HANDLERS[manifest["command"]](saved)


_HANDLERS = {
    "learn": _cmd_learn,
    "weights": _cmd_weights,
    "simulate": _cmd_simulate,
    "asymptotics": _cmd_asymptotics,
    "gpsup": _cmd_gpsup,
}


# ------------------------------------------------------------------- parser
def _build_parser():
    parser = argparse.ArgumentParser(
        prog="randpolicy",
        description="Randomized policy learning, stabilized weights, and "
                    "regret asymptotics.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data_flags(p):
        p.add_argument("--data", required=True)
        p.add_argument("--y-col", default="y")
        p.add_argument("--t-col", default="t")
        p.add_argument("--x-cols", required=True,
                       help="comma-separated covariate column names")
        p.add_argument("--space", required=True,
                       help="discrete:l1,l2,... | interval:lo,hi | line")

    p = sub.add_parser("learn", help="fit a policy with one estimator")
    add_data_flags(p)
    p.add_argument("--estimator", required=True, choices=("tp", "ep", "dr"))
    p.add_argument("--policy", required=True, help="policy family JSON")
    p.add_argument("--propensity", help="f(t|x) expression (tp)")
    p.add_argument("--propensity-column", help="per-row f(T_i|X_i) column (tp)")
    p.add_argument("--weights-config", help="JSON with ep/dr basis settings")
    p.add_argument("--bootstrap", default=0, type=int)
    p.add_argument("--restarts", default=8, type=int)
    p.add_argument("--seed", default=0, type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("weights", help="fit stabilized weights only")
    add_data_flags(p)
    p.add_argument("--basis-t", help="treatment basis JSON")
    p.add_argument("--basis-x", help="covariate basis JSON")
    p.add_argument("--tol", default=1e-9, type=float)
    p.add_argument("--seed", default=0, type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="run a Monte Carlo study")
    p.add_argument("--study", required=True, help="study config JSON")
    p.add_argument("--threads", default=0, type=int)
    p.add_argument("--seed", default=0, type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("asymptotics", help="plug-in regret asymptotics")
    p.add_argument("--data")
    p.add_argument("--y-col", default="y")
    p.add_argument("--t-col", default="t")
    p.add_argument("--x-cols", default="")
    p.add_argument("--space", default="line")
    p.add_argument("--dgp", help="named dgp instead of --data")
    p.add_argument("--estimator", default="ep", choices=("tp", "ep", "dr"))
    p.add_argument("--policy", help="policy family JSON")
    p.add_argument("--theta", help="JSON vector; skip refitting")
    p.add_argument("--propensity")
    p.add_argument("--propensity-column")
    p.add_argument("--weights-config")
    p.add_argument("--n-oracle", default=200_000, type=int)
    p.add_argument("--draws", default=100_000, type=int)
    p.add_argument("--restarts", default=8, type=int)
    p.add_argument("--seed", default=0, type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gpsup", help="welfare-process supremum comparison")
    p.add_argument("--dgp", required=True)
    p.add_argument("--grid-size", default=200, type=int)
    p.add_argument("--draws", default=10_000, type=int)
    p.add_argument("--n-sample", default=100_000, type=int)
    p.add_argument("--seed", default=0, type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    return parser


def dispatch(argv=None) -> int:
    parser = _build_parser()
    ns = parser.parse_args(argv)
    args = {k: v for k, v in vars(ns).items() if k != "command"}
    try:
        if ns.command == "replay":
            return _cmd_replay(args)
        return _HANDLERS[ns.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, RandPolicyError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
