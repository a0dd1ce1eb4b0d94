"""``rotlab`` command line.

Subcommands: ``solve``, ``torus``, ``slope``, ``oracle``, ``clt``. Every
option can also come from ``--config file.json`` (keys are the option names
with underscores); explicit flags win and unknown keys are rejected.

Exit codes: 0 success, 1 bad input, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import __version__
from .divergence import parse_divergence
from .experiments import (FIG1_NS, AllZeroErrors, ExperimentFailure, RateExperimentConfig,
                          read_records_csv, resolve_threads, run_cost_clt_check,
                          run_coupling_clt_check, run_potential_clt_check, run_rate_experiment,
                          slope_fit, write_records_csv)
from .geometry import CostKind, CostSpec
from .inference import cost_clt_variance, coupling_clt_variance, potential_clt_covariance
from .io import (FORMAT_VERSION, estimator_input_hash, load_solution, read_points_csv,
                 write_solution)
from .linearization import DegenerateDenominator, SingularSystem, diagnostics
from .solver import InvalidInput, NoConvergence, solve
from .torus_oracle import QuadratureTooCoarse, default_quadrature, torus_population

log = logging.getLogger("rotlab")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2

NUMERIC_ERRORS = (NoConvergence, SingularSystem, DegenerateDenominator, QuadratureTooCoarse,
                  ExperimentFailure, AllZeroErrors, ArithmeticError, RuntimeError)


class InputError(Exception):
    pass


def _int_list(text):
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def _cell(text):
    if isinstance(text, (list, tuple)):
        i, j = text
    else:
        i, j = str(text).split(",")
    return int(i), int(j)


# option tables: name -> (type, default, help). ``None`` default means required
# unless listed in the optional set of the subcommand.
COMMON = {
    "threads": (int, None, "worker processes (fallback: ROTLAB_THREADS, else 1)"),
}
SOLVE = {
    "p": (str, None, "CSV of the first marginal"),
    "q": (str, None, "CSV of the second marginal"),
    "cost": (str, "sqeuclidean", "sqeuclidean or torus"),
    "divergence": (str, None, "kl, quad or tsallis:<alpha>"),
    "epsilon": (float, 1.0, "regularization strength"),
    "tol": (float, 1e-10, "first-order residual tolerance"),
    "max_iter": (int, 10_000, "iteration cap"),
    "out": (str, "", "solution JSON path"),
    "diagnostics": (bool, False, "include linearization diagnostics in the JSON"),
}
TORUS = {
    "d": (int, 1, "torus dimension"),
    "epsilon": (float, 0.5, "regularization strength"),
    "divergence": (str, "quad", "kl, quad or tsallis:<alpha>"),
    "ns": (_int_list, "", "comma separated sample sizes"),
    "reps": (int, 30, "replications per sample size"),
    "seed": (int, 42, "base seed"),
    "tol": (float, 1e-10, "solver tolerance"),
    "max_iter": (int, 10_000, "solver iteration cap"),
    "full_grid": (bool, False, "use n up to 3000 also for d >= 5"),
    "out": (str, "", "CSV path (default stdout)"),
    "summary": (str, "", "also write the slope summary JSON here"),
}
SLOPE = {
    "csv": (str, None, "rate experiment CSV"),
    "out": (str, "", "summary JSON path (default stdout only)"),
}
ORACLE = {
    "d": (int, 1, "torus dimension"),
    "epsilon": (float, 0.5, "regularization strength"),
    "divergence": (str, "quad", "kl, quad or tsallis:<alpha>"),
    "rule": (str, "", "quadrature rule: gauss or laplace (default by d)"),
    "order": (int, 0, "Gauss order per piece (gauss rule)"),
}
CLT = {
    "kind": (str, "cost", "cost, coupling or potential"),
    "solution": (str, "", "solution JSON from `solve` (the population)"),
    "p": (str, "", "CSV of the first marginal (instead of --solution)"),
    "q": (str, "", "CSV of the second marginal"),
    "cost": (str, "sqeuclidean", "sqeuclidean or torus"),
    "divergence": (str, "kl", "kl, quad or tsallis:<alpha>"),
    "epsilon": (float, 1.0, "regularization strength"),
    "tol": (float, 1e-11, "solver tolerance"),
    "eta": (str, "", "CSV matrix (n rows, m columns, no header) of test-function values"),
    "eta_cell": (_cell, "", "i,j: use the indicator of one atom pair as eta"),
    "monte_carlo": (bool, False, "also run the resampling check"),
    "n": (int, 2000, "sample size for the resampling check"),
    "reps": (int, 400, "replications for the resampling check"),
    "seed": (int, 0, "base seed for the resampling check"),
}
TABLES = {"solve": SOLVE, "torus": TORUS, "slope": SLOPE, "oracle": ORACLE, "clt": CLT}
REQUIRED = {"solve": ("p", "q", "divergence"), "slope": ("csv",)}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rotlab", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"rotlab {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, table in TABLES.items():
        sp = sub.add_parser(name, argument_default=argparse.SUPPRESS)
        sp.add_argument("--config", help="JSON file with option values")
        for key, (typ, default, help_) in {**table, **COMMON}.items():
            flag = "--" + key.replace("_", "-")
            if typ is bool:
                sp.add_argument(flag, dest=key, action="store_true", help=help_)
            else:
                sp.add_argument(flag, dest=key, type=typ, help=help_)
    return parser


def resolve_options(command: str, ns: argparse.Namespace) -> argparse.Namespace:
    table = {**TABLES[command], **COMMON}
    opts = {k: v[1] for k, v in table.items()}
    given = {k: v for k, v in vars(ns).items() if k in table}
    cfg_path = getattr(ns, "config", None)
    if cfg_path:
        try:
            with open(cfg_path) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {cfg_path}: {exc}") from None
        if not isinstance(cfg, dict):
            raise InputError("config must be a JSON object")
        unknown = sorted(set(cfg) - set(table))
        if unknown:
            raise InputError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
        for k, v in cfg.items():
            typ = table[k][0]
            if typ is bool and not isinstance(v, bool):
                raise InputError(f"config key {k!r} must be true or false")
            try:
                opts[k] = v if typ is bool or v is None else typ(v)
            except (TypeError, ValueError):
                raise InputError(f"bad value for config key {k!r}: {v!r}") from None
    opts.update(given)
    missing = [k for k in REQUIRED.get(command, ()) if opts.get(k) in (None, "")]
    if missing:
        raise InputError("missing required option(s): "
                         + ", ".join("--" + k.replace("_", "-") for k in missing))
    return argparse.Namespace(command=command, **opts)


def _emit(obj, path=""):
    text = json.dumps(obj, indent=2)
    print(text)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")


# ----------------------------------------------------------------------------
# subcommands


def _cost(kind, d=None):
    try:
        return CostSpec(CostKind(kind), d)
    except ValueError:
        raise InputError(f"unknown cost {kind!r}") from None


def cmd_solve(o) -> int:
    P, Q = read_points_csv(o.p), read_points_csv(o.q)
    spec = parse_divergence(o.divergence)
    sol = solve(P, Q, _cost(o.cost, P.d), spec, o.epsilon, o.tol, o.max_iter)
    diag = diagnostics(sol)
    if o.out:
        write_solution(sol, o.out, diag if o.diagnostics else None)
    cert = sol.certificates()
    print(json.dumps({
        "value": sol.primal_value,
        "gap": sol.gap,
        "residual": sol.residual,
        "iterations": sol.iterations,
        "support_fraction": diag["support_fraction"],
        "certificates_ok": cert["ok"],
    }, indent=2))
    return EXIT_OK


def cmd_torus(o) -> int:
    if o.ns:
        ns = tuple(o.ns)
    elif o.d >= 5 and not o.full_grid:
        ns = tuple(n for n in FIG1_NS if n <= 1000)
    else:
        ns = FIG1_NS
    cfg = RateExperimentConfig(d=o.d, epsilon=o.epsilon, divergence=o.divergence, ns=ns,
                               reps=o.reps, base_seed=o.seed, tol=o.tol, max_iter=o.max_iter,
                               threads=resolve_threads(o.threads))
    status = EXIT_OK
    try:
        records = run_rate_experiment(cfg, strict=True)
    except ExperimentFailure as exc:
        print(f"rotlab: {exc}", file=sys.stderr)
        records, status = exc.records, EXIT_NUMERIC
    write_records_csv(records, o.out or sys.stdout)
    if o.summary:
        fit = slope_fit(records)
        with open(o.summary, "w") as fh:
            json.dump({**fit.to_dict(), "format_version": FORMAT_VERSION}, fh, indent=2)
            fh.write("\n")
    return status


def cmd_slope(o) -> int:
    fit = slope_fit(read_records_csv(o.csv))
    _emit({**fit.to_dict(), "format_version": FORMAT_VERSION}, o.out)
    return EXIT_OK


def cmd_oracle(o) -> int:
    spec = parse_divergence(o.divergence)
    quad = default_quadrature(o.d)
    if o.rule:
        if o.rule not in ("gauss", "laplace"):
            raise InputError(f"unknown quadrature rule {o.rule!r}")
        quad = default_quadrature(1 if o.rule == "gauss" else 4)
    if o.order:
        if quad["rule"] != "gauss":
            raise InputError("--order applies to the gauss rule only")
        quad["order"] = o.order
    pop = torus_population(o.d, o.epsilon, spec, quad)
    d = pop.to_dict()
    _emit({k: d[k] for k in ("d", "epsilon", "divergence", "C", "rot_value",
                             "quadrature_error_estimate", "quadrature")})
    return EXIT_OK


def _read_eta(o, n, m):
    if o.eta and o.eta_cell:
        raise InputError("give either --eta or --eta-cell")
    if o.eta:
        try:
            eta = np.loadtxt(o.eta, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise InputError(f"{o.eta}: {exc}") from None
    elif o.eta_cell:
        i, j = o.eta_cell
        if not (0 <= i < n and 0 <= j < m):
            raise InputError(f"eta cell {(i, j)} outside the {n}x{m} support")
        eta = np.zeros((n, m))
        eta[i, j] = 1.0
    else:
        raise InputError("coupling CLT needs --eta or --eta-cell")
    if eta.shape != (n, m):
        raise InputError(f"eta has shape {eta.shape}, expected {(n, m)}")
    return eta


def cmd_clt(o) -> int:
    if o.kind not in ("cost", "coupling", "potential"):
        raise InputError(f"unknown CLT kind {o.kind!r}")
    if o.solution:
        sol = load_solution(o.solution)
    elif o.p and o.q:
        P, Q = read_points_csv(o.p), read_points_csv(o.q)
        sol = solve(P, Q, _cost(o.cost, P.d), parse_divergence(o.divergence), o.epsilon, o.tol)
    else:
        raise InputError("clt needs --solution or both --p and --q")
    if o.kind == "cost":
        report = cost_clt_variance(sol)
    elif o.kind == "coupling":
        eta = _read_eta(o, sol.P.n, sol.Q.n)
        report = coupling_clt_variance(sol, eta)
    else:
        report = potential_clt_covariance(sol)
    out = {**report.to_dict(), "input_hash": estimator_input_hash(sol),
           "format_version": FORMAT_VERSION}
    if o.monte_carlo:
        args = (sol.P, sol.Q, sol.divergence, sol.epsilon)
        kw = dict(cost=sol.cost_spec, tol=o.tol, threads=resolve_threads(o.threads))
        if o.kind == "cost":
            mc = run_cost_clt_check(*args, o.n, o.reps, o.seed, **kw)
        elif o.kind == "coupling":
            mc = run_coupling_clt_check(*args, eta, o.n, o.reps, o.seed, **kw)
        else:
            mc = run_potential_clt_check(*args, o.n, o.reps, o.seed, **kw)
            mc = {"rel_frobenius_error": mc["rel_frobenius_error"],
                  "mc_covariance": mc["mc_covariance"].tolist()}
        out["monte_carlo"] = mc
    _emit(out)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "torus": cmd_torus, "slope": cmd_slope,
            "oracle": cmd_oracle, "clt": cmd_clt}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve_options(ns.command, ns)
        return COMMANDS[ns.command](opts)
    except NUMERIC_ERRORS as exc:
        print(f"rotlab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, InvalidInput, ValueError, KeyError, OSError) as exc:
        print(f"rotlab: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
