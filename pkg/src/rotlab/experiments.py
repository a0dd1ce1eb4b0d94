"""Rate experiments on the flat torus and Monte-Carlo CLT checks.

Seeds. Every random draw uses ``hash64(base_seed, n, rep, side)`` (BLAKE2b,
see :func:`rotlab.geometry.hash64`) with ``side`` 0 for the first marginal
and 1 for the second, so each cell is reproducible on its own and results do
not depend on how cells are scheduled. The ``seed`` column of the rate CSV
holds the side-0 seed.

Failed cells (no convergence) are kept as rows with ``rot_emp`` and
``abs_err`` set to NaN.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import stats

from .divergence import DivergenceSpec, Family, parse_divergence
from .geometry import CostKind, CostSpec, DiscreteMeasure, hash64, rng, sample_uniform_torus
from .inference import cost_clt_variance, coupling_clt_variance, potential_clt_covariance
from .linearization import diagnostics
from .solver import NoConvergence, extend_potential, solve
from .torus_oracle import torus_population

__all__ = [
    "AllZeroErrors",
    "CSV_COLUMNS",
    "ExperimentFailure",
    "RateExperimentConfig",
    "RateRecord",
    "SlopeFit",
    "cell_seed",
    "read_records_csv",
    "resolve_threads",
    "run_cost_clt_check",
    "run_coupling_clt_check",
    "run_potential_clt_check",
    "run_rate_experiment",
    "slope_fit",
    "write_records_csv",
]

log = logging.getLogger(__name__)

CSV_COLUMNS = ("divergence", "d", "epsilon", "n", "rep", "seed", "rot_emp", "rot_pop",
               "abs_err", "solve_iters", "residual")
FIG1_NS = (10, 30, 100, 300, 1000, 3000)


class AllZeroErrors(ValueError):
    pass


class ExperimentFailure(RuntimeError):
    """Some cells did not converge; ``records`` holds every row, failed ones marked NaN."""

    def __init__(self, failed, records):
        cells = ", ".join(f"(n={n}, rep={r})" for n, r in failed)
        super().__init__(f"{len(failed)} cell(s) failed to converge: {cells}")
        self.failed = failed
        self.records = records


def cell_seed(base_seed: int, n: int, rep: int, side: int) -> int:
    return hash64(base_seed, n, rep, side)


def resolve_threads(threads: int | None = None) -> int:
    """Worker count from the argument, else ``ROTLAB_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get("ROTLAB_THREADS")
        threads = int(env) if env else 1
    threads = int(threads)
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return threads


def _map(fn, tasks, threads):
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * threads))))


# ----------------------------------------------------------------------------
# rate experiment


@dataclass
class RateExperimentConfig:
    d: int = 1
    epsilon: float = 0.5
    divergence: str = "quad"
    ns: tuple = FIG1_NS
    reps: int = 30
    base_seed: int = 42
    tol: float = 1e-10
    max_iter: int = 10_000
    threads: int | None = None
    quadrature: dict | None = None

    def __post_init__(self):
        self.ns = tuple(int(n) for n in self.ns)
        if not self.ns or any(n < 1 for n in self.ns):
            raise ValueError("ns must be a non-empty list of positive sizes")
        if any(b <= a for a, b in zip(self.ns, self.ns[1:])):
            raise ValueError("ns must be strictly increasing")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        self.spec  # validates the divergence string

    @property
    def spec(self) -> DivergenceSpec:
        if isinstance(self.divergence, DivergenceSpec):
            return self.divergence
        return parse_divergence(self.divergence)


@dataclass(frozen=True)
class RateRecord:
    divergence: str
    d: int
    epsilon: float
    n: int
    rep: int
    seed: int
    rot_emp: float
    rot_pop: float
    abs_err: float
    solve_iters: int
    residual: float

    @property
    def failed(self) -> bool:
        return math.isnan(self.abs_err)


def _rate_cell(task):
    cfg, spec, rot_pop, n, rep = task
    s0 = cell_seed(cfg.base_seed, n, rep, 0)
    Pn = sample_uniform_torus(cfg.d, n, s0)
    Qn = sample_uniform_torus(cfg.d, n, cell_seed(cfg.base_seed, n, rep, 1))
    cost = CostSpec(CostKind.TORUS, cfg.d)
    try:
        sol = solve(Pn, Qn, cost, spec, cfg.epsilon, cfg.tol, cfg.max_iter, track_dual=False)
        rot, iters, res = sol.primal_value, sol.iterations, sol.residual
    except NoConvergence as exc:
        rot, iters, res = float("nan"), exc.max_iter, exc.residual
    return RateRecord(spec.encode(), cfg.d, float(cfg.epsilon), n, rep, s0,
                      float(rot), rot_pop, abs(rot - rot_pop), iters, float(res))


def run_rate_experiment(config: RateExperimentConfig, strict: bool = False) -> list[RateRecord]:
    """Empirical-vs-population regularized cost for uniform torus self-transport.

    One record per ``(n, rep)``, sorted by ``n`` then ``rep``. With
    ``strict`` a non-converged cell raises :class:`ExperimentFailure` after
    all cells ran.
    """
    spec = config.spec
    pop = torus_population(config.d, config.epsilon, spec, config.quadrature)
    tasks = [(config, spec, pop.rot_value, n, r) for n in config.ns for r in range(config.reps)]
    records = _map(_rate_cell, tasks, resolve_threads(config.threads))
    records.sort(key=lambda r: (r.n, r.rep))
    failed = [(r.n, r.rep) for r in records if r.failed]
    if failed:
        log.warning("%d of %d cells did not converge", len(failed), len(records))
        if strict:
            raise ExperimentFailure(failed, records)
    return records


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def write_records_csv(records, dest) -> None:
    """Write the rate CSV to a path or an open text file."""
    if hasattr(dest, "write"):
        _write_rows(records, dest)
        return
    with open(dest, "w", newline="") as fh:
        _write_rows(records, fh)


def _write_rows(records, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])


def read_records_csv(path) -> list[RateRecord]:
    casts = {f.name: f.type for f in fields(RateRecord)}
    conv = {"str": str, "int": int, "float": float}
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        for line, row in enumerate(reader, start=2):
            try:
                out.append(RateRecord(**{k: conv[casts[k]](row[k]) for k in CSV_COLUMNS}))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"line {line}: {exc}") from None
    return out


@dataclass(frozen=True)
class SlopeFit:
    alpha: float
    intercept: float
    stderr: float
    per_n_means: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_n_means"] = {str(k): v for k, v in self.per_n_means.items()}
        return d


def slope_fit(records) -> SlopeFit:
    """OLS of ``log(mean abs_err)`` on ``log n``; failed rows are skipped."""
    by_n: dict[int, list[float]] = {}
    for r in records:
        if not math.isnan(r.abs_err):
            by_n.setdefault(int(r.n), []).append(float(r.abs_err))
    means = {n: float(np.mean(v)) for n, v in sorted(by_n.items())}
    pos = {n: v for n, v in means.items() if v > 0}
    if len(pos) < 2:
        raise AllZeroErrors("need at least two sample sizes with positive mean error")
    x = np.log(np.array(list(pos), dtype=float))
    y = np.log(np.array(list(pos.values())))
    if len(x) == 2:
        alpha = (y[1] - y[0]) / (x[1] - x[0])
        return SlopeFit(float(alpha), float(y[0] - alpha * x[0]), float("nan"), means)
    fit = stats.linregress(x, y)
    return SlopeFit(float(fit.slope), float(fit.intercept), float(fit.stderr), means)


# ----------------------------------------------------------------------------
# Monte-Carlo CLT checks on discrete populations


def _empirical(population: DiscreteMeasure, n: int, seed: int):
    """Empirical measure of ``n`` draws, stored on the distinct population atoms hit.

    Uses the same draw as :func:`rotlab.geometry.sample_from_discrete`;
    merging repeated atoms leaves every transport quantity unchanged.
    Returns the measure and the population indices of its atoms.
    """
    idx = rng(seed).choice(population.n, size=n, p=population.weights)
    counts = np.bincount(idx, minlength=population.n)
    hit = np.flatnonzero(counts)
    return DiscreteMeasure(population.points[hit], counts[hit] / n), hit


def _check_population(sol):
    if sol.divergence.kind is not Family.KL and diagnostics(sol)["positivity_fraction"] < 1.0:
        raise ValueError("psi'' vanishes somewhere on the population solution; "
                         "the plug-in formulas are not trusted there")


def _replicate(P, Q, cost, spec, epsilon, n, rep, base_seed, tol):
    Pn, ip = _empirical(P, n, cell_seed(base_seed, n, rep, 0))
    Qn, iq = _empirical(Q, n, cell_seed(base_seed, n, rep, 1))
    return solve(Pn, Qn, cost, spec, epsilon, tol, track_dual=False), ip, iq


def _cost_task(task):
    P, Q, cost, spec, epsilon, n, rep, base_seed, tol = task
    return _replicate(P, Q, cost, spec, epsilon, n, rep, base_seed, tol)[0].primal_value


def run_cost_clt_check(P: DiscreteMeasure, Q: DiscreteMeasure, spec: DivergenceSpec,
                       epsilon: float, n: int, reps: int, base_seed: int,
                       cost: CostSpec = CostSpec(CostKind.SQEUCLIDEAN), tol: float = 1e-11,
                       threads: int | None = None) -> dict:
    """Compare the spread of ``sqrt(n) (ROT_n - ROT)`` with the plug-in variance."""
    pop = solve(P, Q, cost, spec, epsilon, tol)
    _check_population(pop)
    tasks = [(P, Q, cost, spec, epsilon, n, r, base_seed, tol) for r in range(reps)]
    vals = np.array(_map(_cost_task, tasks, resolve_threads(threads)))
    stat = np.sqrt(n) * (vals - pop.primal_value)
    sample_var = float(np.var(stat, ddof=1)) if reps > 1 else 0.0
    return {
        "sample_var": sample_var,
        "plugin_sigma2": cost_clt_variance(pop).sigma2,
        "mean_stat": float(stat.mean()),
        "stderr": math.sqrt(sample_var / reps),
        "reps": reps,
        "n": n,
    }


def _coupling_task(task):
    P, Q, cost, spec, epsilon, n, rep, base_seed, tol, eta = task
    sol, ip, iq = _replicate(P, Q, cost, spec, epsilon, n, rep, base_seed, tol)
    return float(np.sum(eta[np.ix_(ip, iq)] * sol.coupling))


def run_coupling_clt_check(P: DiscreteMeasure, Q: DiscreteMeasure, spec: DivergenceSpec,
                           epsilon: float, eta, n: int, reps: int, base_seed: int,
                           cost: CostSpec = CostSpec(CostKind.SQEUCLIDEAN), tol: float = 1e-11,
                           threads: int | None = None) -> dict:
    """Compare the spread of ``sqrt(n) int eta d(pi_n - pi)`` with the plug-in variance."""
    eta = np.asarray(eta, dtype=float)
    pop = solve(P, Q, cost, spec, epsilon, tol)
    _check_population(pop)
    tasks = [(P, Q, cost, spec, epsilon, n, r, base_seed, tol, eta) for r in range(reps)]
    vals = np.array(_map(_coupling_task, tasks, resolve_threads(threads)))
    stat = np.sqrt(n) * (vals - float(np.sum(eta * pop.coupling)))
    sample_var = float(np.var(stat, ddof=1)) if reps > 1 else 0.0
    return {
        "sample_var": sample_var,
        "plugin_sigma2": coupling_clt_variance(pop, eta).sigma2,
        "mean_stat": float(stat.mean()),
        "stderr": math.sqrt(sample_var / reps),
        "reps": reps,
        "n": n,
    }


def _potential_task(task):
    P, Q, cost, spec, epsilon, n, rep, base_seed, tol = task
    sol = _replicate(P, Q, cost, spec, epsilon, n, rep, base_seed, tol)[0]
    f = extend_potential(sol, "P", P.points)
    g = extend_potential(sol, "Q", Q.points)
    a = 0.5 * (Q.weights @ g - P.weights @ f)
    return np.concatenate([f + a, g - a])


def run_potential_clt_check(P: DiscreteMeasure, Q: DiscreteMeasure, spec: DivergenceSpec,
                            epsilon: float, n: int, reps: int, base_seed: int,
                            cost: CostSpec = CostSpec(CostKind.SQEUCLIDEAN), tol: float = 1e-11,
                            threads: int | None = None) -> dict:
    """Monte-Carlo covariance of ``sqrt(n) (f_n - f, g_n - g)`` against the plug-in one.

    Empirical potentials are extended to all population atoms and shifted into
    the gauge ``sum p f = sum q g`` of the population measures.
    """
    pop = solve(P, Q, cost, spec, epsilon, tol)
    _check_population(pop)
    tasks = [(P, Q, cost, spec, epsilon, n, r, base_seed, tol) for r in range(reps)]
    Z = np.array(_map(_potential_task, tasks, resolve_threads(threads)))
    Z = np.sqrt(n) * (Z - np.concatenate([pop.f, pop.g]))
    mc = np.cov(Z, rowvar=False)
    plugin = potential_clt_covariance(pop).covariance
    return {
        "mc_covariance": mc,
        "plugin_covariance": plugin,
        "rel_frobenius_error": float(np.linalg.norm(mc - plugin) / np.linalg.norm(plugin)),
        "mean_stat": Z.mean(axis=0),
        "reps": reps,
        "n": n,
    }
