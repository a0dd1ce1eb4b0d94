"""Divergence-regularized optimal transport between discrete measures.

The dual problem is solved by exact block-coordinate ascent: given ``g``,
the optimal ``f`` solves, for every atom ``x_i``,

    sum_j q_j psi'(f_i + g_j - c_ij) = 1,

a monotone scalar equation (the *conjugate update*), and symmetrically for
``g``. Everything is computed at unit regularization with cost ``c/eps``;
potentials and values are mapped back by multiplying with ``eps``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .divergence import DivergenceSpec
from .geometry import CostMatrix, CostSpec, DiscreteMeasure, _cost_values, build_cost_matrix

__all__ = [
    "InvalidInput",
    "NoConvergence",
    "PotentialPair",
    "Solution",
    "conjugate_update",
    "dual_objective",
    "extend_potential",
    "primal_objective",
    "residual",
    "solve",
]

log = logging.getLogger(__name__)

ROOT_FTOL = 1e-13
ROOT_XTOL = 1e-14
MAX_ROOT_ITER = 200


class InvalidInput(ValueError):
    pass


class NoConvergence(RuntimeError):
    """Raised when the alternating scheme exhausts ``max_iter``.

    ``solution`` holds the last iterate, assembled exactly like a converged
    one.
    """

    def __init__(self, max_iter, residual, solution=None):
        super().__init__(f"no convergence after {max_iter} iterations (residual {residual:.3e})")
        self.max_iter = max_iter
        self.residual = residual
        self.solution = solution


# ----------------------------------------------------------------------------
# conjugate update


def _row_moments(spec: DivergenceSpec, X: np.ndarray, w: np.ndarray):
    """Return ``(X psi'(.)) @ w`` and ``psi''(X) @ w`` row-wise."""
    kind = spec.kind.value
    if kind == "kl":
        e = np.exp(X - 1.0)
        h = e @ w
        return h, h
    np.maximum(X, 0.0, out=X)
    if kind == "quad":
        return X @ w, (X > 0.0) @ w
    if spec.beta == 3.0:
        hp = 2.0 * (X @ w)
        np.multiply(X, X, out=X)
        return X @ w, hp
    d1, d2 = spec.dpsi_and_d2psi(X)
    return d1 @ w, d2 @ w


def _conjugate(a: np.ndarray, w: np.ndarray, spec: DivergenceSpec, start=None):
    """Solve ``sum_j w_j psi'(s_i + a_ij) = 1`` for every row ``i``.

    Safeguarded Newton: the bracket ``[t0 - max_j a_ij, t0 - min_j a_ij]``
    always changes sign, and a Newton step is replaced by bisection whenever
    it leaves the bracket or the slope vanishes.
    """
    n = a.shape[0]
    t0 = spec.t0
    lo = t0 - a.max(axis=1)
    hi = t0 - a.min(axis=1)
    if start is None:
        x = hi.copy()
    else:
        x = np.clip(np.asarray(start, dtype=float), lo, hi)
    active = np.arange(n)
    for _ in range(MAX_ROOT_ITER):
        if active.size == 0:
            break
        sub = a if active.size == n else a[active]
        xa = x[active]
        h, hp = _row_moments(spec, sub + xa[:, None], w)
        h -= 1.0
        la, ha = lo[active], hi[active]
        la = np.where(h < 0, xa, la)
        ha = np.where(h > 0, xa, ha)
        lo[active], hi[active] = la, ha
        done = (np.abs(h) <= ROOT_FTOL) | (ha - la <= ROOT_XTOL)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = xa - h / hp
        bad = ~np.isfinite(xn) | (xn <= la) | (xn >= ha)
        xn = np.where(bad, 0.5 * (la + ha), xn)
        stalled = np.abs(xn - xa) <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(xa))
        x[active] = np.where(done, xa, xn)
        active = active[~(done | stalled)]
    else:
        raise RuntimeError("conjugate update failed to bracket a root")
    return x


def conjugate_update(g, C, Q, spec: DivergenceSpec, start=None) -> np.ndarray:
    """Exact maximization of the unit-scale dual in ``f`` for fixed ``g``.

    ``C`` is the (already ``eps``-normalized) cost matrix, ``Q`` the measure
    (or weight vector) on the ``g`` side. ``start`` optionally warm-starts
    the per-atom root finder.
    """
    Cv = C.values if isinstance(C, CostMatrix) else np.asarray(C, dtype=float)
    q = Q.weights if isinstance(Q, DiscreteMeasure) else np.asarray(Q, dtype=float)
    g = np.asarray(g, dtype=float)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(Cv))):
        raise InvalidInput("non-finite potentials or costs")
    return _conjugate(g[None, :] - Cv, q, spec, start)


# ----------------------------------------------------------------------------
# objectives and residuals


def residual(f, g, C, p, q, spec: DivergenceSpec) -> float:
    """Sup-norm violation of the unit-scale first-order conditions."""
    Cv = C.values if isinstance(C, CostMatrix) else np.asarray(C, dtype=float)
    H = spec.dpsi(np.asarray(f)[:, None] + np.asarray(g)[None, :] - Cv)
    r_rows = np.max(np.abs(H @ q - 1.0))
    r_cols = np.max(np.abs(p @ H - 1.0))
    return float(max(r_rows, r_cols))


def dual_objective(f, g, C, p, q, spec: DivergenceSpec, epsilon: float = 1.0) -> float:
    """``sum_ij p_i q_j [f_i + g_j - eps psi((f_i + g_j - c_ij)/eps)]``."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    Cv = C.values if isinstance(C, CostMatrix) else np.asarray(C, dtype=float)
    Psi = spec.psi((f[:, None] + g[None, :] - Cv) / epsilon)
    return float(p @ f + q @ g - epsilon * (p @ Psi @ q))


def primal_objective(coupling, C, p, q, spec: DivergenceSpec, epsilon: float = 1.0) -> float:
    """``<c, pi> + eps * sum_ij p_i q_j phi(pi_ij / (p_i q_j))``."""
    pi = np.asarray(coupling, dtype=float)
    Cv = C.values if isinstance(C, CostMatrix) else np.asarray(C, dtype=float)
    pq = np.outer(p, q)
    ratio = np.maximum(pi / pq, 0.0)
    return float(np.sum(Cv * pi) + epsilon * np.sum(pq * spec.phi(ratio)))


# ----------------------------------------------------------------------------
# solution containers


@dataclass(frozen=True, eq=False)
class PotentialPair:
    """Potentials on the atoms in the gauge ``sum p f = sum q g``."""

    f: np.ndarray
    g: np.ndarray
    gauge: str = "symmetric"


@dataclass(frozen=True, eq=False)
class Solution:
    potentials: PotentialPair
    coupling: np.ndarray
    primal_value: float
    dual_value: float
    epsilon: float
    residual: float
    iterations: int
    divergence: DivergenceSpec
    P: DiscreteMeasure
    Q: DiscreteMeasure
    cost: CostMatrix
    cost_spec: CostSpec | None = None
    tol: float = 1e-10
    dual_history: np.ndarray = field(default_factory=lambda: np.empty(0))
    max_oscillation_ratio: float = 0.0
    converged: bool = True

    @property
    def f(self):
        return self.potentials.f

    @property
    def g(self):
        return self.potentials.g

    @property
    def value(self):
        return self.primal_value

    @property
    def gap(self):
        return self.primal_value - self.dual_value

    @property
    def xi(self):
        """Scaled slack ``(f_i + g_j - c_ij) / eps``."""
        return (self.f[:, None] + self.g[None, :] - self.cost.values) / self.epsilon

    def marginal_error(self) -> float:
        pi = self.coupling
        return float(max(np.max(np.abs(pi.sum(1) - self.P.weights)),
                         np.max(np.abs(pi.sum(0) - self.Q.weights))))

    def certificates(self) -> dict:
        """Evaluate the optimality certificates; ``ok`` is their conjunction."""
        spec, eps = self.divergence, self.epsilon
        fg = np.max(np.abs(self.f[:, None] + self.g[None, :]))
        bound = eps * spec.t0 + 5.0 * self.cost.max_abs
        steps = np.diff(self.dual_history) if self.dual_history.size > 1 else np.zeros(1)
        out = {
            "duality_gap": abs(self.gap),
            "marginal_error": self.marginal_error(),
            "sup_f_plus_g": float(fg),
            "uniform_bound": float(bound),
            "max_oscillation_ratio": self.max_oscillation_ratio,
            "min_dual_increment": float(steps.min()),
            "coupling_nonnegative": bool(np.all(self.coupling >= 0)),
        }
        out["ok"] = bool(
            out["duality_gap"] <= 1e-8
            and out["marginal_error"] <= 10 * self.tol
            and fg <= bound
            and self.max_oscillation_ratio <= 1.0
            and out["min_dual_increment"] >= -1e-12
            and out["coupling_nonnegative"]
        )
        return out


# ----------------------------------------------------------------------------
# main entry point


def _resolve_cost(P, Q, cost):
    if isinstance(cost, CostSpec):
        return build_cost_matrix(P, Q, cost), cost
    if isinstance(cost, CostMatrix):
        return cost, None
    values = np.array(cost, dtype=float)
    values.setflags(write=False)
    return CostMatrix(values, float(np.max(np.abs(values)))), None


def solve(
    P: DiscreteMeasure,
    Q: DiscreteMeasure,
    cost,
    spec: DivergenceSpec,
    epsilon: float = 1.0,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    track_dual: bool = True,
) -> Solution:
    """Solve the regularized transport problem between ``P`` and ``Q``.

    ``cost`` is a :class:`CostSpec`, a :class:`CostMatrix` or a plain
    ``(n, m)`` array. Iterates ``f <- conj(g)``, ``g <- conj(f)`` from
    ``g = 0`` until the first-order residual drops below ``tol``.

    Raises :class:`NoConvergence` (carrying the last iterate) when
    ``max_iter`` is exhausted.
    """
    if not (epsilon > 0 and np.isfinite(epsilon)):
        raise InvalidInput("epsilon must be positive")
    if not tol > 0:
        raise InvalidInput("tol must be positive")
    C, cost_spec = _resolve_cost(P, Q, cost)
    if C.values.shape != (P.n, Q.n):
        raise InvalidInput(f"cost has shape {C.values.shape}, expected {(P.n, Q.n)}")
    if not np.all(np.isfinite(C.values)):
        raise InvalidInput("non-finite costs")
    p, q = P.weights, Q.weights
    Cb = C.values / epsilon
    Cbt = np.ascontiguousarray(Cb.T)
    osc_cap = 2.0 * C.max_abs / epsilon

    f = None
    g = np.zeros(Q.n)
    history = []
    max_osc = 0.0
    res = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        f = _conjugate(g[None, :] - Cb, q, spec, f)
        if osc_cap > 0:
            max_osc = max(max_osc, float(np.ptp(f)) / osc_cap)
        if track_dual:
            history.append(dual_objective(f, g, Cb, p, q, spec))
        g = _conjugate(f[None, :] - Cbt, p, spec, g)
        if osc_cap > 0:
            max_osc = max(max_osc, float(np.ptp(g)) / osc_cap)
        if track_dual:
            history.append(dual_objective(f, g, Cb, p, q, spec))
        res = residual(f, g, Cb, p, q, spec)
        if res <= tol:
            break
    converged = res <= tol
    sol = _assemble(P, Q, C, cost_spec, spec, epsilon, f, g, res, it, tol,
                    np.asarray(history), max_osc, converged)
    if not converged:
        raise NoConvergence(max_iter, res, sol)
    log.debug("solved %dx%d in %d iterations, residual %.2e", P.n, Q.n, it, res)
    return sol


def _assemble(P, Q, C, cost_spec, spec, epsilon, f, g, res, it, tol, history, max_osc, converged):
    p, q = P.weights, Q.weights
    Xi = f[:, None] + g[None, :] - C.values / epsilon
    ratio = spec.dpsi(Xi)
    pq = np.outer(p, q)
    coupling = pq * ratio
    primal = float(np.sum(C.values * coupling) + epsilon * np.sum(pq * spec.phi(ratio)))
    shift = 0.5 * (p @ f - q @ g)
    fe = epsilon * (f - shift)
    ge = epsilon * (g + shift)
    dual = float(p @ fe + q @ ge - epsilon * (p @ spec.psi(Xi) @ q))
    for arr in (fe, ge, coupling):
        arr.setflags(write=False)
    return Solution(
        potentials=PotentialPair(fe, ge),
        coupling=coupling,
        primal_value=primal,
        dual_value=dual,
        epsilon=float(epsilon),
        residual=float(res),
        iterations=it,
        divergence=spec,
        P=P,
        Q=Q,
        cost=C,
        cost_spec=cost_spec,
        tol=tol,
        dual_history=epsilon * history,
        max_oscillation_ratio=max_osc,
        converged=converged,
    )


def extend_potential(solution: Solution, side: str, new_points) -> np.ndarray:
    """Evaluate a potential off the support through the conjugate formula.

    ``side="P"`` extends ``f`` to new points of the first space using ``g``
    on the atoms of ``Q``; ``side="Q"`` extends ``g`` symmetrically.
    """
    if solution.cost_spec is None:
        raise InvalidInput("extension needs a solution built from a CostSpec")
    eps, spec = solution.epsilon, solution.divergence
    pts = np.asarray(new_points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    side = side.upper()
    if side == "P":
        other, pot, w = solution.Q.points, solution.g, solution.Q.weights
    elif side == "Q":
        other, pot, w = solution.P.points, solution.f, solution.P.weights
    else:
        raise ValueError("side must be 'P' or 'Q'")
    values, _ = _cost_values(pts, other, solution.cost_spec)
    return eps * _conjugate(pot[None, :] / eps - values / eps, w, spec)
