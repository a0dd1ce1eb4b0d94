"""Plug-in CLT variances for the regularized cost, coupling integrals and potentials.

The solution passed in is treated as the population. Writing ``h = psi'(xi)``
and ``h2 = psi''(xi)`` at the scaled slack ``xi = (f + g - c)/eps``:

cost
    ``sigma^2 = Var_p(a) + Var_q(b)`` with ``a_i = f_i - eps sum_j q_j psi(xi_ij)``
    and ``b_j`` symmetric.
potential
    ``eps^2 M S M^T`` where ``M`` is the gauge-fixed inverse of ``L`` and
    ``S = blockdiag(S_f, S_g)`` collects the covariances of the normalized
    empirical fluctuations ``(Q_n - Q)[h_a.] / D_Q[a]`` and
    ``(P_n - P)[h_.b] / D_P[b]``.
coupling
    First-order expansion of ``int eta d(pi_n - pi)``. The direct term is
    ``int eta h d(P_n x Q_n - P x Q)``; the potentials move by
    ``-M r`` and change the density by ``h2 (dz_f + dz_g)``, whose integral
    against ``eta`` is ``-y^T r`` with ``y = M^T l``,
    ``l = (sum_j p_i q_j h2_ij eta_ij, sum_i p_i q_j h2_ij eta_ij)``. The
    influence of one ``X = x_i`` is therefore

        V_X(x_i) = sum_j q_j eta_ij h_ij - sum_j y_g[j] h_ij / D_P[j],

    ``V_Y`` symmetric, and ``sigma^2 = Var_p(V_X) + Var_q(V_Y)``. Only one
    transposed solve is needed. ``eta`` is first centered by its
    ``h2``-weighted mean; this shifts ``V_X`` and ``V_Y`` by constants only,
    and sends constant ``eta`` to exactly zero.

All three are ``eps``-homogeneous: cost and potential variances carry a
factor ``eps^2`` relative to the unit problem with cost ``c/eps``, the
coupling variance none.
"""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .linearization import LinearizedSystem, build_system
from .solver import Solution

__all__ = [
    "CltKind",
    "CltReport",
    "cost_clt_variance",
    "coupling_clt_variance",
    "potential_clt_covariance",
]

PSD_SLACK = 1e-8


class CltKind(str, enum.Enum):
    COST = "cost"
    COUPLING = "coupling"
    POTENTIAL = "potential"


@dataclass(frozen=True, eq=False)
class CltReport:
    kind: CltKind
    epsilon: float
    n: int
    m: int
    sigma2: float | None = None
    covariance: np.ndarray | None = None
    eta_hash: str | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value, "epsilon": self.epsilon, "n": self.n, "m": self.m}
        if self.sigma2 is not None:
            out["sigma2"] = self.sigma2
        if self.covariance is not None:
            out["covariance"] = self.covariance.tolist()
        if self.eta_hash is not None:
            out["eta_hash"] = self.eta_hash
        out.update(self.metadata)
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _weighted_var(x, w) -> float:
    mu = w @ x
    return float(w @ (x - mu) ** 2)


def _clamp(s2: float) -> float:
    if s2 < -1e-12:
        raise ArithmeticError(f"negative variance {s2!r}")
    return max(float(s2), 0.0)


def cost_clt_variance(solution: Solution) -> CltReport:
    sol = solution
    eps = sol.epsilon
    p, q = sol.P.weights, sol.Q.weights
    Psi = sol.divergence.psi(sol.xi)
    a = sol.f - eps * (Psi @ q)
    b = sol.g - eps * (p @ Psi)
    s2 = _weighted_var(a, p) + _weighted_var(b, q)
    return CltReport(CltKind.COST, eps, sol.P.n, sol.Q.n, sigma2=_clamp(s2))


def _eta_hash(eta) -> str:
    eta = np.ascontiguousarray(eta, dtype="<f8")
    h = hashlib.blake2b(digest_size=8)
    h.update(np.asarray(eta.shape, dtype="<i8").tobytes())
    h.update(eta.tobytes())
    return h.hexdigest()


def coupling_clt_variance(solution: Solution, eta, system: LinearizedSystem | None = None
                          ) -> CltReport:
    """Asymptotic variance of ``sqrt(n) (int eta d pi_n - int eta d pi)``.

    ``eta`` is an ``(n, m)`` array of test-function values on the atom pairs.
    """
    sol = solution
    eta = np.asarray(eta, dtype=float)
    n, m = sol.P.n, sol.Q.n
    if eta.shape != (n, m) or not np.all(np.isfinite(eta)):
        raise ValueError(f"eta must be a finite ({n}, {m}) array")
    sys = system if system is not None else build_system(sol)
    p, q = sol.P.weights, sol.Q.weights
    H, H2 = sol.divergence.dpsi_and_d2psi(sol.xi)
    pq = np.outer(p, q)
    eta_bar = eta - np.sum(pq * H2 * eta)
    W = pq * H2 * eta_bar
    ell = np.concatenate([W.sum(1), W.sum(0)])
    y = sys.inverse_adjoint(ell)
    y_f, y_g = y[:n], y[n:]
    EH = eta_bar * H
    VX = EH @ q - H @ (y_g / sys.D_P)
    VY = p @ EH - (y_f / sys.D_Q) @ H
    s2 = _weighted_var(VX, p) + _weighted_var(VY, q)
    return CltReport(CltKind.COUPLING, sol.epsilon, n, m, sigma2=_clamp(s2),
                     eta_hash=_eta_hash(eta))


def potential_clt_covariance(solution: Solution, system: LinearizedSystem | None = None
                             ) -> CltReport:
    """Covariance of the Gaussian limit of ``sqrt(n) (f_n - f, g_n - g)`` on the atoms.

    The ordering is ``(f on P-atoms, g on Q-atoms)``, in the gauge slice
    ``sum p z_f = sum q z_g``.
    """
    sol = solution
    sys = system if system is not None else build_system(sol)
    p, q = sol.P.weights, sol.Q.weights
    H = sol.divergence.dpsi(sol.xi)
    S_f = ((H * q) @ H.T - np.outer(H @ q, H @ q)) / np.outer(sys.D_Q, sys.D_Q)
    S_g = ((H.T * p) @ H - np.outer(p @ H, p @ H)) / np.outer(sys.D_P, sys.D_P)
    n = sol.P.n
    N = n + sol.Q.n
    S = np.zeros((N, N))
    S[:n, :n] = S_f
    S[n:, n:] = S_g
    M = sys.inverse
    cov = sol.epsilon ** 2 * (M @ S @ M.T)
    cov = 0.5 * (cov + cov.T)
    eig = np.linalg.eigvalsh(cov)
    floor = -PSD_SLACK * max(1.0, float(eig[-1]))
    if eig[0] < floor:
        raise ArithmeticError(f"covariance not PSD: smallest eigenvalue {eig[0]:.3e}")
    return CltReport(CltKind.POTENTIAL, sol.epsilon, n, sol.Q.n, covariance=cov,
                     metadata={"min_eigenvalue": float(eig[0])})
