"""Linearization of the first-order conditions at a solution.

At potentials ``(f, g)`` with scaled slack ``xi = (f + g - c)/eps`` the
normalized first-order map has derivative ``L = Id + A`` with

    (A z)_f[i] = sum_j q_j psi''(xi_ij) z_g[j] / D_Q[i],
    (A z)_g[j] = sum_i p_i psi''(xi_ij) z_f[i] / D_P[j],

``D_Q[i] = sum_j q_j psi''(xi_ij)`` and ``D_P[j] = sum_i p_i psi''(xi_ij)``.
``L`` annihilates ``k = (1_n, -1_m)`` and acts on the quotient by that
direction. Its inverse is realized by the bordered system

    [[L, k], [b^T, 0]] [z; lam] = [r; 0],   b = (p, -q),

i.e. ``L z = r - lam k`` (``r`` taken modulo ``k``) with ``z`` in the gauge
slice ``sum p z_f = sum q z_g``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

from .solver import Solution

__all__ = [
    "DegenerateDenominator",
    "LinearizedSystem",
    "SingularSystem",
    "apply_inverse",
    "build_system",
    "diagnostics",
]

COND_LIMIT = 1e14


class DegenerateDenominator(ArithmeticError):
    pass


class SingularSystem(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class LinearizedSystem:
    A1: np.ndarray  # (n, m)
    A2: np.ndarray  # (m, n)
    D_Q: np.ndarray
    D_P: np.ndarray
    gauge: np.ndarray
    kernel: np.ndarray
    delta_min: float
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self):
        return self.A1.shape[0]

    @property
    def m(self):
        return self.A1.shape[1]

    @cached_property
    def A(self) -> np.ndarray:
        n, m = self.n, self.m
        A = np.zeros((n + m, n + m))
        A[:n, n:] = self.A1
        A[n:, :n] = self.A2
        return A

    @cached_property
    def L(self) -> np.ndarray:
        return np.eye(self.n + self.m) + self.A

    def apply_L(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        n = self.n
        return np.concatenate([z[:n] + self.A1 @ z[n:], z[n:] + self.A2 @ z[:n]])

    @cached_property
    def bordered(self) -> np.ndarray:
        N = self.n + self.m
        B = np.zeros((N + 1, N + 1))
        B[:N, :N] = self.L
        B[:N, N] = self.kernel
        B[N, :N] = self.gauge
        return B

    @cached_property
    def factorization(self):
        B = self.bordered
        with warnings.catch_warnings():
            # singularity is reported through the condition estimate below
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            lu = linalg.lu_factor(B, check_finite=False)
        anorm = np.linalg.norm(B, 1)
        rcond, info = linalg.lapack.dgecon(lu[0], anorm, norm="1")
        cond = np.inf if rcond == 0 else 1.0 / rcond
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise SingularSystem(f"bordered system condition estimate {cond:.2e}")
        self._cache["cond"] = cond
        return lu

    @property
    def condition(self) -> float:
        self.factorization
        return self._cache["cond"]

    @cached_property
    def inverse(self) -> np.ndarray:
        """Matrix ``M`` of the gauge-fixed inverse: ``apply_inverse(r) = M r``."""
        N = self.n + self.m
        rhs = np.zeros((N + 1, N))
        rhs[:N] = np.eye(N)
        return linalg.lu_solve(self.factorization, rhs)[:N]

    def inverse_adjoint(self, ell) -> np.ndarray:
        """``M^T ell`` without forming ``M``."""
        N = self.n + self.m
        rhs = np.zeros(N + 1)
        rhs[:N] = ell
        return linalg.lu_solve(self.factorization, rhs, trans=1)[:N]


def build_system(solution: Solution, min_denominator: float = 1e-12) -> LinearizedSystem:
    spec = solution.divergence
    p, q = solution.P.weights, solution.Q.weights
    H2 = spec.d2psi(solution.xi)
    D_Q = H2 @ q
    D_P = p @ H2
    delta = float(min(D_Q.min(), D_P.min()))
    if not delta > min_denominator:
        raise DegenerateDenominator(f"smallest psi'' average is {delta:.3e}")
    A1 = H2 * q[None, :] / D_Q[:, None]
    A2 = (H2 * p[:, None]).T / D_P[:, None]
    gauge = np.concatenate([p, -q])
    kernel = np.concatenate([np.ones(len(p)), -np.ones(len(q))])
    return LinearizedSystem(A1, A2, D_Q, D_P, gauge, kernel, delta)


def apply_inverse(sys: LinearizedSystem, r, return_residual: bool = False):
    """Solve ``L z = r`` modulo the kernel direction, with ``z`` gauge-fixed.

    With ``return_residual`` also returns ``||L z - r||_inf``, the size of the
    component of ``r`` removed to make the system solvable.
    """
    r = np.asarray(r, dtype=float)
    N = sys.n + sys.m
    if r.shape != (N,) or not np.all(np.isfinite(r)):
        raise ValueError(f"right-hand side must be a finite vector of length {N}")
    sol = linalg.lu_solve(sys.factorization, np.append(r, 0.0))
    z = sol[:N]
    if return_residual:
        return z, float(np.max(np.abs(sys.apply_L(z) - r)))
    return z


def diagnostics(solution: Solution) -> dict:
    """Support and positivity fractions plus the smallest ``psi''`` average."""
    spec = solution.divergence
    H2 = spec.d2psi(solution.xi)
    p, q = solution.P.weights, solution.Q.weights
    nm = H2.size
    return {
        "delta_min": float(min((H2 @ q).min(), (p @ H2).min())),
        "support_fraction": float(np.count_nonzero(solution.coupling > 0) / nm),
        "positivity_fraction": float(np.count_nonzero(H2 > 0) / nm),
    }
