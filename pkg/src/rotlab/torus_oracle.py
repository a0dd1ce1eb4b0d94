"""Population solution for uniform self-transport on the flat torus.

With ``P = Q`` uniform on ``[0, 1)^d`` and the squared wrap-around distance,
translation invariance makes both potentials equal to one constant ``C``
determined by

    1 = E[ psi'((2C - S) / eps) ],   S = |Y|^2,  Y uniform on [0, 1/2]^d,

where folding onto ``[0, 1/2]^d`` uses the reflection symmetry of the torus
distance to the origin. Two independent rules evaluate such expectations:

``gauss``
    Nested Gauss-Legendre. In each coordinate the integrand is smooth except
    where the remaining budget ``2C - (partial sum of y_k^2)`` crosses a
    multiple of 1/4, so every coordinate is split there. Cost grows like
    ``(2*order)**d``; the default for ``d <= 3``.
``laplace``
    For the power families every needed expectation is a combination of
    ``G_k(u) = E[(u - S)_+^k]``, and ``(t - S)_+^k`` is the inverse Laplace
    transform of ``Gamma(k+1) exp(-zS) / z^(k+1)``. Hence
    ``G_k(u) = Gamma(k+1)/pi * int_0^inf Re[exp(zu) M(z)^d z^(-k-1)] dw``
    on the line ``z = c + iw``, with ``M(z) = E exp(-z Y_1^2)`` in closed
    form through ``erf``. KL expectations factorize and are exact. Default
    for ``d >= 4``.

Both rules report an error estimate (coarser order, resp. a second
contour abscissa).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.integrate import simpson
from scipy.special import erf, gamma

from .divergence import DivergenceSpec, Family

__all__ = [
    "QuadratureTooCoarse",
    "TorusPopulation",
    "default_quadrature",
    "population_constant",
    "population_value",
    "torus_population",
]


class QuadratureTooCoarse(RuntimeError):
    pass


def default_quadrature(d: int) -> dict:
    if d <= 3:
        return {"rule": "gauss", "order": 24}
    return {"rule": "laplace", "abscissa": 1.0, "cutoff": 4000.0, "step": 0.005}


def _coarse(quadrature: dict) -> dict:
    if quadrature["rule"] == "gauss":
        return {**quadrature, "order": max(4, (2 * quadrature["order"]) // 3)}
    return {**quadrature, "abscissa": 1.5 * quadrature["abscissa"]}


# ----------------------------------------------------------------------------
# nested Gauss-Legendre


def _pieces(v, m, order):
    """Nodes and weights for one coordinate on ``[0, 1/2]``.

    ``v`` is the remaining budget per outer node and ``m`` the number of
    coordinates still to come. Weights include the uniform density 2.
    """
    t, wt = np.polynomial.legendre.leggauss(order)
    t = 0.5 * (t + 1.0)
    wt = 0.5 * wt
    # smoothstep map clusters nodes at both ends of each piece
    tau = t * t * (3.0 - 2.0 * t)
    dtau = 6.0 * t * (1.0 - t)
    j = np.floor(4.0 * v)
    r = v - j / 4.0
    valid = (v > 0) & (j >= 0) & (j <= m) & (r > 0)
    split = np.where(valid, np.sqrt(np.where(valid, r, 0.0)), 0.25)
    a = np.stack([np.zeros_like(split), split], axis=1)
    b = np.stack([split, np.full_like(split, 0.5)], axis=1)
    L = (b - a)[:, :, None]
    y = a[:, :, None] + L * tau[None, None, :]
    w = 2.0 * L * (wt * dtau)[None, None, :]
    return y.reshape(len(v), -1), w.reshape(len(v), -1)


def _gauss_nodes(d, u, order):
    s = np.zeros(1)
    w = np.ones(1)
    for k in range(d):
        y, wy = _pieces(u - s, d - 1 - k, order)
        s = (s[:, None] + y * y).reshape(-1)
        w = (w[:, None] * wy).reshape(-1)
    return s, w


def _gauss_moments(d, u, eps, spec, order, which):
    s, w = _gauss_nodes(d, u, order)
    xi = (u - s) / eps
    out = {}
    if "dpsi" in which or "cost" in which or "phi" in which:
        dens = spec.dpsi(xi)
        out["dpsi"] = w @ dens
        out["cost"] = w @ (s * dens)
        out["phi"] = w @ spec.phi(dens)
    if "psi" in which:
        out["psi"] = w @ spec.psi(xi)
    return out


# ----------------------------------------------------------------------------
# Laplace inversion


def _mgf(z):
    """``E exp(-z Y^2)`` for ``Y`` uniform on ``[0, 1/2]``."""
    r = np.sqrt(z)
    return np.sqrt(np.pi) / r * erf(0.5 * r)


def _power_moments(d, u, ks, abscissa, cutoff, step):
    """``E[(u - S)_+^k]`` for every ``k`` in ``ks``."""
    w = np.arange(0.0, cutoff + step / 2, step)
    z = abscissa + 1j * w
    base = np.exp(z * u) * _mgf(z) ** d / z
    out = []
    for k in ks:
        vals = np.real(base * z ** (-k))
        out.append(gamma(k + 1) * simpson(vals, x=w) / np.pi)
    return out


def _laplace_moments(d, u, eps, spec, quadrature, which):
    if spec.kind is Family.KL:
        a = 1.0 / eps
        M = float(_mgf(a))
        mS = 0.5 * (M - np.exp(-a / 4.0)) / a  # E[Y^2 exp(-a Y^2)]
        base = np.exp(u / eps - 1.0) * M ** d
        cost = np.exp(u / eps - 1.0) * d * mS * M ** (d - 1)
        return {
            "dpsi": base,
            "psi": base,
            "cost": cost,
            "phi": (u / eps - 1.0) * base - cost / eps,
        }
    b = spec.beta
    args = (quadrature["abscissa"], quadrature["cutoff"], quadrature["step"])
    if which == {"dpsi"}:
        (g1,) = _power_moments(d, u, [b - 1.0], *args)
        return {"dpsi": g1 / eps ** (b - 1.0)}
    g1, g2 = _power_moments(d, u, [b - 1.0, b], *args)
    return {
        "dpsi": g1 / eps ** (b - 1.0),
        "psi": g2 / (b * eps ** b) + 1.0 / spec.alpha,
        "cost": (u * g1 - g2) / eps ** (b - 1.0),
        "phi": (g2 / eps ** b - 1.0) / spec.alpha,
    }


def _moments(d, u, eps, spec, quadrature, which=frozenset({"dpsi", "psi", "cost", "phi"})):
    """Expectations of ``psi'``, ``psi``, ``S psi'`` and ``phi(psi')`` at ``(u - S)/eps``."""
    which = set(which)
    if quadrature["rule"] == "gauss":
        return _gauss_moments(d, u, eps, spec, quadrature["order"], which)
    if quadrature["rule"] == "laplace":
        return _laplace_moments(d, u, eps, spec, quadrature, which)
    raise ValueError(f"unknown quadrature rule {quadrature['rule']!r}")


# ----------------------------------------------------------------------------
# public API


@dataclass(frozen=True)
class TorusPopulation:
    d: int
    epsilon: float
    spec: DivergenceSpec
    C: float
    rot_value: float
    quadrature: dict
    quadrature_error_estimate: float

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "epsilon": self.epsilon,
            "divergence": self.spec.encode(),
            "C": self.C,
            "rot_value": self.rot_value,
            "quadrature_error_estimate": self.quadrature_error_estimate,
            "quadrature": self.quadrature,
        }


def _foc(d, eps, spec, quadrature, C):
    return _moments(d, 2.0 * C, eps, spec, quadrature, {"dpsi"})["dpsi"] - 1.0


def _solve_constant(d, epsilon, spec, quadrature, tol, max_error):
    if d < 1:
        raise ValueError("d must be >= 1")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    quadrature = dict(quadrature or default_quadrature(d))
    # psi' <= 1 on the whole torus below lo and >= 1 above hi
    lo = 0.5 * epsilon * spec.t0
    hi = 0.5 * (epsilon * spec.t0 + d / 4.0)

    def F(C):
        return _foc(d, epsilon, spec, quadrature, C)

    Flo, Fhi = F(lo), F(hi)
    if Flo >= 0:
        C = lo
    elif Fhi <= 0:
        C = hi
    else:
        C = optimize.brentq(F, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    fval = F(C)
    if abs(fval) > tol:
        raise RuntimeError(f"root tolerance not met: |F(C)| = {abs(fval):.3e}")
    err = abs(_foc(d, epsilon, spec, _coarse(quadrature), C) - fval)
    threshold = 10 * tol if max_error is None else max_error
    if err > threshold:
        raise QuadratureTooCoarse(
            f"quadrature error estimate {err:.3e} exceeds {threshold:.1e} (d={d}, {quadrature})")
    return float(C), float(err), quadrature


def population_constant(d: int, epsilon: float, spec: DivergenceSpec,
                        quadrature: dict | None = None, tol: float = 1e-12,
                        max_error: float | None = None) -> float:
    """The constant value ``C`` of both population potentials.

    ``tol`` bounds ``|E psi'((2C - S)/eps) - 1|``. Raises
    :class:`QuadratureTooCoarse` when the quadrature error estimate exceeds
    ``max_error`` (default ``10 * tol``).
    """
    return _solve_constant(d, epsilon, spec, quadrature, tol, max_error)[0]


def torus_population(d: int, epsilon: float, spec: DivergenceSpec,
                     quadrature: dict | None = None, tol: float = 1e-12,
                     max_error: float | None = None) -> TorusPopulation:
    C, err, quadrature = _solve_constant(d, epsilon, spec, quadrature, tol, max_error)
    u = 2.0 * C
    m = _moments(d, u, epsilon, spec, quadrature, {"psi"})
    pop = TorusPopulation(d, float(epsilon), spec, C, float(u - epsilon * m["psi"]),
                          quadrature, err)
    population_value(pop)
    return pop


def population_value(population: TorusPopulation, agreement: float = 1e-9) -> float:
    """Population regularized cost, cross-checked against the primal form.

    Dual: ``2C - eps E psi(xi)``. Primal: ``E[c psi'(xi)] + eps E phi(psi'(xi))``.
    """
    pop = population
    u, eps = 2.0 * pop.C, pop.epsilon
    m = _moments(pop.d, u, eps, pop.spec, pop.quadrature)
    dual = u - eps * m["psi"]
    primal = m["cost"] + eps * m["phi"]
    if abs(primal - dual) > agreement:
        raise RuntimeError(f"primal {primal!r} and dual {dual!r} disagree")
    return float(dual)
