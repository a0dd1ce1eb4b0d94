"""Divergences given through their convex conjugate.

A divergence is determined by a convex ``phi`` on ``[0, inf)`` with
``phi(1) = 0``. Everything downstream only needs the conjugate
``psi(y) = sup_{x >= 0} (x*y - phi(x))`` and its first two derivatives, so
the three supported families are evaluated from closed forms:

=========  ==========================  ==============================
family     phi(x)                      psi(y)
=========  ==========================  ==============================
kl         x log x                     exp(y - 1)
tsallis    (x**a - 1) / a, 1 < a < 2   y_+**b / b + 1/a, 1/a + 1/b = 1
quad       (x**2 - 1) / 2              y_+**2 / 2 + 1/2
=========  ==========================  ==============================

For all three ``psi'(1) = 1``, i.e. the calibration point is ``t0 = 1``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

__all__ = [
    "Family",
    "DivergenceSpec",
    "make_divergence",
    "parse_divergence",
    "psi",
    "phi",
]


class Family(str, enum.Enum):
    KL = "kl"
    TSALLIS = "tsallis"
    QUADRATIC = "quad"


@dataclass(frozen=True)
class DivergenceSpec:
    """Immutable description of a regularizer.

    ``alpha`` is the Tsallis exponent (2 for the quadratic family, ``None``
    for KL) and ``beta`` its conjugate exponent. ``outside_assumption`` is
    set for the quadratic family, whose conjugate is only C^1.
    """

    kind: Family
    alpha: float | None = None
    beta: float | None = None
    t0: float = 1.0
    outside_assumption: bool = field(default=False, compare=False)

    def __post_init__(self):
        self._check()

    # -- evaluation ---------------------------------------------------------

    def psi(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind is Family.KL:
            return np.exp(y - 1.0)
        yp = np.maximum(y, 0.0)
        if self.kind is Family.QUADRATIC:
            return 0.5 * yp * yp + 0.5
        return _pow(yp, self.beta) / self.beta + 1.0 / self.alpha

    def dpsi(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind is Family.KL:
            return np.exp(y - 1.0)
        yp = np.maximum(y, 0.0)
        if self.kind is Family.QUADRATIC:
            return yp
        return _pow(yp, self.beta - 1.0)

    def d2psi(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind is Family.KL:
            return np.exp(y - 1.0)
        if self.kind is Family.QUADRATIC:
            return (y > 0.0).astype(float)
        yp = np.maximum(y, 0.0)
        return (self.beta - 1.0) * _pow(yp, self.beta - 2.0)

    def dpsi_and_d2psi(self, y):
        """Return ``(psi'(y), psi''(y))`` sharing intermediate work."""
        y = np.asarray(y, dtype=float)
        if self.kind is Family.KL:
            e = np.exp(y - 1.0)
            return e, e
        yp = np.maximum(y, 0.0)
        if self.kind is Family.QUADRATIC:
            return yp, (y > 0.0).astype(float)
        if self.beta == 3.0:
            return yp * yp, 2.0 * yp
        d2 = (self.beta - 1.0) * _pow(yp, self.beta - 2.0)
        return d2 * yp / (self.beta - 1.0), d2

    def phi(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            raise ValueError("phi is only defined on [0, inf)")
        if self.kind is Family.KL:
            return xlogy(x, x)
        return (_pow(x, self.alpha) - 1.0) / self.alpha

    def psi_order(self, y, order: int):
        if order == 0:
            return self.psi(y)
        if order == 1:
            return self.dpsi(y)
        if order == 2:
            return self.d2psi(y)
        raise ValueError(f"order must be 0, 1 or 2, got {order!r}")

    # -- (de)serialization ----------------------------------------------------

    def encode(self) -> str:
        if self.kind is Family.TSALLIS:
            return f"tsallis:{self.alpha!r}"
        return self.kind.value

    def __str__(self):
        return self.encode()

    # -- construction-time checks ---------------------------------------------

    def _check(self):
        t0 = self.t0
        if abs(float(self.dpsi(t0)) - 1.0) > 1e-12:
            raise ValueError(f"psi'(t0) != 1 for {self.encode()}")
        grid = np.linspace(-10.0, 10.0, 2001)
        d1 = self.dpsi(grid)
        if np.any(np.diff(d1) < 0):
            raise ValueError("psi' is not nondecreasing")
        d2 = self.d2psi(grid)
        if np.any(d2 < 0):
            raise ValueError("psi'' takes negative values")
        right = np.linspace(t0 - 0.1, 10.0, 1001)
        if np.any(self.d2psi(right) <= 0):
            raise ValueError("psi is not strictly convex to the right of t0")
        if abs(float(self.phi(1.0))) > 1e-12:
            raise ValueError("phi(1) != 0")


def _pow(x, e):
    if e == 1.0:
        return x
    if e == 2.0:
        return x * x
    if e == 3.0:
        return x * x * x
    return np.power(x, e)


def make_divergence(kind, alpha: float | None = None) -> DivergenceSpec:
    """Build a :class:`DivergenceSpec`.

    ``kind`` is a :class:`Family` or its string value. Tsallis needs
    ``1 < alpha <= 2``; ``alpha == 2`` is returned as the quadratic family.
    """
    kind = Family(kind)
    if kind is Family.KL:
        if alpha is not None:
            raise ValueError("KL takes no alpha")
        return DivergenceSpec(Family.KL)
    if kind is Family.QUADRATIC:
        if alpha not in (None, 2, 2.0):
            raise ValueError("the quadratic family has alpha = 2")
        return DivergenceSpec(Family.QUADRATIC, 2.0, 2.0, outside_assumption=True)
    if alpha is None:
        raise ValueError("Tsallis divergence requires alpha")
    alpha = float(alpha)
    if not (1.0 < alpha <= 2.0):
        raise ValueError(f"Tsallis alpha must lie in (1, 2], got {alpha}")
    if alpha == 2.0:
        return make_divergence(Family.QUADRATIC)
    return DivergenceSpec(Family.TSALLIS, alpha, alpha / (alpha - 1.0))


def parse_divergence(text: str) -> DivergenceSpec:
    """Parse ``"kl"``, ``"quad"`` or ``"tsallis:<alpha>"``."""
    text = text.strip().lower()
    if text in ("kl", "quad"):
        return make_divergence(text)
    name, sep, value = text.partition(":")
    if name == "tsallis" and sep:
        try:
            alpha = float(value)
        except ValueError:
            raise ValueError(f"bad Tsallis exponent in {text!r}") from None
        return make_divergence(Family.TSALLIS, alpha)
    raise ValueError(f"unknown divergence {text!r}")


def psi(spec: DivergenceSpec, t, order: int = 0):
    """``psi`` (order 0) or its first/second derivative."""
    return spec.psi_order(t, order)


def phi(spec: DivergenceSpec, t):
    return spec.phi(t)
