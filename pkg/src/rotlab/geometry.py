"""Discrete measures, transport costs and seeded sampling.

Randomness comes exclusively from :func:`rng`, a Philox (counter-based)
generator seeded with an explicit 64-bit integer; no global state is used.
"""
from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CostKind",
    "CostSpec",
    "CostMatrix",
    "DiscreteMeasure",
    "build_cost_matrix",
    "cost_eval",
    "hash64",
    "rng",
    "sample_from_discrete",
    "sample_uniform_torus",
    "torus_grid",
]


def rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def hash64(*values: int) -> int:
    """Deterministic 64-bit hash of a tuple of integers (BLAKE2b)."""
    data = b"".join(struct.pack("<Q", int(v) & 0xFFFFFFFFFFFFFFFF) for v in values)
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted point cloud; ``points`` is ``(n, d)``, ``weights`` sums to 1."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.array(self.weights, dtype=float).reshape(-1)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError("points must be a non-empty (n, d) array")
        if w.shape[0] != pts.shape[0]:
            raise ValueError("weights and points disagree in length")
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(w)):
            raise ValueError("non-finite coordinates or weights")
        if np.any(w <= 0):
            raise ValueError("atoms must carry positive mass")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        pts = np.asarray(points, dtype=float)
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def compress(self) -> tuple["DiscreteMeasure", np.ndarray]:
        """Merge coincident atoms.

        Returns the merged measure and, for every original atom, the index
        of its merged atom. Transport quantities depend only on the measure,
        so solving on the merged support is exact.
        """
        uniq, inverse = np.unique(self.points, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        w = np.bincount(inverse, weights=self.weights, minlength=uniq.shape[0])
        w = w / w.sum()
        return DiscreteMeasure(uniq, w), inverse


class CostKind(str, enum.Enum):
    SQEUCLIDEAN = "sqeuclidean"
    TORUS = "torus"


@dataclass(frozen=True)
class CostSpec:
    kind: CostKind
    d: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", CostKind(self.kind))


@dataclass(frozen=True, eq=False)
class CostMatrix:
    values: np.ndarray
    max_abs: float


def _wrap(x):
    # reduce to the torus representative in [0, 1)
    x = np.mod(np.asarray(x, dtype=float), 1.0)
    x[x >= 1.0] = 0.0
    return x


def cost_eval(spec: CostSpec, x, y) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if spec.d is not None and x.shape[0] != spec.d:
        raise ValueError(f"expected dimension {spec.d}, got {x.shape[0]}")
    if spec.kind is CostKind.SQEUCLIDEAN:
        return float(np.sum((x - y) ** 2))
    delta = np.abs(_wrap(x) - _wrap(y))
    return float(np.sum(np.minimum(delta, 1.0 - delta) ** 2))


def _pairwise(kind: CostKind, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    out = np.zeros((X.shape[0], Y.shape[0]))
    for k in range(X.shape[1]):
        delta = np.abs(X[:, k, None] - Y[None, :, k])
        if kind is CostKind.TORUS:
            np.minimum(delta, 1.0 - delta, out=delta)
        delta *= delta
        out += delta
    return out


def build_cost_matrix(P: DiscreteMeasure, Q: DiscreteMeasure, spec: CostSpec) -> CostMatrix:
    """Dense ``n x m`` cost matrix between the atoms of ``P`` and ``Q``."""
    return CostMatrix(*_cost_values(P.points, Q.points, spec))


def _cost_values(X, Y, spec: CostSpec):
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if spec.d is not None and X.shape[1] != spec.d:
        raise ValueError(f"expected dimension {spec.d}, got {X.shape[1]}")
    if spec.kind is CostKind.TORUS:
        X, Y = _wrap(X), _wrap(Y)
    values = _pairwise(spec.kind, X, Y)
    values.setflags(write=False)
    return values, float(np.max(np.abs(values)))


def sample_uniform_torus(d: int, n: int, seed: int) -> DiscreteMeasure:
    """``n`` i.i.d. uniform points on ``[0, 1)^d`` with weights ``1/n``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if n < 1:
        raise ValueError("n must be >= 1")
    pts = rng(seed).random((n, d))
    return DiscreteMeasure(pts, np.full(n, 1.0 / n))


def sample_from_discrete(population: DiscreteMeasure, n: int, seed: int) -> DiscreteMeasure:
    """Empirical measure of ``n`` i.i.d. draws from ``population``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    idx = rng(seed).choice(population.n, size=n, p=population.weights)
    return DiscreteMeasure(population.points[idx], np.full(n, 1.0 / n))


def torus_grid(N: int, d: int = 1) -> DiscreteMeasure:
    """Uniform tensor grid with ``N`` points per axis on ``[0, 1)^d``."""
    axis = np.arange(N) / N
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    return DiscreteMeasure.uniform(pts)
