"""Point-cloud CSV and solution JSON formats.

Point CSV: header row, one row per atom, ``d`` coordinate columns and an
optional final column named ``weight``. Without it atoms get mass ``1/n``.

Solution JSON (``format_version`` 1) stores potentials, the dense coupling
(row-major, zeros explicit), values and diagnostics together with both
measures and the cost kind, so a solution can be reloaded without
re-solving. ``input_hash`` fingerprints everything the CLT estimators read;
it is recomputed and checked on load.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math

import numpy as np

from .divergence import parse_divergence
from .geometry import CostKind, CostSpec, DiscreteMeasure, build_cost_matrix
from .solver import PotentialPair, Solution

__all__ = [
    "FORMAT_VERSION",
    "estimator_input_hash",
    "load_solution",
    "read_points_csv",
    "solution_to_dict",
    "write_points_csv",
    "write_solution",
]

FORMAT_VERSION = 1


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def read_points_csv(path) -> DiscreteMeasure:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip().lower() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise ValueError(f"{path}: no data rows")
    if all(_is_number(h) for h in header):
        raise ValueError(f"{path}: header row required")
    weighted = header[-1] == "weight"
    ncol = len(header)
    if ncol - weighted < 1:
        raise ValueError(f"{path}: no coordinate columns")
    data = np.empty((len(body), ncol))
    for k, row in enumerate(body, start=2):
        if len(row) != ncol:
            raise ValueError(f"{path}:{k}: expected {ncol} fields, got {len(row)}")
        try:
            data[k - 2] = [float(c) for c in row]
        except ValueError:
            raise ValueError(f"{path}:{k}: non-numeric field") from None
    if weighted:
        return DiscreteMeasure(data[:, :-1], data[:, -1])
    return DiscreteMeasure.uniform(data)


def write_points_csv(measure: DiscreteMeasure, path, weights: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = [f"x{k}" for k in range(measure.d)]
        w.writerow(cols + (["weight"] if weights else []))
        for x, m in zip(measure.points, measure.weights):
            w.writerow([repr(float(v)) for v in x] + ([repr(float(m))] if weights else []))


def estimator_input_hash(solution: Solution) -> str:
    s = solution
    h = hashlib.blake2b(digest_size=16)
    for arr in (s.f, s.g, s.cost.values, s.P.weights, s.Q.weights):
        a = np.ascontiguousarray(arr, dtype="<f8")
        h.update(np.asarray(a.shape, dtype="<i8").tobytes())
        h.update(a.tobytes())
    h.update(repr(float(s.epsilon)).encode())
    h.update(s.divergence.encode().encode())
    return h.hexdigest()


def _finite_or_none(x):
    x = float(x)
    return x if math.isfinite(x) else None


def solution_to_dict(solution: Solution, diagnostics: dict | None = None) -> dict:
    s = solution
    out = {
        "format_version": FORMAT_VERSION,
        "epsilon": s.epsilon,
        "divergence": s.divergence.encode(),
        "f": s.f.tolist(),
        "g": s.g.tolist(),
        "coupling": s.coupling.tolist(),
        "primal_value": s.primal_value,
        "dual_value": s.dual_value,
        "residual": _finite_or_none(s.residual),
        "iterations": s.iterations,
        "tol": s.tol,
        "cost": s.cost_spec.kind.value if s.cost_spec is not None else None,
        "P": {"points": s.P.points.tolist(), "weights": s.P.weights.tolist()},
        "Q": {"points": s.Q.points.tolist(), "weights": s.Q.weights.tolist()},
        "input_hash": estimator_input_hash(s),
    }
    if diagnostics is not None:
        out["diagnostics"] = diagnostics
    return out


def write_solution(solution: Solution, path, diagnostics: dict | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(solution_to_dict(solution, diagnostics), fh)
        fh.write("\n")


def load_solution(path) -> Solution:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported format_version {doc.get('format_version')!r}")
    if doc.get("cost") is None:
        raise ValueError("solution JSON lacks a cost kind; cannot rebuild the cost matrix")
    spec = parse_divergence(doc["divergence"])
    P = DiscreteMeasure(doc["P"]["points"], doc["P"]["weights"])
    Q = DiscreteMeasure(doc["Q"]["points"], doc["Q"]["weights"])
    cost_spec = CostSpec(CostKind(doc["cost"]), P.d)
    f = np.asarray(doc["f"], dtype=float)
    g = np.asarray(doc["g"], dtype=float)
    coupling = np.asarray(doc["coupling"], dtype=float)
    if f.shape != (P.n,) or g.shape != (Q.n,) or coupling.shape != (P.n, Q.n):
        raise ValueError("array shapes in solution JSON are inconsistent")
    for a in (f, g, coupling):
        a.setflags(write=False)
    res = doc.get("residual")
    sol = Solution(
        potentials=PotentialPair(f, g),
        coupling=coupling,
        primal_value=float(doc["primal_value"]),
        dual_value=float(doc["dual_value"]),
        epsilon=float(doc["epsilon"]),
        residual=float("nan") if res is None else float(res),
        iterations=int(doc["iterations"]),
        divergence=spec,
        P=P,
        Q=Q,
        cost=build_cost_matrix(P, Q, cost_spec),
        cost_spec=cost_spec,
        tol=float(doc.get("tol", 1e-10)),
    )
    if "input_hash" in doc and estimator_input_hash(sol) != doc["input_hash"]:
        raise ValueError("input_hash mismatch: solution JSON does not reproduce its inputs")
    return sol
