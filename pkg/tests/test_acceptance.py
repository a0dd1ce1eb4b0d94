"""Acceptance criteria 1-13.

Each test records a one-line PASS/FAIL verdict in ``RESULTS``; the conftest
prints them at the end of the session. Run standalone with
``python tests/test_acceptance.py``.
"""
import sys
import time

import numpy as np
import pytest

from rotlab import make_divergence, solve
from rotlab.experiments import (RateExperimentConfig, run_cost_clt_check,
                                run_potential_clt_check, run_rate_experiment, slope_fit)
from rotlab.geometry import build_cost_matrix
from rotlab.inference import coupling_clt_variance
from rotlab.linearization import apply_inverse, build_system
from rotlab.torus_oracle import population_constant, population_value, torus_population

import oracles
from conftest import SPECS, SQ, random_measure

RESULTS = {}


def _verdict(num, ok, detail):
    RESULTS[num] = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(RESULTS[num])
    assert ok, RESULTS[num]


def _slope(divergence, d, ns, reps):
    t0 = time.perf_counter()
    cfg = RateExperimentConfig(d=d, epsilon=0.5, divergence=divergence, ns=ns, reps=reps,
                               base_seed=42)
    recs = run_rate_experiment(cfg, strict=True)
    return slope_fit(recs), time.perf_counter() - t0


@pytest.mark.slow
def test_c01_rate_quadratic():
    fit, secs = _slope("quad", 1, (10, 30, 100, 300, 1000, 3000), 30)
    ok = -1.3 <= fit.alpha <= -0.7 and secs <= 600
    _verdict(1, ok, f"quad d=1 slope {fit.alpha:.3f} in [-1.3, -0.7], {secs:.0f}s <= 600s")


@pytest.mark.slow
def test_c02_rate_tsallis():
    fit, secs = _slope("tsallis:1.5", 1, (10, 30, 100, 300, 1000, 3000), 30)
    ok = -1.3 <= fit.alpha <= -0.7
    _verdict(2, ok, f"tsallis 1.5 d=1 slope {fit.alpha:.3f} in [-1.3, -0.7], {secs:.0f}s")


@pytest.mark.slow
def test_c03_faster_than_root_n():
    ns = (10, 30, 100, 300, 1000)
    parts, ok = [], True
    for div in ("quad", "tsallis:1.5"):
        for d in (1, 5):
            fit, _ = _slope(div, d, ns, 10)
            ok &= fit.alpha < -0.5
            parts.append(f"{div} d={d} {fit.alpha:.3f}")
    _verdict(3, ok, "slopes below -0.5: " + ", ".join(parts))


def test_c04_torus_oracle():
    quad = make_divergence("quad")
    C = population_constant(1, 0.5, quad)
    v = population_value(torus_population(1, 0.5, quad))
    ok = abs(C - 7 / 24) <= 1e-8 and abs(v - 7 / 90) <= 1e-8
    _verdict(4, ok, f"C={C:.12f} vs 7/24, value={v:.12f} vs 7/90, tol 1e-8")


def test_c05_sparse_closed_form(two_point):
    C = 10.0 * np.array([[0.0, 1.0], [1.0, 0.0]])
    sol = solve(two_point, two_point, C, SPECS["tsallis1.5"], 1.0)
    pi = sol.coupling
    sparse = pi[0, 1] == 0.0 and pi[1, 0] == 0.0
    diag = np.max(np.abs(np.diag(pi) - 0.5))
    ok = sparse and diag <= 1e-15 and abs(sol.value - 0.276142) <= 1e-6
    _verdict(5, ok, f"off-diagonal exactly 0: {sparse}, diagonal err {diag:.1e}, "
                    f"value {sol.value:.7f}")


def test_c06_kl_cross_validation():
    worst = 0.0
    for k in range(25):
        P, Q = random_measure(20, 2, 1000 + k), random_measure(20, 2, 2000 + k)
        sol = solve(P, Q, SQ, SPECS["kl"], 1.0)
        ref = oracles.sinkhorn_kl(P.weights, Q.weights, sol.cost.values, 1.0)
        worst = max(worst, float(np.max(np.abs(sol.coupling - ref))))
    _verdict(6, worst <= 1e-8, f"25 KL 20x20 instances, max entrywise diff {worst:.1e} <= 1e-8")


def _battery():
    for name, spec in SPECS.items():
        for eps in (0.05, 0.3, 1.0, 4.0):
            for seed in range(3):
                n, m = 5 + 3 * seed, 9 - seed
                yield name, eps, random_measure(n, 2, 10 * seed), random_measure(m, 2, 10 * seed + 1)


def test_c07_certificates():
    bad, count = [], 0
    for name, eps, P, Q in _battery():
        sol = solve(P, Q, SQ, SPECS[name], eps)
        count += 1
        if not sol.certificates()["ok"]:
            bad.append((name, eps))
    _verdict(7, not bad, f"{count} converged solves, certificate failures: {bad or 'none'}")


def test_c08_scaling_identity():
    worst = 0.0
    for name, spec in SPECS.items():
        for eps in (0.1, 0.5, 2.0):
            P, Q = random_measure(6, 2, 5), random_measure(7, 2, 6)
            C = build_cost_matrix(P, Q, SQ).values
            a = solve(P, Q, C, spec, eps, tol=1e-12)
            b = solve(P, Q, C / eps, spec, 1.0, tol=1e-12)
            worst = max(worst, abs(a.value - eps * b.value),
                        float(np.max(np.abs(a.coupling - b.coupling))))
    _verdict(8, worst <= 1e-10, f"max deviation from eps-scaled unit problem {worst:.1e}")


def test_c09_linear_operators(two_point):
    errs = {"kernel": 0.0, "inverse": 0.0, "rows": 0.0}
    for name, spec in SPECS.items():
        for seed in range(3):
            P, Q = random_measure(6, 2, seed), random_measure(5, 2, seed + 50)
            sys_ = build_system(solve(P, Q, SQ, spec, 0.7, tol=1e-12))
            k = np.concatenate([np.ones(sys_.n), -np.ones(sys_.m)])
            errs["kernel"] = max(errs["kernel"], float(np.max(np.abs(sys_.L @ k))))
            w = np.random.default_rng(seed).normal(size=sys_.n + sys_.m)
            w -= (sys_.gauge @ w) / (sys_.gauge @ sys_.kernel) * sys_.kernel
            errs["inverse"] = max(errs["inverse"],
                                  float(np.max(np.abs(apply_inverse(sys_, sys_.L @ w) - w))))
            errs["rows"] = max(errs["rows"], float(np.max(np.abs(sys_.A.sum(1) - 1))))
    C01 = np.array([[0.0, 1.0], [1.0, 0.0]])
    A1 = build_system(solve(two_point, two_point, C01, SPECS["kl"], 1.0)).A1
    entries = float(np.max(np.abs(A1 - [[0.731054, 0.268946], [0.268946, 0.731054]])))
    ok = (errs["kernel"] <= 1e-12 and errs["inverse"] <= 1e-8 and errs["rows"] <= 1e-12
          and entries <= 1e-5)
    _verdict(9, ok, f"kernel {errs['kernel']:.1e}, inverse {errs['inverse']:.1e}, "
                    f"row sums {errs['rows']:.1e}, KL 2x2 entries {entries:.1e}")


@pytest.mark.slow
def test_c10_cost_clt():
    t0 = time.perf_counter()
    P = random_measure(30, 2, 1, skew=0.2)
    Q = random_measure(30, 2, 2, skew=0.2)
    out = run_cost_clt_check(P, Q, SPECS["kl"], 1.0, 2000, 400, 7)
    secs = time.perf_counter() - t0
    ratio = out["sample_var"] / out["plugin_sigma2"]
    centred = abs(out["mean_stat"]) <= 3 * out["stderr"]
    ok = 0.65 <= ratio <= 1.35 and centred and secs <= 900
    _verdict(10, ok, f"variance ratio {ratio:.3f} in [0.65, 1.35], mean {out['mean_stat']:.4f} "
                     f"vs 3*stderr {3 * out['stderr']:.4f}, {secs:.0f}s <= 900s")


def test_c11_constant_eta():
    worst = 0.0
    for name, eps, P, Q in _battery():
        sol = solve(P, Q, SQ, SPECS[name], eps)
        for kappa in (1.0, -3.5, 250.0):
            eta = np.full((len(P.weights), len(Q.weights)), kappa)
            worst = max(worst, coupling_clt_variance(sol, eta).sigma2)
    _verdict(11, worst <= 1e-8, f"max sigma2 for constant eta {worst:.1e} <= 1e-8")


@pytest.mark.slow
def test_c12_potential_clt():
    P, Q = random_measure(5, 2, 3), random_measure(5, 2, 4)
    out = run_potential_clt_check(P, Q, SPECS["kl"], 1.0, 2000, 2000, 9)
    err = out["rel_frobenius_error"]
    _verdict(12, err <= 0.3, f"relative Frobenius error {err:.3f} <= 0.30")


def test_c13_derivatives_and_conjugacy():
    y = np.linspace(-3, 4, 701)
    y = y[np.abs(y) > 1e-3]
    h = 1e-6
    d_err, fy_err, young = 0.0, 0.0, 0.0
    specs = list(SPECS.values()) + [make_divergence("tsallis", a) for a in (1.8, 2.0)]
    for s in specs:
        for fd, exact in (((s.psi(y + h) - s.psi(y - h)) / (2 * h), s.dpsi(y)),
                          ((s.dpsi(y + h) - s.dpsi(y - h)) / (2 * h), s.d2psi(y))):
            rel = np.abs(fd - exact) / np.maximum(np.abs(exact), 1.0)
            d_err = max(d_err, float(rel.max()))
        yy = y[s.dpsi(y) > 0]
        t = s.dpsi(yy)
        fy_err = max(fy_err, float(np.max(np.abs(s.psi(yy) + s.phi(t) - t * yy))))
        tt = np.linspace(0, 6, 121)
        gap = s.phi(tt)[:, None] + s.psi(y)[None, :] - tt[:, None] * y[None, :]
        young = min(young, float(gap.min()))
    ok = d_err <= 1e-6 and fy_err <= 1e-10 and young >= -1e-10
    _verdict(13, ok, f"derivative rel err {d_err:.1e}, Fenchel-Young equality {fy_err:.1e}, "
                     f"min Young slack {young:.1e}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider",
                          "-W", "ignore::pytest.PytestAssertRewriteWarning", *sys.argv[1:]]))
