"""Monte-Carlo check of the plug-in CLT variances on a random discrete population.

    python scripts/clt_check.py --kind cost --size 30 --n 2000 --reps 400
"""
import argparse
import json

import numpy as np

from rotlab import DiscreteMeasure, parse_divergence
from rotlab.experiments import (run_cost_clt_check, run_coupling_clt_check,
                                run_potential_clt_check)
from rotlab.geometry import rng


def population(k, d, seed):
    g = rng(seed)
    w = g.random(k) + 0.2
    return DiscreteMeasure(g.random((k, d)), w / w.sum())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--kind", choices=["cost", "coupling", "potential"], default="cost")
    ap.add_argument("--divergence", default="kl")
    ap.add_argument("--epsilon", type=float, default=1.0)
    ap.add_argument("--size", type=int, default=30)
    ap.add_argument("--dim", type=int, default=2)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--reps", type=int, default=400)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()

    P, Q = population(args.size, args.dim, 1), population(args.size, args.dim, 2)
    spec = parse_divergence(args.divergence)
    common = dict(n=args.n, reps=args.reps, base_seed=args.seed, threads=args.threads)
    if args.kind == "cost":
        out = run_cost_clt_check(P, Q, spec, args.epsilon, **common)
        out["ratio"] = out["sample_var"] / out["plugin_sigma2"]
    elif args.kind == "coupling":
        eta = np.zeros((args.size, args.size))
        eta[0, 1] = 1.0
        out = run_coupling_clt_check(P, Q, spec, args.epsilon, eta, **common)
        out["ratio"] = out["sample_var"] / out["plugin_sigma2"]
    else:
        out = run_potential_clt_check(P, Q, spec, args.epsilon, **common)
        out = {k: v for k, v in out.items() if not k.endswith("covariance")}
    print(json.dumps({k: (v.tolist() if isinstance(v, np.ndarray) else v)
                      for k, v in out.items()}, indent=2))


if __name__ == "__main__":
    main()
