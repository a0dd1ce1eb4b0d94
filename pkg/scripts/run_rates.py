"""Rate experiments on the flat torus: one CSV and one slope summary per family.

    python scripts/run_rates.py --out results/ --d 1 --reps 30
"""
import argparse
import json
import time
from pathlib import Path

from rotlab.experiments import (FIG1_NS, RateExperimentConfig, run_rate_experiment, slope_fit,
                                write_records_csv)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--d", type=int, default=1)
    ap.add_argument("--epsilon", type=float, default=0.5)
    ap.add_argument("--reps", type=int, default=30)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--ns", default=",".join(map(str, FIG1_NS)))
    ap.add_argument("--divergences", default="quad,tsallis:1.5")
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ns = tuple(int(n) for n in args.ns.split(","))
    for div in args.divergences.split(","):
        cfg = RateExperimentConfig(d=args.d, epsilon=args.epsilon, divergence=div, ns=ns,
                                   reps=args.reps, base_seed=args.seed, threads=args.threads)
        t0 = time.perf_counter()
        recs = run_rate_experiment(cfg)
        fit = slope_fit(recs)
        stem = f"rates_{div.replace(':', '')}_d{args.d}"
        write_records_csv(recs, out / f"{stem}.csv")
        summary = fit.to_dict() | {"seconds": time.perf_counter() - t0,
                                   "failed": sum(r.failed for r in recs)}
        (out / f"{stem}.json").write_text(json.dumps(summary, indent=2))
        print(f"{div:12s} d={args.d}  alpha={fit.alpha:+.3f} (se {fit.stderr:.3f})  "
              f"{summary['seconds']:.1f}s")


if __name__ == "__main__":
    main()
