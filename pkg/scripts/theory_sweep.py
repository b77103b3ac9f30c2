"""Convergence of the (1+lambda) switch search on the bit-string model.

Measures mean generations to the optimum for several offspring counts and
reports how the product generations x lambda stays flat, alongside the
closed-form drift bound 2 k(n-k) sum_{j<=k} 1/j^2 for the lambda=1 case.

Usage: python scripts/theory_sweep.py [--n 32] [--k 8] [--lambdas 1,2,4,8]
"""

import argparse
import sys
from pathlib import Path

from evopress.theory_harness import measure_convergence, write_stats_csv


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=32)
    parser.add_argument("--k", type=int, default=8)
    parser.add_argument("--lambdas", default="1,2,4,8")
    parser.add_argument("--trials", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="runs/theory_sweep.csv")
    args = parser.parse_args(argv)

    lambdas = [int(x) for x in args.lambdas.split(",") if x]
    bound = 2 * args.k * (args.n - args.k) * sum(
        1 / (j * j) for j in range(1, args.k + 1)
    )
    print(f"n={args.n} k={args.k}, {args.trials} trials per lambda")
    print(f"drift bound for lambda=1: {bound:.1f} generations\n")
    print(f"{'lambda':>6}  {'mean gens':>9}  {'std':>7}  {'gens*lambda':>11}  {'mean evals':>10}")

    results = []
    for lam in lambdas:
        stats = measure_convergence(
            n=args.n, k=args.k, lam=lam, trials=args.trials, rng_seed=args.seed + lam
        )
        results.append(stats)
        print(
            f"{lam:>6}  {stats.mean_generations:>9.1f}  {stats.std_generations:>7.1f}"
            f"  {stats.mean_generations * lam:>11.1f}  {stats.mean_evaluations:>10.1f}"
        )

    work = [s.mean_generations * s.lam for s in results]
    if len(work) > 1:
        print(f"\nwork ratio max/min: {max(work) / min(work):.2f}")

    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_stats_csv(results, args.out)
    print(f"stats written to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
