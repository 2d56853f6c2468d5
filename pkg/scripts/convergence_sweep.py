"""Error of the iteration against the exact root as N grows, for a few sizes.

Prints a small table per size and both pre-normalization modes; the smallest
N reaching 1e-3 relative error is marked.
"""
import argparse

from isqrt_cov import harness
from isqrt_cov.isqrt_layer import Mode


def first_below(recs, tol):
    return next((r.iterations for r in recs if r.rel_error <= tol), None)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--sizes", default="8,16,64,128")
    ap.add_argument("--max-iters", type=int, default=14)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    for d in (int(s) for s in args.sizes.split(",")):
        sigma = harness.random_spd(d, args.seed)
        for mode in Mode:
            recs = harness.convergence_sweep(sigma, args.max_iters, mode)
            print(f"d={d:<4} mode={mode.value:<9} cond={recs[0].cond:7.2f}  "
                  f"N for rel err <= 1e-3: {first_below(recs, 1e-3)}")
            print("   " + " ".join(f"{r.rel_error:.1e}" for r in recs))


if __name__ == "__main__":
    main()
