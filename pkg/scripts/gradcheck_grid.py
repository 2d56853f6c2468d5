"""Full gradient-check grid: d in {1,2,4,8}, n = 2d, N in {1,3,5}, both modes, seeds 1-3."""
import sys

from isqrt_cov.cli import main

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "gradcheck.csv"
    sys.exit(main(["gradcheck", "--d", "1,2,4,8", "--iters", "1,3,5", "--mode", "both",
                   "--seed", "1,2,3", "--out", out]))
