"""Meta-layer timing at several sizes; writes one CSV per size to ``bench_d<d>.csv``."""
import sys

from isqrt_cov.cli import main

if __name__ == "__main__":
    sizes = sys.argv[1:] or ["64", "128", "256"]
    for d in sizes:
        main(["bench", "--d", d, "--iters", "1,3,5,7", "--repeats", "20", "--out", f"bench_d{d}.csv"])
        print(f"wrote bench_d{d}.csv")
