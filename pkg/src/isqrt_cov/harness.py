"""Experiment drivers behind the command-line tool: gradient-check grids,
convergence sweeps over the iteration count, and meta-layer timing."""
from __future__ import annotations

import itertools
import math
import statistics
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import cov_pool, isqrt_layer, oracle_check
from .isqrt_layer import MetaLayerConfig, Mode
from .matrix_core import jacobi_eig
from .oracle_check import GradReport


def gradcheck_grid(ds: Sequence[int], iters: Sequence[int], modes: Sequence[Mode | str],
                   seeds: Sequence[int], n: int | None = None, tol: float = 1e-6) -> list[GradReport]:
    """One :class:`GradReport` per (d, N, mode, seed); ``n`` defaults to ``2 d``."""
    reports = []
    for d, it, mode, seed in itertools.product(ds, iters, modes, seeds):
        reports.append(oracle_check.check_gradients(d, n if n else 2 * d, it, mode, seed, tol))
    return reports


# --- convergence -----------------------------------------------------------

@dataclass
class ConvergenceRecord:
    iterations: int
    rel_residual: float
    rel_error: float
    cond: float

    CSV_HEADER = "N,rel_residual,rel_error,cond"

    def csv_row(self) -> str:
        return f"{self.iterations},{self.rel_residual:.6e},{self.rel_error:.6e},{self.cond:.6e}"


def random_spd(d: int, seed: int, n: int | None = None) -> np.ndarray:
    """Covariance of ``n = 4 d`` standard-normal features (seeded)."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n or 4 * d, d))
    return cov_pool.covariance_forward(x)


def condition_number(sigma) -> float:
    lam = jacobi_eig(sigma).eigenvalues
    # nonincreasing order: last entry is the smallest eigenvalue
    return float(lam[0] / lam[-1]) if lam[-1] > 0 else math.inf


def convergence_sweep(sigma, max_iters: int, mode: Mode | str = Mode.TRACE) -> list[ConvergenceRecord]:
    """Residual ``||C_N^2 - Sigma||_F / ||Sigma||_F`` and error against the exact root for N = 1..max."""
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    sigma = np.asarray(sigma, dtype=np.float64)
    root = oracle_check.exact_sqrt(sigma)
    root_norm = float(np.linalg.norm(root))
    sigma_norm = float(np.linalg.norm(sigma))
    cond = condition_number(sigma)
    records = []
    for it in range(1, max_iters + 1):
        c = isqrt_layer.forward_inference(sigma, MetaLayerConfig(mode=mode, iterations=it)).c
        residual = float(np.linalg.norm(c @ c - sigma)) / sigma_norm
        err = float(np.linalg.norm(c - root)) / root_norm
        records.append(ConvergenceRecord(it, residual, err, cond))
    return records


# --- timing ----------------------------------------------------------------

@dataclass
class BenchRecord:
    method: str
    d: int
    batch: int
    iterations: int      # 0 for the eigendecomposition path
    repeats: int
    forward_ms: float
    forward_backward_ms: float  # nan where no backward is timed
    std_ms: float

    CSV_HEADER = "method,d,batch,N,repeats,forward_ms,forward_backward_ms,std_ms"

    def csv_row(self) -> str:
        return (f"{self.method},{self.d},{self.batch},{self.iterations},{self.repeats},"
                f"{self.forward_ms:.4f},{self.forward_backward_ms:.4f},{self.std_ms:.4f}")


def _timed(fn, repeats: int) -> list[float]:
    """Wall-clock milliseconds per repeat, after one discarded warm-up call."""
    fn()
    out = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        out.append((time.perf_counter() - t0) * 1e3)
    return out


def _bench_inputs(d: int, batch: int, seed: int):
    sigmas = [random_spd(d, seed + i) for i in range(batch)]
    rng = np.random.default_rng(seed)
    dvecs = [rng.standard_normal(isqrt_layer.vec_size(d)) for _ in range(batch)]
    return sigmas, dvecs


def bench_ns(d: int, iterations: int, batch: int = 1, repeats: int = 20, seed: int = 0) -> BenchRecord:
    if repeats < 3:
        raise ValueError("repeats must be >= 3")
    sigmas, dvecs = _bench_inputs(d, batch, seed)
    cfg = MetaLayerConfig(iterations=iterations)

    def fwd():
        for s in sigmas:
            isqrt_layer.forward(s, cfg)

    def fwd_bwd():
        for s, g in zip(sigmas, dvecs):
            _, tape = isqrt_layer.forward(s, cfg)
            isqrt_layer.backward(tape, g)

    f = _timed(fwd, repeats)
    fb = _timed(fwd_bwd, repeats)
    return BenchRecord(f"ns_N{iterations}", d, batch, iterations, repeats,
                       statistics.fmean(f), statistics.fmean(fb), statistics.stdev(fb))


def bench_eig(d: int, batch: int = 1, repeats: int = 20, seed: int = 0) -> BenchRecord:
    """Forward of the exact normalization ``sqrt(Sigma)`` via the Jacobi eigensolver."""
    if repeats < 3:
        raise ValueError("repeats must be >= 3")
    sigmas, _ = _bench_inputs(d, batch, seed)

    def fwd():
        for s in sigmas:
            oracle_check.exact_sqrt(s)

    f = _timed(fwd, repeats)
    return BenchRecord("eig", d, batch, 0, repeats, statistics.fmean(f), math.nan, statistics.stdev(f))


def bench(d: int = 256, iters: Iterable[int] = (3, 5), batch: int = 1, repeats: int = 20,
          seed: int = 0) -> list[BenchRecord]:
    """Benchmarks run strictly one after another."""
    records = [bench_ns(d, it, batch, repeats, seed) for it in iters]
    records.append(bench_eig(d, batch, repeats, seed))
    return records
