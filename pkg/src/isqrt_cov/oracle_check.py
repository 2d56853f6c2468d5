"""Reference computations used to validate the meta-layer.

Nothing here shares code with the Newton-Schulz path: the exact square root
goes through the Jacobi eigensolver, and gradients are checked against
central finite differences of a black-box loss.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import cov_pool, isqrt_layer
from .isqrt_layer import MetaLayerConfig, Mode
from .matrix_core import as_matrix, jacobi_eig, symmetrize

ABS_FLOOR = 1e-8
CLAMP_REL = 1e-10


def exact_sqrt(sigma) -> np.ndarray:
    """Principal square root ``U diag(sqrt(lambda)) U^T`` of a symmetric PSD matrix.

    Eigenvalues above ``-1e-10 * ||sigma||_F`` are clamped to zero; anything
    more negative is treated as genuine indefiniteness and rejected.
    """
    sigma = symmetrize(as_matrix(sigma, "sigma"))
    eig = jacobi_eig(sigma)
    lam = eig.eigenvalues
    floor = -CLAMP_REL * float(np.linalg.norm(sigma, "fro"))
    if lam[-1] < floor:
        raise ValueError(f"matrix is indefinite: smallest eigenvalue {lam[-1]:.3e}")
    u = eig.eigenvectors
    return symmetrize((u * np.sqrt(np.clip(lam, 0.0, None))) @ u.T)


def scalar_ns(a: float, iterations: int) -> tuple[float, float]:
    """Scalar version of the coupled iteration; returns ``(y_N, z_N)``."""
    y, z = float(a), 1.0
    for _ in range(iterations):
        t = 0.5 * (3.0 - z * y)
        y, z = y * t, t * z
    return y, z


def plain_cov_head(sigma) -> np.ndarray:
    """Upper triangle of Sigma with no normalization at all."""
    return isqrt_layer.triu_vec(as_matrix(sigma, "sigma"))


def default_step(point) -> float:
    return 1e-5 * max(1.0, float(np.linalg.norm(point)))


_STENCILS = {
    2: ((1.0, 0.5), (-1.0, -0.5)),
    4: ((2.0, -1.0 / 12), (1.0, 8.0 / 12), (-1.0, -8.0 / 12), (-2.0, 1.0 / 12)),
}


def finite_diff_grad(loss: Callable[[np.ndarray], float], point, step: float | None = None,
                     order: int = 2) -> np.ndarray:
    """Entrywise central differences of a scalar loss.

    ``order=2`` is the usual ``(f(x + h e_ij) - f(x - h e_ij)) / 2h``;
    ``order=4`` uses the five-point stencil, whose truncation error is small
    enough to compare tiny gradient entries at a relative 1e-6.
    """
    if order not in _STENCILS:
        raise ValueError(f"order must be one of {sorted(_STENCILS)}, got {order}")
    x0 = as_matrix(point, "point")
    h = default_step(x0) if step is None else float(step)
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    grad = np.zeros_like(x0)
    x = x0.copy()
    for idx in np.ndindex(*x0.shape):
        orig = x[idx]
        acc = 0.0
        for offset, weight in _STENCILS[order]:
            x[idx] = orig + offset * h
            f = loss(x)
            if not math.isfinite(f):
                x[idx] = orig
                raise FloatingPointError(f"non-finite loss when perturbing index {idx}")
            acc += weight * f
        x[idx] = orig
        grad[idx] = acc / h
    return grad


@dataclass
class GradReport:
    d: int
    n: int
    iterations: int
    mode: str
    seed: int
    shape: tuple[int, int]
    max_rel_err: float
    max_abs_err: float
    worst_index: tuple[int, int]
    analytic_at_worst: float
    numeric_at_worst: float
    tol: float
    passed: bool

    CSV_HEADER = "d,n,N,mode,seed,max_rel_err,max_abs_err,worst_i,worst_j,pass"

    def csv_row(self) -> str:
        i, j = self.worst_index
        return (f"{self.d},{self.n},{self.iterations},{self.mode},{self.seed},"
                f"{self.max_rel_err:.6e},{self.max_abs_err:.6e},{i},{j},"
                f"{'true' if self.passed else 'false'}")


def compare_gradients(analytic, numeric, tol: float, floor: float = ABS_FLOOR) -> dict:
    """Relative error ``|a - n| / |n|`` over entries with ``|n| > floor``."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    abs_err = np.abs(analytic - numeric)
    mask = np.abs(numeric) > floor
    rel = np.zeros_like(abs_err)
    rel[mask] = abs_err[mask] / np.abs(numeric[mask])
    if mask.any():
        worst = np.unravel_index(int(np.argmax(np.where(mask, rel, -1.0))), rel.shape)
    else:
        worst = np.unravel_index(int(np.argmax(abs_err)), abs_err.shape)
    max_rel = float(rel.max()) if mask.any() else 0.0
    return dict(
        max_rel_err=max_rel,
        max_abs_err=float(abs_err.max()),
        worst_index=tuple(int(i) for i in worst),
        analytic_at_worst=float(analytic[worst]),
        numeric_at_worst=float(numeric[worst]),
        passed=bool(max_rel <= tol),
    )


def random_symmetric(rng: np.random.Generator, d: int) -> np.ndarray:
    g = rng.standard_normal((d, d))
    return 0.5 * (g + g.T)


def layer_loss_and_grad(x, probe, cfg: MetaLayerConfig) -> tuple[float, np.ndarray]:
    """Loss ``<probe, C(cov(x))>`` and its analytic gradient w.r.t. ``x``."""
    sigma = cov_pool.covariance_forward(x)
    out, tape = isqrt_layer.forward(sigma, cfg)
    d_sigma = isqrt_layer.backward_c(tape, probe)
    return float(np.sum(probe * out.c)), cov_pool.covariance_backward(x, d_sigma)


def check_gradients(d: int, n: int, iterations: int, mode: Mode | str, seed: int,
                    tol: float = 1e-6, step: float | None = None, order: int = 4) -> GradReport:
    """Analytic vs. finite-difference gradient of ``<G, C>`` w.r.t. the features.

    ``X`` has i.i.d. uniform[0, 1) entries and ``G`` is a random symmetric
    probe, both drawn from ``numpy.random.default_rng(seed)``.
    """
    if d < 1 or n < 1:
        raise ValueError("d and n must be positive")
    mode = Mode(mode)
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(n, d))
    probe = random_symmetric(rng, d)
    cfg = MetaLayerConfig(mode=mode, iterations=iterations)

    _, analytic = layer_loss_and_grad(x, probe, cfg)

    def loss(xp):
        c = isqrt_layer.forward(cov_pool.covariance_forward(xp), cfg)[0].c
        return float(np.sum(probe * c))

    numeric = finite_diff_grad(loss, x, step, order)
    cmp = compare_gradients(analytic, numeric, tol)
    return GradReport(d=d, n=n, iterations=iterations, mode=mode.value, seed=seed,
                      shape=x.shape, tol=tol, **cmp)
