"""Iterative matrix square root meta-layer.

Forward: pre-normalize Sigma by its trace (or Frobenius norm), run the coupled
Newton-Schulz iteration for a fixed number of steps, multiply the result by
the square root of the normalizer, and flatten the upper triangle.  Every
intermediate the backward pass needs is kept on an :class:`IterationTape`.

Backward follows the same three stages in reverse; only matrix products are
involved.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .matrix_core import ShapeError, as_matrix, jacobi_eig, symmetrize


def _sym(m: np.ndarray) -> np.ndarray:
    # unchecked symmetrize for the inner loops
    return 0.5 * (m + m.T)


def _finite(*ms: np.ndarray) -> bool:
    return math.isfinite(sum(float(np.sum(m)) for m in ms))


class Mode(str, enum.Enum):
    TRACE = "trace"
    FROBENIUS = "frobenius"


class DegenerateInput(ValueError):
    """Pre-normalization scalar is (numerically) zero, e.g. an all-zero covariance."""


class DivergenceError(FloatingPointError):
    def __init__(self, iteration: int):
        super().__init__(f"Newton-Schulz iteration produced non-finite values at step {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class MetaLayerConfig:
    mode: Mode = Mode.TRACE
    iterations: int = 5
    epsilon: float = 1e-12
    # Verify ||A - I||_2 < 1 with the eigen oracle before iterating (d <= 64 only).
    check_convergence: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


@dataclass
class IterationTape:
    sigma: np.ndarray
    normalizer: float
    a: np.ndarray
    ys: list[np.ndarray]
    zs: list[np.ndarray]
    mode: Mode = Mode.TRACE

    @property
    def iterations(self) -> int:
        return len(self.ys) - 1

    @property
    def y(self) -> np.ndarray:
        return self.ys[-1]

    def stored_matrices(self) -> int:
        """Number of d x d matrices kept for the backward pass (``2 (N + 1)``)."""
        return len(self.ys) + len(self.zs)


@dataclass
class LayerOutput:
    c: np.ndarray
    vec: np.ndarray = field(repr=False)


# --- vectorization ---------------------------------------------------------

def vec_size(d: int) -> int:
    return d * (d + 1) // 2


def triu_vec(m) -> np.ndarray:
    """Row-major upper triangle (diagonal included) of a square matrix."""
    m = np.asarray(m)
    return m[np.triu_indices(m.shape[0])].copy()


def _dim_from_vec(size: int) -> int:
    d = int((math.isqrt(8 * size + 1) - 1) // 2)
    if vec_size(d) != size:
        raise ShapeError(f"length {size} is not d(d+1)/2 for any d")
    return d


def sym_from_vec(vec, d: int | None = None) -> np.ndarray:
    """Inverse of :func:`triu_vec` for symmetric matrices."""
    vec = np.asarray(vec, dtype=np.float64)
    if d is None:
        d = _dim_from_vec(vec.size)
    elif vec.size != vec_size(d):
        raise ShapeError(f"vector has length {vec.size}, expected {vec_size(d)} for d={d}")
    m = np.zeros((d, d))
    iu = np.triu_indices(d)
    m[iu] = vec
    m.T[iu] = vec
    return m


def vec_adjoint(dvec, d: int) -> np.ndarray:
    """Map a gradient on the upper-triangle vector back to a symmetric ``d x d`` gradient.

    Off-diagonal entries are split in half between the two mirror positions so
    that ``<dC, dX> == <dvec, triu_vec(dX)>`` for every symmetric ``dX``.
    """
    dvec = np.asarray(dvec, dtype=np.float64).ravel()
    if dvec.size != vec_size(d):
        raise ShapeError(f"gradient vector has length {dvec.size}, expected {vec_size(d)} for d={d}")
    g = sym_from_vec(dvec, d)
    g *= 0.5
    g[np.diag_indices(d)] *= 2.0
    return g


# --- forward ---------------------------------------------------------------

def normalizer_of(sigma: np.ndarray, mode: Mode) -> float:
    if Mode(mode) is Mode.TRACE:
        return float(np.trace(sigma))
    return float(np.linalg.norm(sigma, "fro"))


def pre_normalize(sigma, mode: Mode | str = Mode.TRACE, epsilon: float = 1e-12) -> tuple[np.ndarray, float]:
    """Return ``(sigma / s, s)`` with ``s`` the trace or Frobenius norm of sigma."""
    sigma = as_matrix(sigma, "sigma")
    if sigma.shape[0] != sigma.shape[1]:
        raise ShapeError(f"sigma must be square, got {sigma.shape}")
    s = normalizer_of(sigma, Mode(mode))
    if not s >= epsilon:
        raise DegenerateInput(f"{Mode(mode).value} normalizer {s:.3e} is below epsilon {epsilon:.1e}")
    return sigma / s, s


def ns_forward(a, iterations: int, *, sigma=None, normalizer: float = 1.0,
               mode: Mode | str = Mode.TRACE) -> IterationTape:
    """Run ``iterations`` coupled Newton-Schulz steps from ``Y0 = a, Z0 = I``.

    ``Y_N`` approximates ``a^{1/2}`` and ``Z_N`` approximates ``a^{-1/2}``
    provided ``||a - I|| < 1``.
    """
    a = as_matrix(a, "a")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    d = a.shape[0]
    eye3 = 3.0 * np.eye(d)
    y, z = a, np.eye(d)
    ys, zs = [y], [z]
    for k in range(1, iterations + 1):
        t = 0.5 * (eye3 - z @ y)
        y, z = y @ t, t @ z
        if not _finite(y, z):
            raise DivergenceError(k)
        y, z = _sym(y), _sym(z)
        ys.append(y)
        zs.append(z)
    return IterationTape(sigma=a if sigma is None else sigma, normalizer=normalizer,
                         a=a, ys=ys, zs=zs, mode=Mode(mode))


def post_compensate(tape: IterationTape) -> LayerOutput:
    c = math.sqrt(tape.normalizer) * tape.y
    return LayerOutput(c=c, vec=triu_vec(c))


def _check_condition(a: np.ndarray) -> None:
    lam = jacobi_eig(symmetrize(a)).eigenvalues
    # nonincreasing order: lam[-1] is the smallest eigenvalue
    gap = max(abs(1.0 - lam[0]), abs(1.0 - lam[-1]))
    if not gap < 1.0:
        raise ValueError(f"||A - I||_2 = {gap:.6g} >= 1; Newton-Schulz would not converge")


def forward(sigma, cfg: MetaLayerConfig | None = None) -> tuple[LayerOutput, IterationTape]:
    cfg = cfg or MetaLayerConfig()
    sigma = as_matrix(sigma, "sigma")
    a, s = pre_normalize(sigma, cfg.mode, cfg.epsilon)
    if cfg.check_convergence and a.shape[0] <= 64:
        _check_condition(a)
    tape = ns_forward(a, cfg.iterations, sigma=sigma, normalizer=s, mode=cfg.mode)
    return post_compensate(tape), tape


def forward_inference(sigma, cfg: MetaLayerConfig | None = None) -> LayerOutput:
    """Forward pass that keeps only the running iterates, not their history."""
    cfg = cfg or MetaLayerConfig()
    a, s = pre_normalize(sigma, cfg.mode, cfg.epsilon)
    d = a.shape[0]
    eye3 = 3.0 * np.eye(d)
    y, z = a, np.eye(d)
    for k in range(1, cfg.iterations + 1):
        t = 0.5 * (eye3 - z @ y)
        y, z = y @ t, t @ z
        if not _finite(y, z):
            raise DivergenceError(k)
        y, z = _sym(y), _sym(z)
    c = math.sqrt(s) * y
    return LayerOutput(c=c, vec=triu_vec(c))


# --- backward --------------------------------------------------------------

def backward_post(tape: IterationTape, d_c) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of post-compensation: w.r.t. ``Y_N`` and the direct term w.r.t. Sigma."""
    d_c = as_matrix(d_c, "dC")
    if d_c.shape != tape.y.shape:
        raise ShapeError(f"dC has shape {d_c.shape}, expected {tape.y.shape}")
    s = tape.normalizer
    root = math.sqrt(s)
    d_y = root * d_c
    inner = float(np.sum(d_c * tape.y))  # tr(dC^T Y_N)
    if tape.mode is Mode.TRACE:
        d_sigma_post = (inner / (2.0 * root)) * np.eye(tape.y.shape[0])
    else:
        d_sigma_post = (inner / (2.0 * s ** 1.5)) * tape.sigma
    return d_y, d_sigma_post


def backward_ns(tape: IterationTape, d_y) -> np.ndarray:
    """Propagate ``dl/dY_N`` through the iteration down to ``dl/dA`` (with ``dl/dZ_N = 0``)."""
    n = tape.iterations
    if n < 1 or len(tape.zs) != len(tape.ys):
        raise ValueError(f"inconsistent tape: {len(tape.ys)} Y and {len(tape.zs)} Z matrices")
    d_y = symmetrize(d_y)
    d = d_y.shape[0]
    eye3 = 3.0 * np.eye(d)
    d_z = np.zeros((d, d))
    for k in range(n, 1, -1):
        y, z = tape.ys[k - 1], tape.zs[k - 1]
        yz = y @ z
        zy = z @ y
        d_y_prev = 0.5 * (d_y @ (eye3 - yz) - z @ d_z @ z - zy @ d_y)
        d_z_prev = 0.5 * ((eye3 - yz) @ d_z - y @ d_y @ y - d_z @ zy)
        d_y, d_z = _sym(d_y_prev), _sym(d_z_prev)
    a = tape.a
    return symmetrize(0.5 * (d_y @ (eye3 - a) - d_z - a @ d_y))


def backward_pre(sigma, d_a, d_sigma_post, mode: Mode | str = Mode.TRACE) -> np.ndarray:
    """Combine the gradient through ``A = sigma / s`` with the post-compensation term."""
    sigma = as_matrix(sigma, "sigma")
    d_a = as_matrix(d_a, "dA")
    d_sigma_post = as_matrix(d_sigma_post, "dSigma_post")
    if not (sigma.shape == d_a.shape == d_sigma_post.shape):
        raise ShapeError(f"shape mismatch: sigma {sigma.shape}, dA {d_a.shape}, dSigma_post {d_sigma_post.shape}")
    inner = float(np.sum(d_a * sigma))  # tr(dA^T Sigma)
    if Mode(mode) is Mode.TRACE:
        s = float(np.trace(sigma))
        g = -(inner / s ** 2) * np.eye(sigma.shape[0]) + d_a / s
    else:
        s = float(np.linalg.norm(sigma, "fro"))
        g = -(inner / s ** 3) * sigma + d_a / s
    return symmetrize(g + d_sigma_post)


def backward_c(tape: IterationTape, d_c) -> np.ndarray:
    """``dl/dSigma`` given ``dl/dC``."""
    d_y, d_sigma_post = backward_post(tape, d_c)
    d_a = backward_ns(tape, d_y)
    return backward_pre(tape.sigma, d_a, d_sigma_post, tape.mode)


def backward(tape: IterationTape, d_vec) -> np.ndarray:
    """``dl/dSigma`` given the gradient on the flattened output vector."""
    return backward_c(tape, vec_adjoint(d_vec, tape.y.shape[0]))
