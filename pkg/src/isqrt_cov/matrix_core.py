"""Dense real matrices: primitive ops, a cyclic Jacobi eigensolver and text I/O.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 and shape
``(rows, cols)``.  The functions here validate shapes and finiteness so the
layers built on top can assume well-formed input.
"""
from __future__ import annotations

import io
import os
from dataclasses import dataclass
from typing import IO, Iterable, Union

import numpy as np
from numba import njit

SYM_TOL = 1e-12
JACOBI_TOL = 1e-14
JACOBI_MAX_SWEEPS = 100


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NotConvergedError(RuntimeError):
    """Jacobi sweeps exhausted before the off-diagonal mass vanished."""

    def __init__(self, residual: float, sweeps: int):
        super().__init__(
            f"Jacobi eigensolver did not converge after {sweeps} sweeps "
            f"(off-diagonal norm {residual:.3e})"
        )
        self.residual = residual
        self.sweeps = sweeps


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` to a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def _square(a, name: str = "matrix") -> np.ndarray:
    m = as_matrix(a, name)
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {m.shape}")
    return m


def identity(d: int) -> np.ndarray:
    return np.eye(d, dtype=np.float64)


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def transpose(a) -> np.ndarray:
    return as_matrix(a).T.copy()


def trace(m) -> float:
    return float(np.trace(_square(m)))


def frobenius_norm(m) -> float:
    return float(np.linalg.norm(as_matrix(m), "fro"))


def symmetrize(m) -> np.ndarray:
    """Return ``(m + m^T) / 2``."""
    m = _square(m)
    return 0.5 * (m + m.T)


def is_symmetric(m, tol: float = SYM_TOL) -> bool:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    scale = max(1.0, float(np.linalg.norm(m, "fro")))
    return bool(np.max(np.abs(m - m.T), initial=0.0) <= tol * scale)


def off_diagonal_norm(m) -> float:
    m = np.asarray(m, dtype=np.float64)
    return float(np.sqrt(max(np.sum(m * m) - np.sum(np.diag(m) ** 2), 0.0)))


@dataclass(frozen=True)
class EigDecomposition:
    """``m = eigenvectors @ diag(eigenvalues) @ eigenvectors.T``.

    Eigenvalues are sorted nonincreasing, so the smallest one is the last.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int = 0

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.T


@njit(cache=True)
def _jacobi_kernel(a, tol, max_sweeps):
    # Cyclic-by-row Jacobi; ``a`` is overwritten and ends up (nearly) diagonal.
    d = a.shape[0]
    vt = np.eye(d)
    target = tol * np.sqrt(np.sum(a * a))
    off = 0.0
    for sweep in range(max_sweeps + 1):
        off = 0.0
        for i in range(d):
            for j in range(d):
                if i != j:
                    off += a[i, j] * a[i, j]
        off = np.sqrt(off)
        if off <= target:
            return vt.T.copy(), off, sweep, True
        if sweep == max_sweeps:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                tau = (aqq - app) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for k in range(d):
                    if k == p or k == q:
                        continue
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(d):
                    if k == p or k == q:
                        continue
                    a[k, p] = a[p, k]
                    a[k, q] = a[q, k]
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                # vt holds V transposed so the update runs along rows
                for k in range(d):
                    vpk = vt[p, k]
                    vqk = vt[q, k]
                    vt[p, k] = c * vpk - s * vqk
                    vt[q, k] = s * vpk + c * vqk
    return vt.T.copy(), off, max_sweeps, False


def jacobi_eig(m, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS) -> EigDecomposition:
    """Eigendecomposition of a symmetric matrix by cyclic-by-row Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm falls to
    ``tol * ||m||_F``.  Raises :class:`NotConvergedError` after ``max_sweeps``.
    """
    m = _square(m)
    if not is_symmetric(m):
        raise ValueError("jacobi_eig requires a symmetric matrix")
    work = np.array(m, dtype=np.float64, order="C", copy=True)
    v, off, sweeps, ok = _jacobi_kernel(work, tol, max_sweeps)
    if not ok:
        raise NotConvergedError(off, sweeps)
    w = np.diag(work).copy()
    order = np.argsort(-w, kind="stable")
    return EigDecomposition(w[order], np.ascontiguousarray(v[:, order]), sweeps)


# --- text format -----------------------------------------------------------

PathOrFile = Union[str, os.PathLike, IO[str]]


def format_matrix(m, comments: Iterable[str] = ()) -> str:
    m = as_matrix(m)
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    buf.write(f"{m.shape[0]} {m.shape[1]}\n")
    for row in m:
        buf.write(" ".join("%.17g" % x for x in row))
        buf.write("\n")
    return buf.getvalue()


def parse_matrix(text: str) -> np.ndarray:
    lines = text.splitlines()
    pos = 0
    while pos < len(lines) and (not lines[pos].strip() or lines[pos].lstrip().startswith("#")):
        pos += 1
    if pos == len(lines):
        raise ValueError("matrix text has no header line")
    header = lines[pos].split()
    if len(header) != 2:
        raise ValueError(f"bad header line {lines[pos]!r}; expected 'rows cols'")
    rows, cols = int(header[0]), int(header[1])
    if rows < 1 or cols < 1:
        raise ValueError(f"bad matrix size {rows}x{cols}")
    body = [ln for ln in lines[pos + 1:] if ln.strip()]
    if len(body) != rows:
        raise ValueError(f"expected {rows} data rows, found {len(body)}")
    data = []
    for r, ln in enumerate(body):
        vals = ln.split()
        if len(vals) != cols:
            raise ValueError(f"row {r} has {len(vals)} values, expected {cols}")
        data.append([float(x) for x in vals])
    return as_matrix(np.array(data))


def read_matrix(src: PathOrFile) -> np.ndarray:
    if hasattr(src, "read"):
        return parse_matrix(src.read())
    with open(src, encoding="ascii") as fh:
        return parse_matrix(fh.read())


def write_matrix(m, dst: PathOrFile, comments: Iterable[str] = ()) -> None:
    text = format_matrix(m, comments)
    if hasattr(dst, "write"):
        dst.write(text)
    else:
        with open(dst, "w", encoding="ascii") as fh:
            fh.write(text)
