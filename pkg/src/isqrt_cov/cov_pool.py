"""Second-order (covariance) pooling of a feature matrix and its gradient.

A feature matrix ``x`` is ``n x d``: one row per local feature.  The pooled
descriptor is ``x.T @ Ibar @ x`` with ``Ibar = (I - 1/n) / n``; ``Ibar`` is
applied implicitly (subtract column means, divide by n).
"""
from __future__ import annotations

import numpy as np

from .matrix_core import ShapeError, as_matrix

MATERIALIZE_MAX_N = 64


def centering_matrix(n: int) -> np.ndarray:
    """The ``n x n`` matrix ``(I - ones/n) / n``."""
    if n < 1:
        raise ValueError("n must be positive")
    return (np.eye(n) - np.full((n, n), 1.0 / n)) / n


def apply_centering(x) -> np.ndarray:
    """Return ``Ibar @ x`` without forming ``Ibar``."""
    x = as_matrix(x, "features")
    return (x - x.mean(axis=0, keepdims=True)) / x.shape[0]


def covariance_forward(x) -> np.ndarray:
    """Biased sample covariance ``(1/n) sum_i (x_i - xbar)(x_i - xbar)^T`` as a ``d x d`` matrix."""
    x = as_matrix(x, "features")
    xc = x - x.mean(axis=0, keepdims=True)
    sigma = (xc.T @ xc) / x.shape[0]
    return 0.5 * (sigma + sigma.T)


def covariance_forward_materialized(x) -> np.ndarray:
    """Same as :func:`covariance_forward` but through an explicit ``Ibar``; small n only."""
    x = as_matrix(x, "features")
    n = x.shape[0]
    if n > MATERIALIZE_MAX_N:
        raise ValueError(f"materialized centering limited to n <= {MATERIALIZE_MAX_N}, got {n}")
    sigma = x.T @ centering_matrix(n) @ x
    return 0.5 * (sigma + sigma.T)


def covariance_backward(x, d_sigma) -> np.ndarray:
    """Gradient w.r.t. ``x`` given the (possibly non-symmetric) gradient w.r.t. Sigma.

    Returns ``Ibar @ x @ (d_sigma + d_sigma.T)``.
    """
    x = as_matrix(x, "features")
    g = as_matrix(d_sigma, "covariance gradient")
    d = x.shape[1]
    if g.shape != (d, d):
        raise ShapeError(f"covariance gradient has shape {g.shape}, expected {(d, d)} for features {x.shape}")
    return apply_centering(x) @ (g + g.T)
