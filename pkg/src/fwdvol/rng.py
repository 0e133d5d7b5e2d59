"""Reproducible per-path Gaussian noise.

Each path gets its own counter-based substream keyed by (seed, path index),
so the increments a path sees depend only on those two integers — never on
batch size, chunking, or how many worker processes are running.  Uniforms
come straight from the raw 64-bit Philox output and are mapped through the
exact inverse normal CDF.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

__all__ = [
    "standard_normals",
    "path_increments",
    "increments_matrix",
    "coarsen_increments",
]

_INV_2_53 = 2.0 ** -53


def _raw_uniforms(seed: int, path_index: int, count: int) -> np.ndarray:
    """Uniforms in (0, 1), strictly inside, from the (seed, path) substream."""
    bits = np.random.Philox(key=[seed, path_index]).random_raw(count)
    # Top 53 bits, centered on the cell: u in [2^-54, 1 - 2^-54].
    return ((bits >> np.uint64(11)) + 0.5) * _INV_2_53


def standard_normals(seed: int, path_index: int, count: int) -> np.ndarray:
    """``count`` iid N(0,1) draws from the (seed, path_index) substream."""
    return ndtri(_raw_uniforms(seed, path_index, count))


def path_increments(seed, path_index, n_steps, n_factors, dt) -> np.ndarray:
    """Brownian increments of one path: (n_steps, n_factors), variance dt."""
    z = standard_normals(seed, path_index, n_steps * n_factors)
    return z.reshape(n_steps, n_factors) * np.sqrt(dt)


def increments_matrix(seed, path_start, n_paths, n_steps, n_factors, dt) -> np.ndarray:
    """Increments for paths [path_start, path_start + n_paths): shape
    (n_paths, n_steps, n_factors).  Row i equals
    ``path_increments(seed, path_start + i, ...)`` exactly."""
    count = n_steps * n_factors
    raw = np.empty((n_paths, count))
    for i in range(n_paths):
        raw[i] = _raw_uniforms(seed, path_start + i, count)
    return ndtri(raw).reshape(n_paths, n_steps, n_factors) * np.sqrt(dt)


def coarsen_increments(dw: np.ndarray, factor: int) -> np.ndarray:
    """Aggregate fine increments into coarse ones by summing ``factor``
    consecutive steps, so coarse and fine grids share one Brownian path."""
    n_steps = dw.shape[-2]
    if factor < 1 or n_steps % factor:
        raise ValueError(f"cannot coarsen {n_steps} steps by a factor of {factor}")
    shape = dw.shape[:-2] + (n_steps // factor, factor, dw.shape[-1])
    return dw.reshape(shape).sum(axis=-2)
