"""Common interpolation grid and sparse cubic-convolution weights.

Weights use the Keys cubic convolution kernel with ``a = -1/2``.  Each
observation interpolates from the 4**P grid nodes around it, placed in the
column block of the output it belongs to.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

_LOG = logging.getLogger(__name__)

PADDING_CELLS = 3
KEYS_A = -0.5


class OutOfGridError(ValueError):
    pass


@dataclass(frozen=True)
class InterpolationGrid:
    """Uniform tensor grid given by per-dimension start, spacing and node count."""

    lower: tuple
    spacing: tuple
    counts: tuple

    @property
    def input_dim(self):
        return len(self.counts)

    @property
    def size(self):
        return int(np.prod(self.counts))

    @property
    def shape(self):
        return tuple(self.counts)

    def nodes(self, p):
        return self.lower[p] + self.spacing[p] * np.arange(self.counts[p])

    def points(self):
        """All nodes, lexicographic with the first dimension major, shape (m, P)."""
        mesh = np.meshgrid(*(self.nodes(p) for p in range(self.input_dim)), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def to_dict(self):
        return {"lower": list(self.lower), "spacing": list(self.spacing), "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(map(float, d["lower"])), tuple(map(float, d["spacing"])), tuple(map(int, d["counts"])))


def grid_for_inputs(x, m_per_dim):
    """Grid spanning the rows of ``x`` with ``PADDING_CELLS`` spare cells per side."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    m_per_dim = np.broadcast_to(np.asarray(m_per_dim, dtype=int), (x.shape[1],))
    lower, spacing = [], []
    for p, m in enumerate(m_per_dim):
        if m < 8:
            raise ValueError("need at least 8 grid nodes per dimension, got {}".format(m))
        lo, hi = x[:, p].min(), x[:, p].max()
        if not hi > lo:
            raise ValueError("degenerate input range in dimension {}: all inputs equal {}".format(p, lo))
        # (m - 1) h = (hi - lo) + 2 * PADDING_CELLS * h
        h = (hi - lo) / (m - 1 - 2 * PADDING_CELLS)
        lower.append(float(lo - PADDING_CELLS * h))
        spacing.append(float(h))
    return InterpolationGrid(tuple(lower), tuple(spacing), tuple(int(m) for m in m_per_dim))


def build_grid(data, m_per_dim):
    """Grid covering the union of all outputs' standardized input ranges."""
    if data.n == 0:
        raise ValueError("cannot build a grid without data")
    data.require_all_outputs()
    return grid_for_inputs(data.x, m_per_dim)


def cubic_weight(s):
    """Keys cubic convolution kernel; zero for ``|s| >= 2``."""
    s = np.abs(np.asarray(s, dtype=np.float64))
    a = KEYS_A
    near = (a + 2) * s**3 - (a + 3) * s**2 + 1
    far = a * s**3 - 5 * a * s**2 + 8 * a * s - 4 * a
    return np.where(s <= 1, near, np.where(s < 2, far, 0.0))


def _stencil_1d(coord, lower, spacing, count, clamp, tol=1e-9):
    """Node indices (k, 4) and weights (k, 4) for 1-D coordinates."""
    s = (coord - lower) / spacing
    bad = (s < 1 - tol) | (s > count - 2 + tol)
    if np.any(bad):
        if not clamp:
            i = int(np.flatnonzero(bad)[0])
            raise OutOfGridError(
                "point {!r} lies outside the interpolation grid interior [{}, {}]".format(
                    float(coord[i]), lower + spacing, lower + (count - 2) * spacing
                )
            )
        _LOG.warning("%d point(s) outside the grid interior were clamped to the boundary stencil", int(bad.sum()))
        s = np.clip(s, 1.0, count - 2.0)
    base = np.clip(np.floor(s).astype(np.intp), 1, count - 3)
    idx = base[:, None] + np.arange(-1, 3)[None, :]
    return idx, cubic_weight(s[:, None] - idx)


class InterpolationWeights:
    """Sparse ``n x (D m)`` interpolation matrix in CSR form, 4**P entries per row."""

    def __init__(self, matrix, num_outputs, grid):
        self.matrix = matrix
        self.num_outputs = num_outputs
        self.grid = grid

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def nnz_per_row(self):
        return 4**self.grid.input_dim


def weight_matrix(grid, outputs, x, num_outputs, clamp=False):
    """Interpolation weights for points ``x`` (standardized) owned by ``outputs``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    outputs = np.asarray(outputs, dtype=np.intp)
    if x.shape[1] != grid.input_dim:
        raise ValueError("input dimension {} does not match grid dimension {}".format(x.shape[1], grid.input_dim))
    n = x.shape[0]
    idx, w = _stencil_1d(x[:, 0], grid.lower[0], grid.spacing[0], grid.counts[0], clamp)
    if grid.input_dim == 2:
        idy, wy = _stencil_1d(x[:, 1], grid.lower[1], grid.spacing[1], grid.counts[1], clamp)
        my = grid.counts[1]
        idx = (idx[:, :, None] * my + idy[:, None, :]).reshape(n, 16)
        w = (w[:, :, None] * wy[:, None, :]).reshape(n, 16)
    k = idx.shape[1]
    cols = idx + (outputs * grid.size)[:, None]
    matrix = sp.csr_matrix(
        (w.ravel(), cols.ravel(), np.arange(0, n * k + 1, k)),
        shape=(n, num_outputs * grid.size),
    )
    return matrix


def interp_weights(grid, data):
    """Interpolation weights for a training dataset; points must lie inside the grid."""
    m = weight_matrix(grid, data.outputs, data.x, data.num_outputs, clamp=False)
    return InterpolationWeights(m, data.num_outputs, grid)
