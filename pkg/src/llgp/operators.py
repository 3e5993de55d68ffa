"""Structured symmetric linear operators exposed through matrix-vector products.

Every operator acts on the last axis of its argument, so a batch of vectors
stored as rows of a ``(k, n)`` array is multiplied in one call.  Leading axes
are carried through untouched, which keeps per-row results independent of the
batch size.
"""

import logging

import numpy as np
import scipy.fft

_LOG = logging.getLogger(__name__)

MATERIALIZE_CAP = 4096


class StructuredOperator:
    """Square symmetric linear map of a fixed order.

    Subclasses implement :meth:`_matvec` for arrays whose last axis has
    length :attr:`order`.
    """

    def __init__(self, order):
        order = int(order)
        if order < 1:
            raise ValueError("operator order must be positive, got {}".format(order))
        self.order = order

    @property
    def shape(self):
        return (self.order, self.order)

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 0 or x.shape[-1] != self.order:
            raise ValueError(
                "size mismatch: operator of order {} applied to array of shape {}".format(
                    self.order, x.shape
                )
            )
        return self._matvec(x)

    def _matvec(self, x):
        raise NotImplementedError

    def __matmul__(self, x):
        return self.matvec(x)

    def materialize(self, cap=MATERIALIZE_CAP):
        """Dense matrix obtained by applying the operator to the identity."""
        if self.order > cap:
            raise MemoryError(
                "refusing to materialize operator of order {} (cap {})".format(self.order, cap)
            )
        # rows of the identity are basis vectors; the operator is symmetric
        return self.matvec(np.eye(self.order)).T.copy()

    def __repr__(self):
        return "{}(order={})".format(type(self).__name__, self.order)


def _embed_length(n):
    # minimal symmetric embedding 2n - 2, else next power of two >= 2n - 1
    if n == 1:
        return 1
    minimal = 2 * n - 2
    if scipy.fft.next_fast_len(minimal, real=True) == minimal:
        return minimal
    return 1 << (2 * n - 2).bit_length()


def _embed_column(top, length):
    """First column of a symmetric circulant of ``length`` containing ``top``."""
    n = len(top)
    col = np.zeros(length)
    col[:n] = top
    if n > 1:
        col[length - n + 1:] = top[:0:-1]
    return col


class CirculantSpectrum:
    """Eigenvalues of a symmetric circulant embedding of a Toeplitz matrix."""

    def __init__(self, eigenvalues, embed_order):
        self.eigenvalues = eigenvalues
        self.embed_order = embed_order

    def first_column(self):
        return np.fft.ifft(self.eigenvalues).real


def circulant_embed(top_row):
    """Embed the symmetric Toeplitz matrix with ``top_row`` into a circulant.

    Returns the full DFT of the circulant's first column.  The embedding has
    order ``2n - 2`` when that length is FFT-friendly, otherwise the next
    power of two, zero-padded in the middle of the column.
    """
    top = np.asarray(top_row, dtype=np.float64).ravel()
    if top.size == 0:
        raise ValueError("cannot embed an empty Toeplitz row")
    length = _embed_length(top.size)
    return CirculantSpectrum(np.fft.fft(_embed_column(top, length)), length)


def _embed_table(table, embed_shape):
    """Symmetric multi-dimensional extension of a lag table (lags >= 0)."""
    out = table
    for axis, length in zip(range(-len(embed_shape), 0), embed_shape):
        n = out.shape[axis]
        pad_shape = list(out.shape)
        pad_shape[axis] = length
        ext = np.zeros(pad_shape)
        idx = [slice(None)] * out.ndim
        idx[axis] = slice(0, n)
        ext[tuple(idx)] = out
        if n > 1:
            dst = [slice(None)] * out.ndim
            src = [slice(None)] * out.ndim
            dst[axis] = slice(length - n + 1, length)
            src[axis] = slice(n - 1, 0, -1)
            ext[tuple(dst)] = out[tuple(src)]
        out = ext
    return out


class GridToeplitz(StructuredOperator):
    """Multilevel symmetric Toeplitz operator generated by a lag table.

    ``table`` has shape ``(*batch, *grid_shape)`` where the trailing axes index
    nonnegative lags.  With a nonempty ``batch`` the operator is block diagonal,
    one Toeplitz block per leading index, and acts on inputs whose last axis is
    the flattened ``(*batch, *grid_shape)``.
    """

    def __init__(self, table, grid_shape):
        grid_shape = tuple(int(s) for s in grid_shape)
        table = np.asarray(table, dtype=np.float64)
        nd = len(grid_shape)
        if nd not in (1, 2):
            raise ValueError("only 1-D and 2-D grids are supported")
        if table.ndim < nd or table.shape[table.ndim - nd:] != grid_shape:
            raise ValueError(
                "lag table shape {} does not end with grid shape {}".format(table.shape, grid_shape)
            )
        self.table = table
        self.grid_shape = grid_shape
        self.batch_shape = table.shape[: table.ndim - nd]
        self.block_order = int(np.prod(grid_shape))
        super().__init__(self.block_order * int(np.prod(self.batch_shape, dtype=int)))
        self.embed_shape = tuple(_embed_length(n) for n in grid_shape)
        axes = tuple(range(-nd, 0))
        self._axes = axes
        self.spectrum = scipy.fft.rfftn(_embed_table(table, self.embed_shape), s=self.embed_shape, axes=axes)
        self.spectrum.setflags(write=False)
        self._crop = (Ellipsis,) + tuple(slice(0, n) for n in grid_shape)

    def _matvec(self, x):
        lead = x.shape[:-1]
        xs = x.reshape(lead + self.batch_shape + self.grid_shape)
        xf = scipy.fft.rfftn(xs, s=self.embed_shape, axes=self._axes)
        xf *= self.spectrum
        out = scipy.fft.irfftn(xf, s=self.embed_shape, axes=self._axes)[self._crop]
        return np.ascontiguousarray(out).reshape(x.shape)


class SymmetricToeplitz(GridToeplitz):
    """Symmetric Toeplitz matrix with entry ``(i, j) = top_row[|i - j|]``."""

    def __init__(self, top_row):
        top = np.asarray(top_row, dtype=np.float64).ravel()
        if top.size == 0:
            raise ValueError("empty Toeplitz row")
        super().__init__(top, (top.size,))
        self.top_row = top


class Bttb(GridToeplitz):
    """Symmetric block-Toeplitz matrix with Toeplitz blocks on an ``nx x ny`` grid.

    ``generating_rows`` lists the covariance at lag pair ``(i, j)`` with the
    x-lag major, so block ``(a, b)`` is the Toeplitz matrix for x-lag
    ``|a - b|``.
    """

    def __init__(self, generating_rows, grid_shape):
        nx, ny = (int(s) for s in grid_shape)
        gen = np.asarray(generating_rows, dtype=np.float64)
        if gen.size != nx * ny:
            raise ValueError("expected {} generating values, got {}".format(nx * ny, gen.size))
        super().__init__(gen.reshape(nx, ny), (nx, ny))


def toeplitz_operator(table, grid_shape):
    if len(grid_shape) == 1:
        return SymmetricToeplitz(np.ravel(table))
    return Bttb(np.ravel(table), grid_shape)


def toeplitz_mvm(op, z):
    return op.matvec(z)


def bttb_mvm(op, z):
    return op.matvec(z)


class ToeplitzBlockMatrix(StructuredOperator):
    """Dense ``D x D`` block matrix whose blocks are Toeplitz/BTTB on one grid.

    ``tables`` has shape ``(D, D, *grid_shape)`` and must be symmetric in its
    first two axes.  Inputs are transformed once per block column and the
    block products are summed in the frequency domain.
    """

    def __init__(self, tables, grid_shape):
        grid_shape = tuple(int(s) for s in grid_shape)
        tables = np.asarray(tables, dtype=np.float64)
        d = tables.shape[0]
        if tables.shape != (d, d) + grid_shape:
            raise ValueError("block tables shape {} inconsistent with grid {}".format(tables.shape, grid_shape))
        self.blocks = d
        self.grid_shape = grid_shape
        self.block_order = int(np.prod(grid_shape))
        super().__init__(d * self.block_order)
        self.embed_shape = tuple(_embed_length(n) for n in grid_shape)
        self._axes = tuple(range(-len(grid_shape), 0))
        spec = scipy.fft.rfftn(_embed_table(tables, self.embed_shape), s=self.embed_shape, axes=self._axes)
        # (D, D, F) with F the flattened half spectrum
        self.spectrum = spec.reshape(d, d, -1)
        self._spec_shape = spec.shape[2:]
        self._crop = (Ellipsis,) + tuple(slice(0, n) for n in grid_shape)

    def _matvec(self, x):
        lead = x.shape[:-1]
        xs = x.reshape(lead + (self.blocks,) + self.grid_shape)
        xf = scipy.fft.rfftn(xs, s=self.embed_shape, axes=self._axes)
        xf = xf.reshape(lead + (self.blocks, 1, -1))
        # out_i = sum_j S_ij x_j, summed explicitly for batch-independent rounding
        yf = np.zeros(lead + (self.blocks, xf.shape[-1]), dtype=complex)
        for j in range(self.blocks):
            yf += self.spectrum[:, j, :] * xf[..., j, :, :]
        yf = yf.reshape(lead + (self.blocks,) + self._spec_shape)
        out = scipy.fft.irfftn(yf, s=self.embed_shape, axes=self._axes)[self._crop]
        return np.ascontiguousarray(out).reshape(x.shape)


def _left_multiply(left, x):
    """``out[..., i, :] = sum_j left[i, j] * x[..., j, :]`` with a fixed summation order."""
    out = np.zeros(x.shape[:-2] + (left.shape[0], x.shape[-1]))
    for j in range(left.shape[1]):
        col = left[:, j]
        if np.any(col):
            out += col[:, None] * x[..., j:j + 1, :]
    return out


class KroneckerOp(StructuredOperator):
    """``left (x) right`` for a small dense symmetric ``left`` of order D.

    Block rows and columns of ``left`` that are identically zero are skipped,
    so one-hot and rank-two factors touch only the blocks they involve.
    """

    def __init__(self, left, right):
        left = np.atleast_2d(np.asarray(left, dtype=np.float64))
        if left.shape[0] != left.shape[1]:
            raise ValueError("left Kronecker factor must be square, got {}".format(left.shape))
        self.left = left
        self.right = right
        self.blocks = left.shape[0]
        super().__init__(self.blocks * right.order)
        self._rows = np.flatnonzero(np.any(left != 0, axis=1))
        self._cols = np.flatnonzero(np.any(left != 0, axis=0))

    def _matvec(self, x):
        lead = x.shape[:-1]
        m = self.right.order
        xs = x.reshape(lead + (self.blocks, m))
        out = np.zeros_like(xs)
        rows, cols = self._rows, self._cols
        if rows.size == 0:
            return out.reshape(x.shape)
        sub = self.left[np.ix_(rows, cols)]
        if cols.size <= rows.size:
            kx = self.right.matvec(np.ascontiguousarray(xs[..., cols, :]))
            out[..., rows, :] = _left_multiply(sub, kx)
        else:
            mixed = _left_multiply(sub, xs[..., cols, :])
            out[..., rows, :] = self.right.matvec(mixed)
        return out.reshape(x.shape)


def kronecker_mvm(op, z):
    return op.matvec(z)


class FactorCongruenceOp(StructuredOperator):
    """``(F (x) I_m) inner (F (x) I_m)^T`` for a ``D x k`` factor ``F``.

    ``inner`` acts on ``k`` stacked blocks of order m; with ``inner`` block
    diagonal this is the rank-structured part of a semiparametric latent
    factor kernel.
    """

    def __init__(self, factor, inner, block_order):
        factor = np.atleast_2d(np.asarray(factor, dtype=np.float64))
        if inner.order != factor.shape[1] * block_order:
            raise ValueError("inner operator order does not match factor columns")
        self.factor = factor
        self.inner = inner
        self.block_order = block_order
        super().__init__(factor.shape[0] * block_order)

    def _matvec(self, x):
        lead = x.shape[:-1]
        d, k = self.factor.shape
        xs = x.reshape(lead + (d, self.block_order))
        reduced = _left_multiply(self.factor.T, xs)
        inner = self.inner.matvec(reduced.reshape(lead + (k * self.block_order,)))
        out = _left_multiply(self.factor, inner.reshape(lead + (k, self.block_order)))
        return out.reshape(x.shape)


class BlockDiagOp(StructuredOperator):
    def __init__(self, blocks):
        blocks = list(blocks)
        if not blocks:
            raise ValueError("block diagonal operator needs at least one block")
        self.blocks = blocks
        self._offsets = np.cumsum([0] + [b.order for b in blocks])
        super().__init__(int(self._offsets[-1]))

    def _matvec(self, x):
        out = np.empty_like(x)
        for b, lo, hi in zip(self.blocks, self._offsets[:-1], self._offsets[1:]):
            out[..., lo:hi] = b.matvec(np.ascontiguousarray(x[..., lo:hi]))
        return out


class SumOp(StructuredOperator):
    def __init__(self, terms):
        terms = list(terms)
        if not terms:
            raise ValueError("sum operator needs at least one term")
        orders = {t.order for t in terms}
        if len(orders) != 1:
            raise ValueError("summands have different orders: {}".format(sorted(orders)))
        self.terms = terms
        super().__init__(orders.pop())

    def _matvec(self, x):
        out = self.terms[0].matvec(x)
        for t in self.terms[1:]:
            out = out + t.matvec(x)
        return out


class DiagonalOp(StructuredOperator):
    def __init__(self, diagonal):
        diagonal = np.asarray(diagonal, dtype=np.float64).ravel()
        super().__init__(diagonal.size)
        self.diagonal = diagonal

    def _matvec(self, x):
        return x * self.diagonal


class DenseOp(StructuredOperator):
    def __init__(self, matrix, check_symmetric=True):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("dense operator must be square, got {}".format(matrix.shape))
        if check_symmetric and not np.allclose(matrix, matrix.T, rtol=1e-12, atol=1e-12):
            raise ValueError("dense operator must be symmetric")
        super().__init__(matrix.shape[0])
        self.matrix = matrix

    def _matvec(self, x):
        return x @ self.matrix.T


class ZeroOp(StructuredOperator):
    def _matvec(self, x):
        return np.zeros_like(x)


class InterpolatedOp(StructuredOperator):
    """``W inner W^T + diag(noise)`` with a sparse CSR interpolation matrix ``W``."""

    def __init__(self, weights, inner, noise=None):
        if weights.shape[1] != inner.order:
            raise ValueError(
                "interpolation matrix has {} columns but grid operator has order {}".format(
                    weights.shape[1], inner.order
                )
            )
        super().__init__(weights.shape[0])
        self.weights = weights.tocsr()
        self._weights_t = self.weights.T.tocsr()
        self.inner = inner
        if noise is not None:
            noise = np.asarray(noise, dtype=np.float64).ravel()
            if noise.size != self.order:
                raise ValueError("noise diagonal length {} != {}".format(noise.size, self.order))
        self.noise = noise

    def interpolate_transpose(self, x):
        lead = x.shape[:-1]
        flat = x.reshape(-1, self.order)
        return np.ascontiguousarray((self._weights_t @ flat.T).T).reshape(lead + (self.inner.order,))

    def interpolate(self, u):
        lead = u.shape[:-1]
        flat = u.reshape(-1, self.inner.order)
        return np.ascontiguousarray((self.weights @ flat.T).T).reshape(lead + (self.order,))

    def _matvec(self, x):
        out = self.interpolate(self.inner.matvec(self.interpolate_transpose(x)))
        if self.noise is not None:
            out += x * self.noise
        return out


def materialize(op, cap=MATERIALIZE_CAP):
    return op.materialize(cap)
