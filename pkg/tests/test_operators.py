import time

import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given, settings
from hypothesis import strategies as st

from llgp.operators import (
    Bttb,
    BlockDiagOp,
    DenseOp,
    DiagonalOp,
    FactorCongruenceOp,
    GridToeplitz,
    KroneckerOp,
    SumOp,
    SymmetricToeplitz,
    ToeplitzBlockMatrix,
    bttb_mvm,
    circulant_embed,
    kronecker_mvm,
    materialize,
    toeplitz_mvm,
)


def dense_bttb(table):
    """Pairwise materialization straight from lag differences."""
    nx, ny = table.shape
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    ix, iy = ix.ravel(), iy.ravel()
    return table[np.abs(ix[:, None] - ix[None]), np.abs(iy[:, None] - iy[None])]


def rbf_table(nx, ny, ell=1.5):
    gx, gy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    return np.exp(-(gx**2 + gy**2) / (2 * ell**2))


class TestCirculantEmbed:
    def test_hand_dft(self):
        spec = circulant_embed([2, 1, 0])
        assert spec.embed_order == 4
        np.testing.assert_allclose(spec.first_column(), [2, 1, 0, 1], atol=1e-15)
        np.testing.assert_allclose(spec.eigenvalues, [4, 2, 0, 2], atol=1e-14)

    def test_identity(self):
        spec = circulant_embed([1, 0, 0])
        np.testing.assert_allclose(spec.eigenvalues, np.ones(4), atol=1e-15)

    def test_round_trip(self, rng):
        top = rng.standard_normal(16)
        spec = circulant_embed(top)
        col = np.fft.ifft(spec.eigenvalues).real
        assert spec.embed_order >= 2 * 16 - 2
        np.testing.assert_allclose(col[:16], top, atol=1e-12)
        np.testing.assert_allclose(col[spec.embed_order - 15:], top[:0:-1], atol=1e-12)

    def test_order_one(self):
        spec = circulant_embed([3.0])
        assert spec.embed_order == 1
        np.testing.assert_allclose(spec.eigenvalues, [3.0])

    def test_padded_to_power_of_two(self, rng):
        # 2n - 2 = 2 * 37 is not 5-smooth
        top = rng.standard_normal(38)
        spec = circulant_embed(top)
        assert spec.embed_order == 128
        col = spec.first_column()
        np.testing.assert_allclose(col[:38], top, atol=1e-12)
        np.testing.assert_allclose(col[38:91], 0, atol=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            circulant_embed([])


class TestToeplitz:
    def test_hand(self):
        np.testing.assert_allclose(toeplitz_mvm(SymmetricToeplitz([2, 1, 0]), np.ones(3)), [3, 4, 3])

    def test_identity(self, rng):
        z = rng.standard_normal(9)
        np.testing.assert_allclose(SymmetricToeplitz(np.eye(9)[0]).matvec(z), z, atol=1e-14)

    @pytest.mark.parametrize("n", [1, 2, 3, 38, 64, 100])
    def test_dense(self, rng, n):
        top = rng.standard_normal(n)
        z = rng.standard_normal(n)
        dense = la.toeplitz(top)
        out = SymmetricToeplitz(top).matvec(z)
        assert np.linalg.norm(out - dense @ z) <= 1e-10 * np.linalg.norm(dense @ z)

    def test_batched_rows(self, rng):
        op = SymmetricToeplitz(rng.standard_normal(20))
        z = rng.standard_normal((5, 20))
        batched = op.matvec(z)
        for i in range(5):
            np.testing.assert_array_equal(batched[i], op.matvec(z[i]))

    def test_size_mismatch(self):
        with pytest.raises(ValueError, match="size mismatch"):
            SymmetricToeplitz([1, 0, 0]).matvec(np.ones(4))

    def test_subquadratic(self, rng):
        def best_time(n):
            op = SymmetricToeplitz(np.exp(-np.arange(n) / 50.0))
            z = rng.standard_normal(n)
            op.matvec(z)
            times = []
            for _ in range(15):
                t0 = time.perf_counter()
                op.matvec(z)
                times.append(time.perf_counter() - t0)
            return min(times)

        assert best_time(2**15) / best_time(2**14) < 3


class TestBttb:
    def test_constant_kernel(self, rng):
        z = rng.standard_normal(12)
        np.testing.assert_allclose(bttb_mvm(Bttb(np.ones(12), (3, 4)), z), np.full(12, z.sum()), atol=1e-12)

    def test_identity(self, rng):
        gen = np.zeros(12)
        gen[0] = 1
        z = rng.standard_normal(12)
        np.testing.assert_allclose(Bttb(gen, (4, 3)).matvec(z), z, atol=1e-14)

    def test_rbf_4x4(self, rng):
        table = rbf_table(4, 4)
        z = rng.standard_normal(16)
        expected = dense_bttb(table) @ z
        out = Bttb(table.ravel(), (4, 4)).matvec(z)
        assert np.linalg.norm(out - expected) <= 1e-10 * np.linalg.norm(expected)

    def test_block_layout(self):
        table = rbf_table(3, 5)
        dense = Bttb(table.ravel(), (3, 5)).materialize()
        for a in range(3):
            for b in range(3):
                np.testing.assert_allclose(dense[5 * a:5 * a + 5, 5 * b:5 * b + 5], la.toeplitz(table[abs(a - b)]), atol=1e-12)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            Bttb(np.ones(12), (3, 4)).matvec(np.ones(11))


class TestKronecker:
    def test_hand(self):
        op = KroneckerOp([[1, 0], [0, 2]], SymmetricToeplitz([1, 0]))
        np.testing.assert_allclose(kronecker_mvm(op, np.array([1.0, 2, 3, 4])), [1, 2, 6, 8], atol=1e-14)

    def test_identity(self, rng):
        z = rng.standard_normal(6)
        op = KroneckerOp(np.eye(3), SymmetricToeplitz([1, 0]))
        np.testing.assert_allclose(op.matvec(z), z, atol=1e-14)

    def test_dense(self, rng):
        B = rng.standard_normal((3, 3))
        B = B + B.T
        top = rng.standard_normal(8)
        z = rng.standard_normal(24)
        expected = np.kron(B, la.toeplitz(top)) @ z
        out = KroneckerOp(B, SymmetricToeplitz(top)).matvec(z)
        assert np.linalg.norm(out - expected) <= 1e-10 * np.linalg.norm(expected)

    @pytest.mark.parametrize("pattern", ["onehot", "ranktwo", "zero"])
    def test_sparse_factors(self, rng, pattern):
        d = 4
        B = np.zeros((d, d))
        if pattern == "onehot":
            B[2, 2] = 1.5
        elif pattern == "ranktwo":
            a = rng.standard_normal(d)
            B[1, :] += a
            B[:, 1] += a
        top = rng.standard_normal(7)
        z = rng.standard_normal((3, d * 7))
        np.testing.assert_allclose(
            KroneckerOp(B, SymmetricToeplitz(top)).matvec(z), z @ np.kron(B, la.toeplitz(top)).T, atol=1e-12
        )

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            KroneckerOp(np.eye(2), SymmetricToeplitz([1, 0, 0])).matvec(np.ones(5))


class TestComposites:
    def test_materialize_small(self):
        np.testing.assert_array_equal(materialize(SymmetricToeplitz([2, 1])), [[2, 1], [1, 2]])
        np.testing.assert_array_equal(materialize(DiagonalOp([1, 2])), np.diag([1.0, 2.0]))

    def test_sum(self, rng):
        a, b = rng.standard_normal(10), rng.standard_normal(10)
        np.testing.assert_allclose(
            SumOp([SymmetricToeplitz(a), SymmetricToeplitz(b)]).materialize(),
            la.toeplitz(a) + la.toeplitz(b),
            atol=1e-12,
        )

    def test_materialize_cap(self):
        with pytest.raises(MemoryError):
            DiagonalOp(np.ones(5000)).materialize()
        assert DiagonalOp(np.ones(50)).materialize(cap=50).shape == (50, 50)

    def test_block_diag(self, rng):
        blocks = [SymmetricToeplitz(rng.standard_normal(4)), DiagonalOp(rng.uniform(1, 2, 3))]
        expected = la.block_diag(*(b.materialize() for b in blocks))
        np.testing.assert_allclose(BlockDiagOp(blocks).materialize(), expected, atol=1e-12)

    def test_stacked_toeplitz_is_block_diagonal(self, rng):
        tops = rng.standard_normal((3, 6))
        op = GridToeplitz(tops, (6,))
        np.testing.assert_allclose(op.materialize(), la.block_diag(*(la.toeplitz(t) for t in tops)), atol=1e-12)

    def test_block_toeplitz_matrix(self, rng):
        d, m = 3, 9
        tables = rng.standard_normal((d, d, m))
        tables = tables + tables.transpose(1, 0, 2)
        expected = np.block([[la.toeplitz(tables[i, j]) for j in range(d)] for i in range(d)])
        np.testing.assert_allclose(ToeplitzBlockMatrix(tables, (m,)).materialize(), expected, atol=1e-12)

    def test_factor_congruence(self, rng):
        d, k, m = 3, 2, 5
        F = rng.standard_normal((d, k))
        tops = rng.standard_normal((k, m))
        inner = la.block_diag(*(la.toeplitz(t) for t in tops))
        big = np.kron(F, np.eye(m))
        op = FactorCongruenceOp(F, GridToeplitz(tops, (m,)), m)
        np.testing.assert_allclose(op.materialize(), big @ inner @ big.T, atol=1e-12)

    def test_dense_requires_symmetry(self):
        with pytest.raises(ValueError):
            DenseOp([[1, 2], [0, 1]])


def _random_operator(rng, kind, n_hint):
    """A random operator paired with an independently built dense matrix."""
    if kind == "toeplitz":
        t = rng.standard_normal(n_hint)
        return SymmetricToeplitz(t), la.toeplitz(t)
    if kind == "bttb":
        nx = max(2, n_hint // 8)
        table = rng.standard_normal((nx, 8))
        return Bttb(table.ravel(), (nx, 8)), dense_bttb(table)
    if kind == "kronecker":
        B = rng.standard_normal((3, 3))
        t = rng.standard_normal(max(1, n_hint // 3))
        return KroneckerOp(B + B.T, SymmetricToeplitz(t)), np.kron(B + B.T, la.toeplitz(t))
    if kind == "blockdiag":
        t, d = rng.standard_normal(5), rng.standard_normal(4)
        return BlockDiagOp([SymmetricToeplitz(t), DiagonalOp(d)]), la.block_diag(la.toeplitz(t), np.diag(d))
    if kind == "sum":
        t, d = rng.standard_normal(n_hint), rng.standard_normal(n_hint)
        return SumOp([SymmetricToeplitz(t), DiagonalOp(d)]), la.toeplitz(t) + np.diag(d)
    if kind == "dense":
        M = rng.standard_normal((n_hint, n_hint))
        return DenseOp(M + M.T), M + M.T
    d = rng.standard_normal(n_hint)
    return DiagonalOp(d), np.diag(d)


@settings(max_examples=60, deadline=None)
@given(
    kind=st.sampled_from(["toeplitz", "bttb", "kronecker", "blockdiag", "sum", "dense", "diagonal"]),
    n=st.integers(1, 256),
    seed=st.integers(0, 2**32 - 1),
)
def test_mvm_matches_dense_oracle_and_is_symmetric(kind, n, seed):
    rng = np.random.default_rng(seed)
    op, dense = _random_operator(rng, kind, n)
    scale = max(1.0, np.linalg.norm(dense, 2))
    z = rng.standard_normal(op.order)
    w = rng.standard_normal(op.order)
    assert np.linalg.norm(op.matvec(z) - dense @ z) <= 1e-10 * scale * np.linalg.norm(z)
    np.testing.assert_allclose(op.materialize(), dense, atol=1e-10 * scale)
    assert abs(z @ op.matvec(w) - w @ op.matvec(z)) <= 1e-10 * scale * np.linalg.norm(z) * np.linalg.norm(w)
