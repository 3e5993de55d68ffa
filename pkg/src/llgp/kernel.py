"""LMC kernels, their hyperparameter vectors, and grid covariance operators.

The kernel between ``(i, x)`` and ``(j, z)`` is
``sum_q B_q[i, j] k_q(|x - z|)`` with ``B_q = A_q A_q^T + diag(kappa_q)`` and
unit-variance stationary subkernels ``k_q``.  Coregionalization diagonals,
lengthscales and per-output noise are optimized in log space.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from .operators import (
    DiagonalOp,
    FactorCongruenceOp,
    GridToeplitz,
    InterpolatedOp,
    KroneckerOp,
    StructuredOperator,
    SumOp,
    ToeplitzBlockMatrix,
    ZeroOp,
)

SUBKERNEL_KINDS = ("rbf",)


def _check_kind(kind):
    if kind not in SUBKERNEL_KINDS:
        raise ValueError("unknown subkernel kind {!r}; supported: {}".format(kind, SUBKERNEL_KINDS))


def subkernel_eval(kind, lengthscale, r):
    """Unit-variance stationary subkernel at distance ``r``."""
    _check_kind(kind)
    if not lengthscale > 0:
        raise ValueError("lengthscale must be positive, got {}".format(lengthscale))
    r = np.asarray(r, dtype=np.float64)
    return np.exp(-0.5 * (r / lengthscale) ** 2)


def subkernel_log_lengthscale_derivative(kind, lengthscale, r):
    """Derivative of the subkernel with respect to ``log(lengthscale)``."""
    k = subkernel_eval(kind, lengthscale, r)
    return k * (np.asarray(r) / lengthscale) ** 2


def assemble_Bq(A, kappa):
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    kappa = np.asarray(kappa, dtype=np.float64).ravel()
    if np.any(kappa < 0):
        raise ValueError("coregionalization diagonal must be nonnegative, got {}".format(kappa))
    if A.shape[0] != kappa.size:
        raise ValueError("A has {} rows but kappa has {} entries".format(A.shape[0], kappa.size))
    return A @ A.T + np.diag(kappa)


@dataclass(frozen=True)
class HyperparameterEntry:
    kind: str  # "A", "kappa", "lengthscale" or "noise"
    q: int
    row: int
    col: int

    @property
    def name(self):
        if self.kind == "A":
            return "A[{}][{},{}]".format(self.q, self.row, self.col)
        if self.kind == "kappa":
            return "log_kappa[{}][{}]".format(self.q, self.row)
        if self.kind == "lengthscale":
            return "log_lengthscale[{}]".format(self.q)
        return "log_noise[{}]".format(self.row)


@dataclass
class LmcKernel:
    """Hyperparameters of an LMC kernel with ``Q`` RBF subkernels and ``D`` outputs."""

    A: list
    kappa: list
    lengthscales: np.ndarray
    noise: np.ndarray
    kinds: tuple = field(default=None)

    def __post_init__(self):
        self.A = [np.atleast_2d(np.asarray(a, dtype=np.float64)).reshape(len(self.noise), -1) for a in self.A]
        self.kappa = [np.asarray(k, dtype=np.float64).ravel() for k in self.kappa]
        self.lengthscales = np.asarray(self.lengthscales, dtype=np.float64).ravel()
        self.noise = np.asarray(self.noise, dtype=np.float64).ravel()
        if self.kinds is None:
            self.kinds = ("rbf",) * len(self.A)
        self.kinds = tuple(self.kinds)
        q, d = len(self.A), self.noise.size
        if not (len(self.kappa) == q == self.lengthscales.size == len(self.kinds)):
            raise ValueError("inconsistent number of subkernels")
        if q < 1 or d < 1:
            raise ValueError("need at least one subkernel and one output")
        for kind in self.kinds:
            _check_kind(kind)
        for a, k in zip(self.A, self.kappa):
            if a.shape[0] != d or k.size != d:
                raise ValueError("coregionalization factors must have D={} rows".format(d))
            if np.any(k < 0):
                raise ValueError("kappa entries must be nonnegative")
        if np.any(self.lengthscales <= 0):
            raise ValueError("lengthscales must be positive")
        if np.any(self.noise <= 0):
            raise ValueError("noise levels must be positive")

    @property
    def num_outputs(self):
        return self.noise.size

    @property
    def num_subkernels(self):
        return len(self.A)

    @property
    def ranks(self):
        return [a.shape[1] for a in self.A]

    def coregionalization(self, q):
        return assemble_Bq(self.A[q], self.kappa[q])

    def coregionalizations(self):
        return [self.coregionalization(q) for q in range(self.num_subkernels)]

    def index_map(self):
        entries = []
        d = self.num_outputs
        for q, r in enumerate(self.ranks):
            entries += [HyperparameterEntry("A", q, i, j) for i in range(d) for j in range(r)]
            entries += [HyperparameterEntry("kappa", q, i, 0) for i in range(d)]
            entries.append(HyperparameterEntry("lengthscale", q, 0, 0))
        entries += [HyperparameterEntry("noise", 0, i, 0) for i in range(d)]
        return entries

    @property
    def num_hyperparameters(self):
        d = self.num_outputs
        return sum(d * r + d + 1 for r in self.ranks) + d

    def pack(self):
        parts = []
        with np.errstate(divide="ignore"):
            for q in range(self.num_subkernels):
                parts += [self.A[q].ravel(), np.log(self.kappa[q]), [np.log(self.lengthscales[q])]]
            parts.append(np.log(self.noise))
        return np.concatenate(parts)

    def unpack(self, theta):
        """New kernel with the same structure and hyperparameters ``theta``."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self.num_hyperparameters:
            raise ValueError("expected {} hyperparameters, got {}".format(self.num_hyperparameters, theta.size))
        d = self.num_outputs
        pos = 0
        A, kappa, ls = [], [], []
        for r in self.ranks:
            A.append(theta[pos:pos + d * r].reshape(d, r))
            pos += d * r
            kappa.append(np.exp(theta[pos:pos + d]))
            pos += d
            ls.append(np.exp(theta[pos]))
            pos += 1
        return LmcKernel(A, kappa, np.array(ls), np.exp(theta[pos:pos + d]), self.kinds)

    def subkernel(self, q, r):
        return subkernel_eval(self.kinds[q], self.lengthscales[q], r)

    def prior_variance(self):
        """Noise-free prior variance of each output."""
        return sum(np.diag(B) for B in self.coregionalizations())

    def to_dict(self):
        return {
            "kinds": list(self.kinds),
            "A": [a.tolist() for a in self.A],
            "kappa": [k.tolist() for k in self.kappa],
            "lengthscales": self.lengthscales.tolist(),
            "noise": self.noise.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        noise = np.asarray(d["noise"], dtype=np.float64)
        A = [np.asarray(a, dtype=np.float64).reshape(noise.size, -1) for a in d["A"]]
        return cls(A, d["kappa"], d["lengthscales"], noise, tuple(d["kinds"]))


def initial_kernel(num_outputs, ranks, rng, input_range=1.0, kinds=None):
    """Starting point for optimization on standardized data."""
    q = len(ranks)
    if q == 1:
        ls = np.array([0.1])
    else:
        ls = np.geomspace(0.1, 1.0, q)
    return LmcKernel(
        [rng.standard_normal((num_outputs, r)) for r in ranks],
        [np.full(num_outputs, 0.25) for _ in ranks],
        ls * input_range,
        np.full(num_outputs, 0.1),
        kinds,
    )


def lag_table(fn, grid):
    """Evaluate ``fn(r)`` at every nonnegative lag of the grid, shape ``grid.shape``."""
    lags = np.meshgrid(*(grid.spacing[p] * np.arange(grid.counts[p]) for p in range(grid.input_dim)), indexing="ij")
    r = np.sqrt(sum(l**2 for l in lags))
    return fn(r)


def grid_kernel_rows(kernel, q, grid):
    return lag_table(lambda r: kernel.subkernel(q, r), grid)


def grid_kernel_derivative_rows(kernel, q, grid):
    return lag_table(lambda r: subkernel_log_lengthscale_derivative(kernel.kinds[q], kernel.lengthscales[q], r), grid)


class Representation(str, enum.Enum):
    SUM = "sum"
    BT = "bt"
    SLFM = "slfm"


def select_representation(num_outputs, num_subkernels, ranks):
    """Block-Toeplitz when ``D^2 <= Q R + D`` (ties included), SLFM otherwise."""
    if num_outputs < 1 or num_subkernels < 1:
        raise ValueError("need D, Q >= 1")
    avg_rank = sum(ranks) / num_subkernels
    if num_outputs**2 <= num_subkernels * avg_rank + num_outputs:
        return Representation.BT
    return Representation.SLFM


class GridKernelOperator(StructuredOperator):
    """Noise-free covariance over ``[D] x U`` in one of three structured forms."""

    def __init__(self, representation, operator):
        super().__init__(operator.order)
        self.representation = Representation(representation)
        self.operator = operator

    def _matvec(self, x):
        return self.operator.matvec(x)


def build_grid_operator(kernel, grid, representation=Representation.SUM):
    representation = Representation(representation)
    d, m = kernel.num_outputs, grid.size
    rows = [grid_kernel_rows(kernel, q, grid) for q in range(kernel.num_subkernels)]
    Bs = kernel.coregionalizations()
    expand = (slice(None),) * 2 + (None,) * grid.input_dim
    if representation is Representation.SUM:
        op = SumOp([KroneckerOp(B, GridToeplitz(row, grid.shape)) for B, row in zip(Bs, rows)])
    elif representation is Representation.BT:
        tables = sum(B[expand] * row[None, None] for B, row in zip(Bs, rows))
        op = ToeplitzBlockMatrix(tables, grid.shape)
    else:
        diag_tables = sum(k[(slice(None),) + (None,) * grid.input_dim] * row[None] for k, row in zip(kernel.kappa, rows))
        terms = [GridToeplitz(diag_tables, grid.shape)]
        if sum(kernel.ranks):
            factor = np.hstack(kernel.A)
            latent = np.stack([row for row, r in zip(rows, kernel.ranks) for _ in range(r)])
            terms.insert(0, FactorCongruenceOp(factor, GridToeplitz(latent, grid.shape), m))
        op = SumOp(terms)
    if op.order != d * m:
        raise ValueError("grid operator order mismatch")
    return GridKernelOperator(representation, op)


class SkiOperator(InterpolatedOp):
    """``W K_grid W^T + diag(noise)`` over the observations."""

    def __init__(self, weights, grid_operator, noise):
        super().__init__(weights, grid_operator, noise)
        self.grid_operator = grid_operator


def _weights_matrix(weights):
    return getattr(weights, "matrix", weights)


def build_ski_operator(kernel, grid, weights, dataset, representation=Representation.SUM):
    W = _weights_matrix(weights)
    if W.shape != (dataset.n, kernel.num_outputs * grid.size):
        raise ValueError(
            "interpolation matrix shape {} does not match n={}, D*m={}".format(
                W.shape, dataset.n, kernel.num_outputs * grid.size
            )
        )
    grid_op = build_grid_operator(kernel, grid, representation)
    return SkiOperator(W, grid_op, kernel.noise[dataset.outputs])


def derivative_operators(kernel, grid, weights, dataset):
    """One operator per hyperparameter, in :meth:`LmcKernel.index_map` order.

    Each operator is the derivative of the interpolated covariance with
    respect to that hyperparameter (log-space for kappa, lengthscale, noise).
    """
    W = _weights_matrix(weights)
    d = kernel.num_outputs
    ops = []
    for q in range(kernel.num_subkernels):
        Kq = GridToeplitz(grid_kernel_rows(kernel, q, grid), grid.shape)
        A = kernel.A[q]
        for i in range(d):
            for r in range(A.shape[1]):
                dB = np.zeros((d, d))
                dB[i, :] += A[:, r]
                dB[:, i] += A[:, r]
                ops.append(InterpolatedOp(W, KroneckerOp(dB, Kq)))
        for i in range(d):
            dB = np.zeros((d, d))
            dB[i, i] = kernel.kappa[q][i]
            ops.append(InterpolatedOp(W, KroneckerOp(dB, Kq)))
        dKq = GridToeplitz(grid_kernel_derivative_rows(kernel, q, grid), grid.shape)
        ops.append(InterpolatedOp(W, KroneckerOp(kernel.coregionalization(q), dKq)))
    for i in range(d):
        diag = np.where(dataset.outputs == i, kernel.noise[i], 0.0)
        ops.append(DiagonalOp(diag) if np.any(diag) else ZeroOp(dataset.n))
    return ops
