"""MINRES for symmetric operators, batched right-hand sides, and Rademacher probes.

The solver runs one unpreconditioned MINRES recurrence per right-hand side.
Batches are advanced together, but every reduction is taken along a row so a
batched solve reproduces the sequential one exactly.
"""

from dataclasses import dataclass, field

import numpy as np

DEFAULT_TOL = 1e-6


class NumericalBreakdown(ArithmeticError):
    def __init__(self, iteration, message="non-finite value in MINRES"):
        super().__init__("{} at iteration {}".format(message, iteration))
        self.iteration = iteration


@dataclass
class SolveReport:
    solution: np.ndarray
    iterations: int
    residual: float
    converged: bool
    tolerance: float
    residual_history: np.ndarray = field(repr=False, default=None)
    error: Exception = None


def _row_dot(a, b):
    return (a * b).sum(axis=-1)


def batch_solve(op, rhs, tol=DEFAULT_TOL, max_iter=None, callback=None):
    """Solve ``op x = b`` for each row ``b`` of ``rhs`` with MINRES.

    Returns one :class:`SolveReport` per row.  ``residual`` is the MINRES
    estimate of ``|b - op x| / |b|``, which is non-increasing by construction.
    A row that hits a non-finite value stops with ``error`` set; the others
    continue.  ``callback(iteration, x)`` sees the full iterate array.
    """
    b = np.atleast_2d(np.asarray(rhs, dtype=np.float64))
    k, n = b.shape
    if n != op.order:
        raise ValueError("right-hand side length {} != operator order {}".format(n, op.order))
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    if max_iter is None:
        max_iter = 2 * n
    eps = np.finfo(np.float64).eps

    beta1 = np.sqrt(_row_dot(b, b))
    if np.any(beta1 == 0) or not np.all(np.isfinite(beta1)):
        raise ValueError("right-hand sides must be nonzero and finite")

    x = np.zeros_like(b)
    y = b.copy()
    r1 = b.copy()
    r2 = b.copy()
    w = np.zeros_like(b)
    w2 = np.zeros_like(b)
    oldb = np.zeros(k)
    beta = beta1.copy()
    dbar = np.zeros(k)
    epsln = np.zeros(k)
    phibar = beta1.copy()
    cs = -np.ones(k)
    sn = np.zeros(k)

    iterations = np.zeros(k, dtype=int)
    history = [[1.0] for _ in range(k)]
    errors = [None] * k
    active = np.arange(k)

    itn = 0
    while active.size and itn < max_iter:
        itn += 1
        a = active
        v = y[a] / beta[a, None]
        ya = op.matvec(v)
        if itn >= 2:
            ya = ya - (beta[a] / oldb[a])[:, None] * r1[a]
        alfa = _row_dot(v, ya)
        ya = ya - (alfa / beta[a])[:, None] * r2[a]
        r1[a] = r2[a]
        r2[a] = ya
        y[a] = ya
        oldb[a] = beta[a]
        beta_a = np.sqrt(_row_dot(ya, ya))
        beta[a] = beta_a

        oldeps = epsln[a]
        delta = cs[a] * dbar[a] + sn[a] * alfa
        gbar = sn[a] * dbar[a] - cs[a] * alfa
        epsln[a] = sn[a] * beta_a
        dbar[a] = -cs[a] * beta_a
        gamma = np.maximum(np.hypot(gbar, beta_a), eps)
        cs[a] = gbar / gamma
        sn[a] = beta_a / gamma
        phi = cs[a] * phibar[a]
        phibar[a] = sn[a] * phibar[a]

        w1 = w2[a]
        w2[a] = w[a]
        w[a] = (v - oldeps[:, None] * w1 - delta[:, None] * w2[a]) / gamma[:, None]
        x[a] = x[a] + phi[:, None] * w[a]
        iterations[a] = itn

        rel = phibar[a] / beta1[a]
        finite = np.isfinite(rel) & np.all(np.isfinite(x[a]), axis=1)
        keep = np.ones(a.size, dtype=bool)
        for j, row in enumerate(a):
            if not finite[j]:
                errors[row] = NumericalBreakdown(itn)
                keep[j] = False
                continue
            history[row].append(rel[j])
            if rel[j] <= tol or beta_a[j] == 0:
                keep[j] = False
        if callback is not None:
            callback(itn, x)
        active = a[keep]

    reports = []
    for row in range(k):
        rel = phibar[row] / beta1[row]
        reports.append(
            SolveReport(
                solution=x[row],
                iterations=int(iterations[row]),
                residual=float(rel),
                converged=bool(errors[row] is None and rel <= tol),
                tolerance=tol,
                residual_history=np.array(history[row]),
                error=errors[row],
            )
        )
    return reports


def minres(op, b, tol=DEFAULT_TOL, max_iter=None, callback=None):
    """Single right-hand side MINRES; raises :class:`NumericalBreakdown` on NaN/Inf."""
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 1:
        raise ValueError("minres expects a vector right-hand side")
    report = batch_solve(op, b[None, :], tol, max_iter, callback)[0]
    if report.error is not None:
        raise report.error
    return report


@dataclass(frozen=True)
class ProbeSet:
    vectors: np.ndarray
    seed: int

    def __len__(self):
        return self.vectors.shape[0]


def sample_rademacher(n, num_probes, seed):
    if n < 1 or num_probes < 1:
        raise ValueError("need n, N >= 1")
    rng = np.random.default_rng(seed)
    vectors = rng.integers(0, 2, size=(num_probes, n)).astype(np.float64) * 2 - 1
    return ProbeSet(vectors, seed)


def trace_terms(inv_probes, deriv_op, probes):
    """Per-probe values ``(K^-1 r_i) . (dK r_i)``; their mean estimates the trace."""
    inv_probes = np.atleast_2d(inv_probes)
    probes = np.atleast_2d(getattr(probes, "vectors", probes))
    if inv_probes.shape[0] == 0 or inv_probes.shape != probes.shape:
        raise ValueError("need matching, nonempty probe and solution sets")
    return _row_dot(inv_probes, deriv_op.matvec(probes))


def trace_estimate(inv_probes, deriv_op, probes):
    """Stochastic estimate of ``tr(K^-1 dK)`` from probes and their solves."""
    return float(trace_terms(inv_probes, deriv_op, probes).mean())
