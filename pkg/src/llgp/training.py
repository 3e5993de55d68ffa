"""Stochastic log-likelihood gradients and AdaDelta hyperparameter training.

The likelihood itself is never evaluated.  Each iteration solves the
interpolated covariance against the responses and a fixed set of Rademacher
probes, forms the gradient from derivative-operator products, and takes an
AdaDelta step.  Training stops when the gradient infinity-norm falls below a
fraction of its running maximum often enough.
"""

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .interpolation import build_grid, interp_weights
from .kernel import Representation, build_ski_operator, derivative_operators, initial_kernel, select_representation
from .krylov import batch_solve, sample_rademacher

_LOG = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    def __init__(self, message, reports):
        super().__init__(message)
        self.reports = reports


class TrainingError(RuntimeError):
    """A training step failed; ``kernel`` holds the last good hyperparameters."""

    def __init__(self, message, kernel, log):
        super().__init__(message)
        self.kernel = kernel
        self.log = log


@dataclass
class GradientReport:
    gradient: np.ndarray
    data_fit: np.ndarray
    trace: np.ndarray
    trace_stderr: np.ndarray
    solver_iterations: list
    alpha: np.ndarray = field(repr=False)


def log_likelihood_gradient(ski, y, probes, deriv_ops, tol=1e-6, max_iter=None):
    """Matrix-free estimate of the log-likelihood gradient.

    Returns ``g_j = alpha . dK_j alpha / 2 - t_j / 2`` with ``alpha = K^-1 y``
    and ``t_j`` the probe average of ``(K^-1 r) . dK_j r``.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (ski.order,):
        raise ValueError("response length {} does not match operator order {}".format(y.shape, ski.order))
    r = getattr(probes, "vectors", probes)
    rhs = np.vstack([y[None, :], r])
    reports = batch_solve(ski, rhs, tol, max_iter)
    failed = [i for i, rep in enumerate(reports) if not rep.converged]
    if failed:
        worst = max(reports[i].residual for i in failed)
        raise ConvergenceError(
            "MINRES did not converge for {} of {} right-hand sides (worst relative residual {:.3g}, tol {:.3g})".format(
                len(failed), len(reports), worst, tol
            ),
            reports,
        )
    solved = np.vstack([rep.solution for rep in reports])
    alpha, inv_r = solved[0], solved[1:]
    stacked = np.vstack([alpha[None, :], r])
    data_fit = np.empty(len(deriv_ops))
    trace = np.empty(len(deriv_ops))
    stderr = np.empty(len(deriv_ops))
    for j, op in enumerate(deriv_ops):
        prod = op.matvec(stacked)
        data_fit[j] = 0.5 * alpha @ prod[0]
        terms = (inv_r * prod[1:]).sum(axis=1)
        trace[j] = terms.mean()
        stderr[j] = terms.std(ddof=1) / np.sqrt(len(terms)) if len(terms) > 1 else np.nan
    gradient = data_fit - 0.5 * trace
    return GradientReport(gradient, data_fit, trace, stderr, [rep.iterations for rep in reports], alpha)


@dataclass(frozen=True)
class TrainingState:
    theta: np.ndarray
    sq_grad_avg: np.ndarray
    sq_step_avg: np.ndarray
    rho: float = 0.95
    delta: float = 1e-6
    grad_norms: tuple = ()
    running_max: float = 0.0
    drops: int = 0
    iteration: int = 0
    probe_seed: int = 0

    @classmethod
    def initial(cls, theta, rho=0.95, delta=1e-6, probe_seed=0):
        theta = np.asarray(theta, dtype=np.float64)
        return cls(theta, np.zeros_like(theta), np.zeros_like(theta), rho, delta, probe_seed=probe_seed)


def adadelta_step(state, grad):
    """One AdaDelta update minimizing an objective with gradient ``grad``.

    To ascend the log-likelihood pass its negated gradient.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.theta.shape:
        raise ValueError("gradient length {} != parameter length {}".format(grad.size, state.theta.size))
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient")
    rho, delta = state.rho, state.delta
    sq_grad = rho * state.sq_grad_avg + (1 - rho) * grad**2
    step = -np.sqrt(state.sq_step_avg + delta) / np.sqrt(sq_grad + delta) * grad
    sq_step = rho * state.sq_step_avg + (1 - rho) * step**2
    theta = state.theta + step
    return replace(state, theta=theta, sq_grad_avg=sq_grad, sq_step_avg=sq_step), theta


def should_stop(state, grad, fraction=0.2, budget=5, max_iterations=500):
    """Rolling-maximum gradient-norm heuristic.

    Counts the iterations whose gradient infinity-norm is below ``fraction``
    of the largest norm seen so far and stops once the count reaches
    ``budget`` or the iteration cap is hit.
    """
    norm = float(np.max(np.abs(grad))) if np.size(grad) else 0.0
    running = max(state.running_max, norm)
    drops = state.drops + (1 if norm < fraction * running else 0)
    state = replace(state, grad_norms=state.grad_norms + (norm,), running_max=running, drops=drops)
    return drops >= budget or state.iteration >= max_iterations, state


@dataclass
class TrainingResult:
    kernel: object
    grid: object
    representation: Representation
    log: list
    state: TrainingState
    alpha: np.ndarray = field(repr=False, default=None)
    stop_reason: str = ""


def resolve_representation(config, kernel):
    if config.representation == "auto":
        return select_representation(kernel.num_outputs, kernel.num_subkernels, kernel.ranks)
    return Representation(config.representation)


def train(dataset, config, kernel=None, callback=None):
    """Fit LMC hyperparameters to ``dataset`` (standardized internally).

    ``callback(record)`` is called with each per-iteration log record.
    """
    dataset.require_all_outputs()
    grid = build_grid(dataset, config.grid_shape(dataset.input_dim))
    weights = interp_weights(grid, dataset)
    rng = np.random.default_rng(config.seed)
    if kernel is None:
        kernel = initial_kernel(dataset.num_outputs, config.ranks, rng, kinds=config.kinds)
    probe_seed = int(rng.integers(2**63 - 1))
    probes = sample_rademacher(dataset.n, config.num_probes, probe_seed)
    representation = resolve_representation(config, kernel)
    y = dataset.y
    floor = np.log(config.noise_floor)
    noise_slice = slice(kernel.num_hyperparameters - kernel.num_outputs, None)

    state = TrainingState.initial(kernel.pack(), config.rho, config.delta, probe_seed)
    log = []
    good = kernel
    reason = "iteration cap"
    while state.iteration < config.max_iterations:
        t0 = time.perf_counter()
        current = kernel.unpack(state.theta)
        try:
            ski = build_ski_operator(current, grid, weights, dataset, representation)
            dops = derivative_operators(current, grid, weights, dataset)
            report = log_likelihood_gradient(ski, y, probes, dops, config.minres_tol, config.minres_max_iter)
            new_state, theta = adadelta_step(state, -report.gradient)
        except (ConvergenceError, ValueError, ArithmeticError) as e:
            raise TrainingError("training aborted at iteration {}: {}".format(state.iteration, e), good, log) from e
        good = current
        theta = theta.copy()
        theta[noise_slice] = np.maximum(theta[noise_slice], floor)
        new_state = replace(new_state, theta=theta, iteration=state.iteration + 1)
        stop, new_state = should_stop(
            new_state, report.gradient, config.stop_fraction, config.stop_budget, config.max_iterations
        )
        state = new_state
        record = {
            "iteration": state.iteration,
            "grad_inf_norm": state.grad_norms[-1],
            "running_max": state.running_max,
            "drops": state.drops,
            "minres_iterations": report.solver_iterations[0],
            "probe_minres_iterations": max(report.solver_iterations[1:]),
            "seconds": time.perf_counter() - t0,
        }
        log.append(record)
        _LOG.debug("iteration %(iteration)d |g|=%(grad_inf_norm).4g minres=%(minres_iterations)d", record)
        if callback is not None:
            callback(record)
        if stop:
            reason = "gradient norm heuristic" if state.drops >= config.stop_budget else "iteration cap"
            break
    final = kernel.unpack(state.theta) if state.iteration else kernel
    return TrainingResult(final, grid, representation, log, state, stop_reason=reason)
