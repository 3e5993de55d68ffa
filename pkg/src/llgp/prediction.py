"""Posterior mean and variance at test points, plus SMSE and NLPD.

Predictions reuse the interpolated training covariance.  The mean needs a
single grid product shared by all test points; each variance needs one MINRES
solve against the test point's interpolated cross-covariance.
"""

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .interpolation import interp_weights, weight_matrix
from .kernel import Representation, build_ski_operator
from .krylov import DEFAULT_TOL, batch_solve

_LOG = logging.getLogger(__name__)

VARIANCE_CHUNK = 128


class MetricError(ValueError):
    pass


class Posterior:
    """Trained LMC model conditioned on its training data (standardized units)."""

    def __init__(self, kernel, grid, train, representation=Representation.SUM, tol=DEFAULT_TOL, max_iter=None):
        self.kernel = kernel
        self.grid = grid
        self.train = train
        self.tol = tol
        self.max_iter = max_iter
        self.weights = interp_weights(grid, train)
        self.ski = build_ski_operator(kernel, grid, self.weights, train, representation)
        report = batch_solve(self.ski, train.y[None, :], tol, max_iter)[0]
        if report.error is not None:
            raise report.error
        if not report.converged:
            _LOG.warning("posterior solve stopped at relative residual %.3g", report.residual)
        self.alpha = report.solution
        self._grid_alpha = None

    @property
    def grid_alpha(self):
        if self._grid_alpha is None:
            self._grid_alpha = self.ski.grid_operator.matvec(self.ski.interpolate_transpose(self.alpha))
        return self._grid_alpha

    def test_weights(self, outputs, x):
        return weight_matrix(self.grid, outputs, x, self.kernel.num_outputs, clamp=True)


def predict_mean(posterior, alpha, outputs, x):
    """Posterior means in standardized units for standardized inputs ``x``."""
    if alpha is posterior.alpha:
        v = posterior.grid_alpha
    else:
        v = posterior.ski.grid_operator.matvec(posterior.ski.interpolate_transpose(np.asarray(alpha, dtype=np.float64)))
    return posterior.test_weights(outputs, x) @ v


def predict_variance(posterior, outputs, x, include_noise=True):
    """Predictive variances in standardized units; NaN where a solve failed."""
    outputs = np.asarray(outputs, dtype=np.intp)
    ws = posterior.test_weights(outputs, x)
    ski = posterior.ski
    prior = posterior.kernel.prior_variance()[outputs]
    var = prior.copy()
    for lo in range(0, len(outputs), VARIANCE_CHUNK):
        hi = min(lo + VARIANCE_CHUNK, len(outputs))
        rows = ws[lo:hi].toarray()
        cross = ski.interpolate(ski.grid_operator.matvec(rows))
        nonzero = np.flatnonzero(np.sqrt((cross * cross).sum(axis=1)) > 0)
        if nonzero.size == 0:
            continue
        reports = batch_solve(ski, cross[nonzero], posterior.tol, posterior.max_iter)
        for i, rep in zip(nonzero, reports):
            if rep.error is not None or not rep.converged:
                _LOG.warning("variance solve failed for test point %d", lo + i)
                var[lo + i] = np.nan
            else:
                var[lo + i] = prior[lo + i] - cross[i] @ rep.solution
    negative = var < 0
    if np.any(negative):
        _LOG.warning("clamped %d negative predictive variance(s) to zero", int(negative.sum()))
        var[negative] = 0.0
    if include_noise:
        var = var + posterior.kernel.noise[outputs]
    return var


@dataclass
class PredictionResult:
    labels: list
    outputs: np.ndarray
    inputs: np.ndarray
    mean: np.ndarray
    variance: np.ndarray

    def to_csv(self, path):
        p = self.inputs.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["output"] + ["x{}".format(i + 1) for i in range(p)] + ["mean", "variance"])
            for d, x, mu, var in zip(self.outputs, self.inputs, self.mean, self.variance):
                w.writerow([self.labels[d]] + [repr(float(v)) for v in x] + [repr(float(mu)), repr(float(var))])


def predict(posterior, test):
    """Predictions for a test dataset in original units."""
    stdz = posterior.train.standardization
    x = stdz.transform_x(test.inputs)
    mean = predict_mean(posterior, posterior.alpha, test.outputs, x)
    var = predict_variance(posterior, test.outputs, x)
    return PredictionResult(
        list(test.labels),
        test.outputs,
        test.inputs,
        stdz.inverse_y(mean, test.outputs),
        stdz.inverse_var(var, test.outputs),
    )


@dataclass
class MetricsReport:
    smse: float
    nlpd: float
    smse_per_output: dict
    nlpd_per_output: dict
    counts: dict

    def to_dict(self):
        return {
            "smse": self.smse,
            "nlpd": self.nlpd,
            "smse_per_output": self.smse_per_output,
            "nlpd_per_output": self.nlpd_per_output,
            "counts": self.counts,
        }


def _groups(outputs, labels):
    outputs = np.asarray(outputs)
    for d in np.unique(outputs):
        label = labels[d] if labels is not None else int(d)
        yield label, outputs == d


def smse(predictions, truths, outputs, labels=None):
    """Per-output mean squared error over the holdout variance of that output.

    Returns ``(aggregate, per_output)`` with the aggregate the mean over outputs.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if truths.size == 0:
        raise MetricError("empty holdout set")
    per = {}
    for label, mask in _groups(outputs, labels):
        t = truths[mask]
        var = t.var()
        if not var > 0:
            raise MetricError("holdout variance of output {} is zero; SMSE undefined".format(label))
        per[label] = float(np.mean((predictions[mask] - t) ** 2) / var)
    return float(np.mean(list(per.values()))), per


def nlpd_terms(means, variances, truths):
    variances = np.asarray(variances, dtype=np.float64)
    if not np.all(variances > 0):
        raise MetricError("NLPD needs strictly positive predictive variances")
    resid = np.asarray(truths, dtype=np.float64) - np.asarray(means, dtype=np.float64)
    return 0.5 * np.log(2 * np.pi * variances) + resid**2 / (2 * variances)


def nlpd(means, variances, truths, outputs=None, labels=None):
    """Mean Gaussian negative log predictive density; ``(aggregate, per_output)``."""
    terms = nlpd_terms(means, variances, truths)
    per = {}
    if outputs is not None:
        per = {label: float(terms[mask].mean()) for label, mask in _groups(outputs, labels)}
    return float(terms.mean()), per


def evaluate(prediction, test):
    """SMSE and NLPD of ``prediction`` against the responses of ``test`` (original units)."""
    ok = np.isfinite(prediction.variance)
    if not np.all(ok):
        _LOG.warning("%d test point(s) without a variance are excluded from NLPD", int((~ok).sum()))
    agg_smse, per_smse = smse(prediction.mean, test.values, test.outputs, test.labels)
    agg_nlpd, per_nlpd = nlpd(
        prediction.mean[ok], prediction.variance[ok], test.values[ok], test.outputs[ok], test.labels
    )
    counts = {test.labels[d]: int(c) for d, c in enumerate(np.bincount(test.outputs, minlength=test.num_outputs)) if c}
    return MetricsReport(agg_smse, agg_nlpd, per_smse, per_nlpd, counts)
