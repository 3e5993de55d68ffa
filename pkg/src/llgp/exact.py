"""Dense Cholesky-based GP used as a reference on small problems.

Everything here costs O(n^2) memory and O(n^3) time and is capped
accordingly; the matrix-free code paths never import this module.
"""

import logging

import numpy as np
import scipy.linalg as la

from .kernel import subkernel_log_lengthscale_derivative

_LOG = logging.getLogger(__name__)

DENSE_CAP = 2000
JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class NotPositiveDefinite(np.linalg.LinAlgError):
    pass


def _distances(x1, x2):
    x1 = np.asarray(x1, dtype=np.float64).reshape(len(x1), -1)
    x2 = np.asarray(x2, dtype=np.float64).reshape(len(x2), -1)
    diff = x1[:, None, :] - x2[None, :, :]
    return np.sqrt((diff**2).sum(-1))


def lmc_cross_covariance(kernel, outputs1, x1, outputs2, x2):
    """Noise-free LMC covariance between two labelled point sets."""
    r = _distances(x1, x2)
    out = np.zeros(r.shape)
    for q, B in enumerate(kernel.coregionalizations()):
        out += B[np.ix_(outputs1, outputs2)] * kernel.subkernel(q, r)
    return out


def _check_cap(n, cap):
    if n > cap:
        raise MemoryError("dense reference refused for n={} (cap {})".format(n, cap))


def dense_kernel_matrix(kernel, dataset, noise=True, cap=DENSE_CAP):
    _check_cap(dataset.n, cap)
    x = dataset.x
    K = lmc_cross_covariance(kernel, dataset.outputs, x, dataset.outputs, x)
    if noise:
        K[np.diag_indices_from(K)] += kernel.noise[dataset.outputs]
    return K


def dense_kernel_derivatives(kernel, dataset, cap=DENSE_CAP):
    """Exact derivative matrices of the noisy kernel, in ``kernel.index_map()`` order."""
    _check_cap(dataset.n, cap)
    x, outs = dataset.x, dataset.outputs
    r = _distances(x, x)
    d = kernel.num_outputs
    mats = []
    for q in range(kernel.num_subkernels):
        kq = kernel.subkernel(q, r)
        A = kernel.A[q]
        for i in range(d):
            for c in range(A.shape[1]):
                dB = np.zeros((d, d))
                dB[i, :] += A[:, c]
                dB[:, i] += A[:, c]
                mats.append(dB[np.ix_(outs, outs)] * kq)
        for i in range(d):
            sel = (outs == i).astype(float)
            mats.append(kernel.kappa[q][i] * np.outer(sel, sel) * kq)
        dk = subkernel_log_lengthscale_derivative(kernel.kinds[q], kernel.lengthscales[q], r)
        mats.append(kernel.coregionalization(q)[np.ix_(outs, outs)] * dk)
    for i in range(d):
        mats.append(np.diag(np.where(outs == i, kernel.noise[i], 0.0)))
    return mats


class DenseGp:
    """Factorized dense covariance ``K`` with observations ``y``.

    Cholesky is retried with growing diagonal jitter; the jitter finally used
    is kept in :attr:`jitter`.
    """

    def __init__(self, K, y, cap=DENSE_CAP):
        K = np.asarray(K, dtype=np.float64)
        _check_cap(K.shape[0], cap)
        self.K = K
        self.y = np.asarray(y, dtype=np.float64).ravel()
        scale = max(1.0, float(np.abs(np.diag(K)).max())) if K.size else 1.0
        for jitter in JITTERS:
            try:
                self.factor = la.cho_factor(K + jitter * scale * np.eye(K.shape[0]), lower=True)
            except la.LinAlgError:
                continue
            self.jitter = jitter * scale
            if jitter:
                _LOG.warning("dense factorization needed jitter %g", self.jitter)
            break
        else:
            raise NotPositiveDefinite("covariance is not positive definite even with jitter")
        self.alpha = la.cho_solve(self.factor, self.y)

    @property
    def n(self):
        return self.K.shape[0]

    def solve(self, b):
        return la.cho_solve(self.factor, b)

    def logdet(self):
        return 2.0 * np.log(np.diag(self.factor[0])).sum()


def exact_likelihood(gp):
    return float(-0.5 * gp.y @ gp.alpha - 0.5 * gp.logdet() - 0.5 * gp.n * np.log(2 * np.pi))


def exact_gradient(gp, derivatives):
    """Exact log-likelihood gradient for the given derivative matrices."""
    Kinv = gp.solve(np.eye(gp.n))
    a = gp.alpha
    return np.array([0.5 * a @ dK @ a - 0.5 * np.sum(Kinv * dK.T) for dK in derivatives])


def exact_data_fit(gp, derivatives):
    """The ``alpha^T dK alpha / 2`` half of the gradient alone."""
    return np.array([0.5 * gp.alpha @ dK @ gp.alpha for dK in derivatives])


def dense_posterior(kernel, train, test_outputs, test_x, include_noise=True, cap=DENSE_CAP):
    """Exact posterior mean and variance (standardized units) at labelled test points."""
    test_outputs = np.asarray(test_outputs, dtype=np.intp)
    test_x = np.asarray(test_x, dtype=np.float64).reshape(len(test_outputs), -1)
    prior = np.zeros(len(test_outputs))
    for q, B in enumerate(kernel.coregionalizations()):
        prior += np.diag(B)[test_outputs] * kernel.subkernel(q, 0.0)
    if train is None or train.n == 0:
        mean = np.zeros(len(test_outputs))
        var = prior
    else:
        gp = DenseGp(dense_kernel_matrix(kernel, train, cap=cap), train.y, cap)
        cross = lmc_cross_covariance(kernel, test_outputs, test_x, train.outputs, train.x)
        mean = cross @ gp.alpha
        var = prior - np.sum(cross * gp.solve(cross.T).T, axis=1)
    if include_noise:
        var = var + kernel.noise[test_outputs]
    return mean, var
