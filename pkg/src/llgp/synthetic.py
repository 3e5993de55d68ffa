"""Draws from LMC priors for experiments and tests."""

import numpy as np

from .data import MultiOutputDataset
from .exact import dense_kernel_matrix


def sample_lmc(kernel, outputs, x, rng, labels=None):
    """Sample noisy responses at ``(outputs, x)`` from the LMC prior (dense, small n).

    ``x`` is used as-is, i.e. the kernel sees it in the same units as the
    returned dataset's standardized inputs only when ``x`` spans ``[0, 1]``.
    """
    outputs = np.asarray(outputs, dtype=np.intp)
    labels = labels or ["y{}".format(d) for d in range(kernel.num_outputs)]
    probe = MultiOutputDataset(labels, outputs, x, np.zeros(len(outputs)))
    K = dense_kernel_matrix(kernel, probe, cap=max(len(outputs), 1))
    L = np.linalg.cholesky(K + 1e-10 * np.eye(len(outputs)))
    values = L @ rng.standard_normal(len(outputs))
    return MultiOutputDataset(labels, outputs, x, values)
