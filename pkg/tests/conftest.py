import numpy as np
import pytest

from llgp.data import MultiOutputDataset
from llgp.kernel import LmcKernel


def random_kernel(rng, num_outputs, ranks, lengthscale_range=(0.1, 0.4)):
    return LmcKernel(
        [rng.standard_normal((num_outputs, r)) for r in ranks],
        [rng.uniform(0.05, 0.5, num_outputs) for _ in ranks],
        rng.uniform(*lengthscale_range, len(ranks)),
        rng.uniform(0.05, 0.3, num_outputs),
    )


def random_dataset(rng, num_outputs, n, input_dim=1):
    outputs = np.concatenate([np.arange(num_outputs), rng.integers(0, num_outputs, n - num_outputs)])
    x = rng.uniform(0, 1, (n, input_dim))
    x[0], x[1 % n] = 0.0, 1.0
    return MultiOutputDataset(
        ["o{}".format(d) for d in range(num_outputs)], outputs, x, rng.standard_normal(n)
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
