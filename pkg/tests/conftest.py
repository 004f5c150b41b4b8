from __future__ import annotations

import numpy as np
import pytest

from cubitopo import _kernels
from cubitopo.grid import GridShape, ScalarField


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # jit compilation happens once here, not inside timed checks
    _kernels.warmup()


def random_field(rng, dims) -> ScalarField:
    return ScalarField(GridShape(dims), rng.random(dims))


def distinct_field(rng, dims) -> ScalarField:
    """All grid values distinct: a shuffled, strictly increasing ladder."""
    n = int(np.prod(dims))
    vals = np.linspace(0.05, 0.95, n)
    return ScalarField(GridShape(dims), rng.permutation(vals).reshape(dims))
