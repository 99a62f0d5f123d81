import numpy as np
import pytest


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    """Trigger JIT compilation once so timed tests measure steady state."""
    from tractaug import _kernels

    d = np.zeros((4, 4, 4), dtype=np.float64)
    _kernels.neighborhood_mean_std(d)
    _kernels.gradient_magnitude(d)
    _kernels.tube_mask((4, 4, 4), np.zeros((2, 3)), 1.0)
    yield
