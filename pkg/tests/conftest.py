import pytest

from holopose import kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # JIT compile (or cache-load) the hot kernels once so timed tests
    # measure steady-state behavior, not compilation.
    kernels.warmup()
