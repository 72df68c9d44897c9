"""Shared test configuration.

BLAS threading is pinned to one thread before numpy is imported anywhere:
multi-threaded reductions are the main source of run-to-run float
non-determinism, and several suites assert bit-identical results.
"""

import os

for _var in (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
):
    os.environ.setdefault(_var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from cliprank import autodiff as ad  # noqa: E402


@pytest.fixture(autouse=True)
def _reset_global_modes():
    """Keep the process-wide numerics switches from leaking between tests."""
    yield
    ad.set_precision("float32")
    ad.set_conv_mode("fast")
    ad.reset_zero_norm_cell_count()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
