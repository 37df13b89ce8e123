import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from src.core.data_io import REGRESSION, synth_clustered_tasks  # noqa: E402
from src.mkl.kernel_bank import KernelSpec, build_bank  # noqa: E402

LANDMINE = os.getenv("MKMTRL_LANDMINE")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: reproduction runs on the landmine data (needs MKMTRL_LANDMINE)")


def pytest_collection_modifyitems(config, items):
    if LANDMINE:
        return
    skip = pytest.mark.skip(reason="set MKMTRL_LANDMINE to the landmine manifest to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def clustered_bundle():
    return synth_clustered_tasks(T=4, clusters=2, n_per_task=30, d=4, noise=0.1, seed=1)


@pytest.fixture
def regression_bundle():
    return synth_clustered_tasks(T=4, clusters=2, n_per_task=30, d=5, noise=0.1, seed=2, kind=REGRESSION)


@pytest.fixture
def poly_specs():
    return [KernelSpec("polynomial", degree=d) for d in (1, 2, 3)]


@pytest.fixture
def feature_specs():
    """One linear kernel per feature of a 5-dimensional bundle"""
    return [KernelSpec("univariate_linear", feature=j) for j in range(5)]


@pytest.fixture
def clustered_bank(clustered_bundle, poly_specs):
    return build_bank(clustered_bundle, poly_specs, clustered_bundle, debug=True)


