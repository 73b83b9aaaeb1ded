import warnings

import numpy as np
import pytest

from hubmpc.gp_forecast import fit
from hubmpc.hub_model import HubParameters
from hubmpc.synthetic import SyntheticDataConfig, generate_synthetic_data


@pytest.fixture(scope="session")
def params():
    return HubParameters()


@pytest.fixture(scope="session")
def history():
    """Ten weeks of synthetic winter data."""
    return generate_synthetic_data(SyntheticDataConfig(start="2018-01-01T00",
                                                       end="2018-03-12T00", seed=3))


@pytest.fixture(scope="session")
def small_models(history):
    """Cheap winter models: few restarts, small conditioning window."""
    stop = history.index_of("2018-02-20T00")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return {kind: fit(history, kind, "winter", train_range=(0, stop), window_hours=240,
                          n_fit=150, restarts=1, max_iter=60, seed=0)
                for kind in ("electric", "heat")}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
