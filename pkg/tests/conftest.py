import numpy as np
import pytest

from storexplain import TrainConfig, generate_ba2motifs, train_gnn


@pytest.fixture(scope="session")
def small_ds():
    return generate_ba2motifs(60, 3)


@pytest.fixture(scope="session")
def small_model(small_ds):
    # small budget: enough for contract tests, not for benchmark accuracy
    return train_gnn(small_ds, TrainConfig(epochs=80, patience=40, seed=0, max_restarts=0))


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
