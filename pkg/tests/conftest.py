import numpy as np
import pytest

from pbu.classifier import Dataset, ModelSpec, TrainConfig, init_params, train
from pbu.datasets import gen_blobs, train_test_split_per_class

# acceptance criteria record their verdicts here; printed in the terminal summary
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def tiny_spec():
    return ModelSpec(3, (4,), 3)


@pytest.fixture
def tiny_data():
    return gen_blobs(3, 3, 6, 1.0, seed=11, name="tiny")


@pytest.fixture
def tiny_theta(tiny_spec):
    return init_params(tiny_spec, 5)


@pytest.fixture(scope="session")
def desk():
    """Default desk problem with one trained initial model (seed 0)."""
    spec = ModelSpec(16, (32,), 4)
    full = gen_blobs(16, 4, 700, 1.0, 0)
    tr, te = train_test_split_per_class(full, 500)
    ckpt = train(spec, tr, TrainConfig(epochs=200, seed=0))
    return spec, tr, te, ckpt


def random_dataset(rng, n, d, C, name="rand"):
    X = rng.normal(n * d).reshape(n, d)
    y = (rng.u64(n) % np.uint64(C)).astype(np.int64)
    return Dataset(X, y, name)
