import numpy as np
import pytest

from src.core.adapter import LoraLayer, ModelKind, ToyModel
from src.core.matcore import gaussian, make_rng
from src.data.tasks import Task


def relerr(actual, expected) -> float:
    expected = np.asarray(expected)
    scale = np.linalg.norm(expected)
    diff = np.linalg.norm(np.asarray(actual) - expected)
    return diff / scale if scale > 0 else diff


def random_layer(seed: int, k: int = 12, d: int = 20, r: int = 3, alpha: float = 6.0) -> LoraLayer:
    rng = make_rng(seed)
    return LoraLayer(W0=gaussian(rng, (k, d)) / np.sqrt(d), A=gaussian(rng, (r, d)) / np.sqrt(d),
                     B=gaussian(rng, (k, r)) / np.sqrt(r), alpha=alpha)


def random_linear_task(seed: int, k: int = 12, d: int = 20, r: int = 3, alpha: float = 6.0) -> Task:
    layer = random_layer(seed, k, d, r, alpha)
    rng = make_rng(seed + 1000)
    X = gaussian(rng, (d, 4 * d))
    W_star = layer.W0 + gaussian(rng, (k, r)) @ gaussian(rng, (r, d)) / np.sqrt(d)
    model = ToyModel(kind=ModelKind.LINEAR_REGRESSION, layer=layer)
    return Task(model=model, X=X, Y=W_star @ X, teacher_weight=W_star, residual=W_star - layer.W0)


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def layer():
    return random_layer(5)


@pytest.fixture
def linear_task():
    return random_linear_task(7)
