"""
LoRA-factorized linear layers and the two toy models they are trained in.

A LoraLayer applies W0 + s*B*A with W0 frozen. The toy models carry a
hand-written forward/backward for mean squared error so that the full
gradient with respect to the merged weight is available to the optimizers.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple, Union

import numpy as np

from src.core.errors import ShapeMismatch
from src.core.matcore import check_shape, gaussian, make_rng

logger = logging.getLogger(__name__)


class ModelKind(str, Enum):
    LINEAR_REGRESSION = "LinearRegression"
    TWO_LAYER_RELU = "TwoLayerRelu"


class InitPolicy(str, Enum):
    GAUSSIAN = "Gaussian"
    KAIMING = "Kaiming"
    SPECTRAL = "Spectral"
    ZERO = "Zero"


@dataclass
class LoraLayer:
    W0: np.ndarray   # k x d, frozen
    A: np.ndarray    # r x d
    B: np.ndarray    # k x r
    alpha: float

    def __post_init__(self):
        self.W0 = np.array(self.W0, dtype=np.float64)
        self.A = np.asarray(self.A, dtype=np.float64)
        self.B = np.asarray(self.B, dtype=np.float64)
        k, d = self.W0.shape
        r = self.A.shape[0]
        check_shape(self.A, (r, d), "A")
        check_shape(self.B, (k, r), "B")
        if r > min(k, d):
            raise ShapeMismatch(f"rank {r} exceeds min(k, d) = {min(k, d)}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        self.W0.setflags(write=False)

    @property
    def r(self) -> int:
        return self.A.shape[0]

    @property
    def k(self) -> int:
        return self.W0.shape[0]

    @property
    def d(self) -> int:
        return self.W0.shape[1]

    @property
    def s(self) -> float:
        return self.alpha / self.r

    def copy(self) -> "LoraLayer":
        return LoraLayer(W0=self.W0, A=self.A.copy(), B=self.B.copy(), alpha=self.alpha)

    def with_factors(self, A: np.ndarray, B: np.ndarray) -> "LoraLayer":
        return LoraLayer(W0=self.W0, A=A, B=B, alpha=self.alpha)


@dataclass
class FullGradient:
    G: np.ndarray
    layer_id: str = "layer0"


@dataclass
class ToyModel:
    kind: ModelKind
    layer: LoraLayer
    W2: Optional[np.ndarray] = None  # frozen readout of TwoLayerRelu

    def __post_init__(self):
        self.kind = ModelKind(self.kind)
        if self.kind is ModelKind.TWO_LAYER_RELU:
            if self.W2 is None:
                raise ShapeMismatch("TwoLayerRelu needs a dense second layer W2")
            self.W2 = np.array(self.W2, dtype=np.float64)
            if self.W2.shape[1] != self.layer.k:
                raise ShapeMismatch(
                    f"W2 expects input dim {self.W2.shape[1]}, adapted layer outputs {self.layer.k}"
                )
            self.W2.setflags(write=False)
        elif self.W2 is not None:
            raise ShapeMismatch("LinearRegression has exactly one layer; W2 must be None")

    @property
    def input_dim(self) -> int:
        return self.layer.d

    @property
    def output_dim(self) -> int:
        return self.layer.k if self.W2 is None else self.W2.shape[0]

    def copy(self) -> "ToyModel":
        return ToyModel(kind=self.kind, layer=self.layer.copy(), W2=self.W2)


@dataclass
class ForwardCache:
    X: np.ndarray
    pre: np.ndarray                      # W X
    hidden: Optional[np.ndarray] = None  # relu(W X), TwoLayerRelu only
    Y: np.ndarray = field(default=None)


def merged_weight(layer: LoraLayer) -> np.ndarray:
    return layer.W0 + layer.s * (layer.B @ layer.A)


def forward(model: ToyModel, X: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """
    Evaluates the model on a batch with one sample per column.

    Returns:
    - (Y, cache): outputs (one column per sample) and the activation record backward needs.
    """
    if X.ndim != 2 or X.shape[0] != model.input_dim or X.shape[1] < 1:
        raise ShapeMismatch(f"batch has shape {X.shape}, expected ({model.input_dim}, m>=1)")
    pre = merged_weight(model.layer) @ X
    if model.kind is ModelKind.LINEAR_REGRESSION:
        return pre, ForwardCache(X=X, pre=pre, Y=pre)
    hidden = np.maximum(pre, 0.0)
    Y = model.W2 @ hidden
    return Y, ForwardCache(X=X, pre=pre, hidden=hidden, Y=Y)


def mse_loss(Y: np.ndarray, Ytarget: np.ndarray) -> float:
    """(1/m) ||Y - Ytarget||_F^2 with m the number of samples (columns)."""
    if Y.shape != Ytarget.shape:
        raise ShapeMismatch(f"prediction {Y.shape} and target {Ytarget.shape} differ")
    residual = Y - Ytarget
    return float(np.sum(residual * residual) / Y.shape[1])


def full_gradient(model: ToyModel, X: np.ndarray, Ytarget: np.ndarray, cache: ForwardCache) -> List[FullGradient]:
    """Gradient of the MSE loss with respect to the merged weight of the adapted layer."""
    if cache.X.shape != X.shape:
        raise ShapeMismatch(f"cache was built for a batch of shape {cache.X.shape}, got {X.shape}")
    if Ytarget.shape != cache.Y.shape:
        raise ShapeMismatch(f"target shape {Ytarget.shape} does not match output {cache.Y.shape}")
    m = X.shape[1]
    d_out = (2.0 / m) * (cache.Y - Ytarget)
    if model.kind is ModelKind.LINEAR_REGRESSION:
        d_pre = d_out
    else:
        # relu'(0) is taken as 0
        d_pre = (model.W2.T @ d_out) * (cache.pre > 0.0)
    return [FullGradient(G=d_pre @ X.T, layer_id="layer0")]


def lora_grads(G: Union[FullGradient, np.ndarray], layer: LoraLayer) -> Tuple[np.ndarray, np.ndarray]:
    """Chain rule through W = W0 + sBA: grad_A = s B^T G, grad_B = s G A^T."""
    G = G.G if isinstance(G, FullGradient) else G
    check_shape(G, (layer.k, layer.d), "G")
    return layer.s * (layer.B.T @ G), layer.s * (G @ layer.A.T)


# --- initialization ------------------------------------------------------------

def init_factor(policy: InitPolicy, shape: Tuple[int, int], rng: np.random.Generator,
                W0: Optional[np.ndarray] = None, factor: str = "A") -> np.ndarray:
    policy = InitPolicy(policy)
    rows, cols = shape
    if policy is InitPolicy.ZERO:
        return np.zeros(shape)
    if policy is InitPolicy.GAUSSIAN:
        r = rows if factor == "A" else cols
        return gaussian(rng, shape) / r
    if policy is InitPolicy.KAIMING:
        # kaiming_uniform_(a=sqrt(5)) reduces to U(-1/sqrt(fan_in), 1/sqrt(fan_in))
        bound = 1.0 / np.sqrt(cols)
        return rng.uniform(-bound, bound, size=shape)
    if W0 is None:
        raise ValueError("Spectral initialization needs the base weight W0")
    U, _, Vt = np.linalg.svd(W0, full_matrices=False)
    if factor == "A":
        return Vt[:rows].copy()
    return U[:, :cols].copy()


def init_layer(W0: np.ndarray, r: int, alpha: float, init_a: InitPolicy = InitPolicy.KAIMING,
               init_b: InitPolicy = InitPolicy.ZERO, seed: int = 0) -> LoraLayer:
    k, d = W0.shape
    rng = make_rng(seed)
    A = init_factor(init_a, (r, d), rng, W0, factor="A")
    B = init_factor(init_b, (k, r), rng, W0, factor="B")
    return LoraLayer(W0=W0, A=A, B=B, alpha=alpha)
