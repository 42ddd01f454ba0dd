"""
Baseline LoRA optimizers. All of them move both factors in the same step
from one full gradient; their first moments are plain EMAs that are never
realigned when the opposite factor moves.
"""

import logging
from typing import Optional, Tuple, Union

import numpy as np

from src.core.adapter import FullGradient, LoraLayer, lora_grads
from src.core.matcore import DEFAULT_LAMBDA, Side, check_shape, damped_gram_inverse
from src.optim.altlora import adam_direction, altlora_plus_step, altlora_step, scaled_grad_A, scaled_grad_B
from src.optim.config import OptimizerKind, TrainConfig
from src.optim.state import AltLoraState, assert_low_rank_state

logger = logging.getLogger(__name__)


def lorapro_equiv_grad(G: Union[FullGradient, np.ndarray], layer: LoraLayer, X: Optional[np.ndarray] = None,
                       lam: float = DEFAULT_LAMBDA) -> Tuple[np.ndarray, np.ndarray]:
    """
    Factor gradients whose induced merged-weight change best matches G.

    gA = (1/s) (B^T B)^-1 B^T G + X A
    gB = (1/s) [I - B (B^T B)^-1 B^T] G A^T (A A^T)^-1 - B X

    Both Gram inverses are ridge damped by lam. The k x k projector is never formed.
    """
    G = G.G if isinstance(G, FullGradient) else G
    check_shape(G, (layer.k, layer.d), "G")
    A, B, s = layer.A, layer.B, layer.s
    X = np.zeros((layer.r, layer.r)) if X is None else X
    check_shape(X, (layer.r, layer.r), "X")
    inv_b = damped_gram_inverse(B, Side.LEFT, lam)
    inv_a = damped_gram_inverse(A, Side.RIGHT, lam)
    gA = inv_b @ (B.T @ G) / s + X @ A
    g_row = G @ A.T @ inv_a
    gB = (g_row - B @ (inv_b @ (B.T @ g_row))) / s - B @ X
    return gA, gB


def _raw_directions(kind: OptimizerKind, layer: LoraLayer, G, cfg: TrainConfig) -> Tuple[np.ndarray, np.ndarray]:
    gradA, gradB = lora_grads(G, layer)
    if kind is OptimizerKind.SCALED_GD_JOINT:
        # both scaled gradients from the same point: this is what produces the cross term
        return scaled_grad_A(gradA, layer.B, layer.s, cfg.lam), scaled_grad_B(gradB, layer.A, layer.s, cfg.lam)
    if kind is OptimizerKind.LORA_PRO_SGD:
        return lorapro_equiv_grad(G, layer, None, cfg.lam)
    return gradA, gradB


def baseline_step(kind: OptimizerKind, layer: LoraLayer, state: AltLoraState, G: Union[FullGradient, np.ndarray],
                  cfg: TrainConfig, eta: Optional[float] = None) -> Tuple[LoraLayer, AltLoraState]:
    """
    One joint step of a baseline optimizer.

    LoraSGD:       EMA momentum on the raw LoRA gradients.
    LoraAdam:      AdamW on the raw LoRA gradients.
    LoraPlus:      LoraSGD with eta_B = lora_plus_ratio * eta_A.
    ScaledGDJoint: EMA momentum on both scaled gradients evaluated at the same point.
    LoraProSGD:    EMA momentum on the LoRA-Pro equivalent gradients with X = 0.
    """
    kind = OptimizerKind(kind)
    if kind.is_alternating_family:
        raise ValueError(f"{kind.value} is not a baseline; use optimizer_step")
    eta = cfg.lr_at(state.t) if eta is None else eta
    eta_a = eta
    eta_b = eta * cfg.lora_plus_ratio if kind is OptimizerKind.LORA_PLUS else eta

    dir_a, dir_b = _raw_directions(kind, layer, G, cfg)
    new = state.copy()
    new.MA = cfg.beta1 * state.MA + (1.0 - cfg.beta1) * dir_a
    new.MB = cfg.beta1 * state.MB + (1.0 - cfg.beta1) * dir_b
    new.tA += 1
    new.tB += 1
    step_a, step_b = new.MA, new.MB
    if kind is OptimizerKind.LORA_ADAM:
        new.VA = cfg.beta2 * state.VA + (1.0 - cfg.beta2) * dir_a * dir_a
        new.VB = cfg.beta2 * state.VB + (1.0 - cfg.beta2) * dir_b * dir_b
        step_a = adam_direction(new.MA, new.VA, new.tA, cfg)
        step_b = adam_direction(new.MB, new.VB, new.tB, cfg)

    A, B = layer.A, layer.B
    newA = A - eta_a * (step_a + cfg.gamma * A)
    newB = B - eta_b * (step_b + cfg.gamma * B)
    new.t += 1
    assert_low_rank_state(new, layer.k, layer.d, layer.r)
    return layer.with_factors(newA, newB), new


def optimizer_step(kind: OptimizerKind, layer: LoraLayer, state: AltLoraState, G: Union[FullGradient, np.ndarray],
                   cfg: TrainConfig, eta: Optional[float] = None) -> Tuple[LoraLayer, AltLoraState]:
    """Dispatches one step of any optimizer kind."""
    kind = OptimizerKind(kind)
    if kind is OptimizerKind.ALTLORA:
        return altlora_step(layer, state, G, cfg, eta)
    if kind is OptimizerKind.ALTLORA_PLUS:
        return altlora_plus_step(layer, state, G, cfg, eta)
    return baseline_step(kind, layer, state, G, cfg, eta)
