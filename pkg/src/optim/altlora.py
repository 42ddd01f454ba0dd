"""
AltLoRA and AltLoRA+: alternating projected-gradient updates of the LoRA factors.

One call to `altlora_step` updates exactly one factor (or both under
UpdateOrder.JOINT). The scaled gradient of a factor is the least-squares
best approximation of the full gradient inside the subspace spanned by the
opposite factor, and the first moment is realigned to the opposite factor's
current subspace before it is mixed with the new scaled gradient.
"""

import logging
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np

from src.core.adapter import FullGradient, LoraLayer, lora_grads
from src.core.matcore import DEFAULT_LAMBDA, Side, check_shape, damped_gram_inverse
from src.optim.config import TrainConfig, UpdateOrder
from src.optim.state import AltLoraState, assert_low_rank_state

logger = logging.getLogger(__name__)


class Phase(str, Enum):
    A = "A"
    B = "B"
    BOTH = "AB"


def scaled_grad_A(gradA: np.ndarray, B: np.ndarray, s: float, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """(1/s^2) (B^T B + lambda I)^-1 grad_A."""
    check_shape(gradA, (B.shape[1], gradA.shape[1]), "gradA")
    return damped_gram_inverse(B, Side.LEFT, lam) @ gradA / (s * s)


def scaled_grad_B(gradB: np.ndarray, A: np.ndarray, s: float, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """(1/s^2) grad_B (A A^T + lambda I)^-1, with A the already-updated factor in the alternating scheme."""
    check_shape(gradB, (gradB.shape[0], A.shape[0]), "gradB")
    return gradB @ damped_gram_inverse(A, Side.RIGHT, lam) / (s * s)


def align_momentum_B(MB: np.ndarray, Aold: np.ndarray, Anew: np.ndarray, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """Re-expresses MB (formed against Aold) in the row space of Anew: MB Aold Anew^T (Anew Anew^T)^-1."""
    check_shape(Anew, Aold.shape, "Anew")
    return MB @ (Aold @ Anew.T) @ damped_gram_inverse(Anew, Side.RIGHT, lam)


def align_momentum_A(MA: np.ndarray, Bold: np.ndarray, Bnew: np.ndarray, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """Re-expresses MA (formed against Bold) in the column space of Bnew: (Bnew^T Bnew)^-1 Bnew^T Bold MA."""
    check_shape(Bnew, Bold.shape, "Bnew")
    return damped_gram_inverse(Bnew, Side.LEFT, lam) @ (Bnew.T @ Bold) @ MA


def phase_for(t: int, order: UpdateOrder) -> Phase:
    order = UpdateOrder(order)
    if order is UpdateOrder.JOINT:
        return Phase.BOTH
    first = Phase.A if order is UpdateOrder.A_FIRST else Phase.B
    if t % 2 == 0:
        return first
    return Phase.B if first is Phase.A else Phase.A


def adam_direction(M: np.ndarray, V: np.ndarray, count: int, cfg: TrainConfig) -> np.ndarray:
    """M_hat / (sqrt(V_hat) + eps) with optional per-factor bias correction."""
    if cfg.bias_correction:
        M = M / (1.0 - cfg.beta1 ** count)
        V = V / (1.0 - cfg.beta2 ** count)
    return M / (np.sqrt(V) + cfg.eps)


def _moment_update(M: np.ndarray, scaled: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    return cfg.beta1 * M + (1.0 - cfg.beta1) * scaled


def _altlora_family_step(layer: LoraLayer, state: AltLoraState, G: Union[FullGradient, np.ndarray],
                         cfg: TrainConfig, second_moment: bool, eta: Optional[float]) -> Tuple[LoraLayer, AltLoraState]:
    if state.prevA is None or state.prevB is None:
        raise ValueError("state was not initialized for the AltLoRA family (missing factor snapshots)")
    if second_moment and (state.VA is None or state.VB is None):
        raise ValueError("AltLoRA+ needs second-moment buffers in the state")
    eta = cfg.lr_at(state.t) if eta is None else eta
    phase = phase_for(state.t, cfg.order)
    s, lam = layer.s, cfg.lam
    A, B = layer.A, layer.B
    gradA, gradB = lora_grads(G, layer)
    new = state.copy()
    newA, newB = A, B

    if phase in (Phase.A, Phase.BOTH):
        scaled = scaled_grad_A(gradA, B, s, lam)
        new.MA = _moment_update(align_momentum_A(state.MA, state.prevB, B, lam), scaled, cfg)
        new.prevB = B.copy()
        new.tA += 1
        direction = new.MA
        if second_moment:
            # second moments stay in their own coordinates, they are not realigned
            new.VA = cfg.beta2 * state.VA + (1.0 - cfg.beta2) * scaled * scaled
            direction = adam_direction(new.MA, new.VA, new.tA, cfg)
        newA = A - eta * (direction + cfg.gamma * A)

    if phase in (Phase.B, Phase.BOTH):
        # in the alternating scheme A is already A_{t+1} here; under JOINT both use the pre-step point
        scaled = scaled_grad_B(gradB, A, s, lam)
        new.MB = _moment_update(align_momentum_B(state.MB, state.prevA, A, lam), scaled, cfg)
        new.prevA = A.copy()
        new.tB += 1
        direction = new.MB
        if second_moment:
            new.VB = cfg.beta2 * state.VB + (1.0 - cfg.beta2) * scaled * scaled
            direction = adam_direction(new.MB, new.VB, new.tB, cfg)
        newB = B - eta * (direction + cfg.gamma * B)

    new.t += 1
    assert_low_rank_state(new, layer.k, layer.d, layer.r)
    logger.debug(f"altlora step t={state.t} phase={phase.value} eta={eta:g}")
    return layer.with_factors(newA, newB), new


def altlora_step(layer: LoraLayer, state: AltLoraState, G: Union[FullGradient, np.ndarray],
                 cfg: TrainConfig, eta: Optional[float] = None) -> Tuple[LoraLayer, AltLoraState]:
    """
    One AltLoRA step.

    G must be the full gradient at the current merged weight, so the caller
    re-evaluates it between the A and the B phase. Returns new (layer, state)
    objects; the inputs are left untouched.
    """
    return _altlora_family_step(layer, state, G, cfg, second_moment=False, eta=eta)


def altlora_plus_step(layer: LoraLayer, state: AltLoraState, G: Union[FullGradient, np.ndarray],
                      cfg: TrainConfig, eta: Optional[float] = None) -> Tuple[LoraLayer, AltLoraState]:
    """AltLoRA with AdamW-style elementwise second moments over the scaled gradient."""
    return _altlora_family_step(layer, state, G, cfg, second_moment=True, eta=eta)
