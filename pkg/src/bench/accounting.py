"""
State-size and FLOP accounting per optimizer.

Entry counts come from the buffer layouts in src.optim.state; the full-moment
layout of LoRA-Pro is only computed here, never allocated.
"""

from dataclasses import dataclass
from typing import Union

from src.core.adapter import ModelKind
from src.optim.config import OptimizerKind, UpdateOrder

FULL_MOMENT = "LoraProFullMoment"

# (kr + rd)-sized buffers kept between steps, matching init_state
_PERSISTENT_BUFFERS = {
    OptimizerKind.ALTLORA: 2,        # M, prev snapshots
    OptimizerKind.ALTLORA_PLUS: 3,   # + V
    OptimizerKind.LORA_SGD: 1,
    OptimizerKind.LORA_PLUS: 1,
    OptimizerKind.SCALED_GD_JOINT: 1,
    OptimizerKind.LORA_PRO_SGD: 1,
    OptimizerKind.LORA_ADAM: 2,
}
_SCALED = {OptimizerKind.ALTLORA, OptimizerKind.ALTLORA_PLUS, OptimizerKind.SCALED_GD_JOINT, OptimizerKind.LORA_PRO_SGD}
_ADAPTIVE = {OptimizerKind.ALTLORA_PLUS, OptimizerKind.LORA_ADAM}


def _working_buffers(kind: OptimizerKind) -> int:
    """Raw gradients, plus the scaled gradient and the adaptive direction where the method forms them."""
    return 1 + (kind in _SCALED) + (kind in _ADAPTIVE)


@dataclass(frozen=True)
class StateAccount:
    method: str
    trainable: int
    persistent_state: int
    optimizer_state: int
    peak_verification: int


def state_accounting(k: int, d: int, r: int, method: Union[OptimizerKind, str]) -> StateAccount:
    """
    Exact entry counts for one adapted k x d layer of rank r.

    persistent_state is what survives between steps (AltLoraState.entry_count);
    optimizer_state adds the per-step gradient/direction buffers, which gives
    4(kr + rd) for AltLoRA and 6(kr + rd) for AltLoRA+. peak_verification is
    what the oracle materializes when it checks a pair step: both projectors
    (k^2 + d^2) and four k x d update terms.
    """
    low_rank = k * r + r * d
    peak = k * k + d * d + 4 * k * d
    if method == FULL_MOMENT:
        return StateAccount(method=FULL_MOMENT, trainable=low_rank, persistent_state=2 * k * d,
                            optimizer_state=2 * k * d, peak_verification=peak)
    kind = OptimizerKind(method)
    persistent = _PERSISTENT_BUFFERS[kind]
    return StateAccount(method=kind.value, trainable=low_rank, persistent_state=persistent * low_rank,
                        optimizer_state=(persistent + _working_buffers(kind)) * low_rank, peak_verification=peak)


def step_flops(kind: OptimizerKind, k: int, d: int, r: int, m: int,
               model_kind: ModelKind = ModelKind.LINEAR_REGRESSION, out_dim: int = 0,
               order: UpdateOrder = UpdateOrder.B_FIRST) -> int:
    """
    Multiply-add count (x2) of one optimizer step including the gradient evaluation.

    Forward/backward: merged weight 2kdr, W X and dY X^T 4kdm, readout 4*out*k*m.
    LoRA gradients: 2krd per factor touched; the AltLoRA family touches one factor
    per step unless `order` is Joint. The scaled-gradient optimizers add the r x r
    Gram work, an r^3 Cholesky/inverse and the O(r^2 (k+d)) applications.
    """
    kind = OptimizerKind(kind)
    flops = 2 * k * d * r + 4 * k * d * m
    if ModelKind(model_kind) is ModelKind.TWO_LAYER_RELU:
        flops += 4 * out_dim * k * m + k * m
    factors = 1 if kind.is_alternating_family and UpdateOrder(order) is not UpdateOrder.JOINT else 2
    flops += factors * 2 * k * r * d
    if kind in (OptimizerKind.ALTLORA, OptimizerKind.ALTLORA_PLUS):
        side = max(k, d)
        # Gram + inverse + apply, then the alignment product old^T new
        flops += factors * (2 * side * r * r + 2 * r ** 3 + 2 * r * r * side + 2 * side * r * r + 2 * r ** 3)
    elif kind in (OptimizerKind.SCALED_GD_JOINT, OptimizerKind.LORA_PRO_SGD):
        flops += 2 * (2 * (k + d) * r * r + 2 * r ** 3)
    elementwise = 6 if kind in (OptimizerKind.ALTLORA_PLUS, OptimizerKind.LORA_ADAM) else 3
    flops += elementwise * (k * r + r * d)
    return int(flops)
