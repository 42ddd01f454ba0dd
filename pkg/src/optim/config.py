import math
from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.core.matcore import DEFAULT_LAMBDA


class OptimizerKind(str, Enum):
    ALTLORA = "AltLoRA"
    ALTLORA_PLUS = "AltLoRAPlus"
    LORA_SGD = "LoraSGD"
    LORA_ADAM = "LoraAdam"
    LORA_PLUS = "LoraPlus"
    SCALED_GD_JOINT = "ScaledGDJoint"
    LORA_PRO_SGD = "LoraProSGD"

    @property
    def is_alternating_family(self) -> bool:
        return self in (OptimizerKind.ALTLORA, OptimizerKind.ALTLORA_PLUS)


BASELINE_KINDS = (
    OptimizerKind.LORA_SGD,
    OptimizerKind.LORA_ADAM,
    OptimizerKind.LORA_PLUS,
    OptimizerKind.SCALED_GD_JOINT,
    OptimizerKind.LORA_PRO_SGD,
)


class UpdateOrder(str, Enum):
    A_FIRST = "AFirst"
    B_FIRST = "BFirst"
    JOINT = "Joint"


class Schedule(str, Enum):
    CONSTANT = "constant"
    COSINE = "cosine"


class TrainConfig(BaseModel):
    """Hyper-parameters shared by every optimizer; unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    eta: float = Field(1e-2, ge=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    gamma: float = Field(0.0, ge=0.0)
    lam: float = Field(DEFAULT_LAMBDA, ge=0.0, alias="lambda")
    order: UpdateOrder = UpdateOrder.B_FIRST
    steps: int = Field(1000, ge=0)
    eps: float = Field(1e-8, gt=0.0)
    bias_correction: bool = True
    lora_plus_ratio: float = Field(16.0, gt=0.0)
    schedule: Schedule = Schedule.CONSTANT
    warmup_ratio: float = Field(0.0, ge=0.0, lt=1.0)

    @field_validator("order", mode="before")
    @classmethod
    def _order_case(cls, value):
        # accept "bfirst" / "B_FIRST" style spellings from hand-written sweep files
        if isinstance(value, str):
            for member in UpdateOrder:
                if value.replace("_", "").lower() == member.value.lower():
                    return member
        return value

    def lr_at(self, step: int) -> float:
        """Learning rate of optimizer step `step` (0-based) under the configured schedule."""
        if self.steps == 0:
            return self.eta
        warmup = int(math.ceil(self.warmup_ratio * self.steps))
        if step < warmup:
            return self.eta * (step + 1) / warmup
        if self.schedule is Schedule.CONSTANT:
            return self.eta
        span = max(self.steps - warmup, 1)
        progress = min((step - warmup) / span, 1.0)
        return self.eta * 0.5 * (1.0 + math.cos(math.pi * progress))
