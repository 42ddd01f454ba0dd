"""
Per-layer optimizer state and the low-rank memory guard.

Every buffer is r x d (A side) or k x r (B side); a state never carries a
k x d matrix. `assert_low_rank_state` enforces that on every step.
"""

import logging
from dataclasses import dataclass, fields, replace
from typing import Iterator, Optional, Tuple

import numpy as np

from src.core.adapter import LoraLayer
from src.core.errors import StateBudgetExceeded
from src.optim.config import OptimizerKind

logger = logging.getLogger(__name__)


@dataclass
class AltLoraState:
    MA: np.ndarray                       # first moment for A, aligned to prevB
    MB: np.ndarray                       # first moment for B, aligned to prevA
    prevA: Optional[np.ndarray] = None   # the A that MB was last formed against
    prevB: Optional[np.ndarray] = None   # the B that MA was last formed against
    VA: Optional[np.ndarray] = None
    VB: Optional[np.ndarray] = None
    t: int = 0
    tA: int = 0                          # per-factor update counts for bias correction
    tB: int = 0

    def buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, np.ndarray):
                yield f.name, value

    def entry_count(self) -> int:
        return sum(buf.size for _, buf in self.buffers())

    def copy(self) -> "AltLoraState":
        return replace(self, **{name: buf.copy() for name, buf in self.buffers()})


def init_state(kind: OptimizerKind, layer: LoraLayer) -> AltLoraState:
    """Zero moments; AltLoRA snapshots start at the initial factors so the first alignment is a no-op."""
    kind = OptimizerKind(kind)
    state = AltLoraState(MA=np.zeros_like(layer.A), MB=np.zeros_like(layer.B))
    if kind.is_alternating_family:
        state.prevA = layer.A.copy()
        state.prevB = layer.B.copy()
    if kind in (OptimizerKind.ALTLORA_PLUS, OptimizerKind.LORA_ADAM):
        state.VA = np.zeros_like(layer.A)
        state.VB = np.zeros_like(layer.B)
    return state


def state_budget(k: int, d: int, r: int) -> int:
    return 6 * (k * r + r * d)


def assert_low_rank_state(state: AltLoraState, k: int, d: int, r: int) -> None:
    allowed = {(r, d), (k, r)}
    for name, buf in state.buffers():
        if buf.shape not in allowed:
            raise StateBudgetExceeded(f"optimizer buffer {name} has shape {buf.shape}; only {sorted(allowed)} allowed")
    count = state.entry_count()
    if count > state_budget(k, d, r):
        raise StateBudgetExceeded(f"optimizer state holds {count} entries, budget is {state_budget(k, d, r)}")
