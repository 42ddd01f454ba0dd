"""
Declarative experiment description and the metric stream a run produces.
"""

import json
import logging
import os
import subprocess
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd
import psutil
from pydantic import BaseModel, ConfigDict, Field

from src import __version__
from src.core.adapter import InitPolicy
from src.core.errors import InvalidSpec
from src.optim.config import OptimizerKind, TrainConfig

logger = logging.getLogger(__name__)

RECORD_COLUMNS = ["step", "loss", "weight_err", "grad_norm", "state_entries", "flops"]
LOSS_THRESHOLD = 1e-3
DIVERGENCE_CEILING = 1e6


class TaskKind(str, Enum):
    LOW_RANK_FACTORIZATION = "LowRankFactorization"
    TWO_LAYER_RELU = "TwoLayerRelu"


class ConditionOn(str, Enum):
    TEACHER = "teacher"  # spectrum of the teacher residual
    DATA = "data"        # spectrum of the input covariance
    BOTH = "both"


class ExperimentSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    task: TaskKind = TaskKind.LOW_RANK_FACTORIZATION
    k: int = Field(32, ge=1)
    d: int = Field(32, ge=1)
    r: int = Field(8, ge=1)
    width: int = Field(128, ge=1)
    teacher_rank: int = Field(4, ge=1)
    kappa: float = Field(1.0, ge=1.0)
    condition_on: Optional[ConditionOn] = None
    sigma_max: Optional[float] = Field(None, gt=0.0)
    samples: Optional[int] = Field(None, ge=1)
    optimizer: OptimizerKind = OptimizerKind.ALTLORA
    train: TrainConfig = Field(default_factory=TrainConfig)
    alpha: float = Field(16.0, gt=0.0)
    init_a: InitPolicy = InitPolicy.KAIMING
    init_b: InitPolicy = InitPolicy.ZERO
    seed: int = 0
    eval_every: int = Field(10, ge=1)

    @property
    def condition_target(self) -> ConditionOn:
        if self.condition_on is not None:
            return self.condition_on
        return ConditionOn.TEACHER if self.task is TaskKind.LOW_RANK_FACTORIZATION else ConditionOn.DATA

    @property
    def sample_count(self) -> int:
        return self.samples if self.samples is not None else 4 * self.d

    def check(self) -> None:
        """Raises InvalidSpec when the shapes cannot describe a valid task."""
        if self.sample_count < self.d:
            raise InvalidSpec(f"need at least d={self.d} samples to whiten the inputs, got {self.sample_count}")
        if self.task is TaskKind.LOW_RANK_FACTORIZATION:
            if not self.teacher_rank <= self.r <= min(self.k, self.d):
                raise InvalidSpec(
                    f"need teacher_rank <= r <= min(k, d); got r*={self.teacher_rank}, r={self.r}, k={self.k}, d={self.d}"
                )
        else:
            if self.width < 4 * self.d:
                raise InvalidSpec(f"two-layer student needs width >= 4 d; got width={self.width}, d={self.d}")
            if self.r > min(self.width, self.d) or self.teacher_rank > min(self.width, self.d):
                raise InvalidSpec(f"ranks r={self.r}, r*={self.teacher_rank} exceed min(width, d)")

    def run_name(self) -> str:
        return (f"{self.optimizer.value}__eta={self.train.eta:g}__alpha={self.alpha:g}"
                f"__order={self.train.order.value}__kappa={self.kappa:g}__seed={self.seed}")


@dataclass
class RunRecord:
    spec: ExperimentSpec
    rows: List[Dict[str, Any]] = field(default_factory=list)
    steps_to_threshold: int = -1
    diverged: bool = False

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.rows, columns=RECORD_COLUMNS)
        return frame.astype({"step": "int64", "state_entries": "int64", "flops": "int64"})

    def to_csv(self) -> str:
        return self.to_frame().to_csv(index=False, float_format="%.17g", lineterminator="\n")

    def final_loss(self) -> Optional[float]:
        return float(self.rows[-1]["loss"]) if self.rows else None

    def sidecar(self) -> Dict[str, Any]:
        return {
            "spec": self.spec.model_dump(mode="json", by_alias=True),
            "run_name": self.spec.run_name(),
            "steps_to_threshold": self.steps_to_threshold,
            "loss_threshold": LOSS_THRESHOLD,
            "final_loss": self.final_loss(),
            "diverged": self.diverged,
            "build_id": build_id(),
            "host": host_info(),
        }


def build_id() -> str:
    try:
        result = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                                timeout=5, cwd=Path(__file__).resolve().parent)
        if result.returncode == 0 and result.stdout.strip():
            return result.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"altlora-bench-{__version__}"


def host_info() -> Dict[str, Any]:
    return {
        "cpu_count": psutil.cpu_count(logical=True),
        "memory_total_bytes": psutil.virtual_memory().total,
    }


def atomic_write_text(path: Path, text: str) -> None:
    """Writes to a temp file in the target directory, then renames it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_record(record: RunRecord, out_dir: Path) -> Path:
    """Writes `<run_name>.csv` then its JSON sidecar; the sidecar marks the run complete."""
    out_dir = Path(out_dir)
    name = record.spec.run_name()
    csv_path = out_dir / f"{name}.csv"
    atomic_write_text(csv_path, record.to_csv())
    atomic_write_text(out_dir / f"{name}.json", json.dumps(record.sidecar(), indent=2, sort_keys=True) + "\n")
    logger.info(f"Run {name} written to {out_dir}")
    return csv_path
