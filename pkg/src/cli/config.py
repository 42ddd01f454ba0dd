import itertools
import json
import logging
import os
from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field

from src.bench.experiment import ExperimentSpec
from src.optim.config import OptimizerKind, UpdateOrder

logger = logging.getLogger(__name__)

OUT_ENV_VAR = "ALTLORA_OUT"
DEFAULT_OUT_DIR = "runs"


class SweepGrid(BaseModel):
    """Sweep axes; an axis left unset takes the single value from the base config."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    eta: Optional[List[float]] = Field(None, min_length=1)
    alpha: Optional[List[float]] = Field(None, min_length=1)
    order: Optional[List[UpdateOrder]] = Field(None, min_length=1)
    optimizer: Optional[List[OptimizerKind]] = Field(None, min_length=1)
    kappa: Optional[List[float]] = Field(None, min_length=1)
    seed: Optional[List[int]] = Field(None, min_length=1)

    def cells(self, base: ExperimentSpec) -> List[ExperimentSpec]:
        axes = [
            self.eta or [base.train.eta],
            self.alpha or [base.alpha],
            self.order or [base.train.order],
            self.optimizer or [base.optimizer],
            self.kappa or [base.kappa],
            self.seed or [base.seed],
        ]
        cells = []
        for eta, alpha, order, optimizer, kappa, seed in itertools.product(*axes):
            train = base.train.model_copy(update={"eta": float(eta), "order": UpdateOrder(order)})
            cells.append(base.model_copy(update={
                "train": train, "alpha": float(alpha), "optimizer": OptimizerKind(optimizer),
                "kappa": float(kappa), "seed": int(seed),
            }))
        return cells


class CliConfig(ExperimentSpec):
    """An ExperimentSpec plus the output directory and, for sweeps, the grid axes."""

    out_dir: Optional[str] = None
    grid: Optional[SweepGrid] = None

    def to_spec(self) -> ExperimentSpec:
        spec = ExperimentSpec.model_validate(self.model_dump(exclude={"out_dir", "grid"}, by_alias=True))
        spec.check()
        return spec

    def sweep_cells(self) -> List[ExperimentSpec]:
        base = self.to_spec()
        cells = (self.grid or SweepGrid()).cells(base)
        for cell in cells:
            cell.check()
        return cells


def load_config(path: Path) -> CliConfig:
    """
    Reads a JSON config file.

    Raises:
    - FileNotFoundError, json.JSONDecodeError, pydantic.ValidationError
    """
    path = Path(path)
    with open(path) as handle:
        payload = json.load(handle)
    config = CliConfig.model_validate(payload)
    logger.info(f"Loaded config from: {path}")
    return config


def resolve_out_dir(flag: Optional[str], config: Optional[CliConfig] = None) -> Path:
    if flag:
        return Path(flag)
    if os.environ.get(OUT_ENV_VAR):
        return Path(os.environ[OUT_ENV_VAR])
    if config is not None and config.out_dir:
        return Path(config.out_dir)
    return Path(DEFAULT_OUT_DIR)
