"""
Desk-scale studies built on the runner: the width-scaling probe for feature
learning, the condition-number study and the update-order / initialization
ablations.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.bench.experiment import ExperimentSpec
from src.bench.runner import run_experiment
from src.core.adapter import InitPolicy, init_layer
from src.core.matcore import gaussian, make_rng
from src.optim.baselines import optimizer_step
from src.optim.config import OptimizerKind, TrainConfig, UpdateOrder
from src.optim.state import init_state
from src.oracle.oracle import equivalent_update

logger = logging.getLogger(__name__)

DEFAULT_WIDTHS = (64, 128, 256, 512, 1024)


@dataclass
class WidthProbeResult:
    kind: OptimizerKind
    widths: List[int]
    magnitudes: List[float]
    slope: float


def probe_feature_update(n: int, kind: OptimizerKind, cfg: TrainConfig, seed: int, r: int = 4,
                         alpha: Optional[float] = None, grad_scale: float = 1.0) -> float:
    """
    ||Delta W x||_inf after two optimizer steps on a square n x n adapted layer.

    The gradient is that of the readout loss (1/n) sum_i delta_i^T W x_i over r
    probe samples, G = D X^T / n, which does not depend on W. AltLoRA-family
    optimizers take one B-phase then one A-phase; baselines take two joint steps.
    """
    rng = make_rng(seed)
    D = gaussian(rng, (n, r))
    Xp = gaussian(rng, (n, r))
    W0 = gaussian(rng, (n, n)) / np.sqrt(n)
    G = grad_scale * (D @ Xp.T) / n
    layer = init_layer(W0, r, alpha if alpha is not None else float(r), InitPolicy.KAIMING, InitPolicy.ZERO, seed=seed)
    if kind.is_alternating_family:
        cfg = cfg.model_copy(update={"order": UpdateOrder.B_FIRST})
    state = init_state(kind, layer)
    current = layer
    for _ in range(2):
        current, state = optimizer_step(kind, current, state, G, cfg, eta=cfg.eta)
    return float(np.max(np.abs(equivalent_update(layer, current) @ Xp[:, 0])))


def width_scaling_probe(widths: Sequence[int] = DEFAULT_WIDTHS, kind: OptimizerKind = OptimizerKind.ALTLORA,
                        cfg: Optional[TrainConfig] = None, seeds: int = 8, r: int = 4) -> WidthProbeResult:
    """
    Feature-update magnitude m(n) averaged over seeds, and the slope of log m(n) against log n.

    A slope near 0 means the update stays Theta(1) as the width grows. The slope
    is NaN when some m(n) is exactly 0 (e.g. eta = 0).
    """
    widths = list(widths)
    if len(widths) < 4 or any(b <= a for a, b in zip(widths, widths[1:])):
        raise ValueError(f"need at least 4 strictly increasing widths, got {widths}")
    kind = OptimizerKind(kind)
    cfg = cfg if cfg is not None else TrainConfig(eta=1.0, beta1=0.0)
    magnitudes = [
        float(np.mean([probe_feature_update(n, kind, cfg, seed, r=r) for seed in range(seeds)]))
        for n in widths
    ]
    if min(magnitudes) > 0.0:
        slope = float(np.polyfit(np.log(widths), np.log(magnitudes), 1)[0])
    else:
        slope = float("nan")
    logger.info(f"width probe {kind.value}: slope {slope:.3f} over widths {widths}")
    return WidthProbeResult(kind=kind, widths=widths, magnitudes=magnitudes, slope=slope)


def condition_number_study(base: ExperimentSpec, kappas: Iterable[float] = (1.0, 10.0, 100.0),
                           configs: Optional[Dict[OptimizerKind, TrainConfig]] = None) -> pd.DataFrame:
    """
    steps_to_threshold per (optimizer, kappa). A run that never reaches the
    threshold is reported as -1 with `censored` set.
    """
    configs = configs or {base.optimizer: base.train}
    rows = []
    for kind, cfg in configs.items():
        for kappa in kappas:
            spec = base.model_copy(update={"optimizer": OptimizerKind(kind), "train": cfg, "kappa": float(kappa)})
            record = run_experiment(spec)
            rows.append({
                "optimizer": OptimizerKind(kind).value,
                "kappa": float(kappa),
                "steps_to_threshold": record.steps_to_threshold,
                "censored": record.steps_to_threshold < 0,
                "steps": cfg.steps,
                "final_loss": record.final_loss(),
            })
    return pd.DataFrame(rows)


def threshold_ratio(study: pd.DataFrame, optimizer: str) -> float:
    """max/min steps_to_threshold across kappa; censored runs count as steps + 1."""
    rows = study[study["optimizer"] == optimizer]
    effective = np.where(rows["censored"], rows["steps"] + 1, rows["steps_to_threshold"])
    effective = np.maximum(effective, 1)
    return float(effective.max() / effective.min())


def effective_steps(study: pd.DataFrame, optimizer: str) -> List[int]:
    rows = study[study["optimizer"] == optimizer].sort_values("kappa")
    return [int(s + 1) if c else int(t) for s, t, c in zip(rows["steps"], rows["steps_to_threshold"], rows["censored"])]


def order_ablation(base: ExperimentSpec, orders: Iterable[UpdateOrder] = tuple(UpdateOrder)) -> pd.DataFrame:
    """Final loss and steps_to_threshold for each update order of an AltLoRA-family optimizer."""
    rows = []
    for order in orders:
        spec = base.model_copy(update={"train": base.train.model_copy(update={"order": UpdateOrder(order)})})
        record = run_experiment(spec)
        rows.append({"order": UpdateOrder(order).value, "final_loss": record.final_loss(),
                     "steps_to_threshold": record.steps_to_threshold})
    return pd.DataFrame(rows)


def init_ablation(base: ExperimentSpec, pairs: Iterable = (
        (InitPolicy.GAUSSIAN, InitPolicy.ZERO), (InitPolicy.ZERO, InitPolicy.GAUSSIAN),
        (InitPolicy.KAIMING, InitPolicy.ZERO), (InitPolicy.ZERO, InitPolicy.KAIMING),
        (InitPolicy.SPECTRAL, InitPolicy.ZERO), (InitPolicy.ZERO, InitPolicy.SPECTRAL))) -> pd.DataFrame:
    """Final loss for each (init_a, init_b) pair, one factor always zero so B A starts at 0."""
    rows = []
    for init_a, init_b in pairs:
        record = run_experiment(base.model_copy(update={"init_a": InitPolicy(init_a), "init_b": InitPolicy(init_b)}))
        rows.append({"init_a": InitPolicy(init_a).value, "init_b": InitPolicy(init_b).value,
                     "final_loss": record.final_loss(), "steps_to_threshold": record.steps_to_threshold})
    return pd.DataFrame(rows)
