"""
Synthetic fine-tuning tasks with a controllable condition number.

Both generators are deterministic per seed: the same ExperimentSpec always
produces bit-identical teacher, data and student initialization.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.bench.experiment import ConditionOn, ExperimentSpec, TaskKind
from src.core.adapter import ModelKind, ToyModel, forward, init_layer
from src.core.matcore import gaussian, make_rng, random_orthogonal

logger = logging.getLogger(__name__)

DEFAULT_SIGMA_MAX = {TaskKind.LOW_RANK_FACTORIZATION: 10.0, TaskKind.TWO_LAYER_RELU: 1.0}


@dataclass
class Task:
    model: ToyModel
    X: np.ndarray               # d x m, one sample per column
    Y: np.ndarray               # targets, one column per sample
    teacher_weight: np.ndarray  # the adapted layer's weight in the teacher network
    residual: np.ndarray        # teacher_weight - W0


def spectrum(sigma_max: float, kappa: float, count: int) -> np.ndarray:
    """`count` values log-spaced from sigma_max down to sigma_max / kappa."""
    if count == 1:
        return np.array([sigma_max])
    return np.geomspace(sigma_max, sigma_max / kappa, count)


def low_rank_residual(rng: np.random.Generator, rows: int, cols: int, rank: int,
                      sigma: np.ndarray) -> np.ndarray:
    U = random_orthogonal(rng, rows)[:, :rank]
    V = random_orthogonal(rng, cols)[:, :rank]
    return (U * sigma) @ V.T


def conditioned_inputs(rng: np.random.Generator, d: int, m: int, kappa: float) -> np.ndarray:
    """
    Gaussian inputs whitened to identity empirical covariance, then reshaped so
    that X X^T / m has eigenvalues log-spaced over [1/kappa, 1].
    """
    Z = gaussian(rng, (d, m))
    evals, evecs = np.linalg.eigh(Z @ Z.T / m)
    Z = evecs @ np.diag(evals ** -0.5) @ evecs.T @ Z
    Q = random_orthogonal(rng, d)
    scales = np.sqrt(spectrum(1.0, kappa, d))
    return (Q * scales) @ Q.T @ Z


def _sigma_max(spec: ExperimentSpec) -> float:
    return spec.sigma_max if spec.sigma_max is not None else DEFAULT_SIGMA_MAX[spec.task]


def gen_lowrank_task(spec: ExperimentSpec) -> Tuple[ToyModel, Task]:
    """
    Linear regression toward W* = W0 + Delta*, with Delta* of rank r* whose
    singular values are log-spaced over [sigma_max / kappa, sigma_max].
    """
    spec.check()
    rng = make_rng(spec.seed)
    k, d, m = spec.k, spec.d, spec.sample_count
    target = spec.condition_target
    teacher_kappa = spec.kappa if target in (ConditionOn.TEACHER, ConditionOn.BOTH) else 1.0
    data_kappa = spec.kappa if target in (ConditionOn.DATA, ConditionOn.BOTH) else 1.0

    W0 = gaussian(rng, (k, d)) / np.sqrt(d)
    residual = low_rank_residual(rng, k, d, spec.teacher_rank, spectrum(_sigma_max(spec), teacher_kappa, spec.teacher_rank))
    if data_kappa > 1.0:
        X = conditioned_inputs(rng, d, m, data_kappa)
    else:
        X = gaussian(rng, (d, m))
    W_star = W0 + residual
    Y = W_star @ X

    layer = init_layer(W0, spec.r, spec.alpha, spec.init_a, spec.init_b, seed=spec.seed + 1)
    model = ToyModel(kind=ModelKind.LINEAR_REGRESSION, layer=layer)
    logger.debug(f"low-rank task k={k} d={d} r*={spec.teacher_rank} kappa={spec.kappa} seed={spec.seed}")
    return model, Task(model=model, X=X, Y=Y, teacher_weight=W_star, residual=residual)


def gen_relu_task(spec: ExperimentSpec) -> Tuple[ToyModel, Task]:
    """
    Teacher-student two-layer ReLU regression. The student adapts the first
    layer (width x d) of a network whose frozen readout W2 it shares with the
    teacher; the teacher's first layer is W0 plus a rank-r* perturbation.
    """
    spec.check()
    rng = make_rng(spec.seed)
    n, d, k, m = spec.width, spec.d, spec.k, spec.sample_count
    target = spec.condition_target
    teacher_kappa = spec.kappa if target in (ConditionOn.TEACHER, ConditionOn.BOTH) else 1.0
    data_kappa = spec.kappa if target in (ConditionOn.DATA, ConditionOn.BOTH) else 1.0

    W0 = gaussian(rng, (n, d)) / np.sqrt(d)
    W2 = gaussian(rng, (k, n)) / np.sqrt(n)
    residual = low_rank_residual(rng, n, d, spec.teacher_rank, spectrum(_sigma_max(spec), teacher_kappa, spec.teacher_rank))
    X = conditioned_inputs(rng, d, m, data_kappa)
    W_star = W0 + residual
    teacher = ToyModel(kind=ModelKind.TWO_LAYER_RELU, layer=init_layer(W_star, 1, 1.0, "Zero", "Zero"), W2=W2)
    Y, _ = forward(teacher, X)

    layer = init_layer(W0, spec.r, spec.alpha, spec.init_a, spec.init_b, seed=spec.seed + 1)
    model = ToyModel(kind=ModelKind.TWO_LAYER_RELU, layer=layer, W2=W2)
    return model, Task(model=model, X=X, Y=Y, teacher_weight=W_star, residual=residual)


def make_task(spec: ExperimentSpec) -> Task:
    if spec.task is TaskKind.LOW_RANK_FACTORIZATION:
        return gen_lowrank_task(spec)[1]
    return gen_relu_task(spec)[1]
