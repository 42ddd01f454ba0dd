"""
Brute-force verifiers for the closed forms used by the optimizers.

Nothing here reuses the kernels under test: least-squares problems are solved
from explicitly formed normal equations with a generic LU solve, and
merged-weight changes are materialized as dense k x d matrices. This module
is the only place allowed to hold k x d buffers.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from src.core.adapter import LoraLayer, forward, full_gradient, merged_weight
from src.core.errors import PreconditionViolated, ShapeMismatch, SingularSystem
from src.core.matcore import Side, Space, damped_gram_inverse, frobenius, projector, relative_error
from src.optim.altlora import altlora_step
from src.optim.baselines import baseline_step, optimizer_step
from src.optim.config import OptimizerKind, TrainConfig, UpdateOrder
from src.optim.state import AltLoraState, init_state

logger = logging.getLogger(__name__)


class Objective(str, Enum):
    LEFT_FACTOR = "LeftFactor"    # min_Z ||s B Z - G||
    RIGHT_FACTOR = "RightFactor"  # min_Z ||s Z A - G||
    MOMENTUM_B = "MomentumB"      # min_Z ||MB Aold - Z Anew||
    MOMENTUM_A = "MomentumA"      # min_Z ||Bold MA - Bnew Z||


def _solve_columns(K: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solves min ||K z_j - rhs_j|| for every column j through its normal equations."""
    normal = K.T @ K
    if np.linalg.matrix_rank(normal) < normal.shape[0]:
        raise SingularSystem(f"normal matrix of a {K.shape} system is rank deficient")
    solution = np.empty((K.shape[1], rhs.shape[1]))
    for j in range(rhs.shape[1]):
        solution[:, j] = np.linalg.solve(normal, K.T @ rhs[:, j])
    return solution


def lstsq_oracle(objective: Objective, *, s: float = 1.0, A: Optional[np.ndarray] = None,
                 B: Optional[np.ndarray] = None, G: Optional[np.ndarray] = None,
                 M: Optional[np.ndarray] = None, old: Optional[np.ndarray] = None,
                 new: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Solves one of the gradient/momentum approximation problems without the closed forms.

    Parameters:
    - LeftFactor:  s, B, G      -> Z (r x d)
    - RightFactor: s, A, G      -> Z (k x r)
    - MomentumB:   M, old, new  -> Z (k x r), old/new are the A factors
    - MomentumA:   M, old, new  -> Z (r x d), old/new are the B factors
    """
    objective = Objective(objective)
    if objective is Objective.LEFT_FACTOR:
        return _solve_columns(s * B, G)
    if objective is Objective.RIGHT_FACTOR:
        # ||s Z A - G|| = ||s A^T Z^T - G^T||
        return _solve_columns(s * A.T, G.T).T
    if objective is Objective.MOMENTUM_B:
        return _solve_columns(new.T, (M @ old).T).T
    return _solve_columns(new, old @ M)


def lstsq_residual(objective: Objective, Z: np.ndarray, *, s: float = 1.0, A=None, B=None, G=None,
                   M=None, old=None, new=None) -> float:
    objective = Objective(objective)
    if objective is Objective.LEFT_FACTOR:
        return frobenius(s * B @ Z - G)
    if objective is Objective.RIGHT_FACTOR:
        return frobenius(s * Z @ A - G)
    if objective is Objective.MOMENTUM_B:
        return frobenius(M @ old - Z @ new)
    return frobenius(old @ M - new @ Z)


def equivalent_update(layer_before: LoraLayer, layer_after: LoraLayer) -> np.ndarray:
    """
    The merged-weight change produced by a factor-space update,
    s (dB A + B dA + dB dA), formed from the factor deltas so W0 never cancels.
    """
    if layer_before.W0.shape != layer_after.W0.shape or layer_before.r != layer_after.r:
        raise ShapeMismatch("layers have different shapes")
    dA = layer_after.A - layer_before.A
    dB = layer_after.B - layer_before.B
    A, B = layer_before.A, layer_before.B
    return layer_before.s * (dB @ A + B @ dA + dB @ dA)


@dataclass
class DecompositionReport:
    projected_col_term: np.ndarray
    projected_row_term: np.ndarray
    cross_term: np.ndarray
    residual_norm: float
    predicted_cross_term: Optional[np.ndarray] = None
    alternating_update_norm: float = 0.0

    @property
    def relative_residual(self) -> float:
        if self.alternating_update_norm == 0.0:
            return self.residual_norm
        return self.residual_norm / self.alternating_update_norm

    @property
    def cross_term_error(self) -> float:
        return relative_error(self.cross_term, self.predicted_cross_term)


def predicted_cross_term(layer: LoraLayer, G: np.ndarray, eta: float, lam: float) -> np.ndarray:
    """(eta^2 / s) G A^T (A A^T + lam I)^-1 (B^T B + lam I)^-1 B^T G."""
    inv_a = damped_gram_inverse(layer.A, Side.RIGHT, lam)
    inv_b = damped_gram_inverse(layer.B, Side.LEFT, lam)
    return (eta * eta / layer.s) * (G @ layer.A.T @ inv_a @ inv_b @ layer.B.T @ G)


def decompose_pair_step(layer: LoraLayer, G_t: np.ndarray,
                        G_half: Union[np.ndarray, Callable[[LoraLayer], np.ndarray]],
                        cfg: TrainConfig) -> DecompositionReport:
    """
    Runs one A-phase then one B-phase of AltLoRA, and separately one ScaledGDJoint step, on copies.

    G_half is the full gradient at the half-step point; pass a callable to
    have it evaluated on the layer produced by the A-phase.
    """
    if cfg.beta1 != 0.0:
        raise PreconditionViolated("pair decomposition needs beta1 = 0 (pure projected gradient)")
    eta, lam = cfg.eta, cfg.lam
    alt_cfg = cfg.model_copy(update={"order": UpdateOrder.A_FIRST})

    half, state = altlora_step(layer.copy(), init_state(OptimizerKind.ALTLORA, layer), G_t, alt_cfg, eta=eta)
    g_half = G_half(half) if callable(G_half) else G_half
    full, _ = altlora_step(half, state, g_half, alt_cfg, eta=eta)
    delta_alt = equivalent_update(layer, full)

    col_term = -eta * projector(layer.B, Space.COLUMN, lam) @ G_t
    row_term = -eta * g_half @ projector(half.A, Space.ROW, lam)
    residual = frobenius(delta_alt - col_term - row_term)

    joint, _ = baseline_step(OptimizerKind.SCALED_GD_JOINT, layer.copy(),
                             init_state(OptimizerKind.SCALED_GD_JOINT, layer), G_t, cfg, eta=eta)
    delta_joint = equivalent_update(layer, joint)
    first_order = -eta * projector(layer.B, Space.COLUMN, lam) @ G_t - eta * G_t @ projector(layer.A, Space.ROW, lam)
    return DecompositionReport(
        projected_col_term=col_term,
        projected_row_term=row_term,
        cross_term=delta_joint - first_order,
        residual_norm=residual,
        predicted_cross_term=predicted_cross_term(layer, G_t, eta, lam),
        alternating_update_norm=frobenius(delta_alt),
    )


def projector_gauge_check(A1: np.ndarray, B1: np.ndarray, A2: np.ndarray, B2: np.ndarray,
                          tol: float = 1e-9) -> Tuple[bool, float]:
    """Compares the column/row-space projectors of two factorizations of the same product."""
    if relative_error(B2 @ A2, B1 @ A1) > 1e-10:
        raise PreconditionViolated("factorizations do not have the same product B A")
    deviation = max(
        relative_error(projector(B2, Space.COLUMN, 0.0), projector(B1, Space.COLUMN, 0.0)),
        relative_error(projector(A2, Space.ROW, 0.0), projector(A1, Space.ROW, 0.0)),
    )
    return deviation <= tol, deviation


def gauge_layer(layer: LoraLayer, R: np.ndarray) -> LoraLayer:
    """B2 = B R, A2 = R^-1 A."""
    return layer.with_factors(np.linalg.solve(R, layer.A), layer.B @ R)


def gauge_state(state: AltLoraState, R: np.ndarray) -> AltLoraState:
    """
    Maps optimizer state across a gauge: B-side buffers are right-multiplied by R,
    A-side buffers left-multiplied by R^-1. Second moments are copied unchanged.
    """
    mapped = state.copy()
    mapped.MA = np.linalg.solve(R, state.MA)
    mapped.MB = state.MB @ R
    if state.prevA is not None:
        mapped.prevA = np.linalg.solve(R, state.prevA)
    if state.prevB is not None:
        mapped.prevB = state.prevB @ R
    return mapped


@dataclass
class InvarianceReport:
    deviations: List[float] = field(default_factory=list)
    tol: float = 1e-6

    @property
    def max_deviation(self) -> float:
        return max(self.deviations) if self.deviations else 0.0

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tol


def _advance(kind: OptimizerKind, model, state: AltLoraState, task, cfg: TrainConfig) -> AltLoraState:
    _, cache = forward(model, task.X)
    G = full_gradient(model, task.X, task.Y, cache)[0]
    model.layer, state = optimizer_step(kind, model.layer, state, G, cfg)
    return state


def trajectory_invariance_check(task, cfg: TrainConfig, R: np.ndarray, steps: int = 50, tol: float = 1e-6,
                                kind: OptimizerKind = OptimizerKind.ALTLORA,
                                initial_state: Optional[AltLoraState] = None) -> InvarianceReport:
    """
    Trains from two gauge-equivalent factorizations and compares merged weights after every step.

    `task` needs `model`, `X` and `Y` attributes (see src.data.tasks.Task).
    Both runs recompute the full gradient before every step.
    """
    kind = OptimizerKind(kind)
    if kind.is_alternating_family and cfg.lam != 0.0:
        raise PreconditionViolated("exact transformation invariance needs undamped Grams (lambda = 0)")
    model1 = task.model.copy()
    model2 = task.model.copy()
    model2.layer = gauge_layer(model1.layer, R)
    state1 = initial_state.copy() if initial_state is not None else init_state(kind, model1.layer)
    state2 = gauge_state(state1, R)

    report = InvarianceReport(tol=tol)
    report.deviations.append(relative_error(merged_weight(model2.layer), merged_weight(model1.layer)))
    for _ in range(steps):
        state1 = _advance(kind, model1, state1, task, cfg)
        state2 = _advance(kind, model2, state2, task, cfg)
        report.deviations.append(relative_error(merged_weight(model2.layer), merged_weight(model1.layer)))
    logger.debug(f"invariance check {kind.value}: max deviation {report.max_deviation:.3e} over {steps} steps")
    return report
