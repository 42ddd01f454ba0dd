"""
The named verification suite behind `verify`.

Each check draws its own seeded random instances, compares a closed form or
a structural property against an oracle, and returns a CheckResult. A check
that raises is recorded as failed, with the error message as detail.
"""

import fnmatch
import json
import logging
import time
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from src.bench import accounting, probes
from src.bench.experiment import ExperimentSpec, TaskKind, atomic_write_text
from src.bench.runner import run_experiment
from src.core import adapter
from src.core.adapter import InitPolicy, ModelKind, ToyModel
from src.core.matcore import gauge_sample, gaussian, make_rng, relative_error
from src.data.tasks import Task, gen_lowrank_task, make_task
from src.optim import altlora, baselines
from src.optim.config import OptimizerKind, TrainConfig, UpdateOrder
from src.optim.state import init_state, state_budget
from src.oracle import oracle
from src.oracle.oracle import Objective

logger = logging.getLogger(__name__)

CLOSED_FORM_TOL = 1e-9
DECOMPOSITION_TOL = 1e-10


@dataclass
class CheckResult:
    name: str
    instances: int
    max_deviation: float
    passed: bool
    detail: str = ""
    seconds: float = 0.0


CheckFn = Callable[[], CheckResult]
REGISTRY: Dict[str, CheckFn] = {}


def check(name: str):
    def register(fn: CheckFn) -> CheckFn:
        REGISTRY[name] = fn
        return fn
    return register


def _random_dims(rng: np.random.Generator, max_dim: int = 64, max_rank: int = 8):
    r = int(rng.integers(1, max_rank + 1))
    k = int(rng.integers(2 * r, max_dim + 1))
    d = int(rng.integers(2 * r, max_dim + 1))
    return k, d, r


def _instance_layer(rng: np.random.Generator, k: int, d: int, r: int, scale_w0: float = 1.0) -> adapter.LoraLayer:
    W0 = scale_w0 * gaussian(rng, (k, d)) / np.sqrt(d)
    return adapter.LoraLayer(W0=W0, A=gaussian(rng, (r, d)) / np.sqrt(d), B=gaussian(rng, (k, r)) / np.sqrt(r),
                             alpha=float(rng.uniform(0.5, 4.0)) * r)


def _linear_task(seed: int, k: int = 12, d: int = 20, r: int = 3, m: Optional[int] = None) -> Task:
    """Linear regression with a non-degenerate Gaussian initialization of both factors."""
    rng = make_rng(seed)
    layer = _instance_layer(rng, k, d, r)
    X = gaussian(rng, (d, m or 4 * d))
    W_star = layer.W0 + gaussian(rng, (k, r)) @ gaussian(rng, (r, d)) / np.sqrt(d)
    model = ToyModel(kind=ModelKind.LINEAR_REGRESSION, layer=layer)
    return Task(model=model, X=X, Y=W_star @ X, teacher_weight=W_star, residual=W_star - layer.W0)


# --- closed-form optimality ---------------------------------------------------

@check("closed_form_scaled_grad_A")
def check_scaled_grad_A(instances: int = 200) -> CheckResult:
    rng = make_rng(101)
    worst = 0.0
    for _ in range(instances):
        k, d, r = _random_dims(rng)
        s = float(rng.uniform(0.5, 4.0))
        B, G = gaussian(rng, (k, r)), gaussian(rng, (k, d))
        got = altlora.scaled_grad_A(s * B.T @ G, B, s, 0.0)
        want = oracle.lstsq_oracle(Objective.LEFT_FACTOR, s=s, B=B, G=G)
        worst = max(worst, relative_error(got, want))
    return CheckResult("closed_form_scaled_grad_A", instances, worst, worst <= CLOSED_FORM_TOL)


@check("closed_form_scaled_grad_B")
def check_scaled_grad_B(instances: int = 200) -> CheckResult:
    rng = make_rng(102)
    worst = 0.0
    for _ in range(instances):
        k, d, r = _random_dims(rng)
        s = float(rng.uniform(0.5, 4.0))
        A, G = gaussian(rng, (r, d)), gaussian(rng, (k, d))
        got = altlora.scaled_grad_B(s * G @ A.T, A, s, 0.0)
        want = oracle.lstsq_oracle(Objective.RIGHT_FACTOR, s=s, A=A, G=G)
        worst = max(worst, relative_error(got, want))
    return CheckResult("closed_form_scaled_grad_B", instances, worst, worst <= CLOSED_FORM_TOL)


@check("momentum_alignment_A")
def check_align_A(instances: int = 200) -> CheckResult:
    rng = make_rng(103)
    worst = 0.0
    for _ in range(instances):
        k, d, r = _random_dims(rng)
        MA, Bold, Bnew = gaussian(rng, (r, d)), gaussian(rng, (k, r)), gaussian(rng, (k, r))
        got = altlora.align_momentum_A(MA, Bold, Bnew, 0.0)
        want = oracle.lstsq_oracle(Objective.MOMENTUM_A, M=MA, old=Bold, new=Bnew)
        worst = max(worst, relative_error(got, want))
    return CheckResult("momentum_alignment_A", instances, worst, worst <= CLOSED_FORM_TOL)


@check("momentum_alignment_B")
def check_align_B(instances: int = 200) -> CheckResult:
    rng = make_rng(104)
    worst = 0.0
    for _ in range(instances):
        k, d, r = _random_dims(rng)
        MB, Aold, Anew = gaussian(rng, (k, r)), gaussian(rng, (r, d)), gaussian(rng, (r, d))
        got = altlora.align_momentum_B(MB, Aold, Anew, 0.0)
        want = oracle.lstsq_oracle(Objective.MOMENTUM_B, M=MB, old=Aold, new=Anew)
        worst = max(worst, relative_error(got, want))
    return CheckResult("momentum_alignment_B", instances, worst, worst <= CLOSED_FORM_TOL)


# --- update decomposition -----------------------------------------------------

def _half_gradient(task: Task):
    def evaluate(layer: adapter.LoraLayer) -> np.ndarray:
        model = ToyModel(kind=task.model.kind, layer=layer, W2=task.model.W2)
        _, cache = adapter.forward(model, task.X)
        return adapter.full_gradient(model, task.X, task.Y, cache)[0].G
    return evaluate


def _task_gradient(task: Task) -> np.ndarray:
    return _half_gradient(task)(task.model.layer)


@check("pair_decomposition")
def check_pair_decomposition(instances: int = 100) -> CheckResult:
    worst_residual, worst_cross = 0.0, 0.0
    for i in range(instances):
        rng = make_rng(2000 + i)
        k, d, r = _random_dims(rng, max_dim=32, max_rank=4)
        task = _linear_task(2000 + i, k, d, r)
        cfg = TrainConfig(eta=float(rng.uniform(1e-3, 5e-2)), beta1=0.0, lam=0.0)
        report = oracle.decompose_pair_step(task.model.layer, _task_gradient(task), _half_gradient(task), cfg)
        worst_residual = max(worst_residual, report.relative_residual)
        worst_cross = max(worst_cross, report.cross_term_error)
    worst = max(worst_residual, worst_cross)
    return CheckResult("pair_decomposition", instances, worst, worst <= DECOMPOSITION_TOL,
                       detail=f"alternating residual {worst_residual:.2e}, cross-term error {worst_cross:.2e}")


@check("pair_decomposition_eta_order")
def check_eta_order() -> CheckResult:
    etas = np.array([1e-2, 1e-3, 1e-4])
    task = _linear_task(31, 12, 20, 3)
    G = _task_gradient(task)
    col, row, cross = [], [], []
    for eta in etas:
        report = oracle.decompose_pair_step(task.model.layer, G, _half_gradient(task),
                                            TrainConfig(eta=float(eta), beta1=0.0, lam=0.0))
        col.append(np.linalg.norm(report.projected_col_term))
        row.append(np.linalg.norm(report.projected_row_term))
        cross.append(np.linalg.norm(report.cross_term))
    slopes = [float(np.polyfit(np.log(etas), np.log(v), 1)[0]) for v in (col, row, cross)]
    deviation = max(abs(slopes[0] - 1.0), abs(slopes[1] - 1.0), abs(slopes[2] - 2.0))
    return CheckResult("pair_decomposition_eta_order", len(etas), deviation, deviation <= 0.01,
                       detail=f"slopes col={slopes[0]:.4f} row={slopes[1]:.4f} cross={slopes[2]:.4f}")


# --- transformation invariance -------------------------------------------------

@check("projector_gauge")
def check_projector_gauge(instances: int = 200) -> CheckResult:
    worst = 0.0
    for i in range(instances):
        rng = make_rng(3000 + i)
        k, d, r = _random_dims(rng, max_dim=32, max_rank=6)
        A1, B1 = gaussian(rng, (r, d)), gaussian(rng, (k, r))
        R = gauge_sample(r, 10.0, seed=3000 + i)
        _, deviation = oracle.projector_gauge_check(A1, B1, np.linalg.solve(R, A1), B1 @ R)
        worst = max(worst, deviation)
    return CheckResult("projector_gauge", instances, worst, worst <= CLOSED_FORM_TOL)


def _invariance_worst(kind: OptimizerKind, cfg: TrainConfig, gauges: int, steps: int = 50) -> float:
    worst = 0.0
    for i in range(gauges):
        task = _linear_task(4000 + i)
        R = gauge_sample(task.model.layer.r, 10.0, seed=4000 + i)
        report = oracle.trajectory_invariance_check(task, cfg, R, steps=steps, kind=kind)
        worst = max(worst, report.max_deviation)
    return worst


@check("trajectory_invariance_altlora")
def check_trajectory_invariance(gauges: int = 20) -> CheckResult:
    worst_plain = _invariance_worst(OptimizerKind.ALTLORA, TrainConfig(eta=0.05, beta1=0.0, lam=0.0), gauges)
    worst_momentum = _invariance_worst(OptimizerKind.ALTLORA, TrainConfig(eta=0.05, beta1=0.9, lam=0.0), gauges)
    worst = max(worst_plain, worst_momentum)
    return CheckResult("trajectory_invariance_altlora", 2 * gauges, worst, worst <= 1e-6,
                       detail=f"beta1=0: {worst_plain:.2e}, beta1=0.9: {worst_momentum:.2e}")


@check("trajectory_invariance_adam_control")
def check_adam_not_invariant(gauges: int = 20) -> CheckResult:
    deviations = []
    for i in range(gauges):
        task = _linear_task(4000 + i)
        R = gauge_sample(task.model.layer.r, 10.0, seed=4000 + i)
        report = oracle.trajectory_invariance_check(task, TrainConfig(eta=0.01), R, steps=50,
                                                    kind=OptimizerKind.LORA_ADAM)
        deviations.append(report.max_deviation)
    smallest = min(deviations)
    return CheckResult("trajectory_invariance_adam_control", gauges, smallest, smallest > 1e-3,
                       detail="negative control: every gauge pair must deviate by more than 1e-3")


@check("trajectory_invariance_weight_decay_info")
def check_weight_decay_info(gauges: int = 5) -> CheckResult:
    worst = _invariance_worst(OptimizerKind.ALTLORA, TrainConfig(eta=0.05, beta1=0.9, gamma=0.1, lam=0.0), gauges)
    if worst > 1e-6:
        logger.warning(f"AltLoRA with weight decay deviates by {worst:.2e} across gauges")
    return CheckResult("trajectory_invariance_weight_decay_info", gauges, worst, True,
                       detail="informational: gamma > 0 is outside the invariance claim")


@check("lorapro_x_independence")
def check_lorapro_x_independence(instances: int = 50) -> CheckResult:
    worst = 0.0
    for i in range(instances):
        rng = make_rng(5000 + i)
        k, d, r = _random_dims(rng, max_dim=32, max_rank=6)
        layer = _instance_layer(rng, k, d, r)
        G = gaussian(rng, (k, d))
        equivalent = []
        for X in (gaussian(rng, (r, r)), gaussian(rng, (r, r))):
            gA, gB = baselines.lorapro_equiv_grad(G, layer, X, 0.0)
            equivalent.append(layer.s * layer.B @ gA + layer.s * gB @ layer.A)
        worst = max(worst, relative_error(equivalent[1], equivalent[0]))
    return CheckResult("lorapro_x_independence", instances, worst, worst <= DECOMPOSITION_TOL)


# --- gradients, stall, accounting ----------------------------------------------

def _fd_gradient(loss_fn, point: np.ndarray, step: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(point)
    for idx in np.ndindex(point.shape):
        plus, minus = point.copy(), point.copy()
        plus[idx] += step
        minus[idx] -= step
        grad[idx] = (loss_fn(plus) - loss_fn(minus)) / (2.0 * step)
    return grad


def _gradient_errors(model: ToyModel, X: np.ndarray, Y: np.ndarray) -> float:
    layer = model.layer
    _, cache = adapter.forward(model, X)
    G = adapter.full_gradient(model, X, Y, cache)[0].G
    gradA, gradB = adapter.lora_grads(G, layer)

    def loss_at(A=None, B=None) -> float:
        trial = ToyModel(kind=model.kind, layer=layer.with_factors(layer.A if A is None else A,
                                                                   layer.B if B is None else B), W2=model.W2)
        return adapter.mse_loss(adapter.forward(trial, X)[0], Y)

    def loss_at_weight(W: np.ndarray) -> float:
        trial = ToyModel(kind=model.kind, layer=adapter.LoraLayer(W0=W, A=np.zeros_like(layer.A),
                                                                  B=np.zeros_like(layer.B), alpha=layer.alpha),
                         W2=model.W2)
        return adapter.mse_loss(adapter.forward(trial, X)[0], Y)

    return max(
        relative_error(G, _fd_gradient(loss_at_weight, adapter.merged_weight(layer))),
        relative_error(gradA, _fd_gradient(lambda A: loss_at(A=A), layer.A)),
        relative_error(gradB, _fd_gradient(lambda B: loss_at(B=B), layer.B)),
    )


@check("gradient_finite_difference")
def check_gradients() -> CheckResult:
    worst = 0.0
    for seed, kind in ((11, TaskKind.LOW_RANK_FACTORIZATION), (11, TaskKind.TWO_LAYER_RELU)):
        spec = ExperimentSpec(task=kind, k=6, d=5, r=2, width=20, teacher_rank=2, seed=seed,
                              init_a=InitPolicy.GAUSSIAN, init_b=InitPolicy.GAUSSIAN)
        task = make_task(spec)
        worst = max(worst, _gradient_errors(task.model, task.X, task.Y))
    return CheckResult("gradient_finite_difference", 2, worst, worst < 1e-6)


@check("b_zero_stall")
def check_b_zero_stall() -> CheckResult:
    model, task = gen_lowrank_task(ExperimentSpec(k=16, d=16, r=4, teacher_rank=4, seed=3))
    layer = model.layer
    _, cache = adapter.forward(model, task.X)
    G = adapter.full_gradient(model, task.X, task.Y, cache)[0]
    gradA, _ = adapter.lora_grads(G, layer)
    scaled = altlora.scaled_grad_A(gradA, layer.B, layer.s, 1e-6)
    cfg = TrainConfig(eta=0.1, order=UpdateOrder.A_FIRST)
    stepped, _ = altlora.altlora_step(layer, init_state(OptimizerKind.ALTLORA, layer), G, cfg)
    moved = float(np.max(np.abs(stepped.A - layer.A)))
    passed = bool(np.all(scaled == 0.0)) and moved == 0.0
    return CheckResult("b_zero_stall", 1, max(float(np.max(np.abs(scaled))), moved), passed)


@check("state_accounting")
def check_state_accounting() -> CheckResult:
    worst_ratio = 0.0
    shapes = [(16, 24, 2), (64, 64, 8), (128, 32, 4), (8, 8, 8)]
    for k, d, r in shapes:
        layer = adapter.LoraLayer(W0=np.zeros((k, d)), A=np.ones((r, d)), B=np.ones((k, r)), alpha=float(r))
        for kind in OptimizerKind:
            counted = init_state(kind, layer).entry_count()
            account = accounting.state_accounting(k, d, r, kind)
            if counted != account.persistent_state:
                return CheckResult("state_accounting", len(shapes), float(counted), False,
                                   detail=f"{kind.value} at {(k, d, r)}: layout {counted} != accounted {account.persistent_state}")
            worst_ratio = max(worst_ratio, account.optimizer_state / state_budget(k, d, r))
    alt = accounting.state_accounting(4096, 4096, 8, OptimizerKind.ALTLORA).optimizer_state
    plus = accounting.state_accounting(4096, 4096, 8, OptimizerKind.ALTLORA_PLUS).optimizer_state
    full = accounting.state_accounting(4096, 4096, 8, accounting.FULL_MOMENT).optimizer_state
    # the 100x reduction is claimed for AltLoRA; AltLoRA+ is pinned to its exact count (about 85x)
    passed = (worst_ratio <= 1.0 and alt == 262144 and plus == 393216 and full == 33554432
              and full / alt >= 100)
    return CheckResult("state_accounting", len(shapes), worst_ratio, passed,
                       detail=f"AltLoRA {alt}, AltLoRA+ {plus} vs full-moment {full} entries at k=d=4096, r=8")


# --- desk-scale experiments ----------------------------------------------------

CONDITION_BASE = ExperimentSpec(k=32, d=32, r=4, teacher_rank=4, alpha=4.0, seed=1, eval_every=500)
CONDITION_CONFIGS = {
    OptimizerKind.ALTLORA: TrainConfig(eta=0.25, beta1=0.0, steps=5000),
    OptimizerKind.LORA_SGD: TrainConfig(eta=0.005, beta1=0.0, steps=100000),
}


@check("condition_number_study")
def check_condition_number() -> CheckResult:
    study = probes.condition_number_study(CONDITION_BASE, configs=CONDITION_CONFIGS)
    alt = probes.threshold_ratio(study, OptimizerKind.ALTLORA.value)
    sgd = probes.threshold_ratio(study, OptimizerKind.LORA_SGD.value)
    sgd_steps = probes.effective_steps(study, OptimizerKind.LORA_SGD.value)
    censored = study[study["censored"]]["optimizer"].tolist()
    monotone = all(a < b for a, b in zip(sgd_steps, sgd_steps[1:]))
    passed = not censored and alt < 2.0 and sgd >= 5.0 and monotone
    return CheckResult("condition_number_study", len(study), alt, passed,
                       detail=f"AltLoRA ratio {alt:.2f}, LoraSGD ratio {sgd:.2f}, LoraSGD steps {sgd_steps}, censored {censored}")


@check("width_scaling")
def check_width_scaling() -> CheckResult:
    result = probes.width_scaling_probe(kind=OptimizerKind.ALTLORA, cfg=TrainConfig(eta=1.0, beta1=0.0))
    return CheckResult("width_scaling", len(result.widths) * 8, abs(result.slope), abs(result.slope) <= 0.25,
                       detail=f"slope {result.slope:.3f}, m(n) {['%.3g' % v for v in result.magnitudes]}")


@check("determinism")
def check_determinism() -> CheckResult:
    spec = ExperimentSpec(k=16, d=16, r=4, teacher_rank=2, seed=9, train=TrainConfig(eta=0.1, steps=200))
    first, second = run_experiment(spec).to_csv(), run_experiment(spec).to_csv()
    return CheckResult("determinism", 2, 0.0 if first == second else 1.0, first == second)


# --- driver -----------------------------------------------------------------------

def select_checks(pattern: Optional[str] = None) -> List[str]:
    names = sorted(REGISTRY)
    if not pattern:
        return names
    return [name for name in names if fnmatch.fnmatch(name, pattern)]


def run_checks(names: List[str]) -> List[CheckResult]:
    results = []
    for name in names:
        start = time.perf_counter()
        try:
            result = REGISTRY[name]()
        except Exception as e:
            logger.error(f"Error in check {name}: {str(e)}")
            result = CheckResult(name, 0, float("inf"), False, detail=f"{type(e).__name__}: {str(e)}")
        result.seconds = round(time.perf_counter() - start, 3)
        logger.info(f"{'PASS' if result.passed else 'FAIL'} {name} (max deviation {result.max_deviation:.3e})")
        results.append(result)
    return results


def write_report(results: List[CheckResult], path) -> None:
    payload = {
        "checks": [asdict(r) for r in results],
        "failures": sum(not r.passed for r in results),
        "total": len(results),
    }
    atomic_write_text(path, json.dumps(payload, indent=2, default=float) + "\n")
