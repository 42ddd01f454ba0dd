import logging
import math

import numpy as np

from src.bench.accounting import step_flops
from src.bench.experiment import DIVERGENCE_CEILING, LOSS_THRESHOLD, ExperimentSpec, RunRecord
from src.core.adapter import forward, full_gradient, merged_weight, mse_loss
from src.core.errors import DivergenceDetected
from src.core.matcore import frobenius
from src.data.tasks import make_task
from src.optim.baselines import optimizer_step
from src.optim.state import init_state

logger = logging.getLogger(__name__)


def run_experiment(spec: ExperimentSpec) -> RunRecord:
    """
    Full-batch training loop; the full gradient is recomputed before every optimizer step.

    Rows are recorded at step 0, every `eval_every` steps and at the last step.
    steps_to_threshold is the first step count whose loss is <= 1e-3 (-1 if never).

    Raises:
    - DivergenceDetected: the loss became non-finite or exceeded 1e6; the
      partial record (flagged `diverged`) is attached to the exception.
    """
    task = make_task(spec)
    model = task.model
    kind, cfg = spec.optimizer, spec.train
    state = init_state(kind, model.layer)
    flops_per_step = step_flops(kind, model.layer.k, model.layer.d, model.layer.r, task.X.shape[1],
                                model.kind, model.output_dim, order=cfg.order)
    record = RunRecord(spec=spec)
    flops = 0

    logger.info(f"Starting run {spec.run_name()} for {cfg.steps} steps")
    for step in range(cfg.steps + 1):
        Y, cache = forward(model, task.X)
        loss = mse_loss(Y, task.Y)
        G = full_gradient(model, task.X, task.Y, cache)[0]
        if step % spec.eval_every == 0 or step == cfg.steps or not math.isfinite(loss) or loss > DIVERGENCE_CEILING:
            record.rows.append({
                "step": step,
                "loss": loss,
                "weight_err": frobenius(merged_weight(model.layer) - task.teacher_weight),
                "grad_norm": frobenius(G.G),
                "state_entries": state.entry_count(),
                "flops": flops,
            })
        if not math.isfinite(loss) or loss > DIVERGENCE_CEILING:
            record.diverged = True
            logger.error(f"Run {spec.run_name()} diverged at step {step} (loss={loss})")
            raise DivergenceDetected(f"loss {loss} at step {step}", record=record)
        if record.steps_to_threshold < 0 and loss <= LOSS_THRESHOLD:
            record.steps_to_threshold = step
        if step == cfg.steps:
            break
        with np.errstate(over="ignore", invalid="ignore"):
            model.layer, state = optimizer_step(kind, model.layer, state, G, cfg)
        flops += flops_per_step

    logger.info(f"Finished run {spec.run_name()}: final loss {record.final_loss():.3e}, "
                f"steps_to_threshold {record.steps_to_threshold}")
    return record
