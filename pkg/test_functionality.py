"""
Smoke script: walks through the library stage by stage without pytest and
reports where things break.
"""

import sys
import logging
import tempfile

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def main():
    logger.info("Starting basic functionality test")

    # Step 1: Check if we can import the required modules
    logger.info("Step 1: Checking imports")
    try:
        import numpy as np
        import pandas as pd
        import psutil
        import pydantic
        import scipy.linalg
        logger.info(f"✓ Basic imports successful (numpy {np.__version__}, pandas {pd.__version__}, "
                    f"pydantic {pydantic.VERSION})")
    except Exception as e:
        logger.error(f"✗ Import error: {str(e)}")
        return False

    # Step 2: Closed-form kernels against the least-squares oracle
    logger.info("Step 2: Checking scaled gradients against the oracle")
    try:
        from src.core.matcore import gaussian, make_rng
        from src.optim.altlora import scaled_grad_A
        from src.oracle.oracle import Objective, lstsq_oracle

        rng = make_rng(0)
        B, G = gaussian(rng, (16, 4)), gaussian(rng, (16, 32))
        got = scaled_grad_A(B.T @ G, B, 1.0, 0.0)
        want = lstsq_oracle(Objective.LEFT_FACTOR, s=1.0, B=B, G=G)
        error = np.linalg.norm(got - want) / np.linalg.norm(want)
        if error > 1e-9:
            raise AssertionError(f"relative error {error:.3e}")
        logger.info(f"✓ scaled_grad_A matches the oracle (relative error {error:.1e})")
    except Exception as e:
        logger.error(f"✗ Kernel error: {str(e)}")
        return False

    # Step 3: A short training run
    logger.info("Step 3: Running a short AltLoRA experiment")
    try:
        from src.bench.experiment import ExperimentSpec, write_record
        from src.bench.runner import run_experiment
        from src.optim.config import TrainConfig

        spec = ExperimentSpec(k=16, d=16, r=4, teacher_rank=4, alpha=4.0, seed=1, eval_every=50,
                              train=TrainConfig(eta=0.25, beta1=0.0, steps=200))
        record = run_experiment(spec)
        first, last = record.rows[0]["loss"], record.final_loss()
        if not last < first:
            raise AssertionError(f"loss did not decrease ({first:.3e} -> {last:.3e})")
        with tempfile.TemporaryDirectory() as out_dir:
            path = write_record(record, out_dir)
            logger.info(f"✓ Loss {first:.3e} -> {last:.3e}, record written as {path.name}")
    except Exception as e:
        logger.error(f"✗ Training error: {str(e)}")
        return False

    # Step 4: A subset of the verification suite
    logger.info("Step 4: Running the fast verification checks")
    try:
        from src.oracle.checks import run_checks, select_checks

        names = select_checks("momentum_alignment_*") + select_checks("projector*") + ["state_accounting"]
        failed = [r.name for r in run_checks(names) if not r.passed]
        if failed:
            raise AssertionError(f"failed checks: {', '.join(failed)}")
        logger.info(f"✓ {len(names)} checks passed")
    except Exception as e:
        logger.error(f"✗ Verification error: {str(e)}")
        return False

    logger.info("All basic functionality tests passed!")
    return True


if __name__ == "__main__":
    result = main()
    if result:
        print("\n✅ All tests passed! The basic functionality works.")
    else:
        print("\n❌ Some tests failed. Please check the logs above.")
    sys.exit(0 if result else 1)
