import pandas as pd
import pytest

from src.analytics.reports import SUMMARY_FILE, RunAnalytics, render_report
from src.bench.experiment import ExperimentSpec, write_record
from src.bench.runner import run_experiment
from src.core.errors import SchemaMismatch
from src.oracle.checks import CONDITION_BASE
from src.optim.config import OptimizerKind, TrainConfig


def _write_runs(directory, kappas=(1.0, 10.0)):
    for optimizer in (OptimizerKind.ALTLORA, OptimizerKind.LORA_SGD):
        for kappa in kappas:
            spec = ExperimentSpec(k=8, d=8, r=2, teacher_rank=2, alpha=2.0, kappa=kappa, optimizer=optimizer,
                                  train=TrainConfig(eta=0.05, beta1=0.0, steps=20), eval_every=5)
            write_record(run_experiment(spec), directory)


@pytest.fixture
def run_dir(tmp_path):
    _write_runs(tmp_path)
    return tmp_path


def test_summary_has_one_row_per_run(run_dir):
    summary = RunAnalytics(run_dir).summary_frame()
    assert len(summary) == 4
    assert set(summary["optimizer"]) == {"AltLoRA", "LoraSGD"}
    assert (summary["steps"] == 20).all()


def test_best_cells_pick_lowest_loss(run_dir):
    analytics = RunAnalytics(run_dir)
    summary = analytics.summary_frame()
    best = analytics.best_cells(summary)
    assert len(best) == 2
    for _, row in best.iterrows():
        assert row["final_loss"] == summary[summary["optimizer"] == row["optimizer"]]["final_loss"].min()


def test_kappa_matrix_counts_censored_runs(run_dir):
    matrix = RunAnalytics(run_dir).kappa_matrix()
    assert list(matrix.index) == ["AltLoRA", "LoraSGD"]
    assert 1.0 in matrix.columns and 10.0 in matrix.columns
    assert (matrix["ratio_max_min"] >= 1.0).all()


def test_report_text_and_summary_file(run_dir):
    analytics = RunAnalytics(run_dir)
    report = analytics.generate_report()
    text = render_report(report)
    assert text.startswith("Runs: 4 (0 diverged)")
    assert "steps_to_threshold vs kappa" in text
    path = analytics.write_summary(report["summary"])
    assert path.name == SUMMARY_FILE
    assert len(pd.read_csv(path)) == 4
    # the summary file does not count as a run on the next load
    assert len(RunAnalytics(run_dir).runs) == 4


def test_mixed_schema_lists_offending_files(run_dir):
    (run_dir / "stray.csv").write_text("step,loss\n0,1.0\n")
    with pytest.raises(SchemaMismatch) as err:
        RunAnalytics(run_dir)
    assert err.value.files == ["stray.csv"]


def test_empty_directory(tmp_path):
    analytics = RunAnalytics(tmp_path)
    assert analytics.runs == []
    assert analytics.generate_report()["total_runs"] == 0


def _summary_row(optimizer, eta, kappa, steps_to_threshold, steps=100):
    return {"run_name": f"{optimizer}-{eta}-{kappa}", "optimizer": optimizer, "eta": eta, "alpha": 2.0,
            "order": "BFirst", "kappa": kappa, "seed": 0, "steps": steps, "final_loss": 1e-4,
            "steps_to_threshold": steps_to_threshold, "diverged": False, "flops": 0}


def test_kappa_matrix_prefers_converged_runs_over_the_sentinel(tmp_path):
    summary = pd.DataFrame([
        _summary_row("LoraSGD", 0.001, 1.0, -1),
        _summary_row("LoraSGD", 0.005, 1.0, 40),
        _summary_row("LoraSGD", 0.001, 10.0, -1),
        _summary_row("LoraSGD", 0.005, 10.0, 80),
    ])
    matrix = RunAnalytics(tmp_path).kappa_matrix(summary)
    assert matrix.loc["LoraSGD", "eta"] == 0.005
    assert matrix.loc["LoraSGD", 1.0] == 40
    assert matrix.loc["LoraSGD", 10.0] == 80
    assert matrix.loc["LoraSGD", "ratio_max_min"] == pytest.approx(2.0)


def test_kappa_matrix_shows_sentinel_only_when_all_runs_censored(tmp_path):
    summary = pd.DataFrame([
        _summary_row("LoraSGD", 0.005, 1.0, 40),
        _summary_row("LoraSGD", 0.005, 100.0, -1),
    ])
    matrix = RunAnalytics(tmp_path).kappa_matrix(summary)
    assert matrix.loc["LoraSGD", 100.0] == -1
    assert matrix.loc["LoraSGD", "ratio_max_min"] == pytest.approx(101 / 40)


def test_kappa_sweep_report_separates_optimizers(tmp_path):
    configs = {
        OptimizerKind.ALTLORA: TrainConfig(eta=0.25, beta1=0.0, steps=5000),
        OptimizerKind.LORA_SGD: TrainConfig(eta=0.005, beta1=0.0, steps=5000),
    }
    for optimizer, train in configs.items():
        for kappa in (1.0, 10.0, 100.0):
            spec = CONDITION_BASE.model_copy(update={"optimizer": optimizer, "train": train, "kappa": kappa})
            write_record(run_experiment(spec), tmp_path)
    analytics = RunAnalytics(tmp_path)
    matrix = analytics.kappa_matrix()
    assert matrix.loc["AltLoRA", "ratio_max_min"] < 2.0
    assert matrix.loc["LoraSGD", "ratio_max_min"] >= 5.0
    assert "ratio_max_min" in render_report(analytics.generate_report())
