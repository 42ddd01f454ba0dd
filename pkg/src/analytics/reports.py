import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from src.bench.experiment import RECORD_COLUMNS, atomic_write_text
from src.core.errors import SchemaMismatch

logger = logging.getLogger(__name__)

SUMMARY_FILE = "report_summary.csv"
VERIFY_REPORT_FILE = "verify_report.json"


class RunAnalytics:
    """
    Aggregates the RunRecords found in one output directory: a per-run summary,
    the best cell per optimizer, and the steps_to_threshold matrix against kappa.
    """

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        logger.info(f"Loading runs from: {self.directory}")
        self._check_schemas()
        self.runs = self._load_runs()
        logger.info(f"Loaded {len(self.runs)} runs")

    def _run_csvs(self) -> List[Path]:
        return sorted(p for p in self.directory.glob("*.csv") if p.name != SUMMARY_FILE)

    def _check_schemas(self) -> None:
        offending = []
        for path in self._run_csvs():
            with open(path) as handle:
                header = handle.readline().strip().split(",")
            if header != RECORD_COLUMNS:
                offending.append(path.name)
        if offending:
            raise SchemaMismatch(
                f"{len(offending)} CSV file(s) do not match header {','.join(RECORD_COLUMNS)}: {', '.join(offending)}",
                files=offending,
            )

    def _load_runs(self) -> List[Dict[str, Any]]:
        runs = []
        for sidecar_path in sorted(self.directory.glob("*.json")):
            if sidecar_path.name == VERIFY_REPORT_FILE:
                continue
            with open(sidecar_path) as handle:
                sidecar = json.load(handle)
            if "run_name" not in sidecar:
                continue
            csv_path = self.directory / f"{sidecar['run_name']}.csv"
            if not csv_path.exists():
                logger.warning(f"Sidecar {sidecar_path.name} has no metric stream, skipping")
                continue
            runs.append({"sidecar": sidecar, "frame": pd.read_csv(csv_path)})
        return runs

    def summary_frame(self) -> pd.DataFrame:
        rows = []
        for run in self.runs:
            spec = run["sidecar"]["spec"]
            frame = run["frame"]
            rows.append({
                "run_name": run["sidecar"]["run_name"],
                "optimizer": spec["optimizer"],
                "eta": spec["train"]["eta"],
                "alpha": spec["alpha"],
                "order": spec["train"]["order"],
                "kappa": spec["kappa"],
                "seed": spec["seed"],
                "steps": spec["train"]["steps"],
                "final_loss": float(frame["loss"].iloc[-1]) if len(frame) else np.nan,
                "steps_to_threshold": run["sidecar"]["steps_to_threshold"],
                "diverged": run["sidecar"].get("diverged", False),
                "flops": int(frame["flops"].iloc[-1]) if len(frame) else 0,
            })
        return pd.DataFrame(rows)

    def best_cells(self, summary: Optional[pd.DataFrame] = None) -> pd.DataFrame:
        """Lowest final loss per optimizer among runs that did not diverge."""
        summary = self.summary_frame() if summary is None else summary
        healthy = summary[~summary["diverged"]]
        if healthy.empty:
            return healthy
        best = healthy.loc[healthy.groupby("optimizer")["final_loss"].idxmin()]
        return best.reset_index(drop=True)

    def kappa_matrix(self, summary: Optional[pd.DataFrame] = None) -> pd.DataFrame:
        """
        steps_to_threshold per optimizer (rows) and kappa (columns) at one tuned
        configuration per optimizer, with the max/min ratio across kappa.

        The tuned configuration is the (eta, alpha, order) cell covering the most
        kappa values with the lowest total steps. Runs that never reached the
        threshold count as steps + 1; a matrix entry shows -1 only when every
        run behind it was censored.
        """
        summary = self.summary_frame() if summary is None else summary
        if summary.empty:
            return summary
        summary = summary.copy()
        summary["censored"] = summary["steps_to_threshold"] < 0
        summary["effective"] = np.where(summary["censored"], summary["steps"] + 1,
                                        summary["steps_to_threshold"]).clip(min=1)
        config = ["eta", "alpha", "order"]
        rows = []
        for optimizer, runs in summary.groupby("optimizer", sort=True):
            cells = runs.groupby(config + ["kappa"])["effective"].mean().reset_index()
            scores = cells.groupby(config).agg(kappas=("kappa", "nunique"), total=("effective", "sum"))
            tuned = scores.sort_values(["kappas", "total"], ascending=[False, True]).index[0]
            chosen = runs[(runs[config] == pd.Series(tuned, index=config)).all(axis=1)]
            row = {"optimizer": optimizer, "eta": tuned[0]}
            effective = []
            for kappa, at_kappa in chosen.groupby("kappa", sort=True):
                reached = at_kappa[~at_kappa["censored"]]
                row[kappa] = int(reached["steps_to_threshold"].min()) if len(reached) else -1
                effective.append(at_kappa["effective"].min() if reached.empty else reached["effective"].min())
            row["ratio_max_min"] = float(max(effective) / min(effective))
            rows.append(row)
        matrix = pd.DataFrame(rows).set_index("optimizer")
        kappas = sorted(c for c in matrix.columns if c not in ("eta", "ratio_max_min"))
        return matrix[["eta"] + kappas + ["ratio_max_min"]]

    def generate_report(self) -> Dict[str, Any]:
        summary = self.summary_frame()
        return {
            "total_runs": len(summary),
            "diverged_runs": int(summary["diverged"].sum()) if len(summary) else 0,
            "summary": summary,
            "best_cells": self.best_cells(summary) if len(summary) else summary,
            "kappa_matrix": self.kappa_matrix(summary) if len(summary) else summary,
        }

    def write_summary(self, summary: pd.DataFrame) -> Path:
        path = self.directory / SUMMARY_FILE
        atomic_write_text(path, summary.to_csv(index=False, float_format="%.17g", lineterminator="\n"))
        return path


def render_report(report: Dict[str, Any]) -> str:
    lines = [f"Runs: {report['total_runs']} ({report['diverged_runs']} diverged)", "", "Best cell per optimizer:"]
    best = report["best_cells"]
    columns = ["optimizer", "eta", "alpha", "order", "kappa", "final_loss", "steps_to_threshold"]
    lines.append(best[columns].to_string(index=False) if len(best) else "  (none)")
    lines += ["", "steps_to_threshold vs kappa:"]
    lines.append(report["kappa_matrix"].to_string())
    return "\n".join(lines) + "\n"
