import logging
from dataclasses import asdict, fields
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import numpy as np
import pandas as pd

from config.settings import HarnessConfig
from factorial.core.design import write_assignments_csv
from factorial.core.errors import ParameterError
from factorial.experiments.base import ResultRow

logger = logging.getLogger(__name__)

ROW_COLUMNS = [f.name for f in fields(ResultRow)]
KEY_COLUMNS = ["experiment", "trial", "round", "strategy", "value"]
CELL_COLUMNS = ["experiment", "value", "strategy", "round"]
SUMMARY_COLUMNS = CELL_COLUMNS + ["mean", "std", "count", "se", "ols", "ridge", "null"]
PACKAGE_NAME = "probabilistic-factorial-design"


def artifact_version() -> str:
    try:
        return metadata.version(PACKAGE_NAME)
    except metadata.PackageNotFoundError:
        return "unknown"


class ResultLog:
    def __init__(self, experiment: str):
        """
        Collect the rows and side tables of one experiment run

        Args:
            experiment: experiment name, also the stem of the main CSV
        """
        self.experiment = experiment
        self.rows: List[ResultRow] = []

        # Extra outputs: {file stem: DataFrame} and {file stem: assignment matrix}
        self.tables: Dict[str, pd.DataFrame] = {}
        self.designs: Dict[str, np.ndarray] = {}

    def add_row(self, row: ResultRow):
        """Add one fitted estimate; mse must be finite and non-negative"""
        if not np.isfinite(row.mse) or row.mse < 0:
            raise ParameterError(f"row {row.key} has invalid mse {row.mse}")
        self.rows.append(row)

    def extend(self, rows: List[ResultRow]):
        for row in rows:
            self.add_row(row)

    def add_table(self, name: str, frame: pd.DataFrame):
        self.tables[name] = frame

    def add_design(self, name: str, assignments: np.ndarray):
        self.designs[name] = np.asarray(assignments)

    def frame(self) -> pd.DataFrame:
        """
        All rows as a table sorted by key

        Returns:
            DataFrame with the ResultRow columns

        Raises:
            ParameterError: when two rows share a key
        """
        frame = pd.DataFrame([asdict(r) for r in self.rows], columns=ROW_COLUMNS)
        duplicated = frame.duplicated(subset=KEY_COLUMNS)
        if duplicated.any():
            first = frame.loc[duplicated, KEY_COLUMNS].iloc[0].tolist()
            raise ParameterError(f"duplicate result key {first}")
        return frame.sort_values(KEY_COLUMNS, kind="mergesort").reset_index(drop=True)

    def summary(self) -> pd.DataFrame:
        """Mean, std, count and standard error of mse per (experiment, value, strategy, round), with branch totals"""
        frame = self.frame()
        if frame.empty:
            return pd.DataFrame(columns=SUMMARY_COLUMNS)
        grouped = frame.groupby(CELL_COLUMNS, sort=True)
        summary = grouped["mse"].agg(["mean", "std", "count"])
        summary["std"] = summary["std"].fillna(0.0)
        summary["se"] = summary["std"] / np.sqrt(summary["count"])
        summary = summary.join(grouped[["ols", "ridge", "null"]].sum())
        return summary.reset_index()[SUMMARY_COLUMNS]

    def cell_mean(self, value: Optional[float] = None, strategy: Optional[str] = None, round: Optional[int] = None) -> float:
        """Mean mse over the rows matching the given cell coordinates"""
        frame = self.frame()
        mask = np.ones(len(frame), dtype=bool)
        if value is not None:
            mask &= np.isclose(frame["value"], value)
        if strategy is not None:
            mask &= frame["strategy"] == strategy
        if round is not None:
            mask &= frame["round"] == round
        if not mask.any():
            raise ParameterError(f"no rows for value={value}, strategy={strategy}, round={round}")
        return float(frame.loc[mask, "mse"].mean())

    def get_stats(self) -> Dict[str, Any]:
        """Get row and branch counts for logging"""
        frame = self.frame()
        return {
            "experiment": self.experiment,
            "rows": len(frame),
            "ols": int(frame["ols"].sum()) if len(frame) else 0,
            "ridge": int(frame["ridge"].sum()) if len(frame) else 0,
            "null": int(frame["null"].sum()) if len(frame) else 0,
            "tables": sorted(self.tables),
        }

    def export(self, out_dir: Union[str, Path], config: Mapping[str, Any]) -> Path:
        """
        Write <experiment>.csv, summary.csv, side tables and the manifest

        Args:
            out_dir: output directory, created if missing
            config: resolved run configuration recorded in the manifest

        Returns:
            Path of the main CSV
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        main_path = out / f"{self.experiment}.csv"

        if self.rows:
            self.frame().to_csv(main_path, index=False)
            self.summary().to_csv(out / "summary.csv", index=False)
        for name, table in self.tables.items():
            table.to_csv(out / f"{name}.csv", index=False)
        for name, assignments in self.designs.items():
            write_assignments_csv(assignments, out / f"{name}.csv")

        (out / "manifest").write_text(self.manifest(config))
        stats = self.get_stats()
        logger.info(f"Wrote {stats['rows']} rows for {self.experiment} to {out} "
                    f"(ols={stats['ols']}, ridge={stats['ridge']}, null={stats['null']})")
        return main_path

    def manifest(self, config: Mapping[str, Any]) -> str:
        lines = [
            f"experiment = {self.experiment}",
            f"version = {artifact_version()}",
            "",
            "[config]",
        ]
        for key in sorted(config):
            lines.append(f"{key} = {config[key]}")
        lines += ["", HarnessConfig.get_config_summary(), ""]
        return "\n".join(lines)
