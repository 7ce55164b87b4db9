"""
Report repository - handles report.json, ladder.csv and constants.csv
"""

import csv
import json
import logging
from pathlib import Path
from typing import List, Union

from app.schemas.study import ConvergenceReport, StudyConfig, StudyReport

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

LADDER_COLUMNS = ["pipeline", "L", "value", "corrected_value", "fitted", "residual"]
CONSTANT_COLUMNS = ["name", "value"]


class ReportRepository:
    """Repository for study outputs"""

    @staticmethod
    def save_report(path: PathLike, config: StudyConfig, reports: List[ConvergenceReport]) -> Path:
        """Write the full report with its configuration"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = StudyReport(config=config, reports=reports).model_dump(mode="json")
        path.write_text(json.dumps(payload, indent=2, sort_keys=True))
        logger.info(f"Report written to {path}")
        return path

    @staticmethod
    def load_report(path: PathLike) -> StudyReport:
        """Read a report written by save_report"""
        return StudyReport.model_validate_json(Path(path).read_text())

    @staticmethod
    def save_ladder_csv(path: PathLike, reports: List[ConvergenceReport]) -> Path:
        """One row per (pipeline, L)"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LADDER_COLUMNS)
            for report in reports:
                for entry in report.entries:
                    writer.writerow(
                        [
                            report.pipeline,
                            entry.L,
                            repr(entry.value),
                            repr(entry.corrected_value),
                            repr(entry.fitted),
                            repr(entry.residual),
                        ]
                    )
        return path

    @staticmethod
    def save_constants_csv(path: PathLike, report: ConvergenceReport) -> Path:
        """Madelung constant, correction constant, epsilon and the M(0) entries"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        prov = report.provenance
        rows = [("a", prov.a), ("charge", prov.charge), ("cell_volume", prov.cell_volume)]
        if prov.madelung is not None:
            rows += [("madelung", prov.madelung), ("madelung_shifted", prov.madelung_shifted)]
        if prov.epsilon is not None:
            rows.append(("epsilon", prov.epsilon))
        for i, row in enumerate(prov.M_zero):
            for j, value in enumerate(row):
                rows.append((f"M_{i + 1}{j + 1}", value))
        rows += [("slope", report.slope), ("predicted_slope", report.predicted_slope)]
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CONSTANT_COLUMNS)
            for name, value in rows:
                writer.writerow([name, repr(float(value))])
        return path

    @staticmethod
    def save_series_csv(path: PathLike, Ls: List[int], values: List[float], errors: List[float], fitted: List[float]) -> Path:
        """Riemann-suite series: L, value, error, fitted"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["L", "value", "error", "fitted"])
            for row in zip(Ls, values, errors, fitted):
                writer.writerow([row[0], *(repr(float(v)) for v in row[1:])])
        return path
