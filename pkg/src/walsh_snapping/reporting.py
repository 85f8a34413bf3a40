"""
Result rows, per-experiment reports and run metrics, and the CSV / JSON
writers that emit them.
"""

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import structlog

from .discrete_forms import SweepTable

logger = structlog.get_logger(__name__)

SCHEMA_VERSION = 1
RESULT_COLUMNS = ("experiment", "quantity", "parameters", "estimate", "error", "oracle", "status", "wall_clock")
SWEEP_COLUMNS = ("epsilon", "gamma_bar", "norm", "lambda", "grid_h", "grid_L", "M", "shift_defect", "shift_bound")


class GateStatus(Enum):
    """Gate outcome enumeration."""
    PASS = "pass"
    FAIL = "fail"
    UNGATED = "ungated"
    ERROR = "error"


def _format_parameters(parameters: Dict[str, Any]) -> str:
    return ";".join(f"{key}={value!r}" for key, value in parameters.items())


@dataclass
class ResultRow:
    """One estimated quantity with its uncertainty, oracle and gate."""
    experiment: str
    quantity: str
    estimate: float
    error: Optional[float] = None
    oracle: Optional[float] = None
    passed: Optional[bool] = None
    parameters: Dict[str, Any] = field(default_factory=dict)
    wall_clock: float = 0.0

    @property
    def status(self) -> GateStatus:
        if self.passed is None:
            return GateStatus.UNGATED
        return GateStatus.PASS if self.passed else GateStatus.FAIL

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        result = asdict(self)
        result['status'] = self.status.value
        return result

    def to_csv_row(self) -> Dict[str, Any]:
        return {
            "experiment": self.experiment,
            "quantity": self.quantity,
            "parameters": _format_parameters(self.parameters),
            "estimate": self.estimate,
            "error": "" if self.error is None else self.error,
            "oracle": "" if self.oracle is None else self.oracle,
            "status": self.status.value,
            "wall_clock": self.wall_clock,
        }


@dataclass
class ExperimentReport:
    """Rows of one experiment plus its overall status."""
    experiment: str
    rows: List[ResultRow]
    started: datetime
    wall_clock: float
    error: Optional[str] = None
    sweeps: List[SweepTable] = field(default_factory=list)

    @property
    def status(self) -> GateStatus:
        if self.error is not None:
            return GateStatus.ERROR
        gated = [row for row in self.rows if row.passed is not None]
        if not gated:
            return GateStatus.UNGATED
        return GateStatus.PASS if all(row.passed for row in gated) else GateStatus.FAIL

    @property
    def failed_rows(self) -> List[ResultRow]:
        return [row for row in self.rows if row.passed is False]

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            'experiment': self.experiment,
            'status': self.status.value,
            'started': self.started.isoformat(),
            'wall_clock': self.wall_clock,
            'error': self.error,
            'rows': [row.to_dict() for row in self.rows],
        }


class RunMetrics:
    """
    Timings and outcomes collected over a harness run.
    """

    def __init__(self):
        self.reports: List[ExperimentReport] = []
        self.start_time = time.perf_counter()

    def record(self, report: ExperimentReport) -> None:
        self.reports.append(report)
        logger.info(
            "experiment_finished",
            experiment=report.experiment,
            status=report.status.value,
            wall_clock=round(report.wall_clock, 3),
        )

    @property
    def failed(self) -> List[str]:
        return [r.experiment for r in self.reports if r.status is GateStatus.FAIL]

    @property
    def errored(self) -> List[str]:
        return [r.experiment for r in self.reports if r.status is GateStatus.ERROR]

    def get_metrics(self) -> Dict[str, Any]:
        """Get current metrics."""
        counts: Dict[str, int] = {status.value: 0 for status in GateStatus}
        for report in self.reports:
            counts[report.status.value] += 1
        return {
            "experiments_total": len(self.reports),
            "status_counts": counts,
            "failed": self.failed,
            "errored": self.errored,
            "wall_clock": time.perf_counter() - self.start_time,
            "timings": {r.experiment: r.wall_clock for r in self.reports},
        }


def _write_csv(path: Path, schema: str, columns: Sequence[str], rows: Iterable[Dict[str, Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        handle.write(f"# schema={schema}/{SCHEMA_VERSION}\n")
        writer = csv.DictWriter(handle, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def write_results_csv(report: ExperimentReport, directory: Union[str, Path]) -> Path:
    """<directory>/<experiment>.csv with one line per result row."""
    path = Path(directory) / f"{report.experiment}.csv"
    return _write_csv(path, report.experiment, RESULT_COLUMNS, (row.to_csv_row() for row in report.rows))


def write_sweep_csv(table: SweepTable, path: Union[str, Path], schema: str) -> Path:
    return _write_csv(Path(path), schema, SWEEP_COLUMNS, (row.to_dict() for row in table.rows))


def write_records_csv(rows: Iterable[Dict[str, Any]], path: Union[str, Path], schema: str) -> Path:
    rows = list(rows)
    columns = list(rows[0]) if rows else []
    return _write_csv(Path(path), schema, columns, rows)


def write_summary(metrics: RunMetrics, directory: Union[str, Path]) -> Path:
    """summary.json with run metrics and every report."""
    path = Path(directory) / "summary.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "metrics": metrics.get_metrics(),
        "experiments": [report.to_dict() for report in metrics.reports],
    }
    path.write_text(json.dumps(payload, indent=2, default=str))
    return path
