"""
Evaluation report tables.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from .metrics import ConfusionMatrix, MetricSet, ZERO_SUPPORT_NOTE, aggregate_subtasks, label_false_positives
from .probe import EvalResult
from .taskgen import EXTRA_FAMILIES, FAMILIES, NONE_LABEL, SUBTASK_FAMILIES
from .utils import PathLike, atomic_write

logger = logging.getLogger(__name__)

COLUMNS = ["taskId", "kind", "nLabels", "macroF1", "microF1", "rmse", "notes"]
MISSING = "-"


def format_f1(value: Optional[float]) -> str:
    return MISSING if value is None else f"{value:.1f}"


def format_rmse(value: Optional[float]) -> str:
    return MISSING if value is None else f"{value:.2f}"


@dataclass
class ReportRow:
    """
    One report line: a task, or the aggregate of a family's subtasks.

    Attributes:
        task_id: Task id, or the family name for aggregate rows
        kind: Task kind
        n_labels: Label count (0 for regression)
        macro_f1, micro_f1, rmse: Metrics (None when not applicable)
        dropped: Instances dropped for missing embeddings
        notes: Free-form annotations
        subtasks: Number of subtasks behind an aggregate row
        cross_task: Probe trained on another task
    """
    task_id: str
    kind: str
    n_labels: int
    macro_f1: Optional[float] = None
    micro_f1: Optional[float] = None
    rmse: Optional[float] = None
    dropped: int = 0
    notes: List[str] = field(default_factory=list)
    subtasks: int = 0
    cross_task: bool = False

    def cells(self) -> Dict[str, str]:
        notes = list(self.notes)
        if self.subtasks:
            notes.insert(0, f"subtasks={self.subtasks}")
        if self.dropped:
            notes.append(f"dropped={self.dropped}")
        if self.cross_task:
            notes.append("cross-task")
        return {
            "taskId": self.task_id,
            "kind": self.kind,
            "nLabels": str(self.n_labels),
            "macroF1": format_f1(self.macro_f1),
            "microF1": format_f1(self.micro_f1),
            "rmse": format_rmse(self.rmse),
            "notes": "; ".join(notes) if notes else MISSING,
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task_id": self.task_id,
            "kind": self.kind,
            "n_labels": self.n_labels,
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "rmse": self.rmse,
            "dropped": self.dropped,
            "notes": list(self.notes),
            "subtasks": self.subtasks,
            "cross_task": self.cross_task,
        }

    @classmethod
    def from_result(cls, result: EvalResult) -> "ReportRow":
        m = result.metrics
        notes = []
        if NONE_LABEL in result.labels and result.confusion is not None:
            fp = label_false_positives(result.confusion, NONE_LABEL)
            notes.append(f"None false positives per relation={fp:.1f}")
        if result.baseline_rmse is not None:
            notes.append(f"mean baseline rmse={format_rmse(result.baseline_rmse)}")
        return cls(result.task_id, result.kind, len(result.labels), m.macro_f1, m.micro_f1, m.rmse,
                   dropped=result.dropped, notes=notes, cross_task=result.cross_task)


def _family(task_id: str) -> str:
    return task_id.split(":", 1)[0]


def _family_rank(task_id: str) -> int:
    order = list(FAMILIES) + list(EXTRA_FAMILIES)
    family = _family(task_id)
    return order.index(family) if family in order else len(order)


@dataclass
class EvalReport:
    """
    All rows of a probing run.

    W-H, W-M and R-I collapse into one aggregate row holding the unweighted
    mean of their subtasks' F1; per-subtask rows follow when requested.
    """
    rows: List[ReportRow] = field(default_factory=list)
    seed: int = 0
    config: Dict[str, Any] = field(default_factory=dict)
    failures: Dict[str, str] = field(default_factory=dict)
    embeddings: Optional[str] = None
    dim: Optional[int] = None

    @classmethod
    def from_results(cls, results: Sequence[EvalResult], per_word_rows: bool = False,
                     seed: int = 0, config: Optional[Dict[str, Any]] = None,
                     failures: Optional[Dict[str, str]] = None, embeddings: Optional[str] = None,
                     dim: Optional[int] = None) -> "EvalReport":
        """
        Build the report.

        `embeddings` and `dim` name the probed embedding file and its dimension.

        Raises:
            ValueError: If `results` is empty
        """
        if not results:
            raise ValueError("no results to report")
        by_family: Dict[str, List[EvalResult]] = {}
        for result in sorted(results, key=lambda r: (_family_rank(r.task_id), r.task_id)):
            by_family.setdefault(_family(result.task_id), []).append(result)

        rows: List[ReportRow] = []
        for family, members in by_family.items():
            if family in SUBTASK_FAMILIES and any(":" in r.task_id for r in members):
                metrics: List[MetricSet] = [r.metrics for r in members]
                rows.append(ReportRow(
                    family, members[0].kind, len(members[0].labels),
                    macro_f1=aggregate_subtasks(metrics, "macro_f1"),
                    micro_f1=aggregate_subtasks(metrics, "micro_f1"),
                    dropped=sum(r.dropped for r in members),
                    subtasks=len(members),
                ))
                if per_word_rows:
                    rows.extend(ReportRow.from_result(r) for r in members)
            else:
                rows.extend(ReportRow.from_result(r) for r in members)
        return cls(rows, seed, dict(config or {}), dict(failures or {}), embeddings, dim)

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame([row.cells() for row in self.rows], columns=COLUMNS)

    def header_lines(self) -> List[str]:
        lines = [f"# seed={self.seed}"]
        if self.embeddings is not None:
            lines.append(f"# embeddings={self.embeddings} dim={self.dim}")
        lines.append(f"# {ZERO_SUPPORT_NOTE}")
        if self.config:
            lines.append("# config=" + json.dumps(self.config, sort_keys=True))
        for task_id, reason in sorted(self.failures.items()):
            lines.append(f"# failed {task_id}: {reason}")
        return lines

    def to_tsv(self) -> str:
        body = self.to_dataframe().to_csv(sep="\t", index=False, lineterminator="\n")
        return "\n".join(self.header_lines()) + "\n" + body

    def to_json(self) -> str:
        data = {
            "seed": self.seed,
            "embeddings": self.embeddings,
            "dim": self.dim,
            "note": ZERO_SUPPORT_NOTE,
            "config": self.config,
            "failures": dict(sorted(self.failures.items())),
            "rows": [row.to_dict() for row in self.rows],
            "table": self.to_dataframe().to_dict(orient="records"),
        }
        return json.dumps(data, indent=2, ensure_ascii=False) + "\n"

    def row(self, task_id: str) -> ReportRow:
        for r in self.rows:
            if r.task_id == task_id:
                return r
        raise KeyError(task_id)

    def __len__(self) -> int:
        return len(self.rows)


def emit_report(report: EvalReport, path: PathLike, format: str = "tsv") -> Path:
    """
    Write a report as TSV or JSON.

    Raises:
        ValueError: On an empty report or an unknown format
    """
    if not report.rows:
        raise ValueError("cannot emit an empty report")
    if format == "tsv":
        content = report.to_tsv()
    elif format == "json":
        content = report.to_json()
    else:
        raise ValueError(f"unknown report format {format!r}")
    out = atomic_write(path, content)
    logger.info("Wrote %d report rows to %s", len(report.rows), out)
    return out


def save_results(results: Sequence[EvalResult], path: PathLike, embeddings: Optional[str] = None,
                 dim: Optional[int] = None) -> Path:
    """Write raw per-task results (metrics, confusion matrices, drops) and their embedding source as JSON."""
    data = {
        "embeddings": embeddings,
        "dim": dim,
        "results": [r.to_dict() for r in sorted(results, key=lambda r: (_family_rank(r.task_id), r.task_id))],
    }
    return atomic_write(path, json.dumps(data, indent=2, ensure_ascii=False) + "\n")


def load_results(path: PathLike) -> Dict[str, Any]:
    """Results document written by `save_results`; a bare result list is read as one with no source."""
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    if isinstance(data, list):
        return {"embeddings": None, "dim": None, "results": data}
    return data


def report_from_saved(path: PathLike, per_word_rows: bool = False, seed: int = 0,
                      config: Optional[Dict[str, Any]] = None,
                      failures: Optional[Dict[str, str]] = None) -> EvalReport:
    """Rebuild a report from a results file written by `save_results`."""
    data = load_results(path)
    results = [result_from_dict(d) for d in data["results"]]
    return EvalReport.from_results(results, per_word_rows, seed, config, failures,
                                   data.get("embeddings"), data.get("dim"))


def compare_reports(reports: Dict[str, EvalReport]) -> pd.DataFrame:
    """
    Side-by-side table of several embedding sets probed on the same tasks.

    One row per task id in first-seen order; one column per set holding macro
    F1 for classification rows and RMSE for regression rows (MISSING when the
    set has no row for the task).
    """
    order: List[str] = []
    kinds: Dict[str, str] = {}
    cells: Dict[str, Dict[str, str]] = {}
    for label, report in reports.items():
        for row in report.rows:
            if row.task_id not in kinds:
                order.append(row.task_id)
                kinds[row.task_id] = row.kind
            value = format_rmse(row.rmse) if row.kind == "regression" else format_f1(row.macro_f1)
            cells.setdefault(row.task_id, {})[label] = value
    records = [
        {"taskId": task_id, "kind": kinds[task_id],
         **{label: cells[task_id].get(label, MISSING) for label in reports}}
        for task_id in order
    ]
    return pd.DataFrame(records, columns=["taskId", "kind"] + list(reports))


def emit_comparison(reports: Dict[str, EvalReport], path: PathLike, format: str = "tsv") -> Path:
    """
    Write the side-by-side table for several embedding sets.

    Raises:
        ValueError: On fewer than two sets or an unknown format
    """
    if len(reports) < 2:
        raise ValueError("a comparison needs at least two embedding sets")
    table = compare_reports(reports)
    first = next(iter(reports.values()))
    if format == "tsv":
        lines = [f"# seed={first.seed}"]
        lines.extend(f"# {label}: embeddings={r.embeddings} dim={r.dim}" for label, r in reports.items())
        lines.append("# macroF1 for classification tasks, rmse for regression tasks")
        content = "\n".join(lines) + "\n" + table.to_csv(sep="\t", index=False, lineterminator="\n")
    elif format == "json":
        content = json.dumps({
            "seed": first.seed,
            "embeddings": {label: {"path": r.embeddings, "dim": r.dim} for label, r in reports.items()},
            "table": table.to_dict(orient="records"),
        }, indent=2, ensure_ascii=False) + "\n"
    else:
        raise ValueError(f"unknown report format {format!r}")
    out = atomic_write(path, content)
    logger.info("Wrote comparison of %d embedding sets to %s", len(reports), out)
    return out


def result_from_dict(data: Dict[str, Any]) -> EvalResult:
    cm = ConfusionMatrix.from_dict(data["confusion"]) if data.get("confusion") else None
    return EvalResult(
        task_id=data["task_id"],
        kind=data["kind"],
        labels=list(data["labels"]),
        golds=[],
        preds=[],
        metrics=MetricSet.from_dict(data["metrics"]),
        confusion=cm,
        dropped=int(data.get("dropped", 0)),
        cross_task=bool(data.get("cross_task", False)),
        split=data.get("split", "test"),
        model_task_id=data.get("model_task_id", ""),
        baseline_rmse=data.get("baseline_rmse"),
    )
