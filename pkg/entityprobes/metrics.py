"""
Evaluation metrics: confusion matrices, macro/micro F1, RMSE and subtask aggregates.

F1 values are reported on a 0-100 scale. A class with no true positives, no
false positives and no false negatives contributes F1 = 0 to the macro average.
"""

import json
import logging
import os
import webbrowser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .utils import PathLike, atomic_write

logger = logging.getLogger(__name__)

ZERO_SUPPORT_NOTE = "classes with zero TP, FP and FN count as F1=0 in macro averages"


@dataclass
class ConfusionMatrix:
    """
    Gold-by-predicted counts.

    Attributes:
        labels: Label order shared by rows (gold) and columns (predicted)
        counts: k x k non-negative integer matrix
    """
    labels: List[str]
    counts: np.ndarray

    def __post_init__(self):
        self.labels = [str(label) for label in self.labels]
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.labels)
        if self.counts.shape != (k, k):
            raise ValueError(f"counts shape {self.counts.shape} does not match {k} labels")
        if np.any(self.counts < 0):
            raise ValueError("confusion counts must be >= 0")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_dataframe(self) -> pd.DataFrame:
        """Rows indexed by gold label, columns by predicted label."""
        frame = pd.DataFrame(self.counts, index=self.labels, columns=self.labels)
        frame.index.name = "gold\\predicted"
        return frame

    def to_dict(self) -> Dict[str, Any]:
        return {"labels": list(self.labels), "counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ConfusionMatrix":
        return cls(labels=list(data["labels"]), counts=np.array(data["counts"]))

    def to_tsv(self, path: PathLike) -> Path:
        """Write a TSV with a header row and a header column of labels."""
        return atomic_write(path, self.to_dataframe().to_csv(sep="\t", lineterminator="\n"))

    def to_json(self, path: PathLike) -> Path:
        return atomic_write(path, json.dumps(self.to_dict(), indent=2) + "\n")

    def visualize(self, output_file: Optional[str] = None, title: str = "Confusion matrix",
                  open_browser: bool = False) -> str:
        """
        Render the matrix as a standalone plotly heatmap.

        Args:
            output_file: Path to save HTML file. Defaults to 'confusion.html'
            title: Figure title
            open_browser: Whether to open the HTML file in a browser

        Returns:
            Path to the generated HTML file
        """
        import plotly.graph_objects as go

        if output_file is None:
            output_file = "confusion.html"
        fig = go.Figure(
            data=go.Heatmap(
                z=self.counts.tolist(),
                x=self.labels,
                y=self.labels,
                colorscale="Blues",
                hovertemplate="gold=%{y}<br>predicted=%{x}<br>count=%{z}<extra></extra>",
            )
        )
        fig.update_layout(
            title=title,
            xaxis_title="predicted",
            yaxis_title="gold",
            yaxis_autorange="reversed",
            margin={"l": 50, "r": 50, "t": 50, "b": 50},
        )
        Path(output_file).parent.mkdir(parents=True, exist_ok=True)
        fig.write_html(output_file, include_plotlyjs="cdn", full_html=True)
        abs_path = os.path.abspath(output_file)
        if open_browser:
            webbrowser.open(f"file://{abs_path}")
        return abs_path

    def __repr__(self) -> str:
        return f"ConfusionMatrix(k={len(self.labels)}, total={self.total})"


@dataclass
class MetricSet:
    """
    Metrics for one evaluated task.

    Attributes:
        macro_f1: Unweighted mean of per-class F1, 0-100 (classification)
        micro_f1: F1 from pooled counts, 0-100 (classification)
        rmse: Root mean squared error (regression)
        per_class_f1: Per-class F1 in label order, 0-100
    """
    macro_f1: Optional[float] = None
    micro_f1: Optional[float] = None
    rmse: Optional[float] = None
    per_class_f1: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "rmse": self.rmse,
            "per_class_f1": list(self.per_class_f1),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MetricSet":
        return cls(
            macro_f1=data.get("macro_f1"),
            micro_f1=data.get("micro_f1"),
            rmse=data.get("rmse"),
            per_class_f1=list(data.get("per_class_f1", [])),
        )


def confusion(golds: Sequence[Any], preds: Sequence[Any], labels: Sequence[Any]) -> ConfusionMatrix:
    """
    Tally gold/predicted pairs.

    Raises:
        ValueError: On length mismatch or a label outside `labels`
    """
    if len(golds) != len(preds):
        raise ValueError(f"{len(golds)} gold labels vs {len(preds)} predictions")
    labels = [str(label) for label in labels]
    position = {label: i for i, label in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for gold, pred in zip(golds, preds):
        g, p = position.get(str(gold)), position.get(str(pred))
        if g is None or p is None:
            unknown = gold if g is None else pred
            raise ValueError(f"label {unknown!r} not in label order {labels}")
        counts[g, p] += 1
    return ConfusionMatrix(labels, counts)


def _check(cm: ConfusionMatrix) -> None:
    if len(cm.labels) < 2:
        raise ValueError("F1 needs at least two labels")
    if cm.total == 0:
        raise ValueError("confusion matrix is empty")


def per_class_f1(cm: ConfusionMatrix) -> np.ndarray:
    """Per-class F1 as fractions in [0, 1], label order."""
    _check(cm)
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    return f1


def macro_f1(cm: ConfusionMatrix) -> float:
    """Unweighted mean of per-class F1, times 100."""
    return float(per_class_f1(cm).mean() * 100.0)


def micro_f1(cm: ConfusionMatrix) -> float:
    """F1 over pooled TP/FP/FN, times 100 (accuracy for single-label tasks)."""
    _check(cm)
    counts = cm.counts.astype(np.float64)
    tp = float(np.trace(counts))
    fp = float(counts.sum() - tp)
    fn = fp
    return 100.0 * 2 * tp / (2 * tp + fp + fn) if tp > 0 else 0.0


def rmse(golds: Sequence[float], preds: Sequence[float]) -> float:
    """
    Root mean squared error.

    Raises:
        ValueError: On empty input or a length mismatch
    """
    golds = np.asarray(golds, dtype=np.float64)
    preds = np.asarray(preds, dtype=np.float64)
    if golds.shape != preds.shape:
        raise ValueError(f"{golds.shape} gold values vs {preds.shape} predictions")
    if golds.size == 0:
        raise ValueError("rmse of an empty sequence")
    return float(np.sqrt(np.mean((golds - preds) ** 2)))


def classification_metrics(cm: ConfusionMatrix) -> MetricSet:
    return MetricSet(
        macro_f1=macro_f1(cm),
        micro_f1=micro_f1(cm),
        per_class_f1=[float(x) * 100.0 for x in per_class_f1(cm)],
    )


def regression_metrics(golds: Sequence[float], preds: Sequence[float]) -> MetricSet:
    return MetricSet(rmse=rmse(golds, preds))


def aggregate_subtasks(results: Sequence[MetricSet], field_name: str = "macro_f1") -> float:
    """
    Unweighted mean of one metric over subtasks.

    Raises:
        ValueError: On an empty list or a subtask missing the metric
    """
    if not results:
        raise ValueError("no subtask results to aggregate")
    values = [getattr(r, field_name) for r in results]
    if any(v is None for v in values):
        raise ValueError(f"some subtasks have no {field_name}")
    return float(np.mean(values))


def label_false_positives(cm: ConfusionMatrix, label: str) -> float:
    """
    Mean number of instances per other gold label that were predicted as `label`.

    For the relation-classification task with a None class this is the average
    count of real relations misread as None, per relation.
    """
    if label not in cm.labels:
        raise ValueError(f"label {label!r} not in confusion matrix")
    j = cm.labels.index(label)
    others = [i for i in range(len(cm.labels)) if i != j]
    if not others:
        return 0.0
    return float(cm.counts[others, j].sum() / len(others))
