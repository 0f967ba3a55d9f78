"""
Linear probes over frozen embeddings.

Classification tasks train a multinomial logistic regression, the popularity
regression task trains a linear model under the Huber loss. Both use
deterministic full-batch gradient descent from zero-initialized parameters
with a backtracking (Armijo) line search, so the same inputs always give the
same model.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .embedstore import EmbeddingStore, pair_features
from .exceptions import EmbeddingError, KindMismatchError, TrainingError, ValidationError
from .metrics import ConfusionMatrix, MetricSet, classification_metrics, confusion, rmse
from .taskgen import Instance, TaskDataset
from .utils import PathLike, atomic_write

logger = logging.getLogger(__name__)

CLASSIFIER = "classifier"
REGRESSOR = "regressor"

ARMIJO_C = 1e-4
MIN_STEP = 1e-20


@dataclass
class ProbeConfig:
    """
    Probe training settings.

    Attributes:
        l2: L2 penalty on the weights (bias is not penalized)
        max_epochs: Maximum accepted gradient steps
        tol: Stop when the relative loss change of an accepted step falls below this
        huber_delta: Huber transition point for the regressor
        standardize: Standardize each feature with train-split statistics
        initial_step: First step size tried by the line search
    """
    l2: float = 1e-4
    max_epochs: int = 500
    tol: float = 1e-6
    huber_delta: float = 1.0
    standardize: bool = False
    initial_step: float = 1.0

    def __post_init__(self):
        if self.l2 < 0:
            raise ValidationError("l2 must be >= 0")
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be >= 1")
        if self.tol < 0:
            raise ValidationError("tol must be >= 0")
        if self.huber_delta <= 0:
            raise ValidationError("huber_delta must be > 0")
        if self.initial_step <= 0:
            raise ValidationError("initial_step must be > 0")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "l2": self.l2,
            "max_epochs": self.max_epochs,
            "tol": self.tol,
            "huber_delta": self.huber_delta,
            "standardize": self.standardize,
            "initial_step": self.initial_step,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ProbeConfig":
        return cls(**data)


@dataclass
class TrainingLog:
    """Accepted-step losses and why training stopped."""
    losses: List[float] = field(default_factory=list)
    epochs: int = 0
    stop_reason: str = ""

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else math.nan

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epochs": self.epochs,
            "final_loss": self.final_loss,
            "stop_reason": self.stop_reason,
            "losses": list(self.losses),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainingLog":
        return cls(losses=list(data.get("losses", [])), epochs=data.get("epochs", 0),
                   stop_reason=data.get("stop_reason", ""))


@dataclass
class ProbeModel:
    """
    A trained probe.

    Attributes:
        kind: "classifier" or "regressor"
        W: k x f weights (one row for a regressor)
        b: Length-k bias
        labels: Label order of the rows of W (empty for a regressor)
        task_id: Task the probe was trained on
        feature_dim: f, the embedding dim or 4 * dim for pair tasks
        config: Training settings
        training_log: Losses of the accepted steps
        mean, scale: Feature standardization (None when disabled)
    """
    kind: str
    W: np.ndarray
    b: np.ndarray
    labels: List[str]
    task_id: str
    feature_dim: int
    config: ProbeConfig = field(default_factory=ProbeConfig)
    training_log: TrainingLog = field(default_factory=TrainingLog)
    mean: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None

    def transform(self, X: np.ndarray) -> np.ndarray:
        if X.shape[1] != self.feature_dim:
            raise EmbeddingError(
                f"feature dimension {X.shape[1]} does not match the probe's {self.feature_dim}"
            )
        if self.mean is not None:
            X = (X - self.mean) / self.scale
        return X

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return self.transform(X) @ self.W.T + self.b

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        if self.kind != CLASSIFIER:
            raise KindMismatchError("predict_proba needs a classifier")
        return softmax(self.decision_function(X))

    def predict(self, X: np.ndarray) -> List[Any]:
        """Labels (first maximum wins ties) or real values."""
        scores = self.decision_function(X)
        if self.kind == REGRESSOR:
            return [float(v) for v in scores[:, 0]]
        return [self.labels[i] for i in np.argmax(scores, axis=1)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "task_id": self.task_id,
            "labels": list(self.labels),
            "feature_dim": self.feature_dim,
            "W": self.W.tolist(),
            "b": self.b.tolist(),
            "mean": None if self.mean is None else self.mean.tolist(),
            "scale": None if self.scale is None else self.scale.tolist(),
            "config": self.config.to_dict(),
            "training_log": self.training_log.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ProbeModel":
        return cls(
            kind=data["kind"],
            W=np.array(data["W"], dtype=np.float64),
            b=np.array(data["b"], dtype=np.float64),
            labels=list(data["labels"]),
            task_id=data["task_id"],
            feature_dim=int(data["feature_dim"]),
            config=ProbeConfig.from_dict(data["config"]),
            training_log=TrainingLog.from_dict(data.get("training_log", {})),
            mean=None if data.get("mean") is None else np.array(data["mean"], dtype=np.float64),
            scale=None if data.get("scale") is None else np.array(data["scale"], dtype=np.float64),
        )

    def save(self, path: PathLike) -> Path:
        """Write the model as JSON (W row-major)."""
        return atomic_write(path, json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: PathLike) -> "ProbeModel":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def __repr__(self) -> str:
        return (f"ProbeModel({self.kind}, task={self.task_id}, k={self.W.shape[0]}, "
                f"f={self.feature_dim}, epochs={self.training_log.epochs})")


@dataclass
class EvalResult:
    """
    Predictions and metrics of one probe on one split.

    Attributes:
        task_id: Evaluated dataset
        kind: Dataset kind
        labels: Label order used for the confusion matrix
        golds, preds: Per-instance gold and predicted labels (or values)
        metrics: Computed metrics
        confusion: Confusion matrix (classification only)
        dropped: Instances skipped because an entity had no vector
        cross_task: The probe was trained on a different task
        baseline_rmse: Mean-prediction RMSE (regression only)
    """
    task_id: str
    kind: str
    labels: List[str]
    golds: List[Any]
    preds: List[Any]
    metrics: MetricSet
    confusion: Optional[ConfusionMatrix] = None
    dropped: int = 0
    cross_task: bool = False
    split: str = "test"
    model_task_id: str = ""
    baseline_rmse: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task_id": self.task_id,
            "kind": self.kind,
            "labels": list(self.labels),
            "split": self.split,
            "model_task_id": self.model_task_id,
            "cross_task": self.cross_task,
            "dropped": self.dropped,
            "n": len(self.golds),
            "metrics": self.metrics.to_dict(),
            "confusion": None if self.confusion is None else self.confusion.to_dict(),
            "baseline_rmse": self.baseline_rmse,
        }


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def featurize(instance: Instance, store: EmbeddingStore) -> Optional[np.ndarray]:
    """
    Feature vector of an instance, or None when an entity has no embedding.

    One entity gives its raw vector; two entities give pair_features(h, t).
    """
    vectors = [store.get(e) for e in instance.inputs]
    if any(v is None for v in vectors):
        return None
    if len(vectors) == 1:
        return np.array(vectors[0], dtype=np.float64)
    if len(vectors) == 2:
        return pair_features(vectors[0], vectors[1])
    raise ValidationError(f"instances take 1 or 2 entities, got {len(vectors)}")


def feature_dim(dataset: TaskDataset, store: EmbeddingStore) -> int:
    return 4 * store.dim if dataset.is_pairwise else store.dim


def build_matrix(instances: Sequence[Instance], store: EmbeddingStore,
                 dim: int) -> Tuple[np.ndarray, List[Instance], int]:
    """
    Stack instance features.

    Returns:
        (X, kept instances, number dropped for missing vectors)
    """
    rows = []
    kept = []
    for instance in instances:
        x = featurize(instance, store)
        if x is None:
            continue
        rows.append(x)
        kept.append(instance)
    X = np.vstack(rows) if rows else np.zeros((0, dim))
    return X, kept, len(instances) - len(kept)


def cross_entropy_objective(W: np.ndarray, b: np.ndarray, X: np.ndarray, Y: np.ndarray,
                            l2: float) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Mean cross-entropy plus (l2 / 2) * ||W||^2 and its gradients.

    Args:
        W: k x f weights
        b: Length-k bias
        X: n x f features
        Y: n x k one-hot targets

    Returns:
        (loss, dW, db)
    """
    n = X.shape[0]
    scores = X @ W.T + b
    shifted = scores - scores.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    loss = -float(np.sum(Y * log_probs)) / n + 0.5 * l2 * float(np.sum(W * W))
    residual = np.exp(log_probs) - Y
    dW = residual.T @ X / n + l2 * W
    db = residual.sum(axis=0) / n
    return loss, dW, db


def huber_objective(w: np.ndarray, b: np.ndarray, X: np.ndarray, y: np.ndarray,
                    l2: float, delta: float) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Mean Huber loss plus (l2 / 2) * ||w||^2 and its gradients.

    Args:
        w: 1 x f weights
        b: Length-1 bias
        X: n x f features
        y: Length-n targets
        delta: Quadratic-to-linear transition point

    Returns:
        (loss, dw, db)
    """
    n = X.shape[0]
    r = (X @ w.T)[:, 0] + b[0] - y
    abs_r = np.abs(r)
    quadratic = abs_r <= delta
    losses = np.where(quadratic, 0.5 * r * r, delta * (abs_r - 0.5 * delta))
    loss = float(losses.mean()) + 0.5 * l2 * float(np.sum(w * w))
    psi = np.clip(r, -delta, delta)
    dw = (psi @ X)[np.newaxis, :] / n + l2 * w
    db = np.array([psi.mean()])
    return loss, dw, db


def _descend(objective, W: np.ndarray, b: np.ndarray, cfg: ProbeConfig,
             task_id: str) -> Tuple[np.ndarray, np.ndarray, TrainingLog]:
    """Gradient descent with Armijo backtracking; every accepted step lowers the loss."""
    log = TrainingLog()
    loss, dW, db = objective(W, b)
    if not math.isfinite(loss):
        raise TrainingError(f"{task_id}: non-finite initial loss", epoch=0, loss=loss)
    log.losses.append(loss)
    step = cfg.initial_step
    while log.epochs < cfg.max_epochs:
        grad_sq = float(np.sum(dW * dW) + np.sum(db * db))
        if grad_sq == 0.0:
            log.stop_reason = "zero gradient"
            break
        while step >= MIN_STEP:
            W_new = W - step * dW
            b_new = b - step * db
            new_loss, new_dW, new_db = objective(W_new, b_new)
            if math.isfinite(new_loss) and new_loss <= loss - ARMIJO_C * step * grad_sq:
                break
            step *= 0.5
        else:
            log.stop_reason = "step underflow"
            break
        if not np.all(np.isfinite(new_dW)):
            raise TrainingError(f"{task_id}: non-finite gradient", epoch=log.epochs + 1, loss=new_loss)
        change = abs(loss - new_loss) / max(abs(loss), 1e-12)
        W, b, loss, dW, db = W_new, b_new, new_loss, new_dW, new_db
        log.epochs += 1
        log.losses.append(loss)
        step *= 2.0
        if change < cfg.tol:
            log.stop_reason = "converged"
            break
    else:
        log.stop_reason = "max epochs"
    logger.debug("%s: %d epochs, loss %.6g (%s)", task_id, log.epochs, loss, log.stop_reason)
    return W, b, log


def _standardization(X: np.ndarray, cfg: ProbeConfig) -> Tuple[np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]:
    if not cfg.standardize:
        return X, None, None
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return (X - mean) / scale, mean, scale


def _train_matrix(dataset: TaskDataset, store: EmbeddingStore) -> Tuple[np.ndarray, List[Instance], int]:
    dim = feature_dim(dataset, store)
    X, kept, dropped = build_matrix(dataset.train, store, dim)
    if dropped:
        logger.warning("%s: dropped %d training instances without embeddings", dataset.task_id, dropped)
    if not kept:
        raise TrainingError(f"{dataset.task_id}: no training instance has embeddings")
    return X, kept, dropped


def train_classifier(dataset: TaskDataset, store: EmbeddingStore,
                     cfg: Optional[ProbeConfig] = None) -> ProbeModel:
    """
    Fit a multinomial logistic regression probe on the train split.

    Raises:
        KindMismatchError: For a regression dataset
        TrainingError: If fewer than two labels occur in train or the loss diverges
    """
    cfg = cfg or ProbeConfig()
    if dataset.is_regression:
        raise KindMismatchError(f"{dataset.task_id} is a regression task")
    X, kept, _ = _train_matrix(dataset, store)
    present = {str(i.label) for i in kept}
    if len(present) < 2:
        raise TrainingError(f"{dataset.task_id}: training split holds a single label {sorted(present)}")
    labels = list(dataset.labels)
    position = {label: i for i, label in enumerate(labels)}
    Y = np.zeros((len(kept), len(labels)))
    for row, instance in enumerate(kept):
        if str(instance.label) not in position:
            raise ValidationError(f"{dataset.task_id}: label {instance.label!r} not in label order")
        Y[row, position[str(instance.label)]] = 1.0

    X, mean, scale = _standardization(X, cfg)
    W0 = np.zeros((len(labels), X.shape[1]))
    b0 = np.zeros(len(labels))
    W, b, log = _descend(lambda W, b: cross_entropy_objective(W, b, X, Y, cfg.l2), W0, b0, cfg, dataset.task_id)
    return ProbeModel(CLASSIFIER, W, b, labels, dataset.task_id, X.shape[1], cfg, log, mean, scale)


def train_regressor(dataset: TaskDataset, store: EmbeddingStore,
                    cfg: Optional[ProbeConfig] = None) -> ProbeModel:
    """
    Fit a Huber-loss linear regression probe on the train split.

    Raises:
        KindMismatchError: For a classification dataset
        TrainingError: If the loss diverges
    """
    cfg = cfg or ProbeConfig()
    if not dataset.is_regression:
        raise KindMismatchError(f"{dataset.task_id} is a {dataset.kind} task, not regression")
    X, kept, _ = _train_matrix(dataset, store)
    y = np.array([float(i.label) for i in kept])
    X, mean, scale = _standardization(X, cfg)
    w0 = np.zeros((1, X.shape[1]))
    b0 = np.zeros(1)
    W, b, log = _descend(
        lambda W, b: huber_objective(W, b, X, y, cfg.l2, cfg.huber_delta), w0, b0, cfg, dataset.task_id
    )
    return ProbeModel(REGRESSOR, W, b, [], dataset.task_id, X.shape[1], cfg, log, mean, scale)


def train_probe(dataset: TaskDataset, store: EmbeddingStore, cfg: Optional[ProbeConfig] = None) -> ProbeModel:
    if dataset.is_regression:
        return train_regressor(dataset, store, cfg)
    return train_classifier(dataset, store, cfg)


def mean_baseline(dataset: TaskDataset) -> float:
    """
    RMSE on test of always predicting the train-label mean.

    Raises:
        KindMismatchError: For a classification dataset
        ValueError: If either split is empty
    """
    if not dataset.is_regression:
        raise KindMismatchError(f"{dataset.task_id} is not a regression task")
    if not dataset.train:
        raise ValueError(f"{dataset.task_id}: empty training split")
    mean = float(np.mean([float(i.label) for i in dataset.train]))
    golds = [float(i.label) for i in dataset.test]
    return rmse(golds, [mean] * len(golds))


def evaluate(model: ProbeModel, dataset: TaskDataset, store: EmbeddingStore,
             split: str = "test") -> EvalResult:
    """
    Apply a probe to one split of a dataset.

    Instances with a missing vector are dropped and counted. A probe trained on
    another task is allowed when kinds and dimensions agree; the result is then
    flagged cross_task.

    Raises:
        KindMismatchError: Classifier on a regression dataset or vice versa
        EmbeddingError: On a feature dimension mismatch
    """
    if (model.kind == REGRESSOR) != dataset.is_regression:
        raise KindMismatchError(f"{model.kind} probe cannot evaluate {dataset.kind} task {dataset.task_id}")
    dim = feature_dim(dataset, store)
    if dim != model.feature_dim:
        raise EmbeddingError(f"{dataset.task_id}: feature dimension {dim} vs probe {model.feature_dim}")
    instances = dataset.test if split == "test" else dataset.train
    X, kept, dropped = build_matrix(instances, store, dim)
    if dropped:
        logger.warning("%s: dropped %d %s instances without embeddings", dataset.task_id, dropped, split)
    if not kept:
        raise EmbeddingError(f"{dataset.task_id}: no {split} instance has embeddings")
    cross_task = model.task_id != dataset.task_id
    if cross_task:
        logger.info("Applying probe trained on %s to %s", model.task_id, dataset.task_id)
    preds = model.predict(X)

    if model.kind == REGRESSOR:
        golds = [float(i.label) for i in kept]
        metrics = MetricSet(rmse=rmse(golds, preds))
        return EvalResult(dataset.task_id, dataset.kind, [], golds, preds, metrics,
                          dropped=dropped, cross_task=cross_task, split=split,
                          model_task_id=model.task_id, baseline_rmse=mean_baseline(dataset))

    golds = [str(i.label) for i in kept]
    labels = list(model.labels) + [label for label in dataset.labels if label not in model.labels]
    cm = confusion(golds, preds, labels)
    return EvalResult(dataset.task_id, dataset.kind, labels, golds, preds, classification_metrics(cm),
                      confusion=cm, dropped=dropped, cross_task=cross_task, split=split,
                      model_task_id=model.task_id)


def run_task(dataset: TaskDataset, store: EmbeddingStore,
             cfg: Optional[ProbeConfig] = None) -> Tuple[ProbeModel, EvalResult]:
    """Train on the train split and evaluate on test."""
    model = train_probe(dataset, store, cfg)
    result = evaluate(model, dataset, store)
    train_dropped = len(dataset.train) - len(build_matrix(dataset.train, store, model.feature_dim)[1])
    result.dropped += train_dropped
    return model, result
