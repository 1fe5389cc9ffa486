"""Training loop with best-validation snapshotting, and the evaluation metrics."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import Adam, Network, cross_entropy, one_hot
from .pipeline import LEVELS, TAXONOMY, TYPES, ClassTaxonomy

log = logging.getLogger(__name__)

TARGETS = ("action", "pouring", "shaking")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 0.001
    batch_size: int = 16
    split_ratio: float = 0.8
    seed: int = 0
    stratified: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split ratio must lie strictly between 0 and 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


@dataclass
class TrainResult:
    net: Network
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch]

    def history_text(self) -> str:
        lines = ["epoch train_loss val_loss"]
        for i, (a, b) in enumerate(zip(self.train_loss, self.val_loss)):
            lines.append(f"{i} {a:.10g} {b:.10g}")
        return "\n".join(lines) + "\n"


def target_labels(target: str, actions, contents, taxonomy: ClassTaxonomy = TAXONOMY):
    """Which items a model trains on and their class indices in its own output space.

    The action model sees everything; each specialist sees only its action's
    clips, labelled by position within its mask.
    """
    actions = np.asarray(actions, dtype=int)
    contents = np.asarray(contents, dtype=int)
    if target == "action":
        return np.arange(len(actions)), actions.copy()
    if target not in ("pouring", "shaking"):
        raise ValueError(f"unknown training target {target!r}")
    mask = taxonomy.mask(target)
    lookup = {c: i for i, c in enumerate(mask)}
    idx = np.flatnonzero(actions == taxonomy.action_index(target))
    bad = [int(contents[i]) for i in idx if int(contents[i]) not in lookup]
    if bad:
        raise ValueError(f"{target} items carry classes outside its mask: {sorted(set(bad))}")
    return idx, np.array([lookup[int(contents[i])] for i in idx], dtype=int)


def evaluate_loss(net: Network, x: np.ndarray, labels: np.ndarray, batch_size: int = 64) -> float:
    probs = net.predict(x, batch_size=batch_size)
    return cross_entropy(probs, one_hot(labels, net.output_dim))


def train(
    net: Network,
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray,
    y_val: np.ndarray,
    cfg: TrainConfig = TrainConfig(),
    progress=None,
) -> TrainResult:
    """Mini-batch Adam on cross-entropy; keeps the weights of the lowest validation loss.

    Ties keep the earliest epoch. ``progress(epoch, train_loss, val_loss)`` is
    called after every epoch when given.
    """
    if len(x_train) == 0:
        raise TrainingError("empty training split")
    if len(x_val) == 0:
        raise TrainingError("empty validation split")
    y_train = np.asarray(y_train, dtype=int)
    y_val = np.asarray(y_val, dtype=int)
    dim = net.output_dim
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(net.params(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    targets = one_hot(y_train, dim, dtype=net.dtype)
    train_hist, val_hist = [], []
    best, best_epoch = None, -1
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x_train))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            out, tape = net.forward(x_train[batch], train=True, rng=rng)
            loss = cross_entropy(out, targets[batch])
            if not math.isfinite(loss):
                raise TrainingError(f"{net.name}: non-finite loss {loss} at epoch {epoch}, batch starting {start}")
            grads = net.backward(tape, targets[batch])
            try:
                opt.step(net.params(), grads)
            except FloatingPointError as exc:
                raise TrainingError(f"{net.name}: {exc} at epoch {epoch}, batch starting {start}") from None
            total += loss * len(batch)
        train_hist.append(total / len(order))
        val = evaluate_loss(net, x_val, y_val)
        if not math.isfinite(val):
            raise TrainingError(f"{net.name}: non-finite validation loss at epoch {epoch}")
        val_hist.append(val)
        if best is None or val < val_hist[best_epoch]:
            best, best_epoch = net.copy_params(), epoch
        if progress is not None:
            progress(epoch, train_hist[-1], val)
    net.set_params(best)
    return TrainResult(net, train_hist, val_hist, best_epoch)


# --- metrics -----------------------------------------------------------------


def _check_pair(preds, labels, num_classes):
    p = np.asarray(preds, dtype=int).reshape(-1)
    t = np.asarray(labels, dtype=int).reshape(-1)
    if len(p) != len(t):
        raise ValueError(f"{len(p)} predictions for {len(t)} labels")
    if len(p) == 0:
        raise ValueError("no predictions to score")
    if p.min() < 0 or t.min() < 0 or p.max() >= num_classes or t.max() >= num_classes:
        raise ValueError(f"class index outside [0, {num_classes})")
    return p, t


def confusion(preds, labels, num_classes: int) -> np.ndarray:
    """Counts with true classes on rows and predictions on columns."""
    p, t = _check_pair(preds, labels, num_classes)
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (t, p), 1)
    return m


def row_normalized(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    sums = m.sum(axis=1, keepdims=True)
    return np.divide(m, sums, out=np.zeros_like(m), where=sums > 0)


def per_class_scores(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Precision, recall, F1 and support per class from a confusion matrix.

    An undefined ratio (no predictions, no support, or P + R = 0) is 0.
    """
    m = np.asarray(m, dtype=np.float64)
    tp = np.diag(m)
    predicted = m.sum(axis=0)
    support = m.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return precision, recall, f1, support.astype(np.int64)


def weighted_f1_from_confusion(m: np.ndarray) -> float:
    _, _, f1, support = per_class_scores(m)
    total = support.sum()
    if total == 0:
        raise ValueError("confusion matrix is empty")
    return float((support * f1).sum() / total)


def weighted_f1(preds, labels, num_classes: int) -> float:
    """Support-weighted mean of per-class F1; zero-support classes carry no weight."""
    return weighted_f1_from_confusion(confusion(preds, labels, num_classes))


def accuracy(preds, labels) -> float:
    p = np.asarray(preds, dtype=int)
    t = np.asarray(labels, dtype=int)
    if len(p) != len(t) or len(p) == 0:
        raise ValueError("accuracy needs equal-length non-empty sequences")
    return float(np.mean(p == t))


@dataclass
class EvalReport:
    name: str
    class_names: tuple[str, ...]
    confusion: np.ndarray
    precision: np.ndarray = field(init=False)
    recall: np.ndarray = field(init=False)
    f1: np.ndarray = field(init=False)
    support: np.ndarray = field(init=False)
    weighted_f1: float = field(init=False)

    def __post_init__(self):
        self.precision, self.recall, self.f1, self.support = per_class_scores(self.confusion)
        self.weighted_f1 = weighted_f1_from_confusion(self.confusion)

    @classmethod
    def from_predictions(cls, name, class_names, preds, labels) -> "EvalReport":
        return cls(name, tuple(class_names), confusion(preds, labels, len(class_names)))

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.confusion.sum())

    def metrics_json(self) -> str:
        body = {
            "name": self.name,
            "weighted_f1": self.weighted_f1,
            "accuracy": self.accuracy,
            "classes": [
                {
                    "class": c,
                    "precision": float(self.precision[i]),
                    "recall": float(self.recall[i]),
                    "f1": float(self.f1[i]),
                    "support": int(self.support[i]),
                }
                for i, c in enumerate(self.class_names)
            ],
        }
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    def count_grid(self) -> str:
        """Raw counts, one whitespace-separated row per true class."""
        return "\n".join(" ".join(str(int(v)) for v in row) for row in self.confusion) + "\n"

    def plot_grid(self) -> str:
        """Row-normalized matrix as 'x y z' triples, blank line between rows (gnuplot/pgfplots matrix layout)."""
        norm = row_normalized(self.confusion)
        blocks = []
        for i in range(norm.shape[0]):
            blocks.append("\n".join(f"{j} {i} {norm[i, j]:.6f}" for j in range(norm.shape[1])))
        return "x y z\n" + "\n\n".join(blocks) + "\n"

    def summary_line(self) -> str:
        return f"{self.name}: weighted F1 {100.0 * self.weighted_f1:.2f}% accuracy {100.0 * self.accuracy:.2f}% over {int(self.support.sum())} items"

    def write(self, out_dir, stem: str | None = None) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or self.name
        (out / f"{stem}_metrics.json").write_text(self.metrics_json())
        (out / f"{stem}_confusion.txt").write_text(self.count_grid())
        (out / f"{stem}_confusion_grid.dat").write_text(self.plot_grid())


def project_levels(classes, taxonomy: ClassTaxonomy = TAXONOMY) -> np.ndarray:
    return np.array([taxonomy.level(int(c)) for c in classes], dtype=int)


def project_types(classes, taxonomy: ClassTaxonomy = TAXONOMY) -> np.ndarray:
    return np.array([taxonomy.kind(int(c)) for c in classes], dtype=int)


def evaluate_predictions(preds, labels, taxonomy: ClassTaxonomy = TAXONOMY) -> dict[str, EvalReport]:
    """Combined, level-only and type-only reports.

    ``labels`` entries that are None (no ground truth) are skipped and counted
    in the log.
    """
    keep = [i for i, t in enumerate(labels) if t is not None]
    skipped = len(labels) - len(keep)
    if skipped:
        log.warning("skipped %d items without ground truth", skipped)
    if not keep:
        return {}
    p = np.array([preds[i] for i in keep], dtype=int)
    t = np.array([labels[i] for i in keep], dtype=int)
    return {
        "combined": EvalReport.from_predictions("combined", taxonomy.content_classes, p, t),
        "level": EvalReport.from_predictions("level", LEVELS, project_levels(p, taxonomy), project_levels(t, taxonomy)),
        "type": EvalReport.from_predictions("type", TYPES, project_types(p, taxonomy), project_types(t, taxonomy)),
    }


def evaluate_pipeline(classifier, x: np.ndarray, labels, taxonomy: ClassTaxonomy = TAXONOMY):
    """Run the gated classifier over scaled inputs and score it on all three axes.

    Returns (reports, content predictions, action predictions).
    """
    content, actions, _, _ = classifier.classify_inputs(x)
    return evaluate_predictions(list(content), list(labels), taxonomy), content, actions


def write_summary(path, reports: dict[str, EvalReport], extra: dict | None = None) -> None:
    lines = [reports[k].summary_line() for k in ("combined", "level", "type") if k in reports]
    for key, value in (extra or {}).items():
        lines.append(f"{key}: {value}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
