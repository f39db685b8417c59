"""Evaluation metrics and their file renderings (distance curve CSV, comparison table)."""

from __future__ import annotations

import io
import os
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .synth import N_CLASSES


def average_precision(scores: Sequence[tuple[float, bool]]) -> float:
    """Non-interpolated AP: mean of precision@r over the ranks r of the positives.

    Items are ranked by descending score; equal scores keep their input order.
    Raises ``ValueError`` when there are no positives.
    """
    s = np.array([float(x) for x, _ in scores], dtype=np.float64)
    pos = np.array([bool(y) for _, y in scores])
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise ValueError("average precision is undefined without positives")
    order = np.argsort(-s, kind="stable")
    hits = pos[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, n_pos + 1) / ranks))


def mean_average_precision(probs: np.ndarray, labels: np.ndarray,
                           n_classes: int = N_CLASSES) -> tuple[float, list[float | None]]:
    """One-vs-rest AP per class using the class probability as score.

    Classes without positives get ``None`` and are left out of the mean (with a warning).
    """
    per_class: list[float | None] = []
    for c in range(n_classes):
        positives = labels == c
        if not positives.any():
            warnings.warn(f"class {c} has no positives; excluded from mAP")
            per_class.append(None)
            continue
        per_class.append(average_precision(list(zip(probs[:, c], positives))))
    present = [ap for ap in per_class if ap is not None]
    return (float(np.mean(present)) if present else 0.0), per_class


def predict(probs: np.ndarray) -> np.ndarray:
    """Argmax with ties going to the lowest class code."""
    return np.argmax(probs, axis=-1)


@dataclass
class Metrics:
    accuracy: float
    mean_loss: float
    mAP: float
    per_distance: dict[int, tuple[float, int]]
    per_class_ap: list[float | None]
    n_samples: int = 0
    components: dict[str, float] | None = None
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "mean_loss": self.mean_loss, "mAP": self.mAP,
                "per_distance": {str(k): {"accuracy": a, "n_samples": n}
                                 for k, (a, n) in sorted(self.per_distance.items())},
                "per_class_ap": self.per_class_ap, "n_samples": self.n_samples,
                "components": self.components, "warnings": self.warnings}

    @classmethod
    def from_dict(cls, d: dict) -> Metrics:
        return cls(accuracy=d["accuracy"], mean_loss=d["mean_loss"], mAP=d["mAP"],
                   per_distance={int(k): (v["accuracy"], v["n_samples"])
                                 for k, v in d["per_distance"].items()},
                   per_class_ap=d["per_class_ap"], n_samples=d.get("n_samples", 0),
                   components=d.get("components"), warnings=d.get("warnings", []))


def compute_metrics(probs: np.ndarray, labels: np.ndarray, distances: np.ndarray,
                    losses: np.ndarray) -> Metrics:
    labels = np.asarray(labels)
    pred = predict(probs)
    correct = pred == labels
    per_distance = {}
    meters = np.rint(distances).astype(int)
    for m in sorted(set(meters.tolist())):
        sel = meters == m
        per_distance[m] = (float(correct[sel].mean()), int(sel.sum()))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        mAP, per_class = mean_average_precision(probs, labels)
    return Metrics(accuracy=float(correct.mean()), mean_loss=float(np.mean(losses)), mAP=mAP,
                   per_distance=per_distance, per_class_ap=per_class, n_samples=len(labels),
                   warnings=[str(w.message) for w in caught])


def distance_curve_csv(metrics: Metrics) -> str:
    buf = io.StringIO()
    buf.write("distance_m,accuracy,n_samples\n")
    for m in sorted(metrics.per_distance):
        acc, n = metrics.per_distance[m]
        buf.write(f"{m},{acc:.4f},{n}\n")
    return buf.getvalue()


def emit_distance_curve(metrics: Metrics, out_path: str | os.PathLike) -> None:
    """Accuracy-vs-distance CSV, one row per integer meter in ascending order."""
    with open(out_path, "w", newline="") as f:
        f.write(distance_curve_csv(metrics))


# Reference values reported for the full model on the original (unpublished) data.
PAPER_TSFN_ROW = ("TSFN", 96.1, 0.12, 0.92)


def comparison_table(results: Sequence[tuple[str, Metrics]]) -> str:
    lines = ["# synthetic stick-figure corpus; not comparable to the webcam results",
             "model,accuracy_pct,loss,mAP"]
    for name, m in results:
        lines.append(f"{name},{100 * m.accuracy:.1f},{m.mean_loss:.2f},{m.mAP:.2f}")
    name, acc, loss, mAP = PAPER_TSFN_ROW
    lines.append("# published reference row (real 4-28 m webcam data, reference only):")
    lines.append(f"# {name} {acc} {loss} {mAP}")
    return "\n".join(lines) + "\n"


def report_comparison(results: Sequence[tuple[str, Metrics]], out_path: str | os.PathLike) -> str:
    """Write a model / accuracy(%) / loss / mAP table and return its text."""
    text = comparison_table(results)
    with open(out_path, "w", newline="") as f:
        f.write(text)
    return text
