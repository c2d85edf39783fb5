"""Classification metrics and run summaries.

Undefined precision or recall (empty denominator) is taken as 0, so a class
that is never predicted, or absent altogether, scores F1 = 0 in the macro mean.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from haam.errors import InvalidInputError


@dataclass
class MetricsReport:
    f1_macro: float
    f1_micro: float
    accuracy: float
    confusion: np.ndarray
    split: str = "test"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = self.confusion.tolist()
        return d

    def to_text(self) -> str:
        return "\n".join([
            f"split={self.split}",
            f"accuracy={self.accuracy!r}",
            f"f1_micro={self.f1_micro!r}",
            f"f1_macro={self.f1_macro!r}",
        ]) + "\n"


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=float)
    np.divide(num, den, out=out, where=den > 0)
    return out


def score(pred: np.ndarray, truth: np.ndarray, indices: np.ndarray | None = None,
          n_classes: int | None = None, split: str = "test") -> MetricsReport:
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if indices is not None:
        indices = np.asarray(indices, dtype=np.int64)
        pred, truth = pred[indices], truth[indices]
    if truth.size == 0:
        raise InvalidInputError("cannot score an empty index set")
    c = n_classes if n_classes is not None else int(max(pred.max(), truth.max()) + 1)
    conf = np.bincount(truth * c + pred, minlength=c * c).reshape(c, c)
    tp = np.diag(conf).astype(float)
    precision = _safe_div(tp, conf.sum(axis=0))
    recall = _safe_div(tp, conf.sum(axis=1))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    acc = float(tp.sum() / truth.size)
    # single-label: global precision = global recall = accuracy
    return MetricsReport(f1_macro=float(f1.mean()), f1_micro=acc, accuracy=acc,
                         confusion=conf, split=split)


def summarize_runs(reports: list[MetricsReport]) -> dict[str, dict[str, float]]:
    """Mean and sample standard deviation (ddof=1; 0 for a single run) per metric."""
    if not reports:
        raise InvalidInputError("need at least one run")
    out = {}
    for key in ("f1_macro", "f1_micro", "accuracy"):
        vals = np.array([getattr(r, key) for r in reports])
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        out[key] = {"mean": float(vals.mean()), "std": std}
    return out


def write_report(directory: str | Path, report: MetricsReport, stem: str = "metrics") -> None:
    directory = Path(directory)
    (directory / f"{stem}.txt").write_text(report.to_text())
    (directory / f"{stem}.json").write_text(
        json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
