"""Confusion counts and precision / recall / F1 at a fixed threshold."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError


def confusion(predictions, labels, threshold: float = 0.5) -> dict:
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise ContractError(f"{p.size} predictions vs {y.size} labels")
    hit = p >= threshold
    pos = y == 1
    return {
        "tp": int(np.sum(hit & pos)),
        "fp": int(np.sum(hit & ~pos)),
        "tn": int(np.sum(~hit & ~pos)),
        "fn": int(np.sum(~hit & pos)),
    }


def scores(counts: dict) -> dict:
    """Percent precision, recall and F1 (2 decimals); 0 with a flag on empty denominators."""
    tp, fp, fn = counts["tp"], counts["fp"], counts["fn"]
    flags = []
    if tp + fp == 0:
        precision = 0.0
        flags.append("precision_undefined")
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall = 0.0
        flags.append("recall_undefined")
    else:
        recall = tp / (tp + fn)
    if precision + recall == 0:
        f1 = 0.0
        flags.append("f1_undefined")
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return {
        "precision": round(100 * precision, 2),
        "recall": round(100 * recall, 2),
        "f1": round(100 * f1, 2),
        "flags": flags,
    }


@dataclass
class EvalReport:
    dataset: str
    model: str
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f1: float
    feedback_mode: str = "n/a"
    wall_ms: int = 0
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def f1_metrics(predictions, labels, threshold: float = 0.5, dataset: str = "", model: str = "",
               feedback_mode: str = "n/a") -> EvalReport:
    p = np.asarray(predictions)
    if p.size < 1:
        raise ContractError("f1_metrics needs at least one prediction")
    c = confusion(predictions, labels, threshold)
    s = scores(c)
    return EvalReport(dataset, model, threshold, c["tp"], c["fp"], c["tn"], c["fn"],
                      s["precision"], s["recall"], s["f1"], feedback_mode, 0, s["flags"])
