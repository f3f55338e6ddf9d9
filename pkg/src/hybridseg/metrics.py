"""Confusion matrices and the boundary-eroded F1 / kappa / OA protocol."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .heads import UNKNOWN

CLASS_NAMES = ("impervious", "building", "low_vegetation", "tree", "car", "clutter")
OBJECT_CLASSES = 5


def erode_boundaries(gt: np.ndarray, radius: float = 3) -> np.ndarray:
    """Boolean mask of pixels to EXCLUDE: those within ``radius`` (Euclidean,
    inclusive) of a pixel carrying a different ground-truth class."""
    gt = np.asarray(gt)
    if (gt == UNKNOWN).any():
        raise ValueError("ground truth contains UNKNOWN pixels")
    h, w = gt.shape
    excluded = np.zeros((h, w), dtype=bool)
    r = int(np.floor(radius))
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if (dy == 0 and dx == 0) or dy * dy + dx * dx > radius * radius:
                continue
            if abs(dy) >= h or abs(dx) >= w:
                continue
            # compare each pixel with its (dy, dx) neighbour where both exist
            ys, yd = slice(max(0, -dy), h - max(0, dy)), slice(max(0, dy), h - max(0, -dy))
            xs, xd = slice(max(0, -dx), w - max(0, dx)), slice(max(0, dx), w - max(0, -dx))
            excluded[ys, xs] |= gt[ys, xs] != gt[yd, xd]
    return excluded


class ConfusionMatrix:
    """k x k counts; rows are ground truth, columns are predictions."""

    def __init__(self, k: int = 6, counts: np.ndarray | None = None):
        self.counts = np.zeros((k, k), dtype=np.int64) if counts is None else np.array(counts, dtype=np.int64)
        if self.counts.shape != (self.counts.shape[0],) * 2 or (self.counts < 0).any():
            raise ValueError("counts must be a square non-negative matrix")

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accumulate(self, gt: np.ndarray, pred: np.ndarray, exclude: np.ndarray | None = None) -> "ConfusionMatrix":
        gt, pred = np.asarray(gt), np.asarray(pred)
        if gt.shape != pred.shape:
            raise ValueError(f"gt {gt.shape} and prediction {pred.shape} differ in shape")
        if (pred == UNKNOWN).any():
            raise ValueError("prediction contains UNKNOWN pixels; inpaint first")
        keep = np.ones(gt.shape, dtype=bool) if exclude is None else ~np.asarray(exclude, dtype=bool)
        g = gt[keep].astype(np.int64)
        p = pred[keep].astype(np.int64)
        if g.size and (g.max() >= self.k or p.max() >= self.k):
            raise ValueError(f"class id outside 0..{self.k - 1}")
        self.counts += np.bincount(g * self.k + p, minlength=self.k * self.k).reshape(self.k, self.k)
        return self

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(counts=self.counts + other.counts)


def f1(cm: ConfusionMatrix, i: int) -> float:
    tp = cm.counts[i, i]
    denom = cm.counts[i, :].sum() + cm.counts[:, i].sum()
    return 0.0 if denom == 0 else float(2.0 * tp / denom)


def overall_accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(cm.counts) / cm.total)


def kappa(cm: ConfusionMatrix) -> float:
    n = cm.total
    if n == 0:
        raise ValueError("empty confusion matrix")
    p_o = np.trace(cm.counts) / n
    p_e = float((cm.counts.sum(axis=1) / n) @ (cm.counts.sum(axis=0) / n))
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


@dataclass
class EvalReport:
    per_class_f1: list[float]
    mean_f1: float
    mean_f1_all: float
    kappa: float
    overall_accuracy: float
    evaluated_pixels: int
    excluded_pixels: int
    confusion: ConfusionMatrix = field(repr=False, default=None)

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix, excluded: int) -> "EvalReport":
        per = [f1(cm, i) for i in range(cm.k)]
        return cls(per_class_f1=per,
                   mean_f1=float(np.mean(per[:OBJECT_CLASSES])),
                   mean_f1_all=float(np.mean(per)),
                   kappa=kappa(cm), overall_accuracy=overall_accuracy(cm),
                   evaluated_pixels=cm.total, excluded_pixels=int(excluded), confusion=cm)

    def to_text(self) -> str:
        lines = [f"overall_accuracy {self.overall_accuracy:.6f}",
                 f"kappa {self.kappa:.6f}",
                 f"mean_f1 (5 object classes) {self.mean_f1:.6f}",
                 f"mean_f1 (all classes) {self.mean_f1_all:.6f}"]
        for i, v in enumerate(self.per_class_f1):
            name = CLASS_NAMES[i] if i < len(CLASS_NAMES) else f"class{i}"
            lines.append(f"f1 {name} {v:.6f}")
        lines.append(f"evaluated_pixels {self.evaluated_pixels}")
        lines.append(f"excluded_pixels {self.excluded_pixels}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["class,f1"]
        for i, v in enumerate(self.per_class_f1):
            name = CLASS_NAMES[i] if i < len(CLASS_NAMES) else f"class{i}"
            rows.append(f"{name},{v:.12g}")
        rows += [f"mean_f1,{self.mean_f1:.12g}", f"mean_f1_all,{self.mean_f1_all:.12g}",
                 f"kappa,{self.kappa:.12g}", f"oa,{self.overall_accuracy:.12g}",
                 f"evaluated,{self.evaluated_pixels}", f"excluded,{self.excluded_pixels}"]
        return "\n".join(rows) + "\n"


def evaluate_maps(pairs, radius: float = 3, k: int = 6) -> EvalReport:
    """Score (gt, pred) pairs after boundary erosion of each ground truth."""
    cm = ConfusionMatrix(k)
    excluded = 0
    for gt, pred in pairs:
        mask = erode_boundaries(gt, radius)
        excluded += int(mask.sum())
        cm.accumulate(gt, pred, mask)
    return EvalReport.from_confusion(cm, excluded)
