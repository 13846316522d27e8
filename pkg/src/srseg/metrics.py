"""Reconstruction and thematic-map quality measures.

PSNR is computed jointly over all three channels against a 255 peak. The
segmentation scores (overall accuracy, class-balanced accuracy, mean IoU,
Cohen's kappa) all derive from one K x K confusion matrix with rows indexed by
ground truth and columns by prediction, so a full test split can be scored
streaming, tile by tile, without holding predictions in memory.

Pixels are dropped by their ground-truth id only: a prediction landing on an
excluded class at a counted pixel still counts, as an error or a hit.
"""

import dataclasses
import math

import numpy as np

from .validation import IGNORE_ID, check_raster, check_same_hw


def mse(a, b):
    a = check_raster(a, "a")
    b = check_raster(b, "b")
    check_same_hw(a, b)
    if a.shape != b.shape:
        raise ValueError(f"channel mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(reference, estimate, peak=255.0):
    """Peak signal-to-noise ratio in dB over all channels jointly.

    Identical inputs have no meaningful ratio; math.inf marks that case and
    reporting renders it specially.
    """
    err = mse(reference, estimate)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


# ---------------------------------------------------------------------------
# confusion matrix core

def new_confusion(num_classes):
    if num_classes < 1:
        raise ValueError(f"num_classes must be >= 1, got {num_classes}")
    return np.zeros((num_classes, num_classes), dtype=np.int64)


def accumulate_confusion(cm, pred_labels, true_labels, excluded_ids=()):
    """Tally cm[truth, pred] over pixels whose ground truth is not excluded.

    Commutative and associative across tiles: any partition of the pixels,
    accumulated in any order, produces the same matrix.
    """
    cm = np.asarray(cm)
    k = cm.shape[0]
    truth = np.asarray(true_labels, dtype=np.int64).ravel()
    pred = np.asarray(pred_labels, dtype=np.int64).ravel()
    if truth.shape != pred.shape:
        raise ValueError(f"shape mismatch: {truth.shape} vs {pred.shape}")
    drop = frozenset(int(e) for e in excluded_ids) | {IGNORE_ID}
    keep = ~np.isin(truth, list(drop))
    truth = truth[keep]
    pred = pred[keep]
    if truth.size:
        if truth.min() < 0 or truth.max() >= k:
            raise ValueError("ground-truth id outside [0, num_classes)")
        if pred.min() < 0 or pred.max() >= k:
            raise ValueError("predicted id outside [0, num_classes)")
        np.add.at(cm, (truth, pred), 1)
    return cm


@dataclasses.dataclass
class MetricsSummary:
    acc: float
    norm_acc: float
    miou: float
    kappa: float | None
    recall: np.ndarray
    iou: np.ndarray


def compute_metrics(cm):
    """All segmentation scores from one confusion matrix.

    Per-class recall and IoU are nan for classes absent from the relevant
    marginals; those classes are skipped by the means, not counted as zero.
    Kappa is None when chance agreement is exactly 1 (a single-cell matrix
    leaves no room above chance).
    """
    cm = np.asarray(cm, dtype=np.int64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {cm.shape}")
    if (cm < 0).any():
        raise ValueError("negative confusion counts")
    total = int(cm.sum())
    if total == 0:
        raise ValueError("no counted pixels")

    diag = np.diag(cm).astype(np.float64)
    rows = cm.sum(axis=1).astype(np.float64)
    cols = cm.sum(axis=0).astype(np.float64)

    acc = float(diag.sum()) / total

    recall = np.full(cm.shape[0], np.nan)
    recall[rows > 0] = diag[rows > 0] / rows[rows > 0]
    norm_acc = float(recall[rows > 0].mean())

    denom = rows + cols - diag
    iou = np.full(cm.shape[0], np.nan)
    iou[denom > 0] = diag[denom > 0] / denom[denom > 0]
    miou = float(iou[denom > 0].mean())

    p_e = float((rows / total) @ (cols / total))
    kappa = None if p_e == 1.0 else (acc - p_e) / (1.0 - p_e)

    return MetricsSummary(acc=acc, norm_acc=norm_acc, miou=miou, kappa=kappa,
                          recall=recall, iou=iou)


class ConfusionAccumulator:
    """Streaming wrapper over the matrix core, for scoring a split tile by
    tile and merging worker tallies."""

    def __init__(self, num_classes, excluded=()):
        self.num_classes = int(num_classes)
        self.excluded = frozenset(int(e) for e in excluded)
        self.matrix = new_confusion(num_classes)

    def update(self, pred, truth):
        accumulate_confusion(self.matrix, pred, truth, self.excluded)
        return self

    def merge(self, other):
        if other.matrix.shape != self.matrix.shape:
            raise ValueError("class count mismatch")
        self.matrix += other.matrix
        return self

    @property
    def total(self):
        return int(self.matrix.sum())

    def summary(self):
        return compute_metrics(self.matrix)


@dataclasses.dataclass
class MetricsReport:
    """One evaluated run: reconstruction quality, the four map scores, their
    per-class breakdown, the raw matrix, and free-form run metadata."""

    psnr: float
    acc: float
    norm_acc: float
    miou: float
    kappa: float | None
    recall: list
    confusion: np.ndarray
    metadata: dict

    @classmethod
    def from_parts(cls, psnr_db, cm, metadata=None):
        s = compute_metrics(cm)
        recall = [None if math.isnan(r) else float(r) for r in s.recall]
        return cls(psnr=psnr_db, acc=s.acc, norm_acc=s.norm_acc, miou=s.miou,
                   kappa=s.kappa, recall=recall,
                   confusion=np.asarray(cm, dtype=np.int64).copy(),
                   metadata=dict(metadata or {}))

    def to_dict(self):
        return {
            "psnr": None if self.psnr is None else
                    ("identical" if math.isinf(self.psnr) else self.psnr),
            "acc": self.acc, "norm_acc": self.norm_acc, "miou": self.miou,
            "kappa": self.kappa, "recall": self.recall,
            "confusion": self.confusion.tolist(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d):
        p = d["psnr"]
        psnr_db = math.inf if p == "identical" else (None if p is None else float(p))
        return cls(psnr=psnr_db, acc=d["acc"], norm_acc=d["norm_acc"],
                   miou=d["miou"], kappa=d["kappa"], recall=d["recall"],
                   confusion=np.asarray(d["confusion"], dtype=np.int64),
                   metadata=dict(d.get("metadata", {})))
