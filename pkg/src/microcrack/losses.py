"""Class-imbalance losses on Tensors, plus DSC / accuracy metrics on hard masks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T

LOSSES = ("focal", "dice", "wdl", "cwdl")
LOSS_LABELS = {"focal": "FL", "dice": "DL", "wdl": "WDL", "cwdl": "CWDL"}
CLIP = 1e-7


@dataclass
class LossConfig:
    kind: str = "cwdl"
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    class_weights: tuple = (0.05, 0.95)  # (background, crack)
    cwdl_alpha: float = 0.5
    smooth: float = 1.0

    def __post_init__(self):
        aliases = {"fl": "focal", "dl": "dice", "weighted_dice": "wdl", "combined": "cwdl"}
        self.kind = aliases.get(self.kind.lower(), self.kind.lower())
        if self.kind not in LOSSES:
            raise ValueError(f"unknown loss {self.kind!r}; expected one of {LOSSES}")
        if not 0.0 <= self.cwdl_alpha <= 1.0:
            raise ValueError("cwdl_alpha must lie in [0, 1]")
        if self.focal_gamma < 0:
            raise ValueError("focal_gamma must be non-negative")
        self.class_weights = tuple(float(w) for w in self.class_weights)
        if len(self.class_weights) != 2 or min(self.class_weights) <= 0:
            raise ValueError("class_weights must be two positive numbers")


def _prep(pred, target):
    pred = T.as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.size == 0:
        raise ValueError("empty prediction")
    if pred.shape != target.shape:
        raise T.ShapeError(f"loss: prediction {pred.shape} vs target {target.shape}")
    return pred, target


def dice_loss(pred, target, smooth=1.0):
    """Soft Dice: ``1 - (2 sum(p y) + s) / (sum(p) + sum(y) + s)``."""
    pred, target = _prep(pred, target)
    inter = (pred * target).sum()
    return 1.0 - (inter * 2.0 + smooth) / (pred.sum() + (target.sum() + smooth))


def focal_loss(pred, target, alpha=0.25, gamma=2.0):
    pred, target = _prep(pred, target)
    p = T.clip(pred, CLIP, 1.0 - CLIP)
    pt = p * target + (1.0 - p) * (1.0 - target)
    return -((1.0 - pt) ** gamma * T.log(pt) * alpha).mean()


def bce_loss(pred, target):
    pred, target = _prep(pred, target)
    p = T.clip(pred, CLIP, 1.0 - CLIP)
    return -(T.log(p) * target + T.log(1.0 - p) * (1.0 - target)).mean()


def pixel_weights(target, class_weights):
    w_bg, w_crack = class_weights
    return np.where(np.asarray(target) > 0.5, w_crack, w_bg)


def weighted_dice_loss(pred, target, class_weights=(0.05, 0.95), smooth=1.0):
    """``1 - (2 sum(w x y) + s) / (sum(w x^2) + sum(w y^2) + s)``, weight picked by the pixel's class."""
    pred, target = _prep(pred, target)
    w = pixel_weights(target, class_weights)
    # same product order on both sides so a hard perfect prediction gives exactly 0
    num = (pred * target * w).sum() * 2.0 + smooth
    den = (pred * pred * w).sum() + float(np.sum(target * target * w)) + smooth
    return 1.0 - num / den


def combined_weighted_dice_loss(pred, target, cfg=None):
    cfg = cfg or LossConfig()
    a = cfg.cwdl_alpha
    return weighted_dice_loss(pred, target, cfg.class_weights, cfg.smooth) * a + bce_loss(pred, target) * (1.0 - a)


def make_loss(cfg):
    if cfg.kind == "dice":
        return lambda p, y: dice_loss(p, y, cfg.smooth)
    if cfg.kind == "focal":
        return lambda p, y: focal_loss(p, y, cfg.focal_alpha, cfg.focal_gamma)
    if cfg.kind == "wdl":
        return lambda p, y: weighted_dice_loss(p, y, cfg.class_weights, cfg.smooth)
    return lambda p, y: combined_weighted_dice_loss(p, y, cfg)


# ---------------------------------------------------------------- metrics

@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)


def confusion(pred, target, threshold=0.5):
    p = np.asarray(pred) >= threshold
    y = np.asarray(target) > 0.5
    if p.shape != y.shape:
        raise T.ShapeError(f"confusion: prediction {p.shape} vs target {y.shape}")
    tp = int(np.count_nonzero(p & y))
    fp = int(np.count_nonzero(p & ~y))
    fn = int(np.count_nonzero(~p & y))
    return ConfusionCounts(tp, p.size - tp - fp - fn, fp, fn)


def dsc(counts):
    """``2TP / (2TP + FP + FN)``; 1.0 when there are no positives in either mask."""
    den = 2 * counts.tp + counts.fp + counts.fn
    return 1.0 if den == 0 else 2 * counts.tp / den


def accuracy(counts):
    if counts.total == 0:
        raise ValueError("accuracy of an empty confusion matrix")
    return (counts.tp + counts.tn) / counts.total


WIDTH_THRESHOLDS = (0.0, 1.0, 2.0, 3.0, 4.0)


def detected(pred, target, threshold=0.5, hit_fraction=0.5):
    """Per-sample crack detection: at least ``hit_fraction`` of the crack pixels predicted positive."""
    p = np.asarray(pred).reshape(len(pred), -1) >= threshold
    y = np.asarray(target).reshape(len(target), -1) > 0.5
    n_crack = y.sum(axis=1)
    hits = (p & y).sum(axis=1)
    return (n_crack > 0) & (hits >= hit_fraction * n_crack)


def bucketed_accuracy(pred, target, min_widths, thresholds=WIDTH_THRESHOLDS, threshold=0.5):
    """Detection rate among samples whose narrowest crack exceeds each width threshold (µm).

    Returns one entry per threshold; ``None`` marks an empty bucket.
    """
    ok = detected(pred, target, threshold)
    widths = np.asarray(min_widths, dtype=np.float64)
    row = []
    for t in thresholds:
        sel = widths > t
        row.append(float(ok[sel].mean()) if sel.any() else None)
    return row
