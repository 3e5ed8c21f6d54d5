"""Confusion-matrix metrics and map rendering (prediction maps, diff overlays)."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

DEFAULT_PALETTE = ((0, 0, 0), (255, 255, 255))

MAGENTA = (255, 0, 255, 255)
GREEN = (0, 255, 0, 255)
YELLOW = (255, 255, 0, 255)
CLEAR = (0, 0, 0, 0)


@dataclass
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            v = int(getattr(self, name))
            if v < 0:
                raise ValueError(f"{name} must be non-negative, got {v}")
            setattr(self, name, v)

    def __add__(self, other):
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    def as_dict(self):
        return {k.upper(): v for k, v in asdict(self).items()}


def confusion(pred, target):
    """Pixel counts for binary class grids (1 = positive class)."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    p = pred.astype(bool)
    t = target.astype(bool)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ConfusionMatrix(tp, fp, p.size - tp - fp - fn, fn)


def _ratio(num, den):
    # den == 0 means the class is absent from both prediction and target
    return 1.0 if den == 0 else num / den


def iou_metrics(cm):
    """bIoU, background IoU, their mean (mIoU) and pixel accuracy."""
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    biou = _ratio(cm.tp, cm.fp + cm.tp + cm.fn)
    bg = _ratio(cm.tn, cm.tn + cm.fp + cm.fn)
    return {
        "bIoU": biou,
        "backgroundIoU": bg,
        "mIoU": (biou + bg) / 2,
        "accuracy": (cm.tp + cm.tn) / cm.total,
    }


def predict_classes(logits):
    """Argmax over the class axis; ties go to the lowest index (background)."""
    return np.argmax(np.asarray(logits), axis=-3).astype(np.uint8)


def metrics_report(cm, **context):
    return {**context, "counts": cm.as_dict(), "metrics": iou_metrics(cm)}


def _write_sidecar(path, grid, extra):
    side = dict(extra)
    if grid is not None:
        side["grid"] = {k: getattr(grid, k) for k in ("width", "height", "pixel_size", "origin_x", "origin_y", "crs")}
    Path(path).with_suffix(".json").write_text(json.dumps(side, indent=2) + "\n")


def colorize(pred, palette=DEFAULT_PALETTE):
    pred = np.asarray(pred)
    if pred.size == 0:
        raise ValueError("cannot render an empty grid")
    pal = np.asarray(palette, dtype=np.uint8)
    if pred.max() >= len(pal):
        raise ValueError(f"class {pred.max()} has no palette entry")
    return pal[pred]


def render_map(pred, path, palette=DEFAULT_PALETTE, grid=None):
    """Write a class grid as an RGB PNG with a georeferencing sidecar."""
    from PIL import Image

    rgb = colorize(pred, palette)
    Image.fromarray(rgb, mode="RGB").save(path)
    _write_sidecar(path, grid, {"kind": "prediction", "palette": [list(c) for c in palette]})
    return Path(path)


def decode_map(path, palette=DEFAULT_PALETTE):
    """Inverse of :func:`render_map`."""
    from PIL import Image

    rgb = np.asarray(Image.open(path).convert("RGB"))
    out = np.full(rgb.shape[:2], -1, dtype=np.int64)
    for cls, color in enumerate(palette):
        out[np.all(rgb == np.asarray(color, dtype=np.uint8), axis=-1)] = cls
    if (out < 0).any():
        raise ValueError(f"{path} contains colors outside the palette")
    return out.astype(np.uint8)


def diff_categories(pred_a, pred_b):
    """0 neither, 1 only in b (added), 2 only in a (removed), 3 both."""
    a = np.asarray(pred_a).astype(bool)
    b = np.asarray(pred_b).astype(bool)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return (b & ~a) * 1 + (a & ~b) * 2 + (a & b) * 3


def diff_overlay(pred_a, pred_b, path=None, grid=None):
    """RGBA overlay comparing two predictions.

    Magenta: positive only in ``pred_b``; green: only in ``pred_a``; yellow:
    in both; fully transparent elsewhere. Returns the RGBA array.
    """
    cats = diff_categories(pred_a, pred_b)
    lut = np.array([CLEAR, MAGENTA, GREEN, YELLOW], dtype=np.uint8)
    rgba = lut[cats]
    if path is not None:
        from PIL import Image

        Image.fromarray(rgba, mode="RGBA").save(path)
        _write_sidecar(path, grid, {"kind": "diff_overlay",
                                    "legend": {"added": "magenta", "removed": "green", "both": "yellow"}})
    return rgba
