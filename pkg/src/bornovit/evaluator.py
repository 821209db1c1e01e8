"""Classification metrics and Grad-CAM heatmaps over the last transformer block."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from PIL import Image

from . import tensor as T
from .data import LabeledImage, bilinear_resize, resize_to_input
from .errors import ConfigError, ContractError
from .model import ViTParams, forward, predict


@dataclass
class ClassificationReport:
    class_names: List[str]
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    confusion: np.ndarray  # rows = true class, columns = predicted class

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.total) if self.total else 0.0

    @property
    def macro_precision(self) -> float:
        return float(self.precision.mean())

    @property
    def macro_recall(self) -> float:
        return float(self.recall.mean())

    @property
    def macro_f1(self) -> float:
        return float(self.f1.mean())

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "total": self.total,
            "classes": [
                {
                    "index": i,
                    "name": name,
                    "precision": float(self.precision[i]),
                    "recall": float(self.recall[i]),
                    "f1": float(self.f1[i]),
                    "support": int(self.support[i]),
                }
                for i, name in enumerate(self.class_names)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    def to_text(self) -> str:
        width = max([len("macro avg")] + [len(n) for n in self.class_names])
        lines = [f"{'':>{width}}  precision     recall   f1-score    support", ""]
        for i, name in enumerate(self.class_names):
            lines.append(f"{name:>{width}}  {self.precision[i]:9.4f}  {self.recall[i]:9.4f}  "
                         f"{self.f1[i]:9.4f}  {int(self.support[i]):9d}")
        lines.append("")
        lines.append(f"{'accuracy':>{width}}  {'':9}  {'':9}  {self.accuracy:9.4f}  {self.total:9d}")
        lines.append(f"{'macro avg':>{width}}  {self.macro_precision:9.4f}  {self.macro_recall:9.4f}  "
                     f"{self.macro_f1:9.4f}  {self.total:9d}")
        return "\n".join(lines) + "\n"

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["true\\pred"] + list(self.class_names))
        for name, row in zip(self.class_names, self.confusion):
            writer.writerow([name] + [int(v) for v in row])
        return buf.getvalue()


def _safe_divide(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(num.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den != 0)
    return out


def classification_report(y_true: Sequence[int], y_pred: Sequence[int], num_classes: int,
                          class_names: Optional[Sequence[str]] = None) -> ClassificationReport:
    """Per-class precision/recall/F1 with the 0/0 -> 0 convention."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"{len(y_true)} labels vs {len(y_pred)} predictions")
    for arr in (y_true, y_pred):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise IndexError(f"class index out of range [0, {num_classes})")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    tp = np.diag(confusion).astype(np.float64)
    support = confusion.sum(axis=1)
    predicted = confusion.sum(axis=0)
    precision = _safe_divide(tp, predicted)
    recall = _safe_divide(tp, support)
    f1 = _safe_divide(2 * precision * recall, precision + recall)
    names = list(class_names) if class_names is not None else [str(i) for i in range(num_classes)]
    return ClassificationReport(names, precision, recall, f1, support, confusion)


def evaluate(params: ViTParams, samples: Sequence[LabeledImage], batch_size: int = 128,
             class_names: Optional[Sequence[str]] = None) -> ClassificationReport:
    """Eval-mode predictions (argmax, lowest index on ties) scored against sample labels."""
    if not samples:
        raise ValueError("evaluate() needs at least one sample")
    size = params.config.image_size
    preds = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        x = np.stack([resize_to_input(s, size) for s in chunk])
        preds.append(np.argmax(predict(params, x, batch_size), axis=1))
    y_pred = np.concatenate(preds)
    y_true = [s.label for s in samples]
    return classification_report(y_true, y_pred, params.config.num_classes, class_names)


# ---------------------------------------------------------------------------
# Grad-CAM
# ---------------------------------------------------------------------------

# Dark-to-warm colormap anchors (position, R, G, B); linear interpolation between
# anchors gives the 256-entry lookup table below.
HEAT_ANCHORS = (
    (0.00, 0.00, 0.00, 0.00),
    (0.25, 0.35, 0.05, 0.45),
    (0.50, 0.80, 0.10, 0.20),
    (0.75, 1.00, 0.55, 0.00),
    (1.00, 1.00, 1.00, 0.60),
)


def _build_lut() -> np.ndarray:
    anchors = np.array(HEAT_ANCHORS)
    pos = np.linspace(0.0, 1.0, 256)
    return np.stack([np.interp(pos, anchors[:, 0], anchors[:, c]) for c in (1, 2, 3)], axis=1)


HEAT_LUT = _build_lut()


def apply_colormap(heat: np.ndarray) -> np.ndarray:
    """(H, W) values in [0, 1] -> (H, W, 3) RGB floats in [0, 1]."""
    idx = np.clip(np.rint(np.asarray(heat) * 255), 0, 255).astype(np.int64)
    return HEAT_LUT[idx]


@dataclass
class GradCamMap:
    raw_grid: np.ndarray  # (g, g), non-negative
    upsampled: np.ndarray  # (S, S) in [0, 1]
    target_class: int
    overlay: np.ndarray  # (S, S, 3) in [0, 1]
    probability: float = float("nan")

    def heatmap_rgb(self) -> np.ndarray:
        return apply_colormap(self.upsampled)

    def save(self, out_dir) -> List[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "heatmap.png", out / "overlay.png"]
        for path, rgb in zip(paths, (self.heatmap_rgb(), self.overlay)):
            Image.fromarray(np.rint(np.clip(rgb, 0, 1) * 255).astype(np.uint8)).save(path)
        return paths


def _normalize(cam: np.ndarray) -> np.ndarray:
    lo, hi = cam.min(), cam.max()
    if hi > lo:
        return (cam - lo) / (hi - lo)
    if hi > 0:
        return cam / hi
    return np.zeros_like(cam)


def gradcam_from_activations(activations: np.ndarray, gradients: np.ndarray, image: np.ndarray,
                             target_class: int = 0) -> GradCamMap:
    """Build the map from last-block tokens and their gradients, both (N+1, D) including CLS."""
    activations = np.asarray(activations, dtype=np.float64)[1:]
    gradients = np.asarray(gradients, dtype=np.float64)[1:]
    n, _ = activations.shape
    grid = int(round(np.sqrt(n)))
    if grid * grid != n:
        raise ValueError(f"{n} patch tokens do not form a square grid")
    weights = gradients.mean(axis=0)
    raw = np.maximum(activations @ weights, 0.0).reshape(grid, grid)
    size = image.shape[-1]
    upsampled = np.clip(_normalize(bilinear_resize(raw, size, size)), 0.0, 1.0)
    rgb = np.transpose(np.asarray(image, dtype=np.float64), (1, 2, 0))
    overlay = 0.5 * apply_colormap(upsampled) + 0.5 * rgb
    return GradCamMap(raw, upsampled, int(target_class), overlay)


def gradcam(params: ViTParams, image: np.ndarray, target_class: Optional[int] = None) -> GradCamMap:
    """Grad-CAM for one (3, S, S) image on the final block's output tokens.

    ``target_class`` defaults to the predicted (argmax) class.
    """
    for name, t in params.items():
        if not np.all(np.isfinite(t.data)):
            raise ContractError(f"parameter {name!r} contains non-finite values")
    image = np.asarray(image, dtype=np.float32)
    if params.config.depth < 1:
        raise ConfigError("Grad-CAM needs at least one transformer block")
    params.zero_grad()
    logits, trace = forward(params, image[None], mode="eval", trace=True)
    scores = logits.data[0]
    if target_class is None:
        target_class = int(np.argmax(scores))
    if not 0 <= target_class < scores.shape[0]:
        raise IndexError(f"target class {target_class} out of range [0, {scores.shape[0]})")
    last = trace.tokens[-1]
    T.backward(logits[0, target_class])
    grads = last.grad if last.grad is not None else np.zeros_like(last.data)
    result = gradcam_from_activations(last.data[0], grads[0], image, target_class)
    params.zero_grad()
    e = np.exp(scores - scores.max())
    result.probability = float(e[target_class] / e.sum())
    return result
