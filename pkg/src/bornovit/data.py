"""
Dataset ingestion, preprocessing/augmentation, k-fold partitioning and page-grid cropping.

Images are kept as ``uint8`` arrays of shape (H, W, C) until they are fed to the
model, at which point :func:`resize_to_input` produces a float32 (3, S, S) array
in [0, 1].
"""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


@dataclass
class LabeledImage:
    pixels: np.ndarray  # (H, W, C) uint8, C in {1, 3}
    label: int
    class_name: str
    source_path: str = ""


@dataclass
class Dataset:
    samples: List[LabeledImage]
    class_names: List[str]
    errors: List[Tuple[str, str]] = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def decode_image(path) -> np.ndarray:
    """Read an image file as (H, W, C) uint8 with C in {1, 3}."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "1", "I", "I;16", "F"):
                arr = np.asarray(im.convert("L"))[..., None]
            else:
                arr = np.asarray(im.convert("RGB"))
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DataError(f"image {path} has a zero dimension")
    return np.ascontiguousarray(arr, dtype=np.uint8)


def _read_manifest(root: Path, manifest: Path) -> List[Tuple[str, str]]:
    records = []
    with open(manifest, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 2:
                raise DataError(f"{manifest}:{lineno}: expected 'relative_path,class_name'")
            records.append((row[0].strip(), row[1].strip()))
    return records


def load_dataset(root_dir, manifest: Optional[os.PathLike] = None) -> Dataset:
    """Load an image-folder dataset (``root/<class_name>/<file>``) or a manifest of records.

    Classes are sorted lexicographically and files by path so loading is
    order-deterministic. Undecodable files are skipped and listed in ``errors``.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise DataError(f"data directory not found: {root}")

    if manifest is not None:
        records = _read_manifest(root, Path(manifest))
        class_names = sorted({c for _, c in records})
        records = sorted(records)
    else:
        class_names = sorted(p.name for p in root.iterdir() if p.is_dir())
        records = []
        for name in class_names:
            files = sorted(
                f for f in (root / name).iterdir()
                if f.is_file() and f.suffix.lower() in IMAGE_EXTENSIONS
            )
            if not files:
                logger.warning("class directory %s contains no images", root / name)
            records.extend((str(f.relative_to(root)), name) for f in files)

    index = {name: i for i, name in enumerate(class_names)}
    samples, errors = [], []
    for rel, name in records:
        path = root / rel
        try:
            pixels = decode_image(path)
        except DataError as exc:
            errors.append((str(path), str(exc)))
            logger.error("skipping %s", exc)
            continue
        samples.append(LabeledImage(pixels, index[name], name, str(path)))
    return Dataset(samples, class_names, errors)


# ---------------------------------------------------------------------------
# resizing
# ---------------------------------------------------------------------------

def _axis_coords(n_in: int, n_out: int) -> np.ndarray:
    # align-corners: output ends land exactly on input ends
    if n_out == 1 or n_in == 1:
        return np.zeros(n_out)
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an (H, W, ...) array using the align-corners convention."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    if h == 0 or w == 0:
        raise DataError("cannot resize an image with a zero dimension")
    if (h, w) == (out_h, out_w):
        return image.copy()
    ys, xs = _axis_coords(h, out_h), _axis_coords(w, out_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1, x1 = np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).reshape((-1, 1) + (1,) * (image.ndim - 2))
    wx = (xs - x0).reshape((1, -1) + (1,) * (image.ndim - 2))
    top = image[y0][:, x0] * (1 - wx) + image[y0][:, x1] * wx
    bottom = image[y1][:, x0] * (1 - wx) + image[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def to_chw(pixels: np.ndarray) -> np.ndarray:
    """(H, W, C) uint8 -> (3, H, W) float32 in [0, 1]; grayscale is replicated."""
    arr = np.asarray(pixels)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    elif arr.shape[2] != 3:
        raise DataError(f"expected 1 or 3 channels, got {arr.shape[2]}")
    return np.ascontiguousarray(np.transpose(arr, (2, 0, 1)), dtype=np.float32) / np.float32(255.0)


def resize_to_input(img, size: int = 224) -> np.ndarray:
    """Bilinear resize to size x size, replicate grayscale to 3 channels, scale by 1/255."""
    pixels = img.pixels if isinstance(img, LabeledImage) else np.asarray(img)
    if pixels.ndim == 2:
        pixels = pixels[..., None]
    if pixels.shape[0] == 0 or pixels.shape[1] == 0:
        raise DataError(f"image {getattr(img, 'source_path', '')!s} has a zero dimension")
    resized = bilinear_resize(pixels.astype(np.float64), size, size)
    return to_chw(resized).astype(np.float32)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentConfig:
    """Random affine + color jitter ranges. Factors are sampled in [1-x, 1+x]."""

    translate_frac: float = 0.1
    shear_deg: float = 20.0
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    hue: float = 0.1
    fill: float = 0.0
    enabled: bool = True

    def __post_init__(self):
        for name in ("translate_frac", "shear_deg", "brightness", "contrast", "saturation", "hue"):
            if getattr(self, name) < 0:
                raise ConfigError(f"augment.{name} must be >= 0")
        if self.translate_frac > 1 or self.hue > 0.5 or self.shear_deg >= 90:
            raise ConfigError("augment ranges out of bounds (translate <= 1, hue <= 0.5, shear < 90)")


@dataclass(frozen=True)
class AugmentParams:
    translate_px: Tuple[int, int] = (0, 0)  # (dx, dy); positive moves content right/down
    shear_deg: float = 0.0
    brightness: float = 1.0
    contrast: float = 1.0
    saturation: float = 1.0
    hue: float = 0.0


def sample_augment_params(cfg: AugmentConfig, size: Tuple[int, int], rng: np.random.Generator) -> AugmentParams:
    h, w = size
    max_dx, max_dy = cfg.translate_frac * w, cfg.translate_frac * h
    dx = int(np.round(rng.uniform(-max_dx, max_dx)))
    dy = int(np.round(rng.uniform(-max_dy, max_dy)))
    shear = float(rng.uniform(-cfg.shear_deg, cfg.shear_deg))
    b = float(rng.uniform(1 - cfg.brightness, 1 + cfg.brightness))
    c = float(rng.uniform(1 - cfg.contrast, 1 + cfg.contrast))
    s = float(rng.uniform(1 - cfg.saturation, 1 + cfg.saturation))
    hue = float(rng.uniform(-cfg.hue, cfg.hue))
    return AugmentParams((dx, dy), shear, b, c, s, hue)


def apply_affine(img: np.ndarray, translate_px=(0, 0), shear_deg: float = 0.0, fill: float = 0.0) -> np.ndarray:
    """Translate then x-shear about the image centre; bilinear sampling, ``fill`` outside.

    ``img`` is (C, H, W). The forward map is x' = x + tan(shear)(y - cy) + dx, y' = y + dy;
    each output pixel samples the inverse-mapped source location.
    """
    dx, dy = translate_px
    if dx == 0 and dy == 0 and shear_deg == 0:
        return img.copy()
    C, H, W = img.shape
    cy = (H - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    src_y = yy - dy
    src_x = xx - dx - np.tan(np.deg2rad(shear_deg)) * (src_y - cy)

    x0 = np.floor(src_x).astype(int)
    y0 = np.floor(src_y).astype(int)
    fx, fy = src_x - x0, src_y - y0
    out = np.zeros((C, H, W), dtype=np.float64)
    for oy, wy in ((0, 1 - fy), (1, fy)):
        for ox, wx in ((0, 1 - fx), (1, fx)):
            ys, xs = y0 + oy, x0 + ox
            valid = (ys >= 0) & (ys < H) & (xs >= 0) & (xs < W)
            vals = np.where(valid, img[:, np.clip(ys, 0, H - 1), np.clip(xs, 0, W - 1)], fill)
            out += vals * (wy * wx)
    return out.astype(img.dtype)


def _grayscale(img: np.ndarray) -> np.ndarray:
    return 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]


def color_jitter(img: np.ndarray, brightness=1.0, contrast=1.0, saturation=1.0, hue=0.0) -> np.ndarray:
    """Brightness, contrast, saturation, hue (in that order) on a (3, H, W) image in [0, 1]."""
    out = img
    if brightness != 1.0:
        out = np.clip(out * brightness, 0.0, 1.0)
    if contrast != 1.0:
        m = _grayscale(out).mean()
        out = np.clip((out - m) * contrast + m, 0.0, 1.0)
    if saturation != 1.0:
        gray = _grayscale(out)[None]
        out = np.clip((out - gray) * saturation + gray, 0.0, 1.0)
    if hue != 0.0:
        hsv = rgb_to_hsv(np.clip(np.transpose(out, (1, 2, 0)), 0.0, 1.0))
        hsv[..., 0] = np.mod(hsv[..., 0] + hue, 1.0)
        out = np.transpose(hsv_to_rgb(hsv), (2, 0, 1))
    return np.asarray(out, dtype=img.dtype)


def augment(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Random affine followed by color jitter; output clamped to [0, 1]."""
    if not cfg.enabled:
        return img.copy()
    p = sample_augment_params(cfg, img.shape[1:], rng)
    out = apply_affine(img, p.translate_px, p.shear_deg, cfg.fill)
    out = color_jitter(out, p.brightness, p.contrast, p.saturation, p.hue)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Per-sample stream so serial and parallel batch assembly agree."""
    return np.random.default_rng([seed, epoch, index])


# ---------------------------------------------------------------------------
# k-fold partitioning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldSplit:
    k: int
    assignments: np.ndarray  # fold index per sample

    def fold(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == f)

    def roles(self, rotation: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(train, val, test) sample indices: fold r tests, fold r+1 validates, the rest train."""
        if not 0 <= rotation < self.k:
            raise ConfigError(f"rotation {rotation} out of range for k={self.k}")
        test_fold, val_fold = rotation, (rotation + 1) % self.k
        train = np.flatnonzero((self.assignments != test_fold) & (self.assignments != val_fold))
        return train, self.fold(val_fold), self.fold(test_fold)

    def __eq__(self, other):
        return isinstance(other, FoldSplit) and self.k == other.k and np.array_equal(self.assignments, other.assignments)


def kfold_split(n_samples: int, k: int = 5, seed: int = 0, labels: Optional[Sequence[int]] = None) -> FoldSplit:
    """Seeded shuffle then round-robin fold assignment.

    With ``labels`` given, samples are grouped by class before the round robin
    (stratified); fold sizes still differ by at most one.
    """
    if k < 2:
        raise ConfigError(f"k must be >= 2 to form train/val/test roles, got {k}")
    if n_samples < k:
        raise ConfigError(f"need at least k={k} samples, got {n_samples}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_samples)
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (n_samples,):
            raise ConfigError("labels must have one entry per sample")
        order = order[np.argsort(labels[order], kind="stable")]
    assignments = np.empty(n_samples, dtype=np.int64)
    assignments[order] = np.arange(n_samples) % k
    return FoldSplit(k, assignments)


# ---------------------------------------------------------------------------
# page cropping
# ---------------------------------------------------------------------------

def crop_page_grid(page: np.ndarray, rows: int = 10, cols: int = 6) -> List[np.ndarray]:
    """Split a scanned page into rows x cols cells, row-major; cells tile the page exactly."""
    page = np.asarray(page)
    if rows < 1 or cols < 1:
        raise DataError("rows and cols must be positive")
    H, W = page.shape[:2]
    if H < rows or W < cols:
        raise DataError(f"page of {H}x{W} pixels too small for a {rows}x{cols} grid")
    ys = [r * H // rows for r in range(rows + 1)]
    xs = [c * W // cols for c in range(cols + 1)]
    return [page[ys[r]:ys[r + 1], xs[c]:xs[c + 1]].copy() for r in range(rows) for c in range(cols)]


def save_page_cells(cells: Sequence[np.ndarray], cols: int, out_dir) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, cell in enumerate(cells):
        r, c = divmod(i, cols)
        path = out / f"cell_{r}_{c}.png"
        arr = cell[..., 0] if cell.ndim == 3 and cell.shape[2] == 1 else cell
        Image.fromarray(np.ascontiguousarray(arr)).save(path)
        paths.append(path)
    return paths
