"""Synthetic handwritten-glyph images for smoke tests, demos and the acceptance suite."""
from __future__ import annotations

from pathlib import Path
from typing import List, Sequence

import numpy as np
from PIL import Image, ImageDraw

from .data import LabeledImage

GLYPHS = ("bar", "pillar", "ring", "cross", "wedge")


def draw_glyph(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """Dark stroke on a light background with random offset, thickness and ink level."""
    im = Image.new("L", (size, size), color=int(rng.integers(225, 256)))
    draw = ImageDraw.Draw(im)
    c = size / 2 + rng.uniform(-0.08, 0.08, size=2) * size
    r = size * rng.uniform(0.25, 0.35)
    width = max(1, int(round(size * rng.uniform(0.12, 0.18))))
    ink = int(rng.integers(0, 60))
    if kind == "bar":
        draw.line([(c[0] - r, c[1]), (c[0] + r, c[1])], fill=ink, width=width)
    elif kind == "pillar":
        draw.line([(c[0], c[1] - r), (c[0], c[1] + r)], fill=ink, width=width)
    elif kind == "ring":
        draw.ellipse([c[0] - r, c[1] - r, c[0] + r, c[1] + r], outline=ink, width=width)
    elif kind == "cross":
        draw.line([(c[0] - r, c[1] - r), (c[0] + r, c[1] + r)], fill=ink, width=width)
        draw.line([(c[0] - r, c[1] + r), (c[0] + r, c[1] - r)], fill=ink, width=width)
    elif kind == "wedge":
        draw.line([(c[0] - r, c[1] + r), (c[0], c[1] - r), (c[0] + r, c[1] + r)], fill=ink, width=width)
    else:
        raise ValueError(f"unknown glyph {kind!r}")
    return np.asarray(im, dtype=np.uint8)[..., None]


def make_glyph_samples(num_classes: int = 3, per_class: int = 30, size: int = 64,
                       seed: int = 0, kinds: Sequence[str] = GLYPHS) -> List[LabeledImage]:
    if num_classes > len(kinds):
        raise ValueError(f"at most {len(kinds)} glyph classes available")
    rng = np.random.default_rng(seed)
    samples = []
    for label in range(num_classes):
        for i in range(per_class):
            pixels = draw_glyph(kinds[label], size, rng)
            samples.append(LabeledImage(pixels, label, kinds[label], f"{kinds[label]}/{i:04d}.png"))
    return samples


def write_image_folder(root, samples: Sequence[LabeledImage]) -> Path:
    """Write samples as ``root/<class_name>/<file>.png``."""
    root = Path(root)
    for s in samples:
        path = root / s.source_path
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(s.pixels[..., 0] if s.pixels.shape[-1] == 1 else s.pixels).save(path)
    return root
