"""Procedural shape-vs-texture dataset.

Every image holds one shape (the label) on a background. Geometry is drawn
from a stream that ignores the domain, so the same ``seed`` gives the same
silhouettes in every domain and only the rendering changes:

* ``flat``: solid bright shape on a solid dark background
* ``inverted``: the ``flat`` colors with foreground and background swapped
* ``stripes``: ``flat`` colors overlaid with 2-pixel-period stripes
* ``noise``: ``flat`` colors with per-pixel uniform jitter of +/-0.3
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import ImageTensor, LabeledDataset
from .rng import DATASET, derive_stream

CLASSES = ("square", "disk", "triangle", "cross")
DOMAINS = ("flat", "inverted", "stripes", "noise")

# bounding-box side as a fraction of the image side, per shape; chosen so the
# filled area stays within 30-70% of the image
SIZE_RANGE = {
    "square": (0.5625, 0.8125),
    "disk": (0.625, 0.875),
    "triangle": (0.8125, 0.875),
    "cross": (0.75, 0.875),
}
NOISE_AMPLITUDE = 0.3


@dataclass(frozen=True)
class ShapeDatasetSpec:
    image_size: int = 32
    classes: tuple[str, ...] = CLASSES
    per_class: int = 100
    domain: str = "flat"
    seed: int = 0

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}; expected one of {DOMAINS}")
        unknown = set(self.classes) - set(CLASSES)
        if unknown:
            raise ValueError(f"unknown shape kinds {sorted(unknown)}")
        if self.image_size < 16:
            raise ValueError("image_size must be at least 16")
        if self.per_class < 1:
            raise ValueError("per_class must be positive")


def shape_mask(kind: str, size: int, side: int, x0: int, y0: int) -> np.ndarray:
    """Boolean ``size x size`` mask of one shape in a ``side``-wide box at (x0, y0)."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    u = (xx - x0) / side
    v = (yy - y0) / side
    inside = (u >= 0) & (u <= 1) & (v >= 0) & (v <= 1)
    if kind == "square":
        m = inside
    elif kind == "disk":
        m = (u - 0.5) ** 2 + (v - 0.5) ** 2 <= 0.25
    elif kind == "triangle":
        # apex at top centre, base along the bottom edge
        m = inside & (np.abs(u - 0.5) <= v / 2)
    elif kind == "cross":
        arm = (np.abs(u - 0.5) <= 1 / 6) | (np.abs(v - 0.5) <= 1 / 6)
        m = inside & arm
    else:
        raise ValueError(f"unknown shape kind {kind!r}")
    return m


def _stripe_phase(size: int, orientation: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return [yy, xx, xx + yy, xx - yy][orientation] % 2 == 1


def render(mask: np.ndarray, domain: str, rng: np.random.Generator) -> np.ndarray:
    fg = rng.uniform(0.6, 1.0, 3)
    bg = rng.uniform(0.0, 0.4, 3)
    orientation = int(rng.integers(4))
    size = mask.shape[0]
    if domain == "inverted":
        fg, bg = bg, fg
    img = np.where(mask[:, :, None], fg, bg)
    if domain == "stripes":
        img = np.where(_stripe_phase(size, orientation)[:, :, None], img * 0.5, img)
    elif domain == "noise":
        jitter = rng.uniform(-NOISE_AMPLITUDE, NOISE_AMPLITUDE, img.shape)
        img = np.clip(img + jitter, 0.0, 1.0)
    return img


def sample_geometry(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = SIZE_RANGE[kind]
    margin = max(2, size // 16)
    side = int(rng.integers(round(lo * size), round(hi * size) + 1))
    side = min(side, size - 2 * margin)
    x0 = int(rng.integers(margin, size - margin - side + 1))
    y0 = int(rng.integers(margin, size - margin - side + 1))
    return shape_mask(kind, size, side, x0, y0)


def generate_dataset(spec: ShapeDatasetSpec) -> LabeledDataset:
    n_cls = len(spec.classes)
    images, labels, names = [], [], []
    for i in range(spec.per_class * n_cls):
        label = i % n_cls
        mask = sample_geometry(spec.classes[label], spec.image_size, derive_stream(spec.seed, DATASET, 0, i))
        # colors share a stream across domains, so "inverted" is a true swap of "flat"
        pixels = render(mask, spec.domain, derive_stream(spec.seed, DATASET, 1, i))
        images.append(ImageTensor(pixels))
        labels.append(label)
        names.append(f"{i:05d}")
    return LabeledDataset(images, labels, n_cls, spec.domain, names)
