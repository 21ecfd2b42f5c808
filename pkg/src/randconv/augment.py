"""Random convolution augmentation.

A random convolution layer with ``c_out == c_in`` and weights drawn from
``N(0, 1/(c_in*k*k))`` keeps local-patch geometry while scrambling color
and texture. ``randconv_augment`` is the per-image policy: pass-through
with probability ``p`` (image mode), or a convex blend of the input and the
convolved image (mix mode).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .image import ImageError, ImageTensor, LabeledDataset
from .rng import AUGMENT, derive_stream, stream_id


@dataclass(frozen=True)
class FilterBank:
    """Weights laid out as ``(k, k, c_in, c_out)``."""

    k: int
    c_in: int
    c_out: int
    weights: np.ndarray
    sigma: float

    def __post_init__(self):
        _check_size(self.k)
        w = np.asarray(self.weights, dtype=np.float64).reshape(self.k, self.k, self.c_in, self.c_out)
        w = w.copy()
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_matrix(cls, matrix) -> "FilterBank":
        """1x1 filter applying ``out_pixel = in_pixel @ matrix``."""
        m = np.asarray(matrix, dtype=np.float64)
        c_in, c_out = m.shape
        return cls(1, c_in, c_out, m.reshape(1, 1, c_in, c_out), 1.0 / np.sqrt(c_in))


@dataclass(frozen=True)
class RandConvConfig:
    pool: tuple[int, ...] = (1, 3, 5, 7)
    p: float = 0.5
    mix: bool = False
    seed: int = 0
    samples_per_image: int = 1
    share_filters: bool = False

    def __post_init__(self):
        pool = tuple(int(k) for k in self.pool)
        if not pool:
            raise ValueError("filter-size pool must not be empty")
        for k in pool:
            _check_size(k)
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if self.samples_per_image < 1:
            raise ValueError("samples_per_image must be positive")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "pool", pool)


@dataclass(frozen=True)
class AugmentSample:
    image: ImageTensor
    alpha: float | None = None
    k_used: int | None = None
    was_original: bool = False
    filters: FilterBank | None = field(default=None, repr=False)
    stream: str = ""

    def __post_init__(self):
        if self.was_original and (self.alpha is not None or self.k_used is not None):
            raise ValueError("a pass-through sample carries no alpha or filter size")


def _check_size(k: int) -> None:
    if k < 1 or k % 2 == 0:
        raise ValueError(f"filter size must be an odd positive integer, got {k}")


def filter_sigma(k: int, c_in: int) -> float:
    return 1.0 / np.sqrt(c_in * k * k)


def sample_filter(rng: np.random.Generator, k: int, c_in: int = 3, c_out: int = 3) -> FilterBank:
    _check_size(k)
    sigma = filter_sigma(k, c_in)
    weights = rng.standard_normal((k, k, c_in, c_out)) * sigma
    return FilterBank(k, c_in, c_out, weights, sigma)


def _conv_array(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Same-size zero-padded cross-correlation of ``(..., H, W, Cin)``."""
    k = w.shape[0]
    pad = (k - 1) // 2
    if k == 1:
        return x @ w[0, 0]
    widths = [(0, 0)] * (x.ndim - 3) + [(pad, pad), (pad, pad), (0, 0)]
    xp = np.pad(x, widths)
    # (..., H, W, Cin, k, k) -> contract (k, k, Cin) against the filter
    win = sliding_window_view(xp, (k, k), axis=(-3, -2))
    return np.einsum("...cij,ijcd->...d", win, w, optimize=True)


def conv2d_same(img: ImageTensor, filt: FilterBank) -> ImageTensor:
    if img.channels != filt.c_in:
        raise ImageError(
            f"image has {img.channels} channels, filter expects {filt.c_in}"
        )
    return ImageTensor(_conv_array(img.array, filt.weights))


def mix_images(img: ImageTensor, conv: ImageTensor, alpha: float) -> ImageTensor:
    return ImageTensor(alpha * img.array + (1.0 - alpha) * conv.array)


def draw_variant(x: np.ndarray, cfg: RandConvConfig, rng: np.random.Generator, alpha: float | None = None):
    """Array-level core of ``randconv_augment``.

    Returns ``(out, alpha, k, filters)``; ``k`` is None for a pass-through.
    """
    p0 = rng.random()
    if p0 < cfg.p and not cfg.mix:
        return x, None, None, None
    k = cfg.pool[rng.integers(len(cfg.pool))]
    c = x.shape[-1]
    filt = sample_filter(rng, k, c, c)
    out = _conv_array(x, filt.weights)
    if cfg.mix:
        a = rng.random()
        if alpha is not None:
            a = float(alpha)
        return a * x + (1.0 - a) * out, a, k, filt
    return out, None, k, filt


def randconv_augment(
    img: ImageTensor,
    cfg: RandConvConfig,
    rng: np.random.Generator,
    alpha: float | None = None,
) -> AugmentSample:
    """Draw one augmented variant of ``img``.

    ``alpha`` pins the mix coefficient instead of drawing it (mix mode
    only); the uniform draw is still consumed so streams stay aligned.
    """
    out, a, k, filt = draw_variant(img.array, cfg, rng, alpha)
    if k is None:
        return AugmentSample(img, was_original=True)
    return AugmentSample(ImageTensor(out), alpha=a, k_used=k, filters=filt)


def sample_stream(cfg: RandConvConfig, seed: int, index: int, j: int):
    if cfg.share_filters:
        index = 0
    return derive_stream(seed, AUGMENT, index, j), stream_id(seed, AUGMENT, index, j)


def augment_batch(
    ds: LabeledDataset,
    cfg: RandConvConfig,
    seed: int | None = None,
    threads: int = 1,
    alpha: float | None = None,
) -> list[list[AugmentSample]]:
    """``cfg.samples_per_image`` independent variants for every image.

    Each (image, sample) pair draws from its own derived stream, so the
    result does not depend on ``threads``. With ``cfg.share_filters`` all
    images at the same sample index share one filter draw.
    """
    if len(ds) == 0:
        raise ValueError("cannot augment an empty dataset")
    seed = cfg.seed if seed is None else seed

    def run(i: int) -> list[AugmentSample]:
        samples = []
        for j in range(cfg.samples_per_image):
            rng, sid = sample_stream(cfg, seed, i, j)
            s = randconv_augment(ds.images[i], cfg, rng, alpha=alpha)
            samples.append(AugmentSample(s.image, s.alpha, s.k_used, s.was_original, s.filters, sid))
        return samples

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, range(len(ds))))
    return [run(i) for i in range(len(ds))]
