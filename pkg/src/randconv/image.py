"""Image tensors, dataset containers, whitening and PNG I/O.

Images are held as float64 arrays of shape ``(height, width, channels)`` in
C order, i.e. row-major with the channel index varying fastest.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

STD_FLOOR = 1e-6


class ImageError(ValueError):
    """Raised for unreadable, malformed or incompatible images."""


@dataclass(frozen=True)
class ImageTensor:
    array: np.ndarray

    def __post_init__(self):
        arr = np.array(self.array, dtype=np.float64, order="C", copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ImageError(f"expected a non-empty HxWxC array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ImageError("image contains non-finite values")
        arr.flags.writeable = False
        object.__setattr__(self, "array", arr)

    @property
    def height(self) -> int:
        return self.array.shape[0]

    @property
    def width(self) -> int:
        return self.array.shape[1]

    @property
    def channels(self) -> int:
        return self.array.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.array.shape

    @property
    def data(self) -> np.ndarray:
        """Flat view in row-major, channel-fastest order."""
        return self.array.reshape(-1)

    @classmethod
    def from_flat(cls, data: Sequence[float], height: int, width: int, channels: int) -> "ImageTensor":
        data = np.asarray(data, dtype=np.float64)
        if data.size != height * width * channels:
            raise ImageError(
                f"data length {data.size} != {height}*{width}*{channels}"
            )
        return cls(data.reshape(height, width, channels))


@dataclass(frozen=True)
class WhiteningStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64)).copy()
        std = np.maximum(np.atleast_1d(np.asarray(self.std, dtype=np.float64)), STD_FLOOR)
        if mean.shape != std.shape:
            raise ValueError("mean and std must have the same length")
        mean.flags.writeable = False
        std.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def channels(self) -> int:
        return self.mean.shape[0]


@dataclass
class LabeledDataset:
    images: list[ImageTensor]
    labels: np.ndarray
    num_classes: int
    domain_tag: str = ""
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ValueError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.images)

    def stack(self) -> np.ndarray:
        """All images as one ``(N, H, W, C)`` array."""
        return np.stack([img.array for img in self.images])

    def map(self, fn) -> "LabeledDataset":
        return LabeledDataset(
            [fn(img) for img in self.images],
            self.labels.copy(),
            self.num_classes,
            self.domain_tag,
            list(self.names),
        )


def load_image(path: str | os.PathLike) -> ImageTensor:
    """Read an 8-bit PNG (RGB, RGBA or grayscale) into [0, 1] reals.

    Grayscale is replicated to three channels and alpha is dropped.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I", "I;16", "I;16B", "I;16L", "F", "1"):
                raise ImageError(f"{path}: unsupported bit depth (mode {mode})")
            if mode == "P":
                im = im.convert("RGBA" if "transparency" in im.info else "RGB")
                mode = im.mode
            if mode in ("L", "LA"):
                arr = np.asarray(im.convert("L"), dtype=np.float64)[:, :, None]
                arr = np.repeat(arr, 3, axis=2)
            elif mode in ("RGB", "RGBA"):
                arr = np.asarray(im.convert("RGB"), dtype=np.float64)
            else:
                raise ImageError(f"{path}: unsupported image mode {mode}")
    except (OSError, UnidentifiedImageError) as exc:
        if isinstance(exc, ImageError):
            raise
        raise ImageError(f"{path}: cannot read image ({exc})") from exc
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ImageError(f"{path}: zero-dimension image")
    return ImageTensor(arr / 255.0)


def to_uint8(img: ImageTensor, rescale: bool) -> np.ndarray:
    arr = img.array
    if rescale:
        lo, hi = arr.min(), arr.max()
        if hi == lo:
            return np.full(arr.shape, 128, dtype=np.uint8)
        arr = (arr - lo) / (hi - lo)
    else:
        arr = np.clip(arr, 0.0, 1.0)
    return np.rint(arr * 255.0).astype(np.uint8)


def save_image(img: ImageTensor, path: str | os.PathLike, rescale: bool = False) -> None:
    """Write ``img`` as an 8-bit PNG.

    With ``rescale`` the image is min-max stretched to [0, 255] (a constant
    image becomes uniform 128); otherwise values are clamped to [0, 1].
    """
    pixels = to_uint8(img, rescale)
    if pixels.shape[2] == 1:
        pixels = pixels[:, :, 0]
    elif pixels.shape[2] not in (3, 4):
        raise ImageError(f"cannot save an image with {pixels.shape[2]} channels as PNG")
    path = Path(path)
    try:
        Image.fromarray(pixels).save(path, format="PNG")
    except OSError as exc:
        raise ImageError(f"{path}: cannot write image ({exc})") from exc


def compute_whitening(ds: LabeledDataset | Iterable[ImageTensor]) -> WhiteningStats:
    images = ds.images if isinstance(ds, LabeledDataset) else list(ds)
    if not images:
        raise ValueError("cannot compute whitening statistics of an empty dataset")
    channels = images[0].channels
    pixels = np.concatenate([img.array.reshape(-1, channels) for img in images])
    mean = pixels.mean(axis=0)
    std = np.sqrt(((pixels - mean) ** 2).mean(axis=0))
    return WhiteningStats(mean, std)


def scalar_whitening(stats: WhiteningStats) -> WhiteningStats:
    """Collapse per-channel statistics into one shared mean/std.

    Assumes equal pixel counts per channel, which always holds here.
    """
    mean = stats.mean.mean()
    var = (stats.std**2 + (stats.mean - mean) ** 2).mean()
    c = stats.channels
    return WhiteningStats(np.full(c, mean), np.full(c, np.sqrt(var)))


def _check_channels(img: ImageTensor, stats: WhiteningStats) -> None:
    if img.channels != stats.channels:
        raise ImageError(
            f"image has {img.channels} channels, whitening stats have {stats.channels}"
        )


def whiten(img: ImageTensor, stats: WhiteningStats) -> ImageTensor:
    _check_channels(img, stats)
    return ImageTensor((img.array - stats.mean) / stats.std)


def unwhiten(img: ImageTensor, stats: WhiteningStats) -> ImageTensor:
    _check_channels(img, stats)
    return ImageTensor(img.array * stats.std + stats.mean)


IMAGE_SUFFIXES = (".png",)


def list_images(path: str | os.PathLike) -> list[Path]:
    """A single image file, or every PNG directly inside a directory, sorted."""
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise ImageError(f"{path}: no PNG images found")
        return files
    if not path.exists():
        raise ImageError(f"{path}: no such file or directory")
    return [path]


def save_dataset(ds: LabeledDataset, root: str | os.PathLike) -> list[Path]:
    """Write ``<root>/<domain_tag>/<class_index>/<name>.png`` for every image."""
    root = Path(root) / ds.domain_tag
    written = []
    names = ds.names or [f"{i:05d}" for i in range(len(ds))]
    for img, label, name in zip(ds.images, ds.labels, names):
        d = root / str(int(label))
        d.mkdir(parents=True, exist_ok=True)
        out = d / f"{name}.png"
        save_image(img, out, rescale=False)
        written.append(out)
    return written


def load_dataset(root: str | os.PathLike, domain_tag: str, num_classes: int | None = None) -> LabeledDataset:
    base = Path(root) / domain_tag
    if not base.is_dir():
        raise ImageError(f"{base}: dataset domain directory not found")
    class_dirs = sorted((p for p in base.iterdir() if p.is_dir() and p.name.isdigit()), key=lambda p: int(p.name))
    if not class_dirs:
        raise ImageError(f"{base}: no class directories")
    items = []
    for d in class_dirs:
        for f in sorted(d.glob("*.png")):
            items.append((f.stem, int(d.name), f))
    # interleave back into generation order when names are zero-padded indices
    items.sort(key=lambda t: (t[0], t[1]))
    images = [load_image(f) for _, _, f in items]
    labels = [lab for _, lab, _ in items]
    if num_classes is None:
        num_classes = int(class_dirs[-1].name) + 1
    return LabeledDataset(images, labels, num_classes, domain_tag, [n for n, _, _ in items])
