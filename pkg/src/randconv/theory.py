"""Distance-preservation bounds for random linear projections.

For ``N`` points projected by ``U`` (``m x d``, i.i.d. ``N(0, sigma^2)``
entries), every pairwise rescaling ratio ``|U(zi - zj)| / |zi - zj|`` lies in
``[delta2, delta1]`` with probability at least ``1 - epsilon`` on each side,
where the bounds are chi-squared quantiles at tail ``2 eps / (N (N - 1))``.
``simulate_ratio_bounds`` measures the much tighter central-80% band that
actually occurs on image patches.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .image import ImageTensor
from .rng import SIMULATE, derive_stream
from .special import chi2_lower_quantile, chi2_upper_quantile

DEGENERATE_DISTANCE = 1e-9


class DegenerateDataError(ValueError):
    """Every patch pair in an image coincides, so no ratio is defined."""


@dataclass(frozen=True)
class BoundParams:
    m: int
    n_points: int
    sigma: float = 1.0
    epsilon: float = 0.1

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be a positive integer")
        if self.n_points < 2:
            raise ValueError("need at least two points")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not 0.0 < self.tail < 1.0:
            raise ValueError(f"tail probability {self.tail} outside (0, 1)")

    @property
    def tail(self) -> float:
        return 2.0 * self.epsilon / (self.n_points * (self.n_points - 1))


@dataclass
class RatioStats:
    per_image_q10: list[float]
    per_image_q90: list[float]
    delta_10: float
    delta_90: float
    theoretical_delta1: float
    theoretical_delta2: float
    pairs_skipped: int = 0
    params: BoundParams | None = field(default=None, repr=False)

    CSV_FIELDS = ("m", "N", "sigma", "epsilon", "delta1", "delta2", "delta_10", "delta_90", "images", "pairs_skipped")

    def csv_row(self) -> dict:
        p = self.params
        return {
            "m": p.m,
            "N": p.n_points,
            "sigma": repr(float(p.sigma)),
            "epsilon": repr(float(p.epsilon)),
            "delta1": repr(self.theoretical_delta1),
            "delta2": repr(self.theoretical_delta2),
            "delta_10": repr(self.delta_10),
            "delta_90": repr(self.delta_90),
            "images": len(self.per_image_q10),
            "pairs_skipped": self.pairs_skipped,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.CSV_FIELDS, lineterminator="\r\n")
        w.writeheader()
        w.writerow(self.csv_row())
        return buf.getvalue()

    def summary(self) -> str:
        lo, hi = self.theoretical_delta2, self.theoretical_delta1
        width = hi - lo
        emp = self.delta_90 - self.delta_10
        return (
            f"empirical central-80% band [{self.delta_10:.4g}, {self.delta_90:.4g}] "
            f"(width {emp:.4g}) vs theoretical [{lo:.4g}, {hi:.4g}] (width {width:.4g}); "
            f"contained={lo < self.delta_10 and self.delta_90 < hi}, "
            f"relative width {emp / width:.3f}, images={len(self.per_image_q10)}, "
            f"pairs skipped={self.pairs_skipped}"
        )


def theorem1_bounds(params: BoundParams) -> tuple[float, float]:
    """Return ``(delta1, delta2)``, the upper and lower ratio bounds."""
    t = params.tail
    delta1 = params.sigma * math.sqrt(chi2_upper_quantile(t, params.m))
    # upper quantile at 1 - t == lower quantile at t, computed without cancellation
    delta2 = params.sigma * math.sqrt(chi2_lower_quantile(t, params.m))
    return delta1, delta2


def extract_patches(img: ImageTensor, n: int, patch_k: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` flattened ``patch_k x patch_k`` patches at distinct interior centers.

    Returns an ``(n, patch_k * patch_k * channels)`` array.
    """
    if patch_k < 1 or patch_k % 2 == 0:
        raise ValueError("patch size must be an odd positive integer")
    rows = img.height - patch_k + 1
    cols = img.width - patch_k + 1
    total = max(rows, 0) * max(cols, 0)
    if n > total:
        raise ValueError(
            f"{img.height}x{img.width} image has {total} valid {patch_k}x{patch_k} "
            f"patch centers, {n} requested"
        )
    idx = rng.choice(total, size=n, replace=False)
    r, c = np.divmod(idx, cols)
    offs = np.arange(patch_k)
    rr = r[:, None, None] + offs[None, :, None]
    cc = c[:, None, None] + offs[None, None, :]
    return img.array[rr, cc].reshape(n, -1)


def pair_ratios(z: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, int]:
    """Ratios over all unordered pairs of rows of ``z``, plus the skipped count."""
    n = z.shape[0]
    out = []
    skipped = 0
    for i in range(n - 1):
        diff = z[i + 1 :] - z[i]
        d_in = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        proj = diff @ u.T
        d_out = np.sqrt(np.einsum("ij,ij->i", proj, proj))
        keep = d_in >= DEGENERATE_DISTANCE
        skipped += int(keep.size - keep.sum())
        out.append(d_out[keep] / d_in[keep])
    return (np.concatenate(out) if out else np.empty(0)), skipped


def image_key(img: ImageTensor) -> int:
    """64-bit content hash; keys an image's stream independently of list order."""
    h = hashlib.sha256(np.ascontiguousarray(img.array).tobytes())
    h.update(repr(img.shape).encode())
    return int.from_bytes(h.digest()[:8], "little")


def _image_quantiles(img, index, params, patch_k, seed, projection):
    rng = derive_stream(seed, SIMULATE, image_key(img))
    z = extract_patches(img, params.n_points, patch_k, rng)
    if projection is None:
        u = rng.standard_normal((params.m, z.shape[1])) * params.sigma
    else:
        u = np.asarray(projection, dtype=np.float64)
    ratios, skipped = pair_ratios(z, u)
    if ratios.size == 0:
        raise DegenerateDataError(f"image {index}: all patch pairs are degenerate")
    q10, q90 = np.quantile(ratios, [0.1, 0.9])
    return float(q10), float(q90), skipped


def simulate_ratio_bounds(
    images: list[ImageTensor],
    params: BoundParams,
    patch_k: int = 3,
    seed: int = 0,
    threads: int = 1,
    projection: np.ndarray | None = None,
) -> RatioStats:
    """Empirical central-80% ratio band over an image corpus.

    Each image draws its patches and projection from a stream keyed by
    ``seed`` and the image content, so list order does not matter.
    ``projection`` replaces the sampled ``U`` for every image.
    """
    if not images:
        raise ValueError("need at least one image")

    def run(i):
        return _image_quantiles(images[i], i, params, patch_k, seed, projection)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(len(images))))
    else:
        results = [run(i) for i in range(len(images))]
    q10 = [r[0] for r in results]
    q90 = [r[1] for r in results]
    d1, d2 = theorem1_bounds(params)
    return RatioStats(
        per_image_q10=q10,
        per_image_q90=q90,
        delta_10=float(np.quantile(q10, params.epsilon)),
        delta_90=float(np.quantile(q90, 1.0 - params.epsilon)),
        theoretical_delta1=d1,
        theoretical_delta2=d2,
        pairs_skipped=sum(r[2] for r in results),
        params=params,
    )
