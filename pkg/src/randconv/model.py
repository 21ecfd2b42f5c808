"""One-hidden-layer ReLU classifier with hand-written backprop.

The training objective for a batch of ``B`` images with ``S`` augmented
variants each is the batch mean of

    CE(softmax(z_1), y) + lam * sum_j KL(p_j || mean_k p_k)

Gradients flow through the mean as well as each ``p_j``. With the mean
``pbar`` depending on every sample, d/dp_j of the KL sum reduces to
``log p_j - log pbar`` (the cross terms cancel against the +1).
"""

from __future__ import annotations

import io
import zipfile
from dataclasses import dataclass

import numpy as np

from .consistency import PROB_FLOOR, LossBreakdown, batch_consistency, softmax_rows
from .image import ImageTensor

PARAM_NAMES = ("w1", "b1", "w2", "b2")


@dataclass
class TinyModel:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, n_in: int, n_hidden: int, n_classes: int, rng: np.random.Generator) -> "TinyModel":
        """He-normal weights, zero biases."""
        return cls(
            rng.standard_normal((n_in, n_hidden)) * np.sqrt(2.0 / n_in),
            np.zeros(n_hidden),
            rng.standard_normal((n_hidden, n_classes)) * np.sqrt(2.0 / n_hidden),
            np.zeros(n_classes),
        )

    @classmethod
    def zeros(cls, n_in: int, n_hidden: int, n_classes: int) -> "TinyModel":
        return cls(np.zeros((n_in, n_hidden)), np.zeros(n_hidden), np.zeros((n_hidden, n_classes)), np.zeros(n_classes))

    @property
    def n_in(self) -> int:
        return self.w1.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def n_classes(self) -> int:
        return self.w2.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "TinyModel":
        return TinyModel(*(getattr(self, n).copy() for n in PARAM_NAMES))

    def n_params(self) -> int:
        return sum(p.size for p in self.params().values())

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params().values())

    def save(self, path) -> None:
        """Write an ``.npz`` readable by ``np.load``.

        Zip entries get a fixed timestamp so identical weights give identical bytes.
        """
        with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
            for name, arr in self.params().items():
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
                zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())

    @classmethod
    def load(cls, path) -> "TinyModel":
        with np.load(path) as data:
            return cls(*(data[n] for n in PARAM_NAMES))


@dataclass
class Cache:
    x: np.ndarray
    h_pre: np.ndarray
    h: np.ndarray
    logits: np.ndarray


def _flatten(images, n_in: int) -> np.ndarray:
    if isinstance(images, ImageTensor):
        x = images.array.reshape(1, -1)
    else:
        x = np.asarray(images, dtype=np.float64)
        x = x.reshape(-1, n_in) if x.ndim != 2 else x
    if x.shape[1] != n_in:
        raise ValueError(f"input has {x.shape[1]} features, model expects {n_in}")
    return x


def forward(model: TinyModel, images) -> tuple[np.ndarray, Cache]:
    """Logits for one ImageTensor or a batch ``(B, ...)`` of images."""
    if isinstance(images, ImageTensor) and images.data.size != model.n_in:
        raise ValueError(f"image has {images.data.size} values, model expects {model.n_in}")
    x = _flatten(images, model.n_in)
    h_pre = x @ model.w1 + model.b1
    h = np.maximum(h_pre, 0.0)
    logits = h @ model.w2 + model.b2
    return logits, Cache(x, h_pre, h, logits)


def logit_grads(
    logits: np.ndarray,
    labels: np.ndarray,
    n_samples: int,
    lam: float = 0.0,
    lambda_squared: bool = False,
) -> tuple[LossBreakdown, np.ndarray]:
    """Batch-mean objective and its gradient w.r.t. the logits.

    ``logits`` has shape ``(S * B, K)``, sample-major: rows ``j*B:(j+1)*B``
    hold variant ``j`` of every image.
    """
    labels = np.asarray(labels)
    sb, k = logits.shape
    b = sb // n_samples
    probs = softmax_rows(logits).reshape(n_samples, b, k)
    p1 = probs[0]
    picked = p1[np.arange(b), labels]
    task = -np.log(np.maximum(picked, PROB_FLOOR))
    g = np.zeros_like(probs)
    # d CE / d z_1 = p_1 - onehot
    g[0] = p1
    g[0, np.arange(b), labels] -= 1.0
    weight = lam * lam if lambda_squared else lam
    if n_samples > 1 and lam > 0:
        cons = batch_consistency(probs)
        mean = probs.mean(axis=0)
        dp = np.log(np.maximum(probs, PROB_FLOOR)) - np.log(np.maximum(mean, PROB_FLOOR))[None]
        # softmax Jacobian-vector product: p * (g - <p, g>)
        dz = probs * (dp - np.sum(probs * dp, axis=-1, keepdims=True))
        g += weight * dz
    else:
        cons = np.zeros(b)
    g /= b
    task_m = float(task.mean())
    cons_m = float(cons.mean())
    if lambda_squared:
        cons_m *= lam
    return LossBreakdown(task_m, cons_m, float(lam), task_m + lam * cons_m), g.reshape(sb, k)


def backward(model: TinyModel, cache: Cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    grads = {
        "w2": cache.h.T @ dlogits,
        "b2": dlogits.sum(axis=0),
    }
    dh = (dlogits @ model.w2.T) * (cache.h_pre > 0)
    grads["w1"] = cache.x.T @ dh
    grads["b1"] = dh.sum(axis=0)
    return grads


def loss_and_grads(
    model: TinyModel,
    variants: np.ndarray,
    labels: np.ndarray,
    lam: float = 0.0,
    lambda_squared: bool = False,
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Objective and parameter gradients for ``variants`` of shape ``(S, B, ...)``."""
    variants = np.asarray(variants, dtype=np.float64)
    s, b = variants.shape[:2]
    logits, cache = forward(model, variants.reshape(s * b, -1))
    loss, dlogits = logit_grads(logits, labels, s, lam, lambda_squared)
    return loss, backward(model, cache, dlogits)


def predict(model: TinyModel, images) -> np.ndarray:
    logits, _ = forward(model, images)
    return np.argmax(logits, axis=1)
