"""Mini-batch SGD training with random-convolution augmentation."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .augment import RandConvConfig, draw_variant
from .image import LabeledDataset, compute_whitening, scalar_whitening, whiten
from .model import PARAM_NAMES, TinyModel, loss_and_grads, predict
from .rng import INIT, SHUFFLE, TRAIN_AUGMENT, derive_stream
from .shapes import ShapeDatasetSpec, generate_dataset

log = logging.getLogger(__name__)


class TrainingDiverged(ArithmeticError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.003
    momentum: float = 0.9
    lam: float = 10.0
    randconv: RandConvConfig | None = field(default_factory=lambda: RandConvConfig(samples_per_image=3))
    eval_domains: tuple[str, ...] = ("inverted", "stripes", "noise")
    seed: int = 0
    hidden: int = 64
    lambda_squared: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        # lr == 0 is allowed: a frozen run is a useful sanity check
        if not self.learning_rate >= 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")

    @property
    def n_samples(self) -> int:
        """Variants per image actually needed by the objective."""
        if self.randconv is None or self.lam == 0:
            return 1
        return self.randconv.samples_per_image


def evaluate(model: TinyModel, ds: LabeledDataset) -> float:
    """Top-1 accuracy; ``argmax`` breaks ties toward the lowest class."""
    if len(ds) == 0:
        return 0.0
    return float(np.mean(predict(model, ds.stack()) == ds.labels))


def _variants(x: np.ndarray, idx: np.ndarray, cfg: TrainConfig, epoch: int, pool) -> np.ndarray:
    """``(S, B, H, W, C)`` augmented copies of ``x[idx]``."""
    s = cfg.n_samples
    if cfg.randconv is None:
        return np.broadcast_to(x[idx], (s, *x[idx].shape))

    def one(pair):
        j, i = pair
        rng = derive_stream(cfg.seed, TRAIN_AUGMENT, epoch, int(i), j)
        return draw_variant(x[i], cfg.randconv, rng)[0]

    pairs = [(j, i) for j in range(s) for i in idx]
    outs = list(pool.map(one, pairs)) if pool is not None else [one(p) for p in pairs]
    return np.stack(outs).reshape(s, len(idx), *x.shape[1:])


METRIC_FIELDS = ("epoch", "train_loss", "task_loss", "cons_loss", "train_acc")


def train(
    train_ds: LabeledDataset,
    cfg: TrainConfig,
    eval_sets: dict[str, LabeledDataset] | None = None,
    model: TinyModel | None = None,
) -> tuple[TinyModel, list[dict]]:
    """Train on (already whitened) ``train_ds``; returns the model and per-epoch metrics.

    Evaluation sets are scored after every epoch without augmentation.
    """
    eval_sets = eval_sets or {}
    x = train_ds.stack()
    y = train_ds.labels
    n = len(train_ds)
    if model is None:
        model = TinyModel.init(x[0].size, cfg.hidden, train_ds.num_classes, derive_stream(cfg.seed, INIT))
    velocity = {name: np.zeros_like(p) for name, p in model.params().items()}
    history = []
    pool = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    try:
        for epoch in range(cfg.epochs):
            order = derive_stream(cfg.seed, SHUFFLE, epoch).permutation(n)
            sums = np.zeros(3)
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                variants = _variants(x, idx, cfg, epoch, pool)
                loss, grads = loss_and_grads(model, variants, y[idx], cfg.lam, cfg.lambda_squared)
                if not np.isfinite(loss.total):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1}, batch starting {start}")
                sums += len(idx) * np.array([loss.total, loss.task, loss.consistency])
                for name in PARAM_NAMES:
                    v = velocity[name]
                    v *= cfg.momentum
                    v += grads[name]
                    getattr(model, name)[...] -= cfg.learning_rate * v
                if not model.is_finite():
                    raise TrainingDiverged(f"non-finite parameters at epoch {epoch + 1}")
            row = {
                "epoch": epoch + 1,
                "train_loss": sums[0] / n,
                "task_loss": sums[1] / n,
                "cons_loss": sums[2] / n,
                "train_acc": evaluate(model, train_ds),
            }
            for tag, ds in eval_sets.items():
                row[f"acc_{tag}"] = evaluate(model, ds)
            log.info(
                "epoch %d loss %.4f acc %.3f %s",
                epoch + 1,
                row["train_loss"],
                row["train_acc"],
                " ".join(f"{k}={v:.3f}" for k, v in row.items() if k.startswith("acc_")),
            )
            history.append(row)
    finally:
        if pool is not None:
            pool.shutdown()
    return model, history


def metrics_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    if not history:
        return ""
    w = csv.DictWriter(buf, fieldnames=list(history[0]), lineterminator="\r\n")
    w.writeheader()
    for row in history:
        w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in row.items()})
    return buf.getvalue()


@dataclass
class DomainData:
    train: LabeledDataset
    evals: dict[str, LabeledDataset]


def whiten_domains(train: LabeledDataset, evals: dict[str, LabeledDataset], scalar: bool = False) -> DomainData:
    """Whiten everything with statistics of the training domain only."""
    stats = compute_whitening(train)
    if scalar:
        stats = scalar_whitening(stats)
    w = lambda ds: ds.map(lambda img: whiten(img, stats))  # noqa: E731
    return DomainData(w(train), {tag: w(ds) for tag, ds in evals.items()})


def make_shape_domains(
    train_domain: str = "flat",
    eval_domains: tuple[str, ...] = ("inverted", "stripes", "noise"),
    per_class: int = 200,
    eval_per_class: int = 100,
    image_size: int = 32,
    seed: int = 0,
    scalar_whiten: bool = False,
) -> DomainData:
    """Generate and whiten a train domain plus held-out evaluation domains.

    The in-domain test split is included under the training domain's tag.
    Evaluation data uses a seed disjoint from the training seed.
    """
    train = generate_dataset(ShapeDatasetSpec(image_size, per_class=per_class, domain=train_domain, seed=2 * seed))
    evals = {}
    for tag in (train_domain, *eval_domains):
        if tag in evals:
            continue
        evals[tag] = generate_dataset(ShapeDatasetSpec(image_size, per_class=eval_per_class, domain=tag, seed=2 * seed + 1))
    return whiten_domains(train, evals, scalar_whiten)


def paper_defaults(**overrides) -> TrainConfig:
    """Multi-scale 1-7 pool, p=0.5, image mode, lambda=10, three samples."""
    rc = RandConvConfig(pool=(1, 3, 5, 7), p=0.5, mix=False, samples_per_image=3)
    return replace(TrainConfig(randconv=rc, lam=10.0), **overrides)


def baseline_config(cfg: TrainConfig) -> TrainConfig:
    return replace(cfg, randconv=None, lam=0.0)
