"""Adversarial training of the segmentation cGAN and supervised training of the shape CNN."""

from __future__ import annotations

import contextlib
import csv
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, NonFiniteError, Tensor
from .data.manifest import SamplePair
from .data.splits import stratified_folds
from .losses import LossConfig, cross_entropy, discriminator_loss, generator_loss
from .metrics import evaluate_set
from .nets import (NetworkSpec, Variant, Weights, build, discriminator_forward,
                   generator_forward, save_weights, shape_cnn_logits)
from .shapes import ShapeLabel, shape_accuracy

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("epoch", "g_loss", "d_loss", "val_dice", "val_jaccard", "train_dice", "train_jaccard")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 4
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    lambda_l1: float = 100.0
    seed: int = 0
    variant: Variant = Variant.GEN_UNET
    resolution: int = 64
    checkpoint_every: int = 0  # epochs; 0 disables intermediate checkpoints
    depth: int = 4
    base_channels: int = 32
    dropout: float = 0.5
    threshold: float = 0.5
    epsilon_log: float = 1e-12

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not self.variant.is_generator:
            raise ValueError(f"variant must be a generator variant, got {self.variant.value}")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        self.loss_config()  # validates lambda and epsilon
        self.generator_spec()  # validates resolution/depth

    def generator_spec(self) -> NetworkSpec:
        return NetworkSpec(self.variant, self.resolution, self.depth, self.base_channels, self.dropout)

    def discriminator_spec(self) -> NetworkSpec:
        return NetworkSpec(Variant.DISCRIMINATOR, self.resolution, self.depth, self.base_channels,
                           self.dropout)

    def loss_config(self) -> LossConfig:
        return LossConfig(self.lambda_l1, self.epsilon_log)

    def resolved(self) -> dict:
        out = asdict(self)
        out["variant"] = self.variant.value
        return out


@dataclass
class EpochRecord:
    epoch: int
    g_loss: float
    d_loss: float
    val_dice: Optional[float]
    val_jaccard: Optional[float]
    train_dice: float
    train_jaccard: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_generator: Optional[Weights] = None

    def write_csv(self, path: Path) -> None:
        """Per-epoch CSV; wall-clock is left out so reruns are byte-identical."""
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in self.epochs:
                w.writerow([r.epoch, _fmt(r.g_loss), _fmt(r.d_loss), _fmt(r.val_dice),
                            _fmt(r.val_jaccard), _fmt(r.train_dice), _fmt(r.train_jaccard)])


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else repr(float(v))


@contextlib.contextmanager
def frozen(weights: Weights) -> Iterator[None]:
    """Exclude ``weights`` from differentiation for the duration of the block."""
    params = weights.parameters()
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad = flag


def _batch(samples: Sequence[SamplePair], idx: Sequence[int]) -> tuple[Tensor, Tensor]:
    x = np.stack([samples[i].image.data for i in idx])
    y = np.stack([samples[i].mask.data for i in idx])
    return Tensor(x), Tensor(y)


def segment(weights_g: Weights, image: Tensor, threshold: float = 0.5) -> Tensor:
    """Binary mask from the generator with dropout off; accepts ``[1,R,R]`` or ``[N,1,R,R]``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    single = image.ndim == 3
    x = Tensor(image.data[None]) if single else image
    with frozen(weights_g):
        prob = generator_forward(weights_g, x, training=False).data
    mask = (prob >= threshold).astype(np.float64)
    return Tensor(mask[0] if single else mask)


def segment_samples(weights_g: Weights, samples: Sequence[SamplePair], threshold: float = 0.5,
                    batch_size: int = 16) -> list[Tensor]:
    out: list[Tensor] = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        x = Tensor(np.stack([s.image.data for s in chunk]))
        masks = segment(weights_g, x, threshold).data
        out.extend(Tensor(m) for m in masks)
    return out


def _overlap(weights_g: Weights, samples: Sequence[SamplePair], threshold: float):
    if not samples:
        return None, None
    preds = segment_samples(weights_g, samples, threshold)
    m = evaluate_set([(p, s.mask) for p, s in zip(preds, samples)])
    return m.dice, m.jaccard


def _check_samples(samples: Sequence[SamplePair], resolution: int, what: str) -> None:
    for s in samples:
        if s.resolution != resolution:
            raise ValueError(f"{what} sample {s.id} has resolution {s.resolution}, "
                             f"config expects {resolution}")


def train_cgan(train: Sequence[SamplePair], val: Sequence[SamplePair], cfg: TrainConfig,
               out_dir: Optional[Path] = None,
               on_epoch: Optional[Callable[[EpochRecord], None]] = None,
               ) -> tuple[Weights, Weights, TrainReport]:
    """Alternate one discriminator step and one generator step per batch.

    The discriminator sees generator output as a constant; the generator step
    runs with the discriminator frozen.
    """
    if not train:
        raise ValueError("training set is empty")
    _check_samples(train, cfg.resolution, "training")
    _check_samples(val, cfg.resolution, "validation")
    loss_cfg = cfg.loss_config()
    gen = build(cfg.generator_spec(), cfg.seed)
    disc = build(cfg.discriminator_spec(), cfg.seed + 1)
    opt_g = Adam(gen.parameters(), cfg.lr, cfg.beta1, cfg.beta2)
    opt_d = Adam(disc.parameters(), cfg.lr, cfg.beta1, cfg.beta2)
    rng = np.random.default_rng([cfg.seed, 2])
    report = TrainReport()
    best_score = -1.0

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train))
        g_sum = d_sum = 0.0
        n_batches = 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            x, y = _batch(train, order[start:start + cfg.batch_size])
            try:
                fake = generator_forward(gen, x, training=True, rng=rng)

                opt_d.zero_grad()
                d_real = discriminator_forward(disc, x, y)
                d_fake = discriminator_forward(disc, x, fake.detach())
                loss_d = discriminator_loss(d_real, d_fake, loss_cfg)
                loss_d.backward()
                opt_d.step()

                opt_g.zero_grad()
                with frozen(disc):
                    loss_g = generator_loss(discriminator_forward(disc, x, fake), fake, y, loss_cfg)
                    loss_g.backward()
                opt_g.step()
            except NonFiniteError as exc:
                raise TrainingDiverged(f"non-finite value at epoch {epoch}, batch {b}: {exc}") from exc
            g_sum += loss_g.item()
            d_sum += loss_d.item()
            n_batches += 1

        val_dice, val_jac = _overlap(gen, val, cfg.threshold)
        train_dice, train_jac = _overlap(gen, train, cfg.threshold)
        rec = EpochRecord(epoch, g_sum / n_batches, d_sum / n_batches, val_dice, val_jac,
                          train_dice, train_jac, time.perf_counter() - t0)
        report.epochs.append(rec)
        score = val_dice if val_dice is not None else train_dice
        if score > best_score:
            best_score = score
            report.best_epoch = epoch
            report.best_generator = gen.copy()
        log.info("epoch %d  g_loss %.4f  d_loss %.4f  train_dice %.4f  val_dice %s  (%.1fs)",
                 epoch, rec.g_loss, rec.d_loss, train_dice,
                 "-" if val_dice is None else f"{val_dice:.4f}", rec.seconds)
        if on_epoch is not None:
            on_epoch(rec)
        if out_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_weights(gen, Path(out_dir) / f"gen_epoch{epoch:04d}.ckpt")
            save_weights(disc, Path(out_dir) / f"disc_epoch{epoch:04d}.ckpt")
    return gen, disc, report


# -- shape classifier -------------------------------------------------------------

@dataclass
class ShapeTrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 16
    seed: int = 0
    resolution: int = 64
    base_channels: int = 8

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1:
            raise ValueError("lr must be > 0 and batch_size >= 1")
        self.spec()

    def spec(self) -> NetworkSpec:
        return NetworkSpec(Variant.SHAPE_CNN, self.resolution, 2, self.base_channels)

    def resolved(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class CrossValReport:
    fold_accuracy: list[float]
    confusion: np.ndarray  # summed over held-out folds; rows truth, columns predicted
    fold_sizes: list[int]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracy))

    def to_csv(self) -> str:
        lines = ["fold,size,accuracy"]
        lines += [f"{i},{n},{a!r}" for i, (n, a) in enumerate(zip(self.fold_sizes, self.fold_accuracy))]
        lines.append(f"mean,{sum(self.fold_sizes)},{self.mean_accuracy!r}")
        return "\n".join(lines) + "\n"

    def confusion_csv(self) -> str:
        names = [s.name.lower() for s in ShapeLabel]
        lines = ["truth\\predicted," + ",".join(names)]
        lines += [f"{names[i]}," + ",".join(str(int(c)) for c in row)
                  for i, row in enumerate(self.confusion)]
        return "\n".join(lines) + "\n"


def _mask_batch(samples: Sequence[SamplePair], idx) -> Tensor:
    return Tensor(np.stack([samples[i].mask.data for i in idx]))


def fit_shape_cnn(samples: Sequence[SamplePair], epochs: int, cfg: ShapeTrainConfig,
                  seed: int) -> Weights:
    weights = build(cfg.spec(), seed)
    opt = Adam(weights.parameters(), cfg.lr, cfg.beta1, cfg.beta2)
    labels = np.array([int(s.shape_label) for s in samples])
    rng = np.random.default_rng([seed, 3])
    for epoch in range(epochs):
        order = rng.permutation(len(samples))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            try:
                loss = cross_entropy(shape_cnn_logits(weights, _mask_batch(samples, idx)), labels[idx])
                loss.backward()
            except NonFiniteError as exc:
                raise TrainingDiverged(f"shape CNN diverged at epoch {epoch + 1}: {exc}") from exc
            opt.step()
    return weights


def predict_shapes(weights: Weights, samples: Sequence[SamplePair], batch_size: int = 64) -> list[ShapeLabel]:
    out: list[ShapeLabel] = []
    with frozen(weights):
        for start in range(0, len(samples), batch_size):
            idx = range(start, min(start + batch_size, len(samples)))
            logits = shape_cnn_logits(weights, _mask_batch(samples, idx)).data
            out.extend(ShapeLabel(int(i)) for i in np.argmax(logits, axis=1))
    return out


def train_shape_cnn(samples: Sequence[SamplePair], folds: int = 10, epochs_per_fold: int = 50,
                    cfg: Optional[ShapeTrainConfig] = None,
                    ) -> tuple[list[Weights], CrossValReport]:
    """Stratified k-fold cross-validation of the shape classifier."""
    cfg = cfg or ShapeTrainConfig()
    if epochs_per_fold < 1:
        raise ValueError("epochs_per_fold must be >= 1")
    missing = [s.id for s in samples if s.shape_label is None]
    if missing:
        raise ValueError(f"{len(missing)} samples lack a shape label (first: {missing[0]})")
    _check_samples(samples, cfg.resolution, "shape")
    labels = [int(s.shape_label) for s in samples]
    held_out = stratified_folds(labels, folds, cfg.seed)
    all_idx = np.arange(len(samples))
    models, accs, sizes = [], [], []
    total = np.zeros((len(ShapeLabel), len(ShapeLabel)), dtype=np.int64)
    for k, test_idx in enumerate(held_out):
        train_idx = np.setdiff1d(all_idx, test_idx)
        train_set = [samples[i] for i in train_idx]
        test_set = [samples[i] for i in test_idx]
        weights = fit_shape_cnn(train_set, epochs_per_fold, cfg, seed=cfg.seed + k)
        pred = predict_shapes(weights, test_set)
        acc, conf = shape_accuracy(pred, [s.shape_label for s in test_set])
        log.info("fold %d/%d  accuracy %.4f  (%d held out)", k + 1, folds, acc, len(test_set))
        models.append(weights)
        accs.append(acc)
        sizes.append(len(test_set))
        total += conf
    return models, CrossValReport(accs, total, sizes)
