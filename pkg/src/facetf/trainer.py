"""AdamW + warmup/cosine training of the backbone under the CosFace head."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .cosface import MarginHead, cosface_loss
from .encoder import FaceModel
from .tensor import Tensor

log = logging.getLogger(__name__)

PIXEL_MEAN = 127.5
PIXEL_SCALE = 128.0


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step
        self.loss = loss


def normalize_pixels(images: np.ndarray) -> np.ndarray:
    """Map 0..255 intensities to roughly [-1, 1]."""
    return (np.asarray(images, dtype=np.float64) - PIXEL_MEAN) / PIXEL_SCALE


# ---------------------------------------------------------------- schedule


@dataclass(frozen=True)
class Schedule:
    total_steps: int
    warmup_steps: int = 0
    base_lr: float = 3e-4
    final_lr: float = 0.0
    # manual-drop mode: hold base_lr after warmup, switch to drop_lr at drop_step
    mode: str = "cosine"
    drop_step: int | None = None
    drop_lr: float = 1e-4

    def __post_init__(self) -> None:
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError(
                f"need 0 <= warmup_steps < total_steps, got {self.warmup_steps}, {self.total_steps}"
            )
        if self.mode not in ("cosine", "manual_drop"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if min(self.base_lr, self.final_lr, self.drop_lr) < 0:
            raise ValueError("learning rates must be non-negative")


def lr_at(schedule: Schedule, step: int) -> float:
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    base = schedule.base_lr
    if step < schedule.warmup_steps:
        return base * step / schedule.warmup_steps
    if schedule.mode == "manual_drop":
        if schedule.drop_step is not None and step >= schedule.drop_step:
            return schedule.drop_lr
        return base
    span = schedule.total_steps - schedule.warmup_steps
    progress = (step - schedule.warmup_steps) / span
    if step == schedule.total_steps:
        return schedule.final_lr
    return schedule.final_lr + 0.5 * (base - schedule.final_lr) * (1.0 + math.cos(math.pi * progress))


# --------------------------------------------------------------- optimizer


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **hyper) -> "OptimizerState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
            **hyper,
        )


def adamw_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: OptimizerState, lr: float) -> None:
    """One in-place AdamW update; ``None`` grads count as zero."""
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    if len(params) != len(state.m):
        raise T.ShapeError(f"{len(params)} params but optimizer state holds {len(state.m)}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise T.ShapeError(f"grad shape {g.shape} != param shape {p.shape} ({p.name})")
        dtype = p.data.dtype
        m = state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        v = state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        decayed = p.data - lr * state.weight_decay * p.data
        p.data = (decayed - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(dtype, copy=False)


# ------------------------------------------------------------ augmentation


def augment_hflip(image: np.ndarray, coin: float) -> np.ndarray:
    """Mirror ``[W, W, C]`` about the vertical axis when ``coin < 0.5``."""
    image = np.asarray(image)
    if image.shape[0] != image.shape[1]:
        raise T.ShapeError(f"augment_hflip expects a square image, got {image.shape}")
    return image[:, ::-1].copy() if coin < 0.5 else image


# ------------------------------------------------------------------- data


@dataclass(frozen=True)
class SyntheticDataset:
    """Deterministic stand-in face data: noisy, jittered copies of per-identity prototypes.

    Images are ``[W, W, C]`` in 0..255.  Prototypes are blocky random patterns
    (4x4-pixel cells) so that small translations keep identities recognisable.
    """

    seed: int = 0
    num_identities: int = 8
    samples_per_identity: int = 32
    W: int = 28
    C: int = 1
    noise_sigma: float = 20.0
    max_shift: int = 1

    def prototypes(self) -> np.ndarray:
        rng = np.random.default_rng([self.seed, 0])
        cells = -(-self.W // 4)
        coarse = rng.uniform(0, 255, size=(self.num_identities, cells, cells, self.C))
        big = coarse.repeat(4, axis=1).repeat(4, axis=2)
        return big[:, : self.W, : self.W]

    def _samples(self, stream: int, per_identity: int) -> tuple[np.ndarray, np.ndarray]:
        protos = self.prototypes()
        rng = np.random.default_rng([self.seed, stream])
        images, labels = [], []
        for ident in range(self.num_identities):
            for _ in range(per_identity):
                dy, dx = rng.integers(-self.max_shift, self.max_shift + 1, size=2)
                shifted = np.roll(protos[ident], (int(dy), int(dx)), axis=(0, 1))
                noisy = shifted + rng.normal(0.0, self.noise_sigma, size=shifted.shape)
                images.append(np.clip(noisy, 0, 255))
                labels.append(ident)
        return np.stack(images), np.asarray(labels, dtype=np.int64)

    def generate(self) -> tuple[np.ndarray, np.ndarray]:
        return self._samples(1, self.samples_per_identity)

    def holdout(self, per_identity: int) -> tuple[np.ndarray, np.ndarray]:
        """Fresh samples of the same identities, independent of the training draw."""
        return self._samples(2, per_identity)


def make_pairs(labels: np.ndarray, rng: np.random.Generator, max_pairs: int | None = None) -> list[tuple[int, int, bool]]:
    """Balanced same/different index pairs, interleaved so every fold is balanced."""
    labels = np.asarray(labels)
    same = [(i, j) for i in range(len(labels)) for j in range(i + 1, len(labels)) if labels[i] == labels[j]]
    diff_pool = [(i, j) for i in range(len(labels)) for j in range(i + 1, len(labels)) if labels[i] != labels[j]]
    n = min(len(same), len(diff_pool))
    if max_pairs is not None:
        n = min(n, max_pairs // 2)
    same = [same[k] for k in sorted(rng.choice(len(same), n, replace=False))]
    diff = [diff_pool[k] for k in sorted(rng.choice(len(diff_pool), n, replace=False))]
    pairs: list[tuple[int, int, bool]] = []
    for (a, b), (c, d) in zip(same, diff):
        pairs.append((a, b, True))
        pairs.append((c, d, False))
    return pairs


# --------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 30
    batch_size: int = 64
    base_lr: float = 3e-4
    final_lr: float = 1e-5
    warmup_epochs: float = 1.0
    lr_mode: str = "cosine"
    drop_epoch: int = 20
    drop_lr: float = 1e-4
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    s: float = 64.0
    m: float = 0.35
    flip_prob: float = 0.5
    precision: str = "float32"

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision!r}")

    @property
    def dtype(self):
        return np.dtype(self.precision)

    def steps_per_epoch(self, n: int) -> int:
        return -(-n // self.batch_size)

    def schedule(self, n: int) -> Schedule:
        spe = self.steps_per_epoch(n)
        total = spe * self.epochs
        return Schedule(
            total_steps=total,
            warmup_steps=min(int(round(self.warmup_epochs * spe)), total - 1),
            base_lr=self.base_lr,
            final_lr=self.final_lr,
            mode=self.lr_mode,
            drop_step=self.drop_epoch * spe,
            drop_lr=self.drop_lr,
        )


@dataclass
class EpochStats:
    epoch: int
    step: int
    lr: float
    loss: float
    train_acc: float


@dataclass
class TrainingReport:
    epochs: list[EpochStats] = field(default_factory=list)
    lr_trace: list[float] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def final(self) -> EpochStats:
        return self.epochs[-1]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "step", "lr", "loss", "train_acc"])
            for e in self.epochs:
                w.writerow([e.epoch, e.step, repr(e.lr), repr(e.loss), repr(e.train_acc)])


def train(
    model: FaceModel,
    head: MarginHead,
    images: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    on_epoch_end: Callable[[int, FaceModel, MarginHead], None] | None = None,
) -> TrainingReport:
    """Train ``model`` and ``head`` in place on normalised images ``[n, W, W, C]``.

    Shuffling and flip coins come from one generator seeded with ``cfg.seed``,
    so a run is bitwise reproducible for a fixed thread count.
    """
    dtype = cfg.dtype
    model.params.astype(dtype)
    head.class_weights.data = head.class_weights.data.astype(dtype)
    params = list(model.params) + [head.class_weights]
    state = OptimizerState.for_params(
        params, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps, weight_decay=cfg.weight_decay
    )
    n = len(labels)
    schedule = cfg.schedule(n)
    rng = np.random.default_rng(cfg.seed)
    images = np.asarray(images, dtype=dtype)
    report = TrainingReport()
    started = time.perf_counter()
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            coins = rng.random(len(idx))
            batch = images[idx].copy()
            flip = coins < cfg.flip_prob
            batch[flip] = batch[flip][:, :, ::-1]
            for p in params:
                p.zero_grad()
            with T.Tape() as tape:
                emb, _ = model.embed(batch)
                loss, logits = cosface_loss(emb, head, labels[idx], strict=False)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(step, value)
            tape.backward(loss)
            lr = lr_at(schedule, step)
            report.lr_trace.append(lr)
            adamw_step(params, [p.grad for p in params], state, lr)
            step += 1
            loss_sum += value * len(idx)
            # prediction by plain cosine: margin shifts only the label logit
            pred = (logits.data + head.s * head.m * _onehot(labels[idx], head.num_classes)).argmax(axis=1)
            correct += int((pred == labels[idx]).sum())
        stats = EpochStats(epoch + 1, step, report.lr_trace[-1], loss_sum / n, correct / n)
        report.epochs.append(stats)
        log.info("epoch %d  lr %.3g  loss %.4f  acc %.3f", stats.epoch, stats.lr, stats.loss, stats.train_acc)
        if on_epoch_end is not None:
            on_epoch_end(epoch + 1, model, head)
    report.seconds = time.perf_counter() - started
    return report


def _onehot(labels: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((len(labels), k))
    out[np.arange(len(labels)), labels] = 1.0
    return out
