"""Large-margin cosine (CosFace) classification head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

TRAIN_EPS = 1e-12


class DegenerateInputError(ValueError):
    """Zero-norm embedding or class weight under strict normalisation."""


@dataclass
class MarginHead:
    class_weights: Tensor  # [num_classes, D]
    s: float = 64.0
    m: float = 0.35

    def __post_init__(self) -> None:
        if self.s <= 0:
            raise ValueError(f"scale s must be positive, got {self.s}")
        if not 0 <= self.m < 1:
            raise ValueError(f"margin m must lie in [0, 1), got {self.m}")

    @property
    def num_classes(self) -> int:
        return self.class_weights.shape[0]

    @classmethod
    def init(cls, num_classes: int, dim: int, rng: np.random.Generator, s=64.0, m=0.35, dtype=np.float64):
        w = rng.standard_normal((num_classes, dim)) * 0.01
        return cls(Tensor(w.astype(dtype), requires_grad=True, name="head.class_weights"), s, m)


def _normalize(x: Tensor, strict: bool, what: str) -> Tensor:
    if strict:
        try:
            return T.l2_normalize(x)
        except ZeroDivisionError:
            raise DegenerateInputError(f"{what} has zero norm") from None
    return T.l2_normalize(x, eps=TRAIN_EPS)


def cosines(embedding: Tensor, head: MarginHead, strict: bool = True) -> Tensor:
    e = _normalize(embedding, strict, "embedding")
    w = _normalize(head.class_weights, strict, "class weight row")
    return T.matmul(e, T.transpose(w))


def cosface_logits(embedding: Tensor, head: MarginHead, labels, strict: bool = True) -> Tensor:
    """``s*cos`` everywhere, ``s*(cos - m)`` at the label coordinate.

    ``embedding`` is ``[D]`` with an int label, or ``[B, D]`` with ``B`` labels.
    """
    single = embedding.ndim == 1
    emb = T.reshape(embedding, (1, -1)) if single else embedding
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape[0] != emb.shape[0]:
        raise T.ShapeError(f"{labels.shape[0]} labels for {emb.shape[0]} embeddings")
    if labels.min() < 0 or labels.max() >= head.num_classes:
        raise ValueError(f"label out of range [0, {head.num_classes})")
    cos = cosines(emb, head, strict)
    margin = np.zeros(cos.shape, dtype=cos.dtype)
    margin[np.arange(len(labels)), labels] = head.m
    logits = T.scale(T.sub(cos, margin), head.s)
    return T.reshape(logits, (head.num_classes,)) if single else logits


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over the batch."""
    single = logits.ndim == 1
    lg = T.reshape(logits, (1, -1)) if single else logits
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    nll = T.neg(T.pick(T.log_softmax_rows(lg), labels))
    return T.mean_all(nll)


def cosface_loss(embedding: Tensor, head: MarginHead, labels, strict: bool = True) -> tuple[Tensor, Tensor]:
    logits = cosface_logits(embedding, head, labels, strict)
    return cross_entropy(logits, labels), logits
