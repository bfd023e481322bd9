"""Verification protocols and parameter / MAC profiling.

Decision rule everywhere: a pair is accepted as "same identity" when its
similarity score is ``>= threshold``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .cosface import DegenerateInputError
from .encoder import ModelConfig
from .tokenizer import PatchConfig

log = logging.getLogger(__name__)

DEFAULT_FARS = (1e-4, 1e-3, 1e-2, 1e-1)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateInputError("cosine_similarity of a zero-norm vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def cosine_similarities(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity of two ``[n, D]`` arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise DegenerateInputError("cosine_similarity of a zero-norm vector")
    return np.clip((a * b).sum(axis=1) / (na * nb), -1.0, 1.0)


# ------------------------------------------------------------ k-fold accuracy


def fold_slices(n: int, folds: int) -> list[slice]:
    """Contiguous folds of ``n // folds`` items; the last fold takes the remainder."""
    size = n // folds
    return [slice(i * size, (i + 1) * size if i < folds - 1 else n) for i in range(folds)]


def best_threshold(scores: np.ndarray, same: np.ndarray) -> tuple[float, float]:
    """Lowest threshold maximising accuracy; candidates are the unique scores and +inf."""
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    y = same[order].astype(np.int64)
    cand, first = np.unique(s, return_index=True)
    n = len(s)
    # threshold cand[i] accepts s[first[i]:]; +inf accepts nothing
    pos_below = np.concatenate([[0], np.cumsum(y)])  # positives among s[:j]
    total_pos = pos_below[-1]
    starts = np.concatenate([first, [n]])
    neg_below = starts - pos_below[starts]
    correct = (total_pos - pos_below[starts]) + neg_below
    best = int(np.argmax(correct))  # first max -> lowest threshold
    thr = float(cand[best]) if best < len(cand) else math.inf
    return thr, correct[best] / n


def fold_accuracy(scores, same, folds: int = 10) -> float:
    """Mean held-out accuracy with thresholds picked on the other folds."""
    scores = np.asarray(scores, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    if len(scores) != len(same):
        raise ValueError(f"{len(scores)} scores but {len(same)} labels")
    if folds < 2 or len(scores) < folds:
        raise ValueError(f"need at least {folds} pairs (and folds >= 2), got {len(scores)}")
    accs = []
    for test in fold_slices(len(scores), folds):
        train_mask = np.ones(len(scores), dtype=bool)
        train_mask[test] = False
        thr, _ = best_threshold(scores[train_mask], same[train_mask])
        accs.append(float(np.mean((scores[test] >= thr) == same[test])))
    return math.fsum(accs) / folds  # correctly rounded, independent of summation order


# ------------------------------------------------------------------ TAR@FAR


def tar_at_far(genuine, impostor, far_targets: Sequence[float] = DEFAULT_FARS) -> list[float]:
    """True accept rate at each false-accept target.

    The threshold is the smallest observed score (genuine or impostor) whose
    impostor acceptance rate is ``<= target``.  Targets below
    ``1 / len(impostor)`` cannot be resolved by the sample and yield NaN.
    """
    genuine = np.sort(np.asarray(genuine, dtype=np.float64))
    impostor = np.sort(np.asarray(impostor, dtype=np.float64))
    if genuine.size == 0 or impostor.size == 0:
        raise ValueError("tar_at_far needs non-empty genuine and impostor scores")
    cand = np.unique(np.concatenate([genuine, impostor]))
    n_imp = impostor.size
    far = (n_imp - np.searchsorted(impostor, cand, side="left")) / n_imp
    out = []
    for target in far_targets:
        if target < 1.0 / n_imp:
            log.warning("FAR %.0e unattainable with %d impostor scores", target, n_imp)
            out.append(math.nan)
            continue
        ok = np.nonzero(far <= target)[0]
        thr = cand[ok[0]] if ok.size else math.inf
        out.append(float((genuine.size - np.searchsorted(genuine, thr, side="left")) / genuine.size))
    return out


# ---------------------------------------------------------------- profiling


@dataclass(frozen=True)
class ModelProfile:
    param_count: int
    mac_count: int

    def describe(self) -> str:
        return (
            f"{self.param_count / 1e6:.1f} M params, {self.mac_count / 1e9:.1f} G MACs "
            "(MAC = one multiply-add of a matmul; softmax/LayerNorm/GELU not counted)"
        )


def profile(model_cfg: ModelConfig, patch_cfg: PatchConfig, head_classes: int = 0, include_head: bool = False) -> ModelProfile:
    """Parameter and MAC counts for one forward pass of one image."""
    D, M, L = model_cfg.D, model_cfg.mlp_dim, model_cfg.depth
    n_tok = patch_cfg.N + 1
    per_layer = (
        2 * D  # ln1
        + D * 3 * D + (3 * D if model_cfg.qkv_bias else 0)
        + D * D  # output projection
        + 2 * D  # ln2
        + D * M + M
        + M * D + D
    )
    params = patch_cfg.patch_dim * D + D + n_tok * D + L * per_layer + 2 * D  # patch proj, cls, pos, blocks, final LN
    if include_head:
        params += head_classes * D
    macs_layer = (
        n_tok * D * 3 * D  # qkv
        + n_tok * n_tok * D  # scores, summed over heads
        + n_tok * n_tok * D  # attention @ v
        + n_tok * D * D  # output projection
        + 2 * n_tok * D * M  # MLP
    )
    macs = patch_cfg.N * patch_cfg.patch_dim * D + L * macs_layer
    if include_head:
        macs += head_classes * D
    return ModelProfile(int(params), int(macs))


# ------------------------------------------------------------------ file I/O


def read_pairs(path: str | Path) -> list[tuple[str, str, bool]]:
    """``path_a,path_b,same`` rows; a header line is skipped if present."""
    rows = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or row[0].startswith("#"):
                continue
            if i == 0 and row[-1].strip() not in ("0", "1"):
                continue
            if len(row) != 3 or row[2].strip() not in ("0", "1"):
                raise ValueError(f"{path}:{i + 1}: expected path_a,path_b,0|1")
            rows.append((row[0].strip(), row[1].strip(), row[2].strip() == "1"))
    return rows


def write_scores(path: str | Path, scores: np.ndarray, same: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["score", "label"])
        for s, y in zip(scores, same):
            w.writerow([repr(float(s)), int(y)])


def read_scores(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    scores, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or row[0] == "score":
                continue
            scores.append(float(row[0]))
            labels.append(int(row[1]) == 1)
    return np.asarray(scores), np.asarray(labels)


def metrics_table(metrics: dict[str, float]) -> str:
    width = max(len(k) for k in metrics)
    return "\n".join(f"{k:<{width}}  {v:.6f}" for k, v in metrics.items())


def write_metrics_csv(path: str | Path, metrics: dict[str, float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for k, v in metrics.items():
            w.writerow([k, repr(float(v))])


def pair_scores(embeddings: np.ndarray, pairs: Sequence[tuple[int, int, bool]]) -> tuple[np.ndarray, np.ndarray]:
    """Cosine scores and same-identity flags for index pairs into ``embeddings``."""
    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    same = np.array([p[2] for p in pairs], dtype=bool)
    return cosine_similarities(embeddings[a], embeddings[b]), same
