"""Attention rollout, mean attention distance and heatmap export."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoder import AttentionRecord
from .ppm import write_ppm
from .tokenizer import PatchConfig

log = logging.getLogger(__name__)


class IncompleteRecordError(ValueError):
    pass


@dataclass
class RolloutMap:
    matrix: np.ndarray  # [T, T]
    class_row: np.ndarray  # [N], sums to 1 unless degenerate

    def class_grid(self) -> np.ndarray:
        n = int(round(np.sqrt(self.class_row.size)))
        return self.class_row.reshape(n, n)


def _check_record(record: AttentionRecord, depth: int | None) -> None:
    if record.depth == 0 or (depth is not None and record.depth != depth):
        raise IncompleteRecordError(f"record holds {record.depth} layers, expected {depth}")
    for i, a in enumerate(record.maps):
        if a is None or a.ndim != 3 or a.shape[1] != a.shape[2]:
            shape = None if a is None else a.shape
            raise IncompleteRecordError(f"layer {i}: expected [heads, T, T] maps, got {shape}")


def rollout(record: AttentionRecord, depth: int | None = None) -> RolloutMap:
    """Accumulate ``M <- (0.5*mean_h(A_l) + 0.5*I) @ M`` for l = 1..L, from M = I."""
    _check_record(record, depth)
    n_tok = record.maps[0].shape[-1]
    eye = np.eye(n_tok)
    M = eye.copy()
    for a in record.maps:
        M = (0.5 * a.mean(axis=0) + 0.5 * eye) @ M
    row = M[0, 1:].copy()
    total = row.sum()
    if total <= 1e-12:
        log.warning("rollout: class token attends only to itself; class row set to zero")
        row = np.zeros_like(row)
    else:
        row /= total
    return RolloutMap(M, row)


@dataclass
class DistanceProfile:
    distances: np.ndarray  # [layers, heads], pixels

    def rows(self):
        for layer, per_head in enumerate(self.distances):
            for head, d in enumerate(per_head):
                yield layer, head, float(d)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["layer", "head", "mean_distance_px"])
            for layer, head, d in self.rows():
                w.writerow([layer, head, repr(d)])


def mean_attention_distance(record: AttentionRecord, patch_cfg: PatchConfig) -> DistanceProfile:
    """Attention-weighted patch-centre distance, averaged over patch queries.

    Only patch tokens take part; the class-token row and column are dropped
    without renormalising the remaining weights.
    """
    _check_record(record, None)
    n = patch_cfg.N
    centers = patch_cfg.patch_centers()
    dist = np.sqrt(((centers[:, None, :] - centers[None, :, :]) ** 2).sum(-1))
    out = []
    for i, a in enumerate(record.maps):
        if a.shape[-1] != n + 1:
            raise IncompleteRecordError(
                f"layer {i} has {a.shape[-1]} tokens but the patch grid implies {n + 1}"
            )
        patch = a[:, 1:, 1:]
        out.append((patch * dist).sum(axis=(1, 2)) / n)
    return DistanceProfile(np.asarray(out))


def upsample_grid(grid: np.ndarray, patch_cfg: PatchConfig) -> np.ndarray:
    """Bilinear map of a token grid onto the ``W x W`` pixel lattice.

    Grid cell ``r`` sits at its patch centre, so the value at a patch centre
    is exactly that patch's value; outside the outermost centres it is held.
    """
    n = grid.shape[0]
    px = np.arange(patch_cfg.W) + 0.5
    u = np.clip((px - (patch_cfg.P / 2 - patch_cfg.pad)) / patch_cfg.S, 0, n - 1)
    lo = np.floor(u).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    t = u - lo
    rows = grid[lo] * (1 - t)[:, None] + grid[hi] * t[:, None]
    return rows[:, lo] * (1 - t)[None, :] + rows[:, hi] * t[None, :]


def _colormap(heat: np.ndarray) -> np.ndarray:
    # blue -> green -> red ramp
    r = np.clip(2 * heat - 1, 0, 1)
    g = 1 - np.abs(2 * heat - 1)
    b = np.clip(1 - 2 * heat, 0, 1)
    return np.stack([r, g, b], axis=-1)


def heatmap_rgb(class_row: np.ndarray, image: np.ndarray, patch_cfg: PatchConfig) -> np.ndarray:
    """Blend the upsampled class-token attention over a greyscale copy of ``image``.

    ``image`` is ``[W, W, C]`` in 0..255.  A constant heat map (no spatial
    contrast) is drawn as 0.5.
    """
    class_row = np.asarray(class_row, dtype=np.float64)
    if class_row.size != patch_cfg.N:
        raise ValueError(f"class_row has {class_row.size} entries, patch grid has {patch_cfg.N}")
    image = np.asarray(image, dtype=np.float64)
    if image.shape[:2] != (patch_cfg.W, patch_cfg.W):
        raise ValueError(f"image is {image.shape}, expected {patch_cfg.W}x{patch_cfg.W}")
    heat = upsample_grid(class_row.reshape(patch_cfg.n_axis, patch_cfg.n_axis), patch_cfg)
    lo, hi = heat.min(), heat.max()
    heat = np.full_like(heat, 0.5) if hi - lo <= 1e-12 * max(1.0, abs(hi)) else (heat - lo) / (hi - lo)
    gray = np.clip(image.mean(axis=2) / 255.0, 0, 1)
    blended = 0.5 * _colormap(heat) + 0.5 * gray[..., None]
    return np.clip(np.rint(blended * 255), 0, 255).astype(np.uint8)


def export_heatmap(class_row: np.ndarray, image: np.ndarray, patch_cfg: PatchConfig, path: str | Path) -> np.ndarray:
    rgb = heatmap_rgb(class_row, image, patch_cfg)
    write_ppm(path, rgb)
    return rgb
