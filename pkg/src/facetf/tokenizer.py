"""Sliding-window patch tokenization and the input embedding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor, add, concat_rows, matmul, reshape


class ConfigError(ValueError):
    pass


def default_padding(patch: int, stride: int) -> int:
    """Zero padding per side that keeps the non-overlapping token grid."""
    if patch < 1 or stride < 1:
        raise ConfigError(f"patch and stride must be >= 1, got P={patch}, S={stride}")
    return max(0, math.ceil((patch - stride) / 2))


@dataclass(frozen=True)
class PatchConfig:
    W: int = 112
    C: int = 3
    P: int = 8
    S: int = 8
    p: int | None = None  # None -> default_padding(P, S)
    pad: int = field(init=False)

    def __post_init__(self) -> None:
        pad = default_padding(self.P, self.S) if self.p is None else self.p
        object.__setattr__(self, "pad", pad)
        if self.W < 1 or self.C < 1:
            raise ConfigError(f"image side and channels must be positive (W={self.W}, C={self.C})")
        if pad < 0:
            raise ConfigError(f"padding must be non-negative, got {pad}")
        if not 1 <= self.P <= self.W + 2 * pad:
            raise ConfigError(f"patch size {self.P} must lie in [1, W + 2p = {self.W + 2 * pad}]")

    @property
    def n_axis(self) -> int:
        return (self.W + 2 * self.pad - (self.P - 1) - 1) // self.S + 1

    @property
    def N(self) -> int:
        return self.n_axis**2

    @property
    def patch_dim(self) -> int:
        return self.P * self.P * self.C

    def patch_centers(self) -> np.ndarray:
        """``[N, 2]`` (row, col) centres of each patch in image pixels, raster order."""
        c = np.arange(self.n_axis) * self.S - self.pad + self.P / 2
        rr, cc = np.meshgrid(c, c, indexing="ij")
        return np.stack([rr.ravel(), cc.ravel()], axis=1)


def extract_patches(image, cfg: PatchConfig) -> Tensor:
    """Flatten every P x P x C window, raster order, row-major then channel.

    Accepts a single ``[W, W, C]`` image or a batch ``[B, W, W, C]``; the
    result is ``[N, P*P*C]`` or ``[B, N, P*P*C]``.
    """
    img = image.data if isinstance(image, Tensor) else np.asarray(image)
    single = img.ndim == 3
    if single:
        img = img[None]
    if img.ndim != 4 or img.shape[1:] != (cfg.W, cfg.W, cfg.C):
        raise ShapeError(
            f"extract_patches: image shape {tuple(image.shape)} does not match W={cfg.W}, C={cfg.C}"
        )
    if not np.issubdtype(img.dtype, np.floating):
        img = img.astype(np.float64)
    pad = cfg.pad
    padded = np.pad(img, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    # windows: [B, nH, nW, C, P, P] before striding
    win = np.lib.stride_tricks.sliding_window_view(padded, (cfg.P, cfg.P), axis=(1, 2))
    n = cfg.n_axis
    win = win[:, : (n - 1) * cfg.S + 1 : cfg.S, : (n - 1) * cfg.S + 1 : cfg.S]
    win = win.transpose(0, 1, 2, 4, 5, 3)  # B, n, n, P, P, C
    out = np.ascontiguousarray(win).reshape(img.shape[0], cfg.N, cfg.patch_dim)
    return Tensor(out[0] if single else out)


def scatter_patches(patches: np.ndarray, cfg: PatchConfig) -> np.ndarray:
    """Inverse of :func:`extract_patches` for tilings with P == S and no padding."""
    if cfg.P != cfg.S or cfg.pad != 0:
        raise ConfigError("scatter_patches needs a non-overlapping, unpadded tiling")
    n = cfg.n_axis
    grid = np.asarray(patches).reshape(n, n, cfg.P, cfg.P, cfg.C).transpose(0, 2, 1, 3, 4)
    out = np.zeros((cfg.W, cfg.W, cfg.C), dtype=grid.dtype)
    side = n * cfg.P
    out[:side, :side] = grid.reshape(side, side, cfg.C)
    return out


def embed(patches: Tensor, E: Tensor, cls_token: Tensor, pos: Tensor) -> Tensor:
    """Prepend the class token to ``patches @ E`` and add position embeddings.

    ``patches`` may carry a leading batch axis; the class token and position
    table are broadcast over it.
    """
    n = patches.shape[-2]
    if pos.shape[0] != n + 1:
        raise ConfigError(
            f"position table has {pos.shape[0]} rows but the patch grid needs {n + 1}; "
            "was this checkpoint trained with a different patch config?"
        )
    proj = matmul(patches, E)
    if patches.ndim == 3:
        batch = patches.shape[0]
        cls = add(reshape(cls_token, (1, 1, cls_token.shape[-1])), np.zeros((batch, 1, 1), dtype=E.dtype))
    else:
        cls = cls_token
    return add(concat_rows([cls, proj]), pos)
