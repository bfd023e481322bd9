"""Pre-LN Transformer encoder producing the face embedding.

Parameter layout for the fused qkv projection ``U_qkv`` (``D x 3*k*D_h``):
columns ``[0, kD_h)`` are queries, ``[kD_h, 2kD_h)`` keys, the rest values;
inside each third, head ``h`` owns the contiguous slice ``[h*D_h, (h+1)*D_h)``.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .tokenizer import ConfigError, PatchConfig, embed, extract_patches

OUTPUT_MODES = ("class_token", "mean_pool")


@dataclass(frozen=True)
class ModelConfig:
    D: int = 512
    heads: int = 8
    depth: int = 20
    mlp_dim: int = 2048
    output_mode: str = "class_token"
    qkv_bias: bool = False

    def __post_init__(self) -> None:
        for name in ("D", "heads", "mlp_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.depth < 0:
            raise ConfigError(f"depth must be non-negative, got {self.depth}")
        if self.D % self.heads:
            raise ConfigError(f"hidden size D={self.D} is not divisible by heads={self.heads}")
        if self.output_mode not in OUTPUT_MODES:
            raise ConfigError(f"output_mode must be one of {OUTPUT_MODES}, got {self.output_mode!r}")

    @property
    def head_dim(self) -> int:
        return self.D // self.heads


@dataclass
class LayerParams:
    ln1_g: Tensor
    ln1_b: Tensor
    qkv_w: Tensor
    proj_w: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor
    qkv_b: Tensor | None = None


@dataclass
class ModelParams:
    """Every learnable array of the backbone (the margin head lives elsewhere)."""

    patch_w: Tensor
    cls_token: Tensor
    pos_embed: Tensor
    layers: list[LayerParams]
    norm_g: Tensor
    norm_b: Tensor

    def named(self) -> "OrderedDict[str, Tensor]":
        out: OrderedDict[str, Tensor] = OrderedDict()
        out["patch_w"] = self.patch_w
        out["cls_token"] = self.cls_token
        out["pos_embed"] = self.pos_embed
        for i, layer in enumerate(self.layers):
            for key, value in vars(layer).items():
                if value is not None:
                    out[f"layers.{i}.{key}"] = value
        out["norm_g"] = self.norm_g
        out["norm_b"] = self.norm_b
        return out

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.named().values())

    def astype(self, dtype) -> "ModelParams":
        for t in self:
            t.data = t.data.astype(dtype)
            t.grad = None
        return self


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    # resample anything beyond two standard deviations
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return x * std


def init_params(
    cfg: ModelConfig, patch_cfg: PatchConfig, rng: np.random.Generator, dtype=np.float64
) -> ModelParams:
    D, M = cfg.D, cfg.mlp_dim

    def p(arr, name):
        return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True, name=name)

    layers = []
    for i in range(cfg.depth):
        pre = f"layers.{i}."
        layers.append(
            LayerParams(
                ln1_g=p(np.ones(D), pre + "ln1_g"),
                ln1_b=p(np.zeros(D), pre + "ln1_b"),
                qkv_w=p(_trunc_normal(rng, (D, 3 * D)), pre + "qkv_w"),
                proj_w=p(_trunc_normal(rng, (D, D)), pre + "proj_w"),
                ln2_g=p(np.ones(D), pre + "ln2_g"),
                ln2_b=p(np.zeros(D), pre + "ln2_b"),
                mlp_w1=p(_trunc_normal(rng, (D, M)), pre + "mlp_w1"),
                mlp_b1=p(np.zeros(M), pre + "mlp_b1"),
                mlp_w2=p(_trunc_normal(rng, (M, D)), pre + "mlp_w2"),
                mlp_b2=p(np.zeros(D), pre + "mlp_b2"),
                qkv_b=p(np.zeros(3 * D), pre + "qkv_b") if cfg.qkv_bias else None,
            )
        )
    return ModelParams(
        patch_w=p(_trunc_normal(rng, (patch_cfg.patch_dim, D)), "patch_w"),
        cls_token=p(_trunc_normal(rng, (1, D)), "cls_token"),
        pos_embed=p(np.zeros((patch_cfg.N + 1, D)), "pos_embed"),
        layers=layers,
        norm_g=p(np.ones(D), "norm_g"),
        norm_b=p(np.zeros(D), "norm_b"),
    )


@dataclass
class AttentionRecord:
    """Attention maps per layer; ``maps[l]`` has shape ``[..., heads, T, T]``."""

    maps: list[np.ndarray] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.maps)

    def select(self, index: int) -> "AttentionRecord":
        """Maps of one image from a batched record."""
        return AttentionRecord([m[index] for m in self.maps])


def self_attention(z: Tensor, w_qkv: Tensor) -> tuple[Tensor, np.ndarray]:
    """Single-head attention; ``w_qkv`` is ``D_in x 3*D_h`` (q | k | v)."""
    q, k, v = T.split_last(T.matmul(z, w_qkv), 3)
    head_dim = q.shape[-1]
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(head_dim))
    attn = T.softmax_rows(scores)
    return T.matmul(attn, v), attn.data


def msa(
    z: Tensor, w_qkv: Tensor, w_proj: Tensor, heads: int, b_qkv: Tensor | None = None
) -> tuple[Tensor, np.ndarray]:
    """Multi-head self-attention over ``z`` of shape ``[..., T, D]``.

    Heads are computed jointly by reshaping to ``[..., heads, T, D_h]``; the
    result equals concatenating per-head :func:`self_attention` outputs and
    projecting with ``w_proj``.  Returns the output and the attention maps
    ``[..., heads, T, T]``.
    """
    *lead, n_tok, D = z.shape
    dh = w_qkv.shape[-1] // (3 * heads)
    qkv = T.matmul(z, w_qkv)
    if b_qkv is not None:
        qkv = T.add(qkv, b_qkv)
    qkv = T.reshape(qkv, (*lead, n_tok, 3, heads, dh))
    nl = len(lead)
    # -> [3, ..., heads, T, dh]
    perm = (nl + 1,) + tuple(range(nl)) + (nl + 2, nl, nl + 3)
    qkv = T.transpose(qkv, perm)
    q, k, v = (T.take(qkv, i, axis=0) for i in range(3))
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(dh))
    attn = T.softmax_rows(scores)
    ctx = T.matmul(attn, v)  # [..., heads, T, dh]
    hperm = tuple(range(nl)) + (nl + 1, nl, nl + 2)
    ctx = T.reshape(T.transpose(ctx, hperm), (*lead, n_tok, heads * dh))
    return T.matmul(ctx, w_proj), attn.data


def mlp(z: Tensor, layer: LayerParams) -> Tensor:
    h = T.gelu(T.add(T.matmul(z, layer.mlp_w1), layer.mlp_b1))
    return T.add(T.matmul(h, layer.mlp_w2), layer.mlp_b2)


def encoder_blocks(
    z: Tensor, params: ModelParams, cfg: ModelConfig, record: AttentionRecord | None = None
) -> Tensor:
    """Apply the pre-LN blocks; returns ``z_L`` (before the final LayerNorm)."""
    for layer in params.layers:
        h = T.layer_norm(z, layer.ln1_g, layer.ln1_b)
        attn_out, attn = msa(h, layer.qkv_w, layer.proj_w, cfg.heads, layer.qkv_b)
        if record is not None:
            record.maps.append(attn)
        z = T.add(attn_out, z)
        z = T.add(mlp(T.layer_norm(z, layer.ln2_g, layer.ln2_b), layer), z)
    return z


def encoder_forward(
    z0: Tensor, params: ModelParams, cfg: ModelConfig, record_attention: bool = False
) -> tuple[Tensor, AttentionRecord | None]:
    """Embedding ``LN(z_L^0)`` (or LN of the mean patch token) for tokens ``z0``."""
    if z0.shape[-1] != cfg.D:
        raise T.ShapeError(f"token width {z0.shape[-1]} != model width {cfg.D}")
    record = AttentionRecord() if record_attention else None
    zL = encoder_blocks(z0, params, cfg, record)
    if cfg.output_mode == "class_token":
        pooled = T.take_row(zL, 0)
    else:
        pooled = T.mean_rows(T.slice_rows(zL, 1))
    return T.layer_norm(pooled, params.norm_g, params.norm_b), record


def embed_images(
    images, params: ModelParams, cfg: ModelConfig, patch_cfg: PatchConfig, record_attention: bool = False
) -> tuple[Tensor, AttentionRecord | None]:
    """Normalised images ``[B, W, W, C]`` (or a single image) to embeddings."""
    patches = extract_patches(images, patch_cfg)
    dtype = params.patch_w.dtype
    if patches.dtype != dtype:
        patches = Tensor(patches.data.astype(dtype))
    z0 = embed(patches, params.patch_w, params.cls_token, params.pos_embed)
    return encoder_forward(z0, params, cfg, record_attention)


@dataclass
class FaceModel:
    """Backbone parameters together with the configs that shape them."""

    cfg: ModelConfig
    patch_cfg: PatchConfig
    params: ModelParams

    @classmethod
    def create(cls, cfg: ModelConfig, patch_cfg: PatchConfig, seed: int = 0, dtype=np.float64) -> "FaceModel":
        rng = np.random.default_rng(seed)
        return cls(cfg, patch_cfg, init_params(cfg, patch_cfg, rng, dtype))

    def embed(self, images, record_attention: bool = False) -> tuple[Tensor, AttentionRecord | None]:
        return embed_images(images, self.params, self.cfg, self.patch_cfg, record_attention)
