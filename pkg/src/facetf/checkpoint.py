"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"FTCK" | u32 version | u32 header_len | header (UTF-8 JSON) | blobs

The header carries the patch/model configs, head size and constants, the
scalar precision, and an ordered manifest of ``{"name", "shape"}``.  Blobs
are the parameters in manifest order, raw little-endian at that precision.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .cosface import MarginHead
from .encoder import FaceModel, ModelConfig, init_params
from .tensor import Tensor
from .tokenizer import PatchConfig

MAGIC = b"FTCK"
VERSION = 1
HEAD_NAME = "head.class_weights"


class CheckpointError(ValueError):
    pass


def _patch_dict(cfg: PatchConfig) -> dict:
    return {"W": cfg.W, "C": cfg.C, "P": cfg.P, "S": cfg.S, "p": cfg.pad}


def _named(model: FaceModel, head: MarginHead | None) -> list[tuple[str, Tensor]]:
    items = list(model.params.named().items())
    if head is not None:
        items.append((HEAD_NAME, head.class_weights))
    return items


def save_checkpoint(path: str | Path, model: FaceModel, head: MarginHead | None = None) -> None:
    items = _named(model, head)
    dtypes = {t.dtype for _, t in items}
    if len(dtypes) != 1:
        raise CheckpointError(f"mixed parameter precisions {sorted(map(str, dtypes))}")
    dtype = np.dtype(dtypes.pop())
    header = {
        "patch": _patch_dict(model.patch_cfg),
        "model": dataclasses.asdict(model.cfg),
        "head": None if head is None else {"num_classes": head.num_classes, "s": head.s, "m": head.m},
        "precision": dtype.name,
        "manifest": [{"name": name, "shape": list(t.shape)} for name, t in items],
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    le = dtype.newbyteorder("<")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(raw)))
        fh.write(raw)
        for _, t in items:
            fh.write(np.ascontiguousarray(t.data, dtype=le).tobytes())


def read_header(path: str | Path) -> tuple[dict, int]:
    """Parsed header and the byte offset where blobs begin."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        version, length = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(length).decode("utf-8"))
    return header, 12 + length


def load_checkpoint(
    path: str | Path, precision: str | None = None, allow_downcast: bool = False
) -> tuple[FaceModel, MarginHead | None, dict]:
    """Load a model (and head, if stored).

    ``precision`` selects the in-memory dtype; upcasting is lossless, while
    loading into a narrower type needs ``allow_downcast``.
    """
    header, offset = read_header(path)
    stored = np.dtype(header["precision"])
    target = np.dtype(precision) if precision else stored
    if target.itemsize < stored.itemsize and not allow_downcast:
        raise CheckpointError(f"refusing to downcast {stored} checkpoint to {target} without allow_downcast")
    p = header["patch"]
    patch_cfg = PatchConfig(W=p["W"], C=p["C"], P=p["P"], S=p["S"], p=p["p"])
    model_cfg = ModelConfig(**header["model"])
    # rebuild the expected manifest from the configs and insist on agreement
    expected = init_params(model_cfg, patch_cfg, np.random.default_rng(0), dtype=stored)
    model = FaceModel(model_cfg, patch_cfg, expected)
    head = None
    if header["head"] is not None:
        h = header["head"]
        head = MarginHead(Tensor(np.zeros((h["num_classes"], model_cfg.D), dtype=stored), requires_grad=True, name=HEAD_NAME), h["s"], h["m"])
    items = _named(model, head)
    manifest = [(m["name"], tuple(m["shape"])) for m in header["manifest"]]
    if manifest != [(n, t.shape) for n, t in items]:
        raise CheckpointError(f"{path}: parameter manifest does not match the stored configs")
    blob = Path(path).read_bytes()[offset:]
    le = stored.newbyteorder("<")
    pos = 0
    for _, t in items:
        nbytes = t.data.size * stored.itemsize
        if pos + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated parameter data")
        t.data = np.frombuffer(blob, dtype=le, count=t.data.size, offset=pos).reshape(t.shape).astype(target)
        pos += nbytes
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes")
    return model, head, header
