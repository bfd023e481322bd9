"""``facetf`` command-line entry point.

Exit codes: 0 ok, 2 usage/config, 3 numerical failure, 4 shape/compatibility.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import attn, evaluate
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import PRESETS, RunConfig, load_config
from .cosface import MarginHead
from .data import ManifestError, load_manifest, write_manifest
from .encoder import FaceModel
from .ppm import ImageFormatError, load_image
from .tensor import ShapeError
from .tokenizer import ConfigError
from .trainer import SyntheticDataset, TrainingDiverged, make_pairs, normalize_pixels, train

log = logging.getLogger("facetf")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_SHAPE = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _setup_logging() -> None:
    level = os.environ.get("FACETF_LOG", "info").upper()
    if level not in ("ERROR", "INFO", "DEBUG"):
        level = "INFO"
    logging.basicConfig(level=getattr(logging, level), format="%(levelname)s %(name)s: %(message)s")


def _threads(args) -> contextlib.AbstractContextManager:
    from threadpoolctl import threadpool_limits

    if args.deterministic:
        return threadpool_limits(1)
    if args.threads:
        return threadpool_limits(args.threads)
    return contextlib.nullcontext()


# --------------------------------------------------------------------- train


def _training_data(cfg: RunConfig) -> tuple[np.ndarray, np.ndarray, SyntheticDataset | None]:
    d = cfg.data
    if d.dataset == "synthetic":
        ds = SyntheticDataset(
            seed=d.data_seed,
            num_identities=d.identities,
            samples_per_identity=d.samples_per_identity,
            W=cfg.patch.W,
            C=cfg.patch.C,
            noise_sigma=d.noise_sigma,
            max_shift=d.max_shift,
        )
        images, labels = ds.generate()
        return images, labels, ds
    manifest = Path(d.dataset)
    if not manifest.is_absolute() and cfg.source is not None:
        manifest = cfg.source.parent / manifest
    images, labels = load_manifest(manifest, cfg.patch.W, cfg.patch.C)
    return images, labels, None


def export_holdout_pairs(ds: SyntheticDataset, per_identity: int, directory: Path, seed: int) -> Path:
    """Write held-out synthetic images and a balanced ``pairs.csv`` next to them."""
    images, labels = ds.holdout(per_identity)
    write_manifest(directory, images, labels, prefix="holdout")
    pairs = make_pairs(labels, np.random.default_rng(seed))
    path = directory / "pairs.csv"
    with open(path, "w") as fh:
        fh.write("path_a,path_b,same\n")
        for a, b, same in pairs:
            fh.write(f"holdout_{a:05d}.ppm,holdout_{b:05d}.ppm,{int(same)}\n")
    return path


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    out = Path(args.out or cfg.out_dir)
    if not out.is_absolute() and args.out is None and cfg.source is not None:
        out = cfg.source.parent / out
    out.mkdir(parents=True, exist_ok=True)
    images, labels, ds = _training_data(cfg)
    n_classes = int(labels.max()) + 1
    dtype = cfg.train.dtype
    model = FaceModel.create(cfg.model, cfg.patch, seed=cfg.train.seed, dtype=dtype)
    head = MarginHead.init(
        n_classes, cfg.model.D, np.random.default_rng([cfg.train.seed, 1]), s=cfg.train.s, m=cfg.train.m, dtype=dtype
    )

    def snapshot(epoch, model, head):
        if cfg.checkpoint_every_epoch:
            save_checkpoint(out / f"checkpoint_epoch{epoch:03d}.ftck", model, head)

    report = train(model, head, normalize_pixels(images), labels, cfg.train, on_epoch_end=snapshot)
    save_checkpoint(out / "checkpoint.ftck", model, head)
    report.write_csv(out / "report.csv")
    if ds is not None and args.holdout:
        pairs = export_holdout_pairs(ds, args.holdout, out / "holdout", cfg.train.seed)
        print(f"held-out pairs: {pairs}")
    f = report.final
    print(f"trained {f.epoch} epochs ({f.step} steps) in {report.seconds:.1f}s: loss {f.loss:.4f}, train acc {f.train_acc:.4f}")
    print(f"checkpoint: {out / 'checkpoint.ftck'}")
    return EXIT_OK


# ---------------------------------------------------------------------- eval


def _load_model(args) -> tuple[FaceModel, MarginHead | None]:
    model, head, _ = load_checkpoint(args.checkpoint, precision="float64")
    return model, head


def embed_paths(model: FaceModel, paths: list[Path], batch: int = 64) -> np.ndarray:
    pc = model.patch_cfg
    out = []
    for lo in range(0, len(paths), batch):
        imgs = np.stack([load_image(p, pc.W, pc.C) for p in paths[lo : lo + batch]])
        emb, _ = model.embed(normalize_pixels(imgs).astype(model.params.patch_w.dtype))
        out.append(emb.data)
    return np.concatenate(out)


def cmd_eval(args) -> int:
    pairs_path = Path(args.pairs)
    pairs = evaluate.read_pairs(pairs_path)
    if not pairs:
        raise UsageError(f"{pairs_path}: no pairs")
    if len(pairs) < args.folds:
        raise UsageError(f"{pairs_path}: {len(pairs)} pairs is fewer than {args.folds} folds")
    model, _ = _load_model(args)
    root = pairs_path.parent
    unique = sorted({p for a, b, _ in pairs for p in (a, b)})
    index = {p: i for i, p in enumerate(unique)}
    emb = embed_paths(model, [root / p for p in unique])
    ia = np.array([index[a] for a, _, _ in pairs])
    ib = np.array([index[b] for _, b, _ in pairs])
    same = np.array([s for _, _, s in pairs])
    scores = evaluate.cosine_similarities(emb[ia], emb[ib])
    metrics = {f"accuracy_{args.folds}fold": evaluate.fold_accuracy(scores, same, args.folds)}
    if same.any() and (~same).any():
        for far, tar in zip(evaluate.DEFAULT_FARS, evaluate.tar_at_far(scores[same], scores[~same])):
            metrics[f"tar@far={far:.0e}"] = tar
    print(evaluate.metrics_table(metrics))
    out = Path(args.out) if args.out else Path(args.checkpoint).with_suffix(".metrics.csv")
    evaluate.write_metrics_csv(out, metrics)
    evaluate.write_scores(out.with_suffix(".scores.csv"), scores, same)
    return EXIT_OK


# ------------------------------------------------------------------- analyze


def cmd_analyze(args) -> int:
    model, _ = _load_model(args)
    pc = model.patch_cfg
    image = load_image(args.image, pc.W, pc.C)
    _, record = model.embed(normalize_pixels(image), record_attention=True)
    rmap = attn.rollout(record, model.cfg.depth)
    dist = attn.mean_attention_distance(record, pc)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    attn.export_heatmap(rmap.class_row, image, pc, out / "rollout_heatmap.ppm")
    dist.write_csv(out / "attention_distance.csv")
    np.savetxt(out / "rollout_class_row.csv", rmap.class_grid(), delimiter=",")
    for layer, row in enumerate(dist.distances):
        print(f"layer {layer:2d}: mean attention distance " + " ".join(f"{d:6.1f}" for d in row) + " px")
    print(f"wrote {out / 'rollout_heatmap.ppm'} and {out / 'attention_distance.csv'}")
    return EXIT_OK


# ------------------------------------------------------------ profile / bench


def _configs(args):
    if args.preset:
        if args.preset not in PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
        return PRESETS[args.preset]
    if args.config:
        cfg = load_config(args.config)
        return cfg.patch, cfg.model
    raise UsageError("give --preset or --config")


def cmd_profile(args) -> int:
    patch_cfg, model_cfg = _configs(args)
    prof = evaluate.profile(model_cfg, patch_cfg, head_classes=args.classes, include_head=args.include_head)
    print(f"tokens: {patch_cfg.N} (+1 class), padding {patch_cfg.pad}")
    print(prof.describe())
    print(f"params={prof.param_count} macs={prof.mac_count}")
    return EXIT_OK


def cmd_bench(args) -> int:
    patch_cfg, model_cfg = _configs(args)
    seed = args.seed or 0
    model = FaceModel.create(model_cfg, patch_cfg, seed=seed, dtype=np.float32)
    rng = np.random.default_rng(seed)
    images = rng.uniform(-1, 1, size=(args.batch, patch_cfg.W, patch_cfg.W, patch_cfg.C)).astype(np.float32)
    model.embed(images)  # warm-up
    start = time.perf_counter()
    for _ in range(args.iters):
        model.embed(images)
    elapsed = time.perf_counter() - start
    print(f"{args.batch * args.iters / elapsed:.2f} img/s (forward only, float32, batch {args.batch})")
    return EXIT_OK


# ---------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--preset", help=f"one of {', '.join(sorted(PRESETS))}")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="BLAS thread count")
    common.add_argument("--deterministic", action="store_true", help="single-threaded, fixed reduction order")

    parser = argparse.ArgumentParser(prog="facetf", description="Face Transformer toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a model from a config")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--holdout", type=int, default=0, help="also write N held-out synthetic images per identity + pairs")
    p.set_defaults(func=cmd_train, needs_config=True)

    p = sub.add_parser("eval", parents=[common], help="verification metrics for a pairs file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs", required=True, help="CSV path_a,path_b,same(0|1)")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--out", help="metrics CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", parents=[common], help="attention rollout heatmap and distances")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("profile", parents=[common], help="parameter and MAC counts")
    p.add_argument("--classes", type=int, default=0, help="head classes (with --include-head)")
    p.add_argument("--include-head", action="store_true")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("bench", parents=[common], help="local forward throughput")
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--iters", type=int, default=3)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if getattr(args, "needs_config", False) and not args.config:
        print("facetf: error: --config is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        with _threads(args):
            return args.func(args)
    except (ConfigError, UsageError, ManifestError) as exc:
        print(f"facetf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"facetf: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CheckpointError, ImageFormatError, ShapeError) as exc:
        print(f"facetf: incompatible input: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except FileNotFoundError as exc:
        print(f"facetf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
