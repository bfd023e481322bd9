"""Desk-scale training on the synthetic identities, with and without overlapping patches.

Trains the toy configuration once per (P, S) setting and reports training
accuracy plus held-out pair accuracy (2-fold thresholds).  Accuracy
differences between the settings at this scale are anecdotal.
"""

import argparse
import csv
import dataclasses
import time
from pathlib import Path

import numpy as np

from facetf.config import load_config
from facetf.cosface import MarginHead
from facetf.encoder import FaceModel
from facetf.evaluate import fold_accuracy, pair_scores
from facetf.trainer import SyntheticDataset, make_pairs, normalize_pixels, train

ROOT = Path(__file__).resolve().parent.parent


def run(cfg, patch_cfg, ds, held, held_labels, log_path=None):
    images, labels = ds.generate()
    dtype = cfg.train.dtype
    model = FaceModel.create(cfg.model, patch_cfg, seed=cfg.train.seed, dtype=dtype)
    head = MarginHead.init(
        int(labels.max()) + 1, cfg.model.D, np.random.default_rng([cfg.train.seed, 1]), s=cfg.train.s, m=cfg.train.m, dtype=dtype
    )
    report = train(model, head, normalize_pixels(images), labels, cfg.train)
    if log_path is not None:
        report.write_csv(log_path)
    emb, _ = model.embed(normalize_pixels(held).astype(dtype))
    scores, same = pair_scores(emb.data, make_pairs(held_labels, np.random.default_rng(0)))
    return report, fold_accuracy(scores, same, folds=2), len(scores)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "toy.cfg")
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--settings", default="4x2,4x4,2x2", help="comma-separated PxS list")
    ap.add_argument("--out", type=Path, help="directory for per-run report CSVs and a summary")
    args = ap.parse_args()

    cfg = load_config(args.config)
    if args.epochs:
        cfg.train = dataclasses.replace(cfg.train, epochs=args.epochs)
    d = cfg.data
    ds = SyntheticDataset(
        seed=d.data_seed, num_identities=d.identities, samples_per_identity=d.samples_per_identity,
        W=cfg.patch.W, C=cfg.patch.C, noise_sigma=d.noise_sigma, max_shift=d.max_shift,
    )
    held, held_labels = ds.holdout(8)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
    rows = []
    for setting in args.settings.split(","):
        P, S = (int(v) for v in setting.split("x"))
        patch_cfg = dataclasses.replace(cfg.patch, P=P, S=S, p=None)
        start = time.perf_counter()
        log_path = args.out / f"report_p{P}s{S}.csv" if args.out else None
        report, pair_acc, n_pairs = run(cfg, patch_cfg, ds, held, held_labels, log_path)
        row = {
            "P": P, "S": S, "N": patch_cfg.N, "epochs": report.final.epoch,
            "train_acc": round(report.final.train_acc, 4), "pair_acc_2fold": round(pair_acc, 4),
            "pairs": n_pairs, "seconds": round(time.perf_counter() - start, 1),
        }
        rows.append(row)
        print(", ".join(f"{k}={v}" for k, v in row.items()), flush=True)
    if args.out:
        with open(args.out / "summary.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main()
