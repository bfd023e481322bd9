"""Write the synthetic identity set as PPM files plus manifest.csv, and a held-out pairs file."""

import argparse
from pathlib import Path

import numpy as np

from facetf.cli import export_holdout_pairs
from facetf.data import write_manifest
from facetf.trainer import SyntheticDataset


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=Path)
    ap.add_argument("--identities", type=int, default=8)
    ap.add_argument("--samples", type=int, default=32)
    ap.add_argument("--holdout", type=int, default=8, help="held-out images per identity")
    ap.add_argument("--side", type=int, default=28)
    ap.add_argument("--channels", type=int, default=1)
    ap.add_argument("--noise", type=float, default=20.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    ds = SyntheticDataset(
        seed=args.seed, num_identities=args.identities, samples_per_identity=args.samples,
        W=args.side, C=args.channels, noise_sigma=args.noise,
    )
    images, labels = ds.generate()
    manifest = write_manifest(args.out / "train", images, labels)
    pairs = export_holdout_pairs(ds, args.holdout, args.out / "holdout", args.seed)
    print(f"{len(labels)} training images -> {manifest}")
    print(f"held-out pairs -> {pairs} ({sum(1 for _ in open(pairs)) - 1} pairs)")


if __name__ == "__main__":
    main()
