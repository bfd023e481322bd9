"""Labelled image manifests: CSV rows ``relative_path,label_id``."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .ppm import load_image, save_image


class ManifestError(ValueError):
    pass


def read_manifest(path: str | Path) -> list[tuple[Path, int]]:
    path = Path(path)
    root = path.parent
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].startswith("#"):
                continue
            if lineno == 1 and not row[-1].strip().lstrip("-").isdigit():
                continue  # header
            if len(row) != 2:
                raise ManifestError(f"{path}:{lineno}: expected relative_path,label_id")
            rows.append((root / row[0].strip(), int(row[1])))
    if not rows:
        raise ManifestError(f"{path}: manifest is empty")
    labels = sorted({label for _, label in rows})
    if labels != list(range(len(labels))):
        raise ManifestError(f"{path}: labels must be contiguous 0..K-1, got {labels[:5]}...")
    missing = [str(p) for p, _ in rows if not p.exists()]
    if missing:
        raise ManifestError(f"{path}: {len(missing)} referenced files missing, e.g. {missing[0]}")
    return rows


def load_manifest(path: str | Path, side: int, channels: int) -> tuple[np.ndarray, np.ndarray]:
    """Images ``[n, W, W, C]`` in 0..255 and integer labels."""
    rows = read_manifest(path)
    images = np.stack([load_image(p, side, channels) for p, _ in rows])
    return images, np.asarray([label for _, label in rows], dtype=np.int64)


def write_manifest(directory: str | Path, images: np.ndarray, labels: np.ndarray, prefix: str = "img") -> Path:
    """Save images as PPM files plus ``manifest.csv`` inside ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = directory / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["relative_path", "label_id"])
        for i, (img, label) in enumerate(zip(images, labels)):
            name = f"{prefix}_{i:05d}.ppm"
            save_image(directory / name, img)
            w.writerow([name, int(label)])
    return manifest
