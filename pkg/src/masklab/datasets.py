"""Synthetic dataset with planted, individually sufficient evidence.

Three classes on 32x32 grayscale images:

* class 0: noise background only,
* class 1: two "bar pair" stamps, a bright vertical bar with a dim parallel
  companion four pixels away,
* class 2: two bright plus-sign stamps.

The two stamps in a class-1 or class-2 image are spatially disjoint and each
carries the full class evidence, so multiple explanations exist by
construction (training reinforces this by occasionally blurring one stamp
away, see the trainer).  The bar classes share a sub-feature: a lone bright
bar could belong to either a bar pair or a plus, so partial views of a stamp
are genuinely ambiguous and classifier confidence grades with how much of a
stamp is visible.  The background-only class gives heavily blurred images a
low-confidence home, which baseline construction relies on.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PilImage

from .errors import InputError

IMAGE_SIZE = 32
STAMP_SIZE = 7
_MIN_CENTER_DISTANCE = 16  # Chebyshev distance keeping the two stamps apart


def _bar_pair_stamp():
    s = np.zeros((STAMP_SIZE, STAMP_SIZE))
    s[:, 1] = 0.95
    s[:, 5] = 0.5
    return s


def _plus_stamp():
    s = np.zeros((STAMP_SIZE, STAMP_SIZE))
    s[STAMP_SIZE // 2, :] = 0.95
    s[:, STAMP_SIZE // 2] = 0.95
    return s


@dataclass(frozen=True)
class SyntheticDataset:
    images: np.ndarray  # (N, 32, 32, 1) in [0, 1]
    labels: np.ndarray  # (N,) int class indices
    feature_centers: np.ndarray  # (N, 2, 2) stamp centers (y, x); -1 for class 0
    generator_seed: int

    def __len__(self):
        return self.images.shape[0]


def make_dataset(seed: int = 0, size: int = 450) -> SyntheticDataset:
    """Regenerable from the seed alone; same seed, bit-identical arrays."""
    if size < 1:
        raise InputError("dataset size must be positive")
    rng = np.random.default_rng(seed)
    stamps = {1: _bar_pair_stamp(), 2: _plus_stamp()}
    images = np.empty((size, IMAGE_SIZE, IMAGE_SIZE, 1))
    labels = np.empty(size, dtype=int)
    centers = np.full((size, 2, 2), -1, dtype=int)
    margin = STAMP_SIZE // 2
    lo, hi = margin, IMAGE_SIZE - margin  # valid stamp-center range

    for i in range(size):
        label = i % 3
        img = rng.uniform(0.0, 0.3, size=(IMAGE_SIZE, IMAGE_SIZE))
        if label:
            for j, (cy, cx) in enumerate(_two_far_centers(rng, lo, hi)):
                ys = slice(cy - margin, cy + margin + 1)
                xs = slice(cx - margin, cx + margin + 1)
                stamp = stamps[label]
                img[ys, xs] = np.where(stamp > 0, stamp, img[ys, xs])
                centers[i, j] = (cy, cx)
        images[i, :, :, 0] = img
        labels[i] = label
    return SyntheticDataset(images=images, labels=labels,
                            feature_centers=centers, generator_seed=seed)


def _two_far_centers(rng, lo, hi):
    while True:
        ys = rng.integers(lo, hi, size=2)
        xs = rng.integers(lo, hi, size=2)
        if max(abs(int(ys[0]) - int(ys[1])), abs(int(xs[0]) - int(xs[1]))) >= _MIN_CENTER_DISTANCE:
            return [(int(ys[0]), int(xs[0])), (int(ys[1]), int(xs[1]))]


def write_image_png(path, image) -> None:
    arr = np.asarray(image, dtype=float)
    gray = np.round(arr[:, :, 0] * 255.0).astype(np.uint8)
    PilImage.fromarray(gray, mode="L").save(path, format="PNG")


def read_image_png(path) -> np.ndarray:
    with PilImage.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=float) / 255.0
    return arr[:, :, None]


def dump_dataset(dataset: SyntheticDataset, directory, count: int | None = None) -> list[str]:
    """Write images as PNGs plus a labels CSV; returns the file names written."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    count = len(dataset) if count is None else min(count, len(dataset))
    written = []
    rows = []
    for i in range(count):
        name = f"img_{i:04d}.png"
        write_image_png(directory / name, dataset.images[i])
        rows.append((name, int(dataset.labels[i])))
        written.append(name)
    with open(directory / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "label"])
        writer.writerows(rows)
    written.append("labels.csv")
    return written
