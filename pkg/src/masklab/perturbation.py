"""Masks, patch grids and the blend operator shared by metrics, optimizers and search.

Masks are plain 2D float arrays with values in [0, 1].  The convention is fixed
project-wide: 1 keeps the original pixel, 0 swaps in the baseline pixel, and the
heatmap shown to users is ``1 - mask``.

Two distinct upsampling paths exist on purpose:

* :func:`upsample` is bilinear (pixel-center alignment) and feeds the
  pixel-ranking step of the counterfactual metrics.
* :func:`apply_mask` expands a low-resolution mask by patch-block replication,
  so a binary patch mask swaps whole patches exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from PIL import Image as PilImage

from .errors import InputError


@dataclass(frozen=True)
class PatchGrid:
    """An ``rows x cols`` tiling of an image; the last row/column absorbs remainder pixels."""

    rows: int
    cols: int
    image_height: int
    image_width: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InputError("grid must have at least one row and one column")
        if self.rows > self.image_height or self.cols > self.image_width:
            raise InputError(
                f"grid {self.rows}x{self.cols} exceeds image "
                f"{self.image_height}x{self.image_width}"
            )

    @property
    def patch_count(self) -> int:
        return self.rows * self.cols

    def row_edges(self) -> np.ndarray:
        base = self.image_height // self.rows
        edges = np.arange(self.rows + 1) * base
        edges[-1] = self.image_height
        return edges

    def col_edges(self) -> np.ndarray:
        base = self.image_width // self.cols
        edges = np.arange(self.cols + 1) * base
        edges[-1] = self.image_width
        return edges

    def patch_slices(self, index: int) -> tuple[slice, slice]:
        if not 0 <= index < self.patch_count:
            raise InputError(f"patch index {index} out of range [0, {self.patch_count})")
        r, c = divmod(index, self.cols)
        re, ce = self.row_edges(), self.col_edges()
        return slice(re[r], re[r + 1]), slice(ce[c], ce[c + 1])

    def pixel_counts(self) -> np.ndarray:
        """Pixels per patch as an ``rows x cols`` array."""
        re, ce = self.row_edges(), self.col_edges()
        return np.outer(np.diff(re), np.diff(ce)).astype(float)

    def row_index_map(self) -> np.ndarray:
        """Patch-row index of every pixel row."""
        base = self.image_height // self.rows
        return np.minimum(np.arange(self.image_height) // base, self.rows - 1)

    def col_index_map(self) -> np.ndarray:
        base = self.image_width // self.cols
        return np.minimum(np.arange(self.image_width) // base, self.cols - 1)


@dataclass(frozen=True)
class PatchSubset:
    """A set of patch indices on a grid; the unit of beam search and SAG nodes."""

    grid: PatchGrid
    members: tuple[int, ...]

    def __post_init__(self):
        ordered = tuple(sorted(self.members))
        if len(set(ordered)) != len(ordered):
            raise InputError("duplicate patch index in subset")
        for m in ordered:
            if not 0 <= m < self.grid.patch_count:
                raise InputError(f"patch index {m} out of range")
        object.__setattr__(self, "members", ordered)

    def __len__(self):
        return len(self.members)

    def as_set(self) -> frozenset:
        return frozenset(self.members)


def validate_mask(mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=float)
    if mask.ndim != 2:
        raise InputError(f"mask must be 2D, got shape {mask.shape}")
    if not np.all(np.isfinite(mask)):
        raise InputError("mask contains non-finite values")
    if mask.min() < 0.0 or mask.max() > 1.0:
        raise InputError("mask values must lie in [0, 1]")
    return mask


def upsample(mask, target_height: int, target_width: int) -> np.ndarray:
    """Bilinear upsampling with pixel-center alignment; output stays in [0, 1]."""
    mask = validate_mask(mask)
    rows, cols = mask.shape
    if target_height < rows or target_width < cols:
        raise InputError(
            f"target {target_height}x{target_width} smaller than mask {rows}x{cols}"
        )

    def axis_weights(src: int, dst: int):
        pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
        pos = np.clip(pos, 0.0, src - 1.0)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, src - 1)
        frac = pos - lo
        return lo, hi, frac

    rlo, rhi, rf = axis_weights(rows, target_height)
    clo, chi, cf = axis_weights(cols, target_width)

    top = mask[rlo][:, clo] * (1 - cf) + mask[rlo][:, chi] * cf
    bot = mask[rhi][:, clo] * (1 - cf) + mask[rhi][:, chi] * cf
    out = top * (1 - rf)[:, None] + bot * rf[:, None]
    return np.clip(out, 0.0, 1.0)


def block_upsample(mask, grid: PatchGrid) -> np.ndarray:
    """Replicate each mask entry over its patch extent (piecewise-constant expansion)."""
    mask = np.asarray(mask, dtype=float)
    if mask.shape != (grid.rows, grid.cols):
        raise InputError(f"mask shape {mask.shape} does not match grid {grid.rows}x{grid.cols}")
    return mask[np.ix_(grid.row_index_map(), grid.col_index_map())]


def pool_sum(values, grid: PatchGrid) -> np.ndarray:
    """Sum a full-resolution ``(H, W)`` array into its ``rows x cols`` patch cells."""
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.image_height, grid.image_width):
        raise InputError("array shape does not match the grid's image size")
    by_rows = np.add.reduceat(values, grid.row_edges()[:-1], axis=0)
    return np.add.reduceat(by_rows, grid.col_edges()[:-1], axis=1)


def pool_mean(values, grid: PatchGrid) -> np.ndarray:
    return pool_sum(values, grid) / grid.pixel_counts()


def apply_mask(image, baseline, mask) -> np.ndarray:
    """Blend image and baseline: ``image * M + baseline * (1 - M)``.

    Low-resolution masks are expanded by patch-block replication, so binary
    patch masks swap whole patches exactly.
    """
    image = np.asarray(image, dtype=float)
    baseline = np.asarray(baseline, dtype=float)
    if image.shape != baseline.shape:
        raise InputError(f"image shape {image.shape} != baseline shape {baseline.shape}")
    mask = validate_mask(mask)
    h, w = image.shape[0], image.shape[1]
    if mask.shape != (h, w):
        grid = PatchGrid(mask.shape[0], mask.shape[1], h, w)
        mask = block_upsample(mask, grid)
    m = mask[..., None] if image.ndim == 3 else mask
    return image * m + baseline * (1.0 - m)


def subset_to_mask(subset: PatchSubset) -> np.ndarray:
    """Binary mask at grid resolution: 1 on member patches, 0 elsewhere."""
    mask = np.zeros((subset.grid.rows, subset.grid.cols), dtype=float)
    for idx in subset.members:
        r, c = divmod(idx, subset.grid.cols)
        mask[r, c] = 1.0
    return mask


def complement_mask(mask) -> np.ndarray:
    return 1.0 - validate_mask(mask)


def mask_to_json(mask) -> str:
    mask = validate_mask(mask)
    payload = {
        "rows": int(mask.shape[0]),
        "cols": int(mask.shape[1]),
        "values": [float(v) for v in mask.ravel()],
    }
    return json.dumps(payload, sort_keys=True)


def mask_from_json(text: str) -> np.ndarray:
    payload = json.loads(text)
    try:
        rows, cols = int(payload["rows"]), int(payload["cols"])
        values = np.asarray(payload["values"], dtype=float)
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed mask JSON: {exc}") from exc
    if values.size != rows * cols:
        raise InputError("mask JSON: values length does not match rows*cols")
    return validate_mask(values.reshape(rows, cols))


def write_mask_png(path, mask) -> None:
    """Grayscale rendering of the heatmap ``1 - mask``."""
    mask = validate_mask(mask)
    gray = np.round((1.0 - mask) * 255.0).astype(np.uint8)
    PilImage.fromarray(gray, mode="L").save(path, format="PNG")
