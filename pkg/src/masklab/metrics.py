"""Deletion and insertion curves with their normalized area under the curve.

Pixels are ranked by the full-resolution heatmap (ties broken in raster order)
and replaced or restored in that order at regular fractions; the confidence of
the perturbed image at each fraction forms the curve.  Deletion should drop
fast, insertion should rise fast.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .models import Scorer, validate_image


@dataclass(frozen=True)
class Curve:
    fractions: np.ndarray   # monotonically increasing, 0 -> 1
    confidences: np.ndarray
    auc: float


def make_curve(fractions, confidences) -> Curve:
    fractions = np.asarray(fractions, dtype=float)
    confidences = np.asarray(confidences, dtype=float)
    if fractions.size != confidences.size:
        raise InputError("fractions and confidences must have equal length")
    if fractions.size < 2:
        raise InputError("a curve needs at least 2 points")
    if np.any(np.diff(fractions) < 0):
        raise InputError("fractions must be non-decreasing")
    value = float(np.trapezoid(confidences, fractions))
    return Curve(fractions=fractions, confidences=confidences, auc=value)


def auc(curve: Curve) -> float:
    """Trapezoidal area under (fractions, confidences)."""
    if curve.fractions.size < 2:
        raise InputError("a curve needs at least 2 points")
    return float(np.trapezoid(curve.confidences, curve.fractions))


def _pixel_order(heatmap):
    # stable sort on the negated map: descending importance, raster-order ties
    return np.argsort(-np.asarray(heatmap, dtype=float).ravel(), kind="stable")


def _ranked_counts(steps, pixel_total):
    return [int(np.ceil(k / steps * pixel_total)) for k in range(steps + 1)]


def _score_steps(scorer, images, class_index):
    return scorer.score_batch(np.stack(images))[:, class_index]


def deletion_curve(scorer: Scorer, image, heatmap, class_index: int,
                   steps: int = 49, baseline=None) -> Curve:
    """Replace pixels with the baseline in decreasing importance order.

    Point k has the top ceil(k/steps * H*W) pixels swapped out; the first point
    is the unmodified image and the last is the full baseline.
    """
    image, baseline, heatmap, steps = _validate_curve_inputs(image, heatmap, steps, baseline)
    order = _pixel_order(heatmap)
    h, w = image.shape[:2]
    rank = np.empty(h * w, dtype=int)
    rank[order] = np.arange(h * w)
    rank = rank.reshape(h, w)

    frames = []
    for n in _ranked_counts(steps, h * w):
        sel = (rank < n)[..., None]
        frames.append(np.where(sel, baseline, image))
    confidences = _score_steps(scorer, frames, class_index)
    return make_curve(np.arange(steps + 1) / steps, confidences)


def insertion_curve(scorer: Scorer, image, heatmap, class_index: int,
                    steps: int = 49, baseline=None) -> Curve:
    """Restore original pixels into the baseline in decreasing importance order."""
    image, baseline, heatmap, steps = _validate_curve_inputs(image, heatmap, steps, baseline)
    order = _pixel_order(heatmap)
    h, w = image.shape[:2]
    rank = np.empty(h * w, dtype=int)
    rank[order] = np.arange(h * w)
    rank = rank.reshape(h, w)

    frames = []
    for n in _ranked_counts(steps, h * w):
        sel = (rank < n)[..., None]
        frames.append(np.where(sel, image, baseline))
    confidences = _score_steps(scorer, frames, class_index)
    return make_curve(np.arange(steps + 1) / steps, confidences)


def _validate_curve_inputs(image, heatmap, steps, baseline):
    image = validate_image(image)
    if baseline is None:
        raise InputError("a baseline image is required")
    baseline = validate_image(baseline)
    if baseline.shape != image.shape:
        raise InputError("image and baseline shapes differ")
    heatmap = np.asarray(heatmap, dtype=float)
    if heatmap.shape != image.shape[:2]:
        raise InputError(
            f"heatmap {heatmap.shape} must match image resolution {image.shape[:2]}; "
            "upsample it first"
        )
    if steps < 2:
        raise InputError("steps must be at least 2")
    return image, baseline, heatmap, steps


# ---------------------------------------------------------------------------
# export


def write_curve_csv(path, curve: Curve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fraction", "confidence"])
        for f, c in zip(curve.fractions, curve.confidences):
            writer.writerow([f"{f:.10g}", f"{c:.10g}"])


def read_curve_csv(path) -> Curve:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["fraction", "confidence"]:
            raise InputError("not a curve CSV")
        rows = [(float(f), float(c)) for f, c in reader]
    return make_curve([r[0] for r in rows], [r[1] for r in rows])


def curve_to_json(curve: Curve) -> str:
    return json.dumps(
        {
            "fractions": [float(v) for v in curve.fractions],
            "confidences": [float(v) for v in curve.confidences],
            "auc": curve.auc,
        },
        sort_keys=True,
    )


def curve_from_json(text: str) -> Curve:
    payload = json.loads(text)
    curve = make_curve(payload["fractions"], payload["confidences"])
    return curve
