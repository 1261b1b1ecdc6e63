"""Beam search for minimal sufficient explanations and structured attention graphs.

A subset of grid patches is *sufficient* when the image masked down to those
patches keeps at least ``threshold_ratio`` of the full-image confidence, and
*minimal* when no single patch can be dropped without falling below that bar.
Beam search walks subset sizes level by level; an exhaustive oracle (small
grids only) verifies it.  Diverse minimal subsets become the roots of a
structured attention graph whose descendants show the confidence after
removing one or two patches.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, InputError
from .models import Scorer, validate_image
from .perturbation import PatchGrid, PatchSubset, apply_mask, subset_to_mask


@dataclass
class SearchConfig:
    baseline: np.ndarray
    grid_rows: int = 7
    grid_cols: int = 7
    beam_width: int = 50
    max_subset_size: int = 10
    threshold_ratio: float = 0.9
    diversity_overlap: int = 1

    def __post_init__(self):
        if self.beam_width < 1:
            raise InputError("beam_width must be at least 1")
        if not 0.0 < self.threshold_ratio <= 1.0:
            raise InputError("threshold_ratio must lie in (0, 1]")
        if self.max_subset_size < 1:
            raise InputError("max_subset_size must be at least 1")
        if self.diversity_overlap < 0:
            raise InputError("diversity_overlap must be non-negative")


@dataclass(frozen=True)
class MseRecord:
    subset: PatchSubset
    confidence: float
    minimal: bool


@dataclass(frozen=True)
class SagNode:
    id: int
    patches: tuple[int, ...]
    confidence: float
    is_root: bool


@dataclass
class Sag:
    image_id: str
    class_index: int
    grid_rows: int
    grid_cols: int
    full_confidence: float
    nodes: list[SagNode]
    edges: list[tuple[int, int]]


class ConfidenceCache:
    """Memo table for subset confidences; safe because scorers are pure."""

    def __init__(self):
        self._table: dict[frozenset, float] = {}

    def __len__(self):
        return len(self._table)

    def get(self, key):
        return self._table.get(key)

    def put(self, key, value):
        self._table[key] = value


def confidence_of(scorer: Scorer, image, baseline, subset: PatchSubset,
                  class_index: int, cache: ConfidenceCache | None = None) -> float:
    """Class confidence of the image masked down to the subset's patches."""
    key = subset.as_set()
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit
    masked = apply_mask(image, baseline, subset_to_mask(subset))
    value = float(scorer.score_vector(masked)[class_index])
    if cache is not None:
        cache.put(key, value)
    return value


def _score_subsets(scorer, image, baseline, grid, subsets, class_index, cache):
    """Batch-score a list of frozensets, filling the cache."""
    missing = [s for s in subsets if cache.get(s) is None]
    if missing:
        frames = []
        for s in missing:
            mask = subset_to_mask(PatchSubset(grid, tuple(s)))
            frames.append(apply_mask(image, baseline, mask))
        probs = scorer.score_batch(np.stack(frames))[:, class_index]
        for s, p in zip(missing, probs):
            cache.put(s, float(p))
    return {s: cache.get(s) for s in subsets}


def _sorted_records(records):
    return sorted(records, key=lambda r: (len(r.subset), -r.confidence, r.subset.members))


def beam_search_mse(scorer: Scorer, image, class_index: int, config: SearchConfig,
                    cache: ConfidenceCache | None = None) -> list[MseRecord]:
    """Level-wise beam search over patch subsets for minimal sufficient explanations.

    Every qualifying candidate is recorded and its supersets are pruned from
    expansion; records that fail the one-patch-removal minimality check are
    dropped from the returned list.  An empty result is not an error: it means
    no subset within the size budget reaches the confidence bar.
    """
    image = validate_image(image)
    grid = PatchGrid(config.grid_rows, config.grid_cols, image.shape[0], image.shape[1])
    cache = cache if cache is not None else ConfidenceCache()

    full = frozenset(range(grid.patch_count))
    scores = _score_subsets(scorer, image, config.baseline, grid,
                            [full, frozenset()], class_index, cache)
    full_confidence = scores[full]
    threshold = config.threshold_ratio * full_confidence

    if scores[frozenset()] >= threshold:
        subset = PatchSubset(grid, ())
        return [MseRecord(subset, scores[frozenset()], True)]

    found: list[MseRecord] = []
    found_sets: list[frozenset] = []
    beam = [frozenset()]
    max_size = min(config.max_subset_size, grid.patch_count)

    for _ in range(max_size):
        candidates = set()
        for member in beam:
            for p in range(grid.patch_count):
                if p in member:
                    continue
                cand = member | {p}
                if any(cand >= s for s in found_sets):
                    continue
                candidates.add(cand)
        if not candidates:
            break
        ordered = sorted(candidates, key=lambda s: tuple(sorted(s)))
        conf = _score_subsets(scorer, image, config.baseline, grid,
                              ordered, class_index, cache)

        qualifying = [s for s in ordered if conf[s] >= threshold]
        for s in qualifying:
            minimal = _one_removal_minimal(scorer, image, config.baseline, grid,
                                           s, threshold, class_index, cache)
            record = MseRecord(PatchSubset(grid, tuple(s)), conf[s], minimal)
            if minimal:
                found.append(record)
            found_sets.append(s)

        rest = [s for s in ordered if conf[s] < threshold]
        rest.sort(key=lambda s: (-conf[s], tuple(sorted(s))))
        beam = rest[: config.beam_width]
        if not beam:
            break

    return _sorted_records(found)


def _one_removal_minimal(scorer, image, baseline, grid, subset, threshold,
                         class_index, cache):
    reduced = [subset - {p} for p in sorted(subset)]
    conf = _score_subsets(scorer, image, baseline, grid, reduced, class_index, cache)
    return all(conf[r] < threshold for r in reduced)


def exhaustive_mse(scorer: Scorer, image, class_index: int, config: SearchConfig,
                   cache: ConfidenceCache | None = None) -> list[MseRecord]:
    """Enumerate every subset up to the size budget; the beam search oracle.

    Minimality here means no qualifying proper subset exists, which the
    bottom-up enumeration checks by skipping supersets of found records.
    """
    image = validate_image(image)
    grid = PatchGrid(config.grid_rows, config.grid_cols, image.shape[0], image.shape[1])
    if grid.patch_count > 16:
        raise CapacityError(f"exhaustive search capped at 16 patches, got {grid.patch_count}")
    cache = cache if cache is not None else ConfidenceCache()

    full = frozenset(range(grid.patch_count))
    full_confidence = _score_subsets(scorer, image, config.baseline, grid,
                                     [full], class_index, cache)[full]
    threshold = config.threshold_ratio * full_confidence

    found: list[MseRecord] = []
    found_sets: list[frozenset] = []
    max_size = min(config.max_subset_size, grid.patch_count)
    for size in range(max_size + 1):
        level = [frozenset(c) for c in itertools.combinations(range(grid.patch_count), size)]
        level = [s for s in level if not any(s > f for f in found_sets)]
        if not level:
            continue
        conf = _score_subsets(scorer, image, config.baseline, grid, level, class_index, cache)
        for s in level:
            if conf[s] >= threshold:
                found.append(MseRecord(PatchSubset(grid, tuple(s)), conf[s], True))
                found_sets.append(s)
    return _sorted_records(found)


def diverse_roots(mses: list[MseRecord], overlap_bound: int, max_roots: int) -> list[MseRecord]:
    """Greedy scan keeping records whose patch overlap with every kept one stays bounded."""
    kept: list[MseRecord] = []
    for record in _sorted_records(mses):
        patches = record.subset.as_set()
        if all(len(patches & k.subset.as_set()) <= overlap_bound for k in kept):
            kept.append(record)
            if len(kept) >= max_roots:
                break
    return kept


def build_sag(scorer: Scorer, image, class_index: int, roots: list[MseRecord],
              config: SearchConfig, image_id: str = "image",
              cache: ConfidenceCache | None = None) -> Sag:
    """Roots plus every one- and two-patch removal, deduplicated by subset identity."""
    image = validate_image(image)
    grid = PatchGrid(config.grid_rows, config.grid_cols, image.shape[0], image.shape[1])
    cache = cache if cache is not None else ConfidenceCache()

    full = frozenset(range(grid.patch_count))
    full_confidence = _score_subsets(scorer, image, config.baseline, grid,
                                     [full], class_index, cache)[full]

    ids: dict[frozenset, int] = {}
    is_root: dict[frozenset, bool] = {}
    edges: list[tuple[int, int]] = []
    edge_seen = set()

    def node_id(subset_set, root=False):
        if subset_set not in ids:
            ids[subset_set] = len(ids)
            is_root[subset_set] = root
        elif root:
            is_root[subset_set] = True
        return ids[subset_set]

    def add_edge(parent, child):
        pair = (node_id(parent), node_id(child))
        if pair not in edge_seen:
            edge_seen.add(pair)
            edges.append(pair)

    for record in roots:
        root_set = record.subset.as_set()
        node_id(root_set, root=True)
        for p in sorted(root_set):
            child = root_set - {p}
            add_edge(root_set, child)
            for q in sorted(child):
                add_edge(child, child - {q})

    subset_list = sorted(ids, key=ids.get)
    conf = _score_subsets(scorer, image, config.baseline, grid, subset_list,
                          class_index, cache)
    nodes = [
        SagNode(id=ids[s], patches=tuple(sorted(s)), confidence=conf[s], is_root=is_root[s])
        for s in subset_list
    ]
    return Sag(
        image_id=image_id,
        class_index=class_index,
        grid_rows=grid.rows,
        grid_cols=grid.cols,
        full_confidence=full_confidence,
        nodes=nodes,
        edges=edges,
    )


# ---------------------------------------------------------------------------
# corpus statistics


@dataclass
class CorpusStatistics:
    image_count: int
    subset_sizes: list[int]
    explainable_fraction: list[float]    # cumulative share of images with an MSE <= size
    mse_counts: dict[int, int]           # raw minimal-subset count per image -> images
    diverse_counts: dict[int, int]       # diversity-filtered count per image -> images
    multi_explanation_fraction: float    # share of images with >= 2 diverse roots


def mse_statistics(per_image_mses: list[list[MseRecord]], overlap_bound: int = 1,
                   max_subset_size: int = 10, max_roots: int = 10) -> CorpusStatistics:
    """Explainability-by-budget curve and explanation-count distributions.

    Both the raw minimal-subset counts and their diversity-filtered counts are
    reported, since either could be read as "the number of explanations".
    """
    if not per_image_mses:
        raise InputError("corpus is empty")
    smallest = []
    mse_counts: dict[int, int] = {}
    diverse_counts: dict[int, int] = {}
    multi = 0
    for mses in per_image_mses:
        smallest.append(min((len(r.subset) for r in mses), default=None))
        mse_counts[len(mses)] = mse_counts.get(len(mses), 0) + 1
        diverse = diverse_roots(mses, overlap_bound, max_roots)
        diverse_counts[len(diverse)] = diverse_counts.get(len(diverse), 0) + 1
        if len(diverse) >= 2:
            multi += 1

    total = len(per_image_mses)
    sizes = list(range(1, max_subset_size + 1))
    fractions = [
        sum(1 for s in smallest if s is not None and s <= budget) / total
        for budget in sizes
    ]
    return CorpusStatistics(
        image_count=total,
        subset_sizes=sizes,
        explainable_fraction=fractions,
        mse_counts=dict(sorted(mse_counts.items())),
        diverse_counts=dict(sorted(diverse_counts.items())),
        multi_explanation_fraction=multi / total,
    )


# ---------------------------------------------------------------------------
# SAG serialization


def sag_to_json(sag: Sag) -> str:
    payload = {
        "image_id": sag.image_id,
        "class_index": sag.class_index,
        "grid": {"rows": sag.grid_rows, "cols": sag.grid_cols},
        "full_confidence": sag.full_confidence,
        "nodes": [
            {
                "id": n.id,
                "patches": list(n.patches),
                "confidence": n.confidence,
                "is_root": n.is_root,
            }
            for n in sag.nodes
        ],
        "edges": [{"from": a, "to": b} for a, b in sag.edges],
    }
    return json.dumps(payload, sort_keys=True, indent=2)


def sag_from_json(text: str) -> Sag:
    payload = json.loads(text)
    try:
        nodes = [
            SagNode(
                id=int(n["id"]),
                patches=tuple(int(p) for p in n["patches"]),
                confidence=float(n["confidence"]),
                is_root=bool(n["is_root"]),
            )
            for n in payload["nodes"]
        ]
        sag = Sag(
            image_id=str(payload["image_id"]),
            class_index=int(payload["class_index"]),
            grid_rows=int(payload["grid"]["rows"]),
            grid_cols=int(payload["grid"]["cols"]),
            full_confidence=float(payload["full_confidence"]),
            nodes=nodes,
            edges=[(int(e["from"]), int(e["to"])) for e in payload["edges"]],
        )
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed SAG JSON: {exc}") from exc
    return sag


def sag_to_dot(sag: Sag) -> str:
    lines = ["digraph sag {", "  rankdir=TB;"]
    for n in sag.nodes:
        label = "{" + ",".join(str(p) for p in n.patches) + "}" if n.patches else "{}"
        shape = "doubleoctagon" if n.is_root else "box"
        lines.append(
            f'  n{n.id} [shape={shape}, label="{label}\\n{n.confidence:.3f}"];'
        )
    for a, b in sag.edges:
        lines.append(f"  n{a} -> n{b};")
    lines.append("}")
    return "\n".join(lines) + "\n"
