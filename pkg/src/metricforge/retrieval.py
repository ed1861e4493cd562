"""Exact nearest-neighbor search in a projected feature space.

A SearchIndex is just the projected matrix, the row ids, and an optional
label table for label-filtered queries.  Lookups are linear scans; ranking
ties are broken by id so the same query always yields the same gallery.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import LabelTable


@dataclass(frozen=True)
class SearchIndex:
    """Immutable id-aligned matrix of projected points."""

    ids: tuple[str, ...]
    matrix: np.ndarray
    labels: LabelTable | None = None

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.float64)
        object.__setattr__(self, "matrix", matrix)
        if matrix.ndim != 2:
            raise ValueError(f"matrix must be 2-D, got shape {matrix.shape}")
        if matrix.shape[0] != len(self.ids):
            raise ValueError(
                f"{len(self.ids)} ids for {matrix.shape[0]} rows: misaligned index inputs"
            )
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate ids in index")

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def row(self, img_id: str) -> np.ndarray:
        try:
            return self.matrix[self.ids.index(img_id)]
        except ValueError:
            raise KeyError(f"unknown id {img_id!r}") from None


def build_index(X: np.ndarray, ids, labels: LabelTable | None = None) -> SearchIndex:
    return SearchIndex(tuple(ids), np.asarray(X, dtype=np.float64), labels)


def nearest(index: SearchIndex, query: np.ndarray, k: int) -> list[tuple[str, float]]:
    """The k closest stored points, ascending by (distance, id)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (index.dim,):
        raise ValueError(f"query shape {query.shape} does not match index dim {index.dim}")
    if k > index.n:
        warnings.warn(f"k={k} exceeds index size {index.n}; returning all points")
        k = index.n
    dists = np.sqrt(np.maximum(np.sum((index.matrix - query) ** 2, axis=1), 0.0))
    ranked = sorted(range(index.n), key=lambda i: (dists[i], index.ids[i]))
    return [(index.ids[i], float(dists[i])) for i in ranked[:k]]


def nearest_excluding(
    index: SearchIndex, query_id: str, label_field: str, k: int
) -> list[tuple[str, float]]:
    """Closest points whose label on ``label_field`` differs from the query's.

    The query point itself is always excluded; so are points without a label
    on the field, since their difference cannot be established.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if index.labels is None:
        raise ValueError("index was built without labels")
    if query_id not in index.labels.rows:
        raise ValueError(f"query {query_id!r} is not in the label table")
    query_label = index.labels.get(query_id, label_field)
    if query_label is None:
        raise ValueError(f"query {query_id!r} has no {label_field!r} label")
    query = index.row(query_id)

    known = index.labels.rows
    candidates = []
    for i, img_id in enumerate(index.ids):
        if img_id == query_id or img_id not in known:
            continue
        label = index.labels.get(img_id, label_field)
        if label is not None and label != query_label:
            candidates.append(i)
    if not candidates:
        raise ValueError(f"no items labeled differently from {query_label!r} on {label_field!r}")
    if k > len(candidates):
        warnings.warn(
            f"k={k} exceeds the {len(candidates)} differently-labeled items; returning all"
        )
        k = len(candidates)
    sub = index.matrix[candidates]
    dists = np.sqrt(np.maximum(np.sum((sub - query) ** 2, axis=1), 0.0))
    ranked = sorted(range(len(candidates)), key=lambda j: (dists[j], index.ids[candidates[j]]))
    return [(index.ids[candidates[j]], float(dists[j])) for j in ranked[:k]]


def results_to_csv(path, results: dict[str, list[tuple[str, float]]],
                   labels: LabelTable | None = None, label_field: str = "style") -> None:
    """One row per hit: query_id, rank, hit_id, distance, hit_label."""
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["query_id", "rank", "hit_id", "distance", "hit_label"])
        for query_id in results:
            for rank, (hit_id, dist) in enumerate(results[query_id], start=1):
                hit_label = ""
                if labels is not None and hit_id in labels.rows:
                    hit_label = labels.get(hit_id, label_field) or ""
                writer.writerow([query_id, rank, hit_id, f"{dist:.12g}", hit_label])
