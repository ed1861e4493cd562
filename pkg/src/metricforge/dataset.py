"""Feature/label ingestion, task subsets, stratified sampling, CV folds.

On-disk formats
---------------
Feature CSV     header ``id,f0,...,f{D-1}``, UTF-8, decimal floats.
Feature binary  magic ``MFRG``, u32 version, u64 N, u64 D, length-prefixed
                kind tag, N*D little-endian float64 row-major, then a
                length-prefixed id list (readers tolerate its absence and
                fall back to row ordinals).
Label file      header ``id,style,genre,artist``; comma- or tab-separated;
                an empty field means the image is unlabeled for that task.

All values are immutable after construction and safe to share across
concurrent readers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import container

TASKS = ("style", "genre", "artist")
FEATURE_KINDS = ("gist", "classemes", "picodes", "cnn", "synthetic")


class DataError(ValueError):
    """Malformed input data (bad file, bad labels, impossible request)."""


@dataclass(frozen=True)
class FeatureSet:
    """N x D matrix of per-image feature vectors, tagged by feature kind."""

    kind: str
    ids: tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.float64)
        object.__setattr__(self, "matrix", matrix)
        if matrix.ndim != 2:
            raise DataError(f"feature matrix must be 2-D, got shape {matrix.shape}")
        if matrix.shape[0] != len(self.ids):
            raise DataError(
                f"row count {matrix.shape[0]} != id count {len(self.ids)}"
            )
        if not np.all(np.isfinite(matrix)):
            bad = int(np.argwhere(~np.isfinite(matrix))[0][0])
            raise DataError(f"non-finite value in row {bad} (id {self.ids[bad]})")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("duplicate ids in feature set")
        if not self.kind:
            raise DataError("feature kind must be non-empty")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def row_index(self) -> dict[str, int]:
        return {img_id: i for i, img_id in enumerate(self.ids)}

    def select(self, ids: list[str] | tuple[str, ...]) -> "FeatureSet":
        """Rows for ``ids`` in the given order; unknown ids are an error."""
        index = self.row_index()
        try:
            rows = [index[i] for i in ids]
        except KeyError as exc:
            raise DataError(f"unknown image id {exc.args[0]!r}") from None
        return FeatureSet(self.kind, tuple(ids), self.matrix[rows])

    def with_matrix(self, matrix: np.ndarray, kind: str | None = None) -> "FeatureSet":
        return FeatureSet(kind or self.kind, self.ids, matrix)


@dataclass(frozen=True)
class LabelTable:
    """Per-image style/genre/artist annotations; missing labels are None."""

    rows: dict[str, dict[str, str | None]]

    def __post_init__(self):
        for img_id, labels in self.rows.items():
            for task in TASKS:
                value = labels.get(task)
                if value is not None and value == "":
                    raise DataError(f"empty class name for id {img_id!r}")

    @property
    def ids(self) -> list[str]:
        return list(self.rows.keys())

    def get(self, img_id: str, task: str) -> str | None:
        _check_task(task)
        return self.rows[img_id][task]

    def classes(self, task: str) -> list[str]:
        """Distinct class names for a task, lexicographic."""
        _check_task(task)
        return sorted({v[task] for v in self.rows.values() if v[task] is not None})

    def restrict(self, ids) -> "LabelTable":
        return LabelTable({i: dict(self.rows[i]) for i in ids})


@dataclass(frozen=True)
class TaskSubset:
    """Images whose task label belongs to a qualifying class."""

    task: str
    classes: tuple[str, ...]
    member_ids: tuple[str, ...]
    class_index: dict[str, int]

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def codes_for(self, ids) -> np.ndarray:
        """Integer class ordinals aligned with ``ids``."""
        return np.array([self.class_index[i] for i in ids], dtype=np.intp)

    def members_by_class(self) -> list[list[str]]:
        buckets: list[list[str]] = [[] for _ in self.classes]
        for img_id in self.member_ids:
            buckets[self.class_index[img_id]].append(img_id)
        return buckets

    def without(self, excluded_ids) -> "TaskSubset":
        """Same classes, members minus ``excluded_ids`` (sampling exclusion)."""
        excluded = set(excluded_ids)
        kept = tuple(i for i in self.member_ids if i not in excluded)
        index = {i: self.class_index[i] for i in kept}
        return TaskSubset(self.task, self.classes, kept, index)


@dataclass(frozen=True)
class SampleSet:
    """A stratified sample: ids are flagged for exclusion from classification."""

    ids: tuple[str, ...]
    matrix: np.ndarray
    codes: np.ndarray


@dataclass(frozen=True)
class SplitPlan:
    """Stratified k-fold assignment over a subset's members."""

    k: int
    seed: int
    assignment: dict[str, int]

    def fold_ids(self, fold: int) -> list[str]:
        return [i for i, f in self.assignment.items() if f == fold]


@dataclass(frozen=True)
class SyntheticCorpus:
    """Synthetic features + labels plus the ground-truth map for oracles."""

    features: FeatureSet
    labels: LabelTable
    true_map: np.ndarray
    class_names: tuple[str, ...] = field(default=())


def _check_task(task: str) -> None:
    if task not in TASKS:
        raise DataError(f"unknown task {task!r}, expected one of {TASKS}")


# ---------------------------------------------------------------------------
# loading / saving

def load_feature_table(path, format: str = "csv", kind: str | None = None) -> FeatureSet:
    """Load a feature table from ``path`` in the declared format."""
    if format == "csv":
        return _load_features_csv(path, kind)
    if format == "binary":
        return load_features_binary(path, kind)
    raise DataError(f"unknown feature format {format!r}")


def _load_features_csv(path, kind: str | None) -> FeatureSet:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty feature file") from None
        if len(header) < 2 or header[0] != "id":
            raise DataError(f"{path}: bad header, expected id,f0,...")
        dim = len(header) - 1
        ids: list[str] = []
        rows: list[list[float]] = []
        seen: set[str] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} fields, expected {dim + 1}"
                )
            img_id = row[0]
            if img_id in seen:
                raise DataError(f"{path}: duplicate id {img_id!r} at row {lineno}")
            seen.add(img_id)
            try:
                values = [float(v) for v in row[1:]]
            except ValueError:
                raise DataError(f"{path}: non-numeric cell at row {lineno}") from None
            if not all(math.isfinite(v) for v in values):
                raise DataError(f"{path}: non-finite value at row {lineno}")
            ids.append(img_id)
            rows.append(values)
    if not ids:
        raise DataError(f"{path}: no data rows")
    return FeatureSet(kind or "other", tuple(ids), np.array(rows, dtype=np.float64))


def save_features_csv(path, features: FeatureSet) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["id"] + [f"f{i}" for i in range(features.dim)])
        for img_id, row in zip(features.ids, features.matrix):
            # repr of a Python float is its shortest exact form
            writer.writerow([img_id] + [repr(float(v)) for v in row])


def save_features_binary(path, features: FeatureSet) -> None:
    with Path(path).open("wb") as f:
        container.write_magic(f)
        container.write_u64(f, features.n)
        container.write_u64(f, features.dim)
        container.write_str(f, features.kind)
        f.write(np.ascontiguousarray(features.matrix, dtype="<f8").tobytes())
        container.write_str_list(f, list(features.ids))


def load_features_binary(path, kind: str | None = None) -> FeatureSet:
    with Path(path).open("rb") as f:
        container.read_magic(f)
        n = container.read_u64(f)
        dim = container.read_u64(f)
        file_kind = container.read_str(f)
        payload = f.read(n * dim * 8)
        if len(payload) != n * dim * 8:
            raise DataError(f"{path}: truncated feature payload")
        matrix = np.frombuffer(payload, dtype="<f8").reshape(n, dim).copy()
        if container.at_eof(f):
            ids = tuple(str(i) for i in range(n))
        else:
            id_list = container.read_str_list(f)
            if len(id_list) != n:
                raise DataError(f"{path}: id list length {len(id_list)} != N {n}")
            ids = tuple(id_list)
    return FeatureSet(kind or file_kind, ids, matrix)


def load_label_table(path) -> LabelTable:
    path = Path(path)
    with path.open(encoding="utf-8") as f:
        header_line = f.readline()
        if not header_line:
            raise DataError(f"{path}: empty label file")
        delim = "\t" if "\t" in header_line else ","
        header = [h.strip() for h in header_line.rstrip("\n").split(delim)]
        if header != ["id", "style", "genre", "artist"]:
            raise DataError(f"{path}: missing header id,style,genre,artist")
        rows: dict[str, dict[str, str | None]] = {}
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split(delim)
            if len(fields) != 4:
                raise DataError(f"{path}: row {lineno} has {len(fields)} fields")
            img_id = fields[0]
            if img_id in rows:
                raise DataError(f"{path}: duplicate id {img_id!r} at row {lineno}")
            rows[img_id] = {
                task: (value if value else None)
                for task, value in zip(TASKS, fields[1:])
            }
    return LabelTable(rows)


def save_label_table(path, labels: LabelTable) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        f.write("id,style,genre,artist\n")
        for img_id, row in labels.rows.items():
            f.write(",".join([img_id] + [(row[t] or "") for t in TASKS]) + "\n")


# ---------------------------------------------------------------------------
# task subsets / sampling / folds

def select_task_subset(labels: LabelTable, task: str, min_count: int) -> TaskSubset:
    """Keep every class with at least ``min_count`` labeled images.

    Classes are ordered lexicographically so confusion-matrix rows are
    reproducible; an explicit ordering file can override this downstream.
    """
    _check_task(task)
    if min_count < 1:
        raise DataError(f"min_count must be >= 1, got {min_count}")
    counts: dict[str, int] = {}
    for row in labels.rows.values():
        value = row[task]
        if value is not None:
            counts[value] = counts.get(value, 0) + 1
    classes = tuple(sorted(c for c, n in counts.items() if n >= min_count))
    if not classes:
        raise DataError(f"no {task} class has at least {min_count} members")
    keep = set(classes)
    ordinal = {c: i for i, c in enumerate(classes)}
    member_ids = tuple(
        img_id for img_id, row in labels.rows.items()
        if row[task] is not None and row[task] in keep
    )
    class_index = {i: ordinal[labels.rows[i][task]] for i in member_ids}
    return TaskSubset(task, classes, member_ids, class_index)


def stratified_subsample(
    subset: TaskSubset, features: FeatureSet, n: int, seed: int
) -> SampleSet:
    """Draw ``n`` members with per-class counts proportional to class sizes.

    Largest-remainder rounding keeps every class within one item of its exact
    proportional share.  The returned ids are the ones to exclude from
    classification folds.
    """
    members = subset.member_ids
    if n > len(members):
        raise DataError(f"sample size {n} exceeds population {len(members)}")
    buckets = subset.members_by_class()
    total = len(members)
    # exact integer largest-remainder apportionment, ties by class ordinal
    quota = [n * len(b) // total for b in buckets]
    remainder = [n * len(b) % total for b in buckets]
    short = n - sum(quota)
    order = sorted(range(len(buckets)), key=lambda c: (-remainder[c], c))
    for c in order[:short]:
        quota[c] += 1
    rng = np.random.default_rng(seed)
    chosen: list[str] = []
    for c, bucket in enumerate(buckets):
        picked = rng.choice(len(bucket), size=quota[c], replace=False)
        chosen.extend(bucket[i] for i in sorted(picked))
    rows = features.select(chosen)
    return SampleSet(tuple(chosen), rows.matrix, subset.codes_for(chosen))


def make_folds(subset: TaskSubset, k: int, seed: int) -> SplitPlan:
    """Stratified k-fold assignment: within each class fold sizes differ <= 1."""
    if k < 2:
        raise DataError(f"fold count must be >= 2, got {k}")
    rng = np.random.default_rng(seed)
    assignment: dict[str, int] = {}
    for c, bucket in enumerate(subset.members_by_class()):
        if len(bucket) < k:
            raise DataError(
                f"class {subset.classes[c]!r} has {len(bucket)} members, fewer than k={k}"
            )
        order = rng.permutation(len(bucket))
        # rotate the starting fold per class so overall fold sizes stay even
        for pos, idx in enumerate(order):
            assignment[bucket[idx]] = (pos + c) % k
    assignment = {i: assignment[i] for i in subset.member_ids}
    return SplitPlan(k, seed, assignment)


# ---------------------------------------------------------------------------
# synthetic corpus

def generate_synthetic(
    n_classes: int,
    per_class: int,
    ambient_dim: int,
    intrinsic_dim: int | None = None,
    separation: float = 4.0,
    cluster_spread: float = 1.0,
    noise_scale: float = 2.5,
    seed: int = 0,
    kind: str = "synthetic",
    class_means: np.ndarray | None = None,
) -> SyntheticCorpus:
    """Gaussian class clusters hidden behind a random orthonormal mixing map.

    Class structure lives in an intrinsic subspace; the remaining ambient
    directions carry pure noise at ``noise_scale``, so Euclidean geometry in
    ambient coordinates is noise-dominated while the returned ``true_map``
    (intrinsic-subspace projector) recovers clean clusters.  Labels fill all
    three annotation columns so any task can be exercised.
    """
    if n_classes < 1 or per_class < 1 or ambient_dim < 1:
        raise DataError("class count, per-class count and dimension must be positive")
    d_int = intrinsic_dim if intrinsic_dim is not None else n_classes
    if d_int > ambient_dim:
        raise DataError(f"intrinsic dim {d_int} exceeds ambient dim {ambient_dim}")
    rng = np.random.default_rng(seed)
    if class_means is None:
        means = rng.standard_normal((n_classes, d_int)) * separation
    else:
        means = np.asarray(class_means, dtype=np.float64)
        if means.shape != (n_classes, d_int):
            raise DataError(
                f"class_means shape {means.shape} != ({n_classes}, {d_int})"
            )
    n = n_classes * per_class
    codes = np.repeat(np.arange(n_classes), per_class)
    signal = means[codes] + rng.standard_normal((n, d_int)) * cluster_spread
    basis, _ = np.linalg.qr(rng.standard_normal((ambient_dim, ambient_dim)))
    signal_dirs = basis.T[:d_int]          # d_int x D, orthonormal rows
    noise_dirs = basis.T[d_int:]
    X = signal @ signal_dirs
    if ambient_dim > d_int and noise_scale > 0:
        X = X + (rng.standard_normal((n, ambient_dim - d_int)) * noise_scale) @ noise_dirs
    width = len(str(n - 1))
    ids = tuple(f"img{i:0{width}d}" for i in range(n))
    cwidth = len(str(n_classes - 1))
    class_names = tuple(f"c{c:0{cwidth}d}" for c in range(n_classes))
    rows = {
        img_id: {task: class_names[codes[i]] for task in TASKS}
        for i, img_id in enumerate(ids)
    }
    features = FeatureSet(kind, ids, X)
    return SyntheticCorpus(features, LabelTable(rows), signal_dirs, class_names)
