"""Column-wise fusion of projected feature spaces.

Two flavors of the same concatenation: feature fusion joins per-feature-kind
projections (one learned metric per kind), metric fusion joins several
metrics' projections of a single feature kind.  Either way the fused space
is a direct sum, so squared Euclidean distances decompose exactly into
per-block sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import container
from .dataset import FeatureSet
from .metric_core import MahalanobisMetric, metric_project


@dataclass(frozen=True)
class BlockDescriptor:
    """Where a fused block came from and where it sits."""

    source_kind: str
    metric_name: str
    dim: int
    offset: int


@dataclass(frozen=True)
class FusedFeatureSet:
    """Concatenated projection blocks sharing one row-id ordering."""

    ids: tuple[str, ...]
    matrix: np.ndarray
    blocks: tuple[BlockDescriptor, ...]

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.float64)
        object.__setattr__(self, "matrix", matrix)
        if matrix.ndim != 2 or matrix.shape[0] != len(self.ids):
            raise ValueError("matrix rows must match id count")
        expected = 0
        for block in self.blocks:
            if block.offset != expected:
                raise ValueError(
                    f"block {block.source_kind}/{block.metric_name} at offset "
                    f"{block.offset}, expected {expected}"
                )
            expected += block.dim
        if expected != matrix.shape[1]:
            raise ValueError(f"block dims sum to {expected}, matrix has {matrix.shape[1]} columns")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def block_view(self, index: int) -> np.ndarray:
        b = self.blocks[index]
        return self.matrix[:, b.offset:b.offset + b.dim]

    def as_feature_set(self, kind: str = "fused") -> FeatureSet:
        return FeatureSet(kind=kind, ids=self.ids, matrix=self.matrix)


def feature_fusion(
    blocks: list[tuple[FeatureSet, str]],
    normalize_blocks: bool = False,
) -> FusedFeatureSet:
    """Concatenate per-kind projections, in the given order.

    Each entry pairs an already-projected FeatureSet with the tag of the
    metric that produced it.  All blocks must list the same ids in the same
    order.  ``normalize_blocks`` divides each block by the root of its mean
    per-column variance, an off-by-default escape hatch for blocks on wildly
    different scales.
    """
    if not blocks:
        raise ValueError("nothing to fuse")
    ids = blocks[0][0].ids
    for fs, _ in blocks[1:]:
        if fs.ids != ids:
            raise ValueError(
                f"id mismatch between blocks {blocks[0][0].kind!r} and {fs.kind!r}"
            )
    descriptors = []
    columns = []
    offset = 0
    for fs, metric_tag in blocks:
        part = fs.matrix
        if normalize_blocks:
            part = _variance_normalized(part)
        columns.append(part)
        descriptors.append(BlockDescriptor(fs.kind, metric_tag, part.shape[1], offset))
        offset += part.shape[1]
    return FusedFeatureSet(ids, np.hstack(columns), tuple(descriptors))


def metric_fusion(
    features: FeatureSet,
    metrics: list[MahalanobisMetric],
    normalize_blocks: bool = False,
) -> FusedFeatureSet:
    """Project one feature kind through several metrics and concatenate."""
    if not metrics:
        raise ValueError("nothing to fuse")
    for m in metrics:
        if m.dim != features.matrix.shape[1]:
            raise ValueError(
                f"metric {m.name!r} expects dim {m.dim}, features have "
                f"{features.matrix.shape[1]}"
            )
    descriptors = []
    columns = []
    offset = 0
    for m in metrics:
        part = metric_project(m, features.matrix)
        if normalize_blocks:
            part = _variance_normalized(part)
        columns.append(part)
        descriptors.append(BlockDescriptor(features.kind, m.name, part.shape[1], offset))
        offset += part.shape[1]
    return FusedFeatureSet(features.ids, np.hstack(columns), tuple(descriptors))


def _variance_normalized(part: np.ndarray) -> np.ndarray:
    scale = float(np.sqrt(part.var(axis=0).mean()))
    return part / scale if scale > 0.0 else part


# ---------------------------------------------------------------------------
# serialization: the standard feature container plus a block-descriptor
# section appended after the id list, so plain feature readers still work
# on fused files (they simply ignore the extra section)

def save_fused(path, fused: FusedFeatureSet, kind: str = "fused") -> None:
    with open(path, "wb") as f:
        container.write_magic(f)
        container.write_u64(f, len(fused.ids))
        container.write_u64(f, fused.dim)
        container.write_str(f, kind)
        f.write(np.ascontiguousarray(fused.matrix, dtype="<f8").tobytes())
        container.write_str_list(f, list(fused.ids))
        container.write_u32(f, len(fused.blocks))
        for b in fused.blocks:
            container.write_str(f, b.source_kind)
            container.write_str(f, b.metric_name)
            container.write_u64(f, b.dim)
            container.write_u64(f, b.offset)


def load_fused(path) -> FusedFeatureSet:
    with open(path, "rb") as f:
        container.read_magic(f)
        n = container.read_u64(f)
        d = container.read_u64(f)
        container.read_str(f)  # stored kind; block descriptors carry the real sources
        payload = container._read_exact(f, n * d * 8)
        matrix = np.frombuffer(payload, dtype="<f8").reshape(n, d).copy()
        ids = tuple(container.read_str_list(f))
        if container.at_eof(f):
            raise container.ContainerError(
                f"{path}: plain feature file, no fused block section"
            )
        blocks = []
        for _ in range(container.read_u32(f)):
            kind = container.read_str(f)
            metric_name = container.read_str(f)
            dim = container.read_u64(f)
            offset = container.read_u64(f)
            blocks.append(BlockDescriptor(kind, metric_name, dim, offset))
    return FusedFeatureSet(ids, matrix, tuple(blocks))
