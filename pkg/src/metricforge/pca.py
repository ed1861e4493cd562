"""Principal-component reduction to a common feature dimension.

Every feature kind gets reduced to the same dimension (512 by default, the
size of the smallest feature family) by projecting onto the leading
eigenvectors of the sample covariance.  Covariance uses the N-1 convention;
rows may optionally be L2-normalized before centering.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import container
from .dataset import FeatureSet

DEFAULT_DIM = 512


@dataclass(frozen=True)
class PcaModel:
    """Mean vector plus orthonormal components ordered by eigenvalue."""

    mean: np.ndarray          # (D,)
    components: np.ndarray    # (k, D), orthonormal rows
    eigenvalues: np.ndarray   # (k,), descending, >= 0
    l2_normalize: bool = False

    @property
    def source_dim(self) -> int:
        return self.mean.shape[0]

    @property
    def k(self) -> int:
        return self.components.shape[0]


def fit_pca(X: FeatureSet | np.ndarray, k: int, l2_normalize: bool = False) -> PcaModel:
    """Leading k eigenpairs of the mean-centered sample covariance.

    Deterministic up to component sign; signs are fixed by making each
    component's largest-magnitude entry positive.  Rank-deficient inputs
    yield zero-eigenvalue trailing components rather than failure.
    """
    matrix = X.matrix if isinstance(X, FeatureSet) else np.asarray(X, dtype=np.float64)
    n, d = matrix.shape
    if n < 2:
        raise ValueError(f"need at least 2 rows to fit PCA, got {n}")
    if not 1 <= k <= min(n, d):
        raise ValueError(f"k={k} out of range [1, min(N,D)={min(n, d)}]")
    if l2_normalize:
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        matrix = np.divide(matrix, norms, out=np.zeros_like(matrix), where=norms > 0)
    mean = matrix.mean(axis=0)
    centered = matrix - mean
    # SVD of the centered data: eigenvalues of the covariance are s^2/(N-1)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    eigenvalues = np.maximum(s[:k] ** 2 / (n - 1), 0.0)
    components = vt[:k].copy()
    for row in components:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    return PcaModel(mean, components, eigenvalues, l2_normalize)


def pca_project(model: PcaModel, X: FeatureSet | np.ndarray) -> np.ndarray:
    """Map rows through the fitted components: (x - mean) @ components.T."""
    matrix = X.matrix if isinstance(X, FeatureSet) else np.asarray(X, dtype=np.float64)
    if matrix.shape[1] != model.source_dim:
        raise ValueError(
            f"dimension mismatch: data D={matrix.shape[1]}, model D={model.source_dim}"
        )
    if model.l2_normalize:
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        matrix = np.divide(matrix, norms, out=np.zeros_like(matrix), where=norms > 0)
    return (matrix - model.mean) @ model.components.T


def project_features(model: PcaModel, features: FeatureSet) -> FeatureSet:
    return features.with_matrix(pca_project(model, features))


def explained_fraction(model: PcaModel, k: int) -> float:
    """Share of computed eigenvalue mass carried by the first ``k`` components.

    The denominator is the sum over the eigenvalues this model computed, so
    fit with k = full rank when the exact total is needed.
    """
    if not 1 <= k <= model.k:
        raise ValueError(f"k={k} out of range [1, {model.k}]")
    total = float(model.eigenvalues.sum())
    if total == 0.0:
        warnings.warn("all eigenvalues are zero; explained fraction undefined, returning 1.0")
        return 1.0
    return float(model.eigenvalues[:k].sum()) / total


def reconstruct(model: PcaModel, projected: np.ndarray) -> np.ndarray:
    """Back-project reduced rows into the source space (lossy off-subspace)."""
    return projected @ model.components + model.mean


def save_pca(path, model: PcaModel) -> None:
    with Path(path).open("wb") as f:
        container.write_magic(f)
        container.write_str(f, "pca-model")
        container.write_u32(f, 1 if model.l2_normalize else 0)
        container.write_str(f, "mean")
        container.write_matrix(f, model.mean)
        container.write_str(f, "components")
        container.write_matrix(f, model.components)
        container.write_str(f, "eigenvalues")
        container.write_matrix(f, model.eigenvalues)


def load_pca(path) -> PcaModel:
    with Path(path).open("rb") as f:
        container.read_magic(f)
        file_type = container.read_str(f)
        if file_type != "pca-model":
            raise container.ContainerError(f"{path}: not a PCA model (type {file_type!r})")
        l2 = bool(container.read_u32(f))
        sections = {}
        for _ in range(3):
            tag = container.read_str(f)
            sections[tag] = container.read_matrix(f)
    return PcaModel(
        sections["mean"].ravel(),
        sections["components"],
        sections["eigenvalues"].ravel(),
        l2,
    )
