"""Neighborhood components analysis.

Learns a rectangular projection L by gradient ascent on the expected
leave-one-out soft nearest-neighbor accuracy: each point's stochastic
neighbor distribution is a softmax over negative squared projected
distances, and the objective sums the probability mass each point assigns
to its own class.  The problem is non-convex, so the result depends on the
seeded initialization.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..metric_core import LearnerConfig, MahalanobisMetric, _pairwise_sq_dists


@dataclass(frozen=True)
class NcaState:
    """Soft-neighbor probabilities P and per-point class mass Pi at some L."""

    P: np.ndarray    # (N, N), rows sum to 1, zero diagonal
    Pi: np.ndarray   # (N,), in [0, 1]


def nca_state(L: np.ndarray, X: np.ndarray, y: np.ndarray) -> NcaState:
    Z = X @ L.T
    sq = _pairwise_sq_dists(Z)
    logits = -sq
    np.fill_diagonal(logits, -np.inf)
    logits -= logits.max(axis=1, keepdims=True)
    P = np.exp(logits)
    np.fill_diagonal(P, 0.0)
    P /= P.sum(axis=1, keepdims=True)
    same = y[:, None] == y[None, :]
    Pi = (P * same).sum(axis=1)
    return NcaState(P, Pi)


def nca_objective(L: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    return float(nca_state(L, X, y).Pi.sum())


def nca_gradient(L: np.ndarray, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Objective and its analytic gradient with respect to L."""
    state = nca_state(L, X, y)
    same = (y[:, None] == y[None, :]).astype(np.float64)
    np.fill_diagonal(same, 0.0)
    # coefficient on each squared-distance derivative: p_ij * (P_i - [same])
    C = state.P * (state.Pi[:, None] - same)
    lap = np.diag(C.sum(axis=1) + C.sum(axis=0)) - C - C.T
    grad = 2.0 * L @ (X.T @ lap @ X)
    return float(state.Pi.sum()), grad


def fit_nca(X: np.ndarray, y: np.ndarray, cfg: LearnerConfig | None = None) -> MahalanobisMetric:
    """Gradient-ascent NCA with Armijo backtracking line search.

    The projection rank defaults to the number of classes, giving a low-rank
    metric whose projected space has one dimension per category.
    """
    cfg = cfg or LearnerConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("fit_nca needs at least 2 classes")
    rank = cfg.rank if cfg.rank is not None else len(classes)
    L = _discriminant_init(X, y, rank, cfg.seed)

    f, grad = nca_gradient(L, X, y)
    if not np.isfinite(f):
        raise RuntimeError(f"NCA objective non-finite at init (f={f}); feature scale exploding")
    step = 1.0 / (1.0 + float(np.linalg.norm(grad)))
    for _ in range(cfg.max_iter):
        gnorm_sq = float(np.sum(grad * grad))
        if gnorm_sq == 0.0:
            break
        step *= 2.0
        accepted = False
        while step > 1e-14:
            cand = L + step * grad
            f_new = nca_objective(cand, X, y)
            if np.isfinite(f_new) and f_new >= f + 1e-4 * step * gnorm_sq:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        improvement = f_new - f
        L = cand
        f, grad = nca_gradient(L, X, y)
        if not np.isfinite(f):
            raise RuntimeError(f"NCA objective became non-finite (f={f}); aborting")
        if improvement <= cfg.tol * max(1.0, abs(f)):
            break
    else:
        warnings.warn("NCA hit the iteration cap before converging")
    return MahalanobisMetric(L, name="nca")


def _discriminant_init(X: np.ndarray, y: np.ndarray, rank: int, seed: int) -> np.ndarray:
    """Fisher discriminant directions as the starting projection.

    Whitens against the ridge-regularized within-class scatter, keeps the
    leading between-class eigenvectors, and pads with seeded random rows
    when rank exceeds the n_classes - 1 discriminant directions available.
    A random start routinely lands in poor basins; starting from the LDA
    solution costs one eigendecomposition and ascent only improves on it.
    """
    classes = np.unique(y)
    dim = X.shape[1]
    mu = X.mean(axis=0)
    Sw = np.zeros((dim, dim))
    Sb = np.zeros((dim, dim))
    for c in classes:
        Xc = X[y == c]
        mc = Xc.mean(axis=0)
        dc = Xc - mc
        Sw += dc.T @ dc
        Sb += len(Xc) * np.outer(mc - mu, mc - mu)
    ridge = max(1e-3 * float(np.trace(Sw)) / dim, 1e-12)
    ew, Vw = np.linalg.eigh(Sw + ridge * np.eye(dim))
    white = Vw / np.sqrt(np.maximum(ew, 1e-30))
    _, Vb = np.linalg.eigh(white.T @ Sb @ white)
    k = min(rank, len(classes) - 1)
    L = (white @ Vb[:, -k:][:, ::-1]).T
    if rank > k:
        rng = np.random.default_rng(seed)
        extra = rng.standard_normal((rank - k, dim))
        row_norm = float(np.linalg.norm(L, axis=1).mean())
        extra *= row_norm / np.linalg.norm(extra, axis=1, keepdims=True)
        L = np.vstack([L, extra])
    # rescale so projected squared distances are O(1), where the softmax
    # neighbor weights are informative rather than saturated
    n = X.shape[0]
    sample = X if n <= 256 else X[np.linspace(0, n - 1, 256).astype(int)]
    msd = float(_pairwise_sq_dists(sample @ L.T).mean())
    if msd > 0.0:
        L = L / np.sqrt(msd)
    return L
