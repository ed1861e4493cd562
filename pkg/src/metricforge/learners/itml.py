"""Information-theoretic metric learning.

Starts from the identity and makes cyclic Bregman projections onto one
pair constraint at a time: similar pairs are pushed under an upper bound u,
dissimilar pairs above a lower bound v, each via a rank-one update that
stays as close as possible to the previous M in LogDet divergence.  The
slack parameter gamma trades constraint satisfaction against staying near
the identity; bounds default to the 5th and 95th percentiles of the
squared Euclidean pair distances in the data.
"""

from __future__ import annotations

import warnings

import numpy as np

from ..metric_core import (
    ConstraintSet,
    LearnerConfig,
    MahalanobisMetric,
    build_constraints,
    psd_square_root,
)

_BOUND_SAMPLE_CAP = 100_000


def default_bounds(X: np.ndarray, seed: int = 0) -> tuple[float, float]:
    """5th/95th percentiles of squared Euclidean distances over point pairs."""
    n = len(X)
    total = n * (n - 1) // 2
    if total <= _BOUND_SAMPLE_CAP:
        ii, jj = np.triu_indices(n, k=1)
    else:
        rng = np.random.default_rng(seed)
        ii = rng.integers(0, n, size=_BOUND_SAMPLE_CAP)
        jj = rng.integers(0, n, size=_BOUND_SAMPLE_CAP)
        keep = ii != jj
        ii, jj = ii[keep], jj[keep]
    sq = np.sum((X[ii] - X[jj]) ** 2, axis=1)
    lo, hi = np.percentile(sq, [5.0, 95.0])
    lo = max(float(lo), 1e-12)
    hi = max(float(hi), lo)
    return lo, hi


def fit_itml(
    X: np.ndarray,
    y: np.ndarray,
    cfg: LearnerConfig | None = None,
    constraints: ConstraintSet | None = None,
) -> MahalanobisMetric:
    """Cyclic Bregman projections with slack.

    Convergence is declared when the relative change of the dual variables
    between sweeps drops below ``cfg.tol``.  The factor is the square PSD
    square root of M, keeping the ambient width.
    """
    cfg = cfg or LearnerConfig()
    if cfg.gamma <= 0.0:
        raise ValueError(f"gamma must be > 0, got {cfg.gamma}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if constraints is None:
        constraints = build_constraints(
            X, y, kappa=cfg.kappa, margin=cfg.margin,
            pair_cap=cfg.pair_cap, triplet_cap=cfg.triplet_cap, seed=cfg.seed,
        )
    dim = X.shape[1]

    if cfg.u is None or cfg.v is None:
        lo, hi = default_bounds(X, seed=cfg.seed)
        u = cfg.u if cfg.u is not None else lo
        v = cfg.v if cfg.v is not None else hi
        if u > v:
            u = v
    else:
        u, v = cfg.u, cfg.v

    pairs = np.vstack([constraints.similar, constraints.dissimilar])
    n_sim = len(constraints.similar)
    if len(pairs) == 0:
        warnings.warn("no pair constraints; ITML returns the identity metric")
        return MahalanobisMetric(np.eye(dim), name="itml")
    diffs = X[pairs[:, 0]] - X[pairs[:, 1]]
    # a zero difference vector admits no projection in either direction
    live = np.sum(diffs * diffs, axis=1) > 1e-30
    bounds = np.where(np.arange(len(pairs)) < n_sim, u, v)

    gamma = cfg.gamma
    gamma_proj = gamma / (gamma + 1.0)
    duals = np.zeros(len(pairs))
    duals_prev = duals.copy()
    bhat = bounds.astype(np.float64).copy()
    M = np.eye(dim)

    for _ in range(cfg.sweeps):
        for idx in range(len(pairs)):
            if not live[idx]:
                continue
            d = diffs[idx]
            Md = M @ d
            wtw = float(d @ Md)
            if wtw <= 1e-30:
                continue
            if idx < n_sim:
                alpha = min(duals[idx], gamma_proj * (1.0 / wtw - 1.0 / bhat[idx]))
                beta = alpha / (1.0 - alpha * wtw)
                bhat[idx] = 1.0 / (1.0 / bhat[idx] + alpha / gamma)
            else:
                alpha = min(duals[idx], gamma_proj * (1.0 / bhat[idx] - 1.0 / wtw))
                beta = -alpha / (1.0 + alpha * wtw)
                bhat[idx] = 1.0 / (1.0 / bhat[idx] - alpha / gamma)
            duals[idx] -= alpha
            if beta != 0.0:
                M += beta * np.outer(Md, Md)
        norm = float(np.linalg.norm(duals))
        change = float(np.linalg.norm(duals - duals_prev))
        duals_prev = duals.copy()
        if change == 0.0 or (norm > 0.0 and change / norm < cfg.tol):
            break
    else:
        warnings.warn("ITML hit the sweep cap before the duals settled")

    M = (M + M.T) / 2.0
    return MahalanobisMetric(psd_square_root(M), name="itml")
