"""Boosting-based Mahalanobis metric learning.

The PSD matrix is assembled as a nonnegative combination of trace-one
rank-one matrices, found one per round in AdaBoost fashion: a weight
distribution over triplet constraints selects the rank-one direction that
maximizes the weighted margin (the leading eigenvector of the weighted
constraint sum), the direction's coefficient follows from its edge, and
constraint weights are re-exponentiated against the new margins.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..metric_core import (
    ConstraintSet,
    LearnerConfig,
    MahalanobisMetric,
    build_constraints,
    psd_square_root,
)


@dataclass(frozen=True)
class BoostState:
    """Per-round trace of a boosting run.

    violations[t] counts triplets whose accumulated margin is still
    non-positive after round t; the sequence is the learner's own measure
    of progress and should trend down on separable data.
    """

    directions: np.ndarray   # (rounds, D) unit eigenvectors
    weights: np.ndarray      # (rounds,) nonnegative coefficients
    margins: np.ndarray      # (T,) final per-triplet margins
    violations: tuple[int, ...]
    edges: tuple[float, ...]


def fit_boostmetric(
    X: np.ndarray,
    y: np.ndarray,
    cfg: LearnerConfig | None = None,
    constraints: ConstraintSet | None = None,
) -> MahalanobisMetric:
    metric, _ = boost_train(X, y, cfg, constraints)
    return metric


def boost_train(
    X: np.ndarray,
    y: np.ndarray,
    cfg: LearnerConfig | None = None,
    constraints: ConstraintSet | None = None,
) -> tuple[MahalanobisMetric, BoostState]:
    """Run the boosting loop and return the metric plus its round trace.

    The returned factor is the square PSD square root of the assembled M,
    so projecting with it keeps the ambient feature width.
    """
    cfg = cfg or LearnerConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if constraints is None:
        constraints = build_constraints(
            X, y, kappa=cfg.kappa, margin=cfg.margin,
            pair_cap=cfg.pair_cap, triplet_cap=cfg.triplet_cap, seed=cfg.seed,
        )
    dim = X.shape[1]
    trip = constraints.triplets
    if len(trip) == 0:
        warnings.warn("no triplet constraints; boosting returns the identity metric")
        eye = np.eye(dim)
        return (
            MahalanobisMetric(eye, name="boost"),
            BoostState(np.zeros((0, dim)), np.zeros(0), np.zeros(0), (), ()),
        )

    d_ij = X[trip[:, 0]] - X[trip[:, 1]]
    d_ik = X[trip[:, 0]] - X[trip[:, 2]]
    n_trip = len(trip)
    u = np.full(n_trip, 1.0 / n_trip)
    rho = np.zeros(n_trip)

    directions: list[np.ndarray] = []
    weights: list[float] = []
    violations: list[int] = []
    edges: list[float] = []
    for _ in range(cfg.max_weak_learners):
        # weighted constraint matrix: sum_c u_c (d_ik d_ik^T - d_ij d_ij^T)
        A_hat = d_ik.T @ (u[:, None] * d_ik) - d_ij.T @ (u[:, None] * d_ij)
        vals, vecs = np.linalg.eigh((A_hat + A_hat.T) / 2.0)
        lam, z = vals[-1], vecs[:, -1]
        if lam <= cfg.tol:
            break
        h = (d_ik @ z) ** 2 - (d_ij @ z) ** 2
        h_max = float(np.abs(h).max())
        if h_max == 0.0:
            break
        edge = min(float(u @ h) / h_max, 1.0 - 1e-12)
        alpha = 0.5 * np.log((1.0 + edge) / (1.0 - edge))
        w = alpha / h_max
        directions.append(z)
        weights.append(w)
        edges.append(edge)
        rho += w * h
        violations.append(int(np.sum(rho <= 0.0)))
        u *= np.exp(-w * h)
        u /= u.sum()

    if not directions:
        warnings.warn("no weak learner had positive edge; boosting returns the identity metric")
        return (
            MahalanobisMetric(np.eye(dim), name="boost"),
            BoostState(np.zeros((0, dim)), np.zeros(0), rho, (), ()),
        )
    Z = np.asarray(directions)
    wvec = np.asarray(weights)
    M = (Z.T * wvec) @ Z
    factor = psd_square_root(M)
    state = BoostState(Z, wvec, rho, tuple(violations), tuple(edges))
    return MahalanobisMetric(factor, name="boost"), state
