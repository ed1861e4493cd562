"""Large-margin nearest neighbor metric learning.

Convex objective over the full PSD matrix M: a pull term shrinks distances
from each point to its target neighbors, a push term hinges on impostors
that invade a unit margin around those neighbors.  Optimized by projected
subgradient descent with backtracking, projecting onto the PSD cone after
every step.  Target-neighbor and impostor structure is enumerated once
under the Euclidean metric and kept fixed.
"""

from __future__ import annotations

import warnings

import numpy as np

from ..metric_core import ConstraintSet, LearnerConfig, MahalanobisMetric, build_constraints

DEFAULT_RANK = 100


def lmnn_objective(M: np.ndarray, X: np.ndarray, constraints: ConstraintSet, mu: float) -> float:
    pull, hinge, _ = _lmnn_terms(M, X, constraints)
    return float((1.0 - mu) * pull + mu * hinge.sum())


def _lmnn_terms(M: np.ndarray, X: np.ndarray, constraints: ConstraintSet):
    pairs = constraints.target_pairs
    trip = constraints.triplets
    d_pull = _sq_form(M, X[pairs[:, 0]] - X[pairs[:, 1]])
    if len(trip):
        d_ij = _sq_form(M, X[trip[:, 0]] - X[trip[:, 1]])
        d_ik = _sq_form(M, X[trip[:, 0]] - X[trip[:, 2]])
        hinge = np.maximum(0.0, 1.0 + d_ij - d_ik)
    else:
        hinge = np.zeros(0)
    return float(d_pull.sum()), hinge, hinge > 0.0


def _sq_form(M: np.ndarray, diffs: np.ndarray) -> np.ndarray:
    return np.einsum("nd,de,ne->n", diffs, M, diffs)


def fit_lmnn(
    X: np.ndarray,
    y: np.ndarray,
    cfg: LearnerConfig | None = None,
    constraints: ConstraintSet | None = None,
) -> MahalanobisMetric:
    """Projected subgradient LMNN.

    Returns a rectangular factor built from the top eigenpairs of the
    learned M, capped at ``cfg.rank`` rows (default 100) or the feature
    dimension if smaller, so the projected space has a fixed width
    regardless of how much of the spectrum the optimum actually uses.
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
    rank = min(cfg.rank if cfg.rank is not None else DEFAULT_RANK, dim)

    pairs = constraints.target_pairs
    pull_diffs = X[pairs[:, 0]] - X[pairs[:, 1]]
    grad_pull = pull_diffs.T @ pull_diffs
    if len(constraints.triplets) == 0 and not np.any(grad_pull):
        warnings.warn("LMNN has no impostors and a zero pull term; returning the identity metric")
        return MahalanobisMetric(np.eye(dim), name="lmnn")

    trip = constraints.triplets
    M = np.eye(dim)
    f = lmnn_objective(M, X, constraints, cfg.mu)
    step = 1.0 / (1.0 + float(np.linalg.norm(grad_pull)))
    for _ in range(cfg.max_iter):
        _, hinge, active = _lmnn_terms(M, X, constraints)
        grad = (1.0 - cfg.mu) * grad_pull
        if np.any(active):
            act = trip[active]
            W = np.zeros((len(X), len(X)))
            np.add.at(W, (act[:, 0], act[:, 1]), 1.0)
            np.add.at(W, (act[:, 0], act[:, 2]), -1.0)
            lap = np.diag(W.sum(axis=1) + W.sum(axis=0)) - W - W.T
            grad = grad + cfg.mu * (X.T @ lap @ X)
        gnorm = float(np.linalg.norm(grad))
        if gnorm == 0.0:
            break
        step *= 2.0
        accepted = False
        while step > 1e-15:
            cand = _psd_project(M - step * grad)
            f_new = lmnn_objective(cand, X, constraints, cfg.mu)
            # Armijo condition phrased on the projected step
            if f_new <= f - (1e-4 / step) * float(np.sum((cand - M) ** 2)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        improvement = f - f_new
        M, f = cand, f_new
        if improvement <= cfg.tol * max(1.0, abs(f)):
            break
    else:
        warnings.warn("LMNN hit the iteration cap before converging")

    vals, vecs = np.linalg.eigh(M)
    vals = np.clip(vals[::-1][:rank], 0.0, None)
    vecs = vecs[:, ::-1][:, :rank]
    factor = (np.sqrt(vals)[:, None] * vecs.T)
    return MahalanobisMetric(factor, name="lmnn")


def _psd_project(M: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((M + M.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * vals) @ vecs.T
