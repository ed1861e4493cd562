"""Hyperparameter grid search scored by leave-one-out 1-NN error."""

from __future__ import annotations

import itertools
from dataclasses import replace
from typing import Callable

import numpy as np

from ..metric_core import LearnerConfig, MahalanobisMetric, _pairwise_sq_dists, metric_project


def loo_nn_error(metric: MahalanobisMetric, X: np.ndarray, y: np.ndarray) -> float:
    """Leave-one-out nearest-neighbor error rate in the projected space."""
    Z = metric_project(metric, np.asarray(X, dtype=np.float64))
    sq = _pairwise_sq_dists(Z)
    np.fill_diagonal(sq, np.inf)
    nearest = np.argmin(sq, axis=1)
    y = np.asarray(y)
    return float(np.mean(y[nearest] != y))


def grid_search(
    fit: Callable[..., MahalanobisMetric],
    X: np.ndarray,
    y: np.ndarray,
    grid: dict[str, list],
    base: LearnerConfig | None = None,
) -> tuple[LearnerConfig, MahalanobisMetric, float]:
    """Fit at every point of the cartesian grid, keep the lowest 1-NN error.

    Grid order is the deterministic product of the given lists; ties keep
    the earliest candidate, so results do not depend on dict hash order
    beyond the caller's own key ordering.
    """
    base = base or LearnerConfig()
    if not grid:
        metric = fit(X, y, base)
        return base, metric, loo_nn_error(metric, X, y)
    keys = list(grid)
    best: tuple[LearnerConfig, MahalanobisMetric, float] | None = None
    for values in itertools.product(*(grid[k] for k in keys)):
        cfg = replace(base, **dict(zip(keys, values)))
        metric = fit(X, y, cfg)
        err = loo_nn_error(metric, X, y)
        if best is None or err < best[2]:
            best = (cfg, metric, err)
    return best
