"""Metric learning for kernel regression, adapted to categorical targets.

Labels are encoded one-hot and the learner minimizes the leave-one-out
Nadaraya-Watson regression error under a Gaussian kernel whose bandwidth
is absorbed into the learned linear map A: k_ij = exp(-||A x_i - A x_j||^2).
Gradient descent on A with backtracking; non-convex, seeded init.
"""

from __future__ import annotations

import warnings

import numpy as np

from ..metric_core import LearnerConfig, MahalanobisMetric, _pairwise_sq_dists


def one_hot(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Encode labels as rows of the identity, classes in sorted order."""
    classes, codes = np.unique(y, return_inverse=True)
    return np.eye(len(classes))[codes], classes


def mlkr_loss(A: np.ndarray, X: np.ndarray, Y: np.ndarray) -> float:
    loss, _, _ = _mlkr_state(A, X, Y)
    return loss


def mlkr_gradient(A: np.ndarray, X: np.ndarray, Y: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss and analytic gradient with respect to A.

    Raises FloatingPointError when some point's kernel row underflows to
    all zeros, which leaves its prediction undefined.
    """
    loss, K, Yhat = _mlkr_state(A, X, Y)
    S = K.sum(axis=1)
    R = Yhat - Y
    # d loss / d k_ij = 2 <R_i, Y_j - Yhat_i> / S_i, and d k / d sq = -k
    B = R @ Y.T - (R * Yhat).sum(axis=1, keepdims=True)
    W = -2.0 * K * B / S[:, None]
    lap = np.diag(W.sum(axis=1) + W.sum(axis=0)) - W - W.T
    grad = 2.0 * A @ (X.T @ lap @ X)
    return loss, grad


def _mlkr_state(A: np.ndarray, X: np.ndarray, Y: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    Z = X @ A.T
    sq = _pairwise_sq_dists(Z)
    K = np.exp(-sq)
    np.fill_diagonal(K, 0.0)
    S = K.sum(axis=1)
    if np.any(S == 0.0):
        raise FloatingPointError("kernel row underflow: a point sees zero total neighbor weight")
    Yhat = (K @ Y) / S[:, None]
    loss = float(np.sum((Yhat - Y) ** 2))
    return loss, K, Yhat


def fit_mlkr(X: np.ndarray, y: np.ndarray, cfg: LearnerConfig | None = None) -> MahalanobisMetric:
    """Gradient-descent MLKR on one-hot class targets.

    The default rank is the full feature dimension, so the returned factor
    is square and the projected space keeps the input width.  When the
    initial scale underflows every kernel row, the init is re-scaled once;
    a second failure aborts with a diagnostic.
    """
    cfg = cfg or LearnerConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if len(np.unique(y)) < 2:
        raise ValueError("fit_mlkr needs at least 2 classes")
    Y, _ = one_hot(y)
    dim = X.shape[1]
    rank = cfg.rank if cfg.rank is not None else dim

    scale = _init_scale(X, rank)
    if rank == dim:
        A = np.eye(dim) * scale
    else:
        rng = np.random.default_rng(cfg.seed)
        A = rng.standard_normal((rank, dim)) * scale
    try:
        loss, grad = mlkr_gradient(A, X, Y)
    except FloatingPointError:
        A = A * 0.1
        try:
            loss, grad = mlkr_gradient(A, X, Y)
        except FloatingPointError as exc:
            raise RuntimeError(
                "MLKR init underflowed twice; inputs are too spread out for a "
                "Gaussian kernel at any sane scale"
            ) from exc

    step = 1.0 / (1.0 + float(np.linalg.norm(grad)))
    for _ in range(cfg.max_iter):
        gnorm_sq = float(np.sum(grad * grad))
        if gnorm_sq == 0.0:
            break
        step *= 2.0
        accepted = False
        while step > 1e-14:
            cand = A - step * grad
            try:
                f_new = mlkr_loss(cand, X, Y)
            except FloatingPointError:
                step *= 0.5
                continue
            if np.isfinite(f_new) and f_new <= loss - 1e-4 * step * gnorm_sq:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        improvement = loss - f_new
        A = cand
        loss, grad = mlkr_gradient(A, X, Y)
        if improvement <= cfg.tol * max(1.0, abs(loss)):
            break
    else:
        warnings.warn("MLKR hit the iteration cap before converging")
    return MahalanobisMetric(A, name="mlkr")


def _init_scale(X: np.ndarray, rank: int) -> float:
    """Aim the median initial squared projected distance at roughly 4.

    At 4 the median pair starts with kernel weight exp(-4), so predictions
    are already dominated by near neighbors.  Starting at unit scale
    oversmooths: every point averages the whole dataset and the first
    gradients are too flat for the line search to make progress.
    """
    n = X.shape[0]
    sample = X if n <= 256 else X[np.linspace(0, n - 1, 256).astype(int)]
    sq = _pairwise_sq_dists(sample)
    med = float(np.median(sq[np.triu_indices(len(sample), k=1)]))
    if med <= 0.0:
        return 1.0
    # identity init scales every distance by scale^2; a dense Gaussian init
    # of the same variance scales them by rank * scale^2 in expectation
    return 2.0 / np.sqrt(med) if rank == X.shape[1] else 2.0 / np.sqrt(rank * med)
