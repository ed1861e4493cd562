"""Generalized Mahalanobis metrics, factorization, and label constraints.

A metric is carried by its rectangular factor G with M = G'G; distances are
computed as the Euclidean norm of G(x - x'), which is both cheaper and
numerically safer than the explicit quadratic form, and makes projection and
distance trivially consistent.  M is materialized only on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import container

PSD_TOL = 1e-8  # relative to the largest eigenvalue


@dataclass(frozen=True)
class MahalanobisMetric:
    """PSD metric M = factor' @ factor, represented by its factor."""

    factor: np.ndarray            # (r, D)
    name: str = "metric"
    provenance: str = ""

    def __post_init__(self):
        factor = np.asarray(self.factor, dtype=np.float64)
        if factor.ndim != 2:
            raise ValueError(f"factor must be 2-D, got shape {factor.shape}")
        if not np.all(np.isfinite(factor)):
            raise ValueError("factor contains non-finite values")
        object.__setattr__(self, "factor", factor)

    @property
    def dim(self) -> int:
        return self.factor.shape[1]

    @property
    def rank(self) -> int:
        return self.factor.shape[0]

    def matrix(self) -> np.ndarray:
        """Materialize M = G'G (D x D, symmetric PSD)."""
        m = self.factor.T @ self.factor
        return (m + m.T) / 2.0

    @staticmethod
    def identity(dim: int, name: str = "identity") -> "MahalanobisMetric":
        return MahalanobisMetric(np.eye(dim), name=name)

    def with_provenance(self, provenance: str) -> "MahalanobisMetric":
        return replace(self, provenance=provenance)


def mahalanobis_distance(metric: MahalanobisMetric, x: np.ndarray, y: np.ndarray) -> float:
    """d(x, y) = ||G (x - y)||, the generalized Mahalanobis distance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != (metric.dim,) or y.shape != (metric.dim,):
        raise ValueError(
            f"dimension mismatch: metric D={metric.dim}, got {x.shape} and {y.shape}"
        )
    return float(np.linalg.norm(metric.factor @ (x - y)))


def metric_project(metric: MahalanobisMetric, X: np.ndarray) -> np.ndarray:
    """Project rows through G; Euclidean distance afterwards equals d_M."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != metric.dim:
        raise ValueError(f"dimension mismatch: metric D={metric.dim}, data D={X.shape[-1]}")
    return X @ metric.factor.T


def factorize_metric(M: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """Eigendecomposition factor of a symmetric PSD matrix.

    Eigenvalues in [-tol*lmax, 0) are clamped to zero and their rows dropped,
    so the returned factor has r = numerical rank.  An eigenvalue below
    -tol*lmax means the input is not PSD and raises.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"M must be square, got shape {M.shape}")
    if not np.allclose(M, M.T, atol=tol * max(1.0, float(np.abs(M).max()))):
        raise ValueError("M is not symmetric within tolerance")
    eigenvalues, vectors = np.linalg.eigh((M + M.T) / 2.0)
    lmax = float(eigenvalues.max(initial=0.0))
    floor = -tol * max(lmax, 1e-300)
    if eigenvalues.min(initial=0.0) < floor:
        raise ValueError(
            f"matrix is not PSD: eigenvalue {eigenvalues.min():.3e} below {floor:.3e}"
        )
    clamped = np.maximum(eigenvalues, 0.0)
    keep = clamped > tol * max(lmax, 0.0)
    if not np.any(keep):
        return np.zeros((0, M.shape[0]))
    # descending eigenvalue order
    order = np.argsort(clamped[keep])[::-1]
    vals = clamped[keep][order]
    vecs = vectors[:, keep][:, order]
    return (np.sqrt(vals)[:, None]) * vecs.T


def psd_square_root(M: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """Square (D x D) factor that keeps zero directions as explicit zero rows."""
    M = np.asarray(M, dtype=np.float64)
    eigenvalues, vectors = np.linalg.eigh((M + M.T) / 2.0)
    lmax = float(eigenvalues.max(initial=0.0))
    if eigenvalues.min(initial=0.0) < -tol * max(lmax, 1e-300):
        raise ValueError(f"matrix is not PSD: eigenvalue {eigenvalues.min():.3e}")
    vals = np.maximum(eigenvalues, 0.0)[::-1]
    vecs = vectors[:, ::-1]
    return np.sqrt(vals)[:, None] * vecs.T


def validate_metric(
    metric: MahalanobisMetric,
    X: np.ndarray | None = None,
    tol: float = PSD_TOL,
    n_triples: int = 1000,
    seed: int = 0,
) -> None:
    """Check PSD-ness, symmetry, d(x,x)=0 and projection equivalence.

    Raises ValueError with a diagnostic on the first failed property.
    """
    M = metric.matrix()
    eigenvalues = np.linalg.eigvalsh(M)
    lmax = float(eigenvalues.max(initial=0.0))
    if eigenvalues.min(initial=0.0) < -tol * max(lmax, 1e-300):
        raise ValueError(f"metric not PSD: min eigenvalue {eigenvalues.min():.3e}")
    rng = np.random.default_rng(seed)
    if X is None:
        X = rng.standard_normal((max(8, min(n_triples, 64)), metric.dim))
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    projected = metric_project(metric, X)
    for _ in range(min(64, n * (n - 1) // 2 or 1)):
        i, j = rng.integers(0, n, size=2)
        d_ij = mahalanobis_distance(metric, X[i], X[j])
        d_ji = mahalanobis_distance(metric, X[j], X[i])
        if d_ij != d_ji:
            raise ValueError(f"distance asymmetry: d({i},{j})={d_ij} != {d_ji}")
        if mahalanobis_distance(metric, X[i], X[i]) != 0.0:
            raise ValueError(f"d(x,x) != 0 at row {i}")
        d_proj = float(np.linalg.norm(projected[i] - projected[j]))
        if abs(d_proj - d_ij) > 1e-8 * max(1.0, d_ij):
            raise ValueError(
                f"projection inequivalence: |{d_proj} - {d_ij}| at rows ({i},{j})"
            )
    for _ in range(n_triples):
        a, b, c = X[rng.integers(0, n, size=3)]
        d_ac = mahalanobis_distance(metric, a, c)
        d_ab = mahalanobis_distance(metric, a, b)
        d_bc = mahalanobis_distance(metric, b, c)
        if d_ac > d_ab + d_bc + 1e-9 * max(1.0, d_ac):
            raise ValueError("triangle inequality violated on a random triple")


# ---------------------------------------------------------------------------
# learner configuration

@dataclass(frozen=True)
class LearnerConfig:
    """Shared knobs for all learners plus per-learner parameters.

    The generic loss/regularization trade-off surfaces through each learner's
    own formulation: ``mu`` weighs LMNN's push term against its pull term and
    ``gamma`` weighs ITML's slack against its LogDet regularizer.
    """

    seed: int = 0
    max_iter: int = 200
    tol: float = 1e-6
    # constraint construction
    kappa: int = 3                  # target neighbors per point
    margin: float = 1.0
    pair_cap: int | None = None     # default 10*N, applied at build time
    triplet_cap: int | None = None
    # projection rank; None means the learner's own default
    rank: int | None = None
    # lmnn
    mu: float = 0.5
    # itml; larger gamma trades regularization for constraint satisfaction
    gamma: float = 5.0
    u: float | None = None
    v: float | None = None
    sweeps: int = 50
    # boostmetric
    max_weak_learners: int = 500

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError(f"mu must be in [0, 1], got {self.mu}")
        if self.u is not None and self.v is not None and self.u > self.v:
            raise ValueError(f"u={self.u} must not exceed v={self.v}")
        if self.kappa < 1:
            raise ValueError(f"kappa must be >= 1, got {self.kappa}")
        if self.max_iter < 1 or self.sweeps < 1 or self.max_weak_learners < 1:
            raise ValueError("iteration caps must be >= 1")

    @staticmethod
    def from_pairs(pairs: dict[str, str]) -> "LearnerConfig":
        """Build from string key=value pairs (the plain-text config format)."""
        kwargs = {}
        fields = {f: t for f, t in LearnerConfig.__annotations__.items()}
        for key, raw in pairs.items():
            if key not in fields:
                valid = ", ".join(sorted(fields))
                raise ValueError(f"unknown learner config key {key!r}; valid: {valid}")
            kwargs[key] = _coerce(key, raw)
        return LearnerConfig(**kwargs)

    @staticmethod
    def from_file(path) -> "LearnerConfig":
        return LearnerConfig.from_pairs(read_config_pairs(path))


def read_config_pairs(path) -> dict[str, str]:
    """key=value lines; blanks and # comments skipped."""
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        pairs[key.strip()] = value.strip()
    return pairs


_INT_KEYS = {"seed", "max_iter", "kappa", "rank", "sweeps", "max_weak_learners",
             "pair_cap", "triplet_cap"}


def _coerce(key: str, raw):
    if raw is None or isinstance(raw, (int, float)):
        return raw
    if raw.lower() in ("none", ""):
        return None
    return int(raw) if key in _INT_KEYS else float(raw)


# ---------------------------------------------------------------------------
# label-derived constraints

@dataclass(frozen=True)
class ConstraintSet:
    """Pairs and triplets distilled from class labels.

    ``target_pairs`` holds (i, j) with j among i's kappa Euclidean-nearest
    same-class neighbors; ``triplets`` holds (i, j, k) where k is a
    differently-labeled point intruding within the (i, j) radius plus margin;
    ``similar``/``dissimilar`` are seeded samples of same/different-class
    pairs for bound-style learners.
    """

    target_pairs: np.ndarray   # (P, 2) int
    triplets: np.ndarray       # (T, 3) int
    similar: np.ndarray        # (S, 2) int
    dissimilar: np.ndarray     # (Q, 2) int

    def __post_init__(self):
        for name in ("target_pairs", "triplets", "similar", "dissimilar"):
            arr = np.asarray(getattr(self, name), dtype=np.intp)
            width = 3 if name == "triplets" else 2
            object.__setattr__(self, name, arr.reshape(-1, width))


def build_constraints(
    X: np.ndarray,
    y: np.ndarray,
    kappa: int = 3,
    margin: float = 1.0,
    pair_cap: int | None = None,
    triplet_cap: int | None = None,
    seed: int = 0,
) -> ConstraintSet:
    """Derive neighbor/impostor structure and S/D pairs from labels.

    Target neighbors use plain Euclidean distance.  An impostor for the
    target pair (i, j) is a differently-labeled k with
    d2(i, k) <= d2(i, j) + margin * m, where m is the median squared
    target-pair distance; tying the margin to the data scale keeps the
    enumeration window meaningful whether coordinates are O(1) or O(100).
    Enumeration is strictly in point-index order so the result is invariant
    to class relabeling; the triplet cap defaults to 20 * N.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    n = X.shape[0]
    if n != y.shape[0]:
        raise ValueError(f"X has {n} rows but y has {y.shape[0]} labels")
    classes, codes = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        raise ValueError("need at least 2 classes to build constraints")
    counts = np.bincount(codes)
    if counts.min() < kappa + 1:
        small = classes[int(np.argmin(counts))]
        raise ValueError(
            f"class {small!r} has {counts.min()} members, need kappa+1={kappa + 1}"
        )
    sq = _pairwise_sq_dists(X)
    rng = np.random.default_rng(seed)

    neighbor_lists = []
    for i in range(n):
        same = np.flatnonzero(codes == codes[i])
        same = same[same != i]
        order = np.lexsort((same, sq[i, same]))
        neighbor_lists.append(same[order[:kappa]])
    unit = float(np.median([sq[i, j] for i in range(n) for j in neighbor_lists[i]]))
    window = margin * unit

    target_pairs = []
    triplets = []
    for i in range(n):
        neighbors = neighbor_lists[i]
        radius = sq[i, neighbors].max() if len(neighbors) else 0.0
        intruders = np.flatnonzero((codes != codes[i]) & (sq[i] <= radius + window))
        for j in neighbors:
            target_pairs.append((i, j))
            for k in intruders[sq[i, intruders] <= sq[i, j] + window]:
                triplets.append((i, j, k))
    target_pairs = np.array(target_pairs, dtype=np.intp).reshape(-1, 2)
    triplets = np.array(triplets, dtype=np.intp).reshape(-1, 3)
    t_cap = triplet_cap if triplet_cap is not None else 20 * n
    if len(triplets) > t_cap:
        keep = np.sort(rng.choice(len(triplets), size=t_cap, replace=False))
        triplets = triplets[keep]

    cap = pair_cap if pair_cap is not None else 10 * n
    similar = _sample_pairs(codes, same_class=True, cap=cap, rng=rng)
    dissimilar = _sample_pairs(codes, same_class=False, cap=cap, rng=rng)
    return ConstraintSet(target_pairs, triplets, similar, dissimilar)


def _pairwise_sq_dists(X: np.ndarray) -> np.ndarray:
    norms = np.einsum("ij,ij->i", X, X)
    sq = norms[:, None] + norms[None, :] - 2.0 * (X @ X.T)
    np.maximum(sq, 0.0, out=sq)
    np.fill_diagonal(sq, 0.0)
    return sq


def _sample_pairs(codes: np.ndarray, same_class: bool, cap: int, rng) -> np.ndarray:
    """Up to ``cap`` index pairs (i < j) with matching/differing labels.

    Small populations are enumerated exhaustively in index order; larger ones
    are subsampled from that enumeration with the supplied generator, keeping
    the result independent of class naming.
    """
    n = len(codes)
    iu, ju = np.triu_indices(n, k=1)
    mask = (codes[iu] == codes[ju]) if same_class else (codes[iu] != codes[ju])
    pairs = np.column_stack((iu[mask], ju[mask]))
    if len(pairs) > cap:
        keep = np.sort(rng.choice(len(pairs), size=cap, replace=False))
        pairs = pairs[keep]
    return pairs.astype(np.intp)


# ---------------------------------------------------------------------------
# serialization

def save_metric(path, metric: MahalanobisMetric) -> None:
    with Path(path).open("wb") as f:
        container.write_magic(f)
        container.write_str(f, "metric")
        container.write_str(f, metric.name)
        container.write_str(f, metric.provenance)
        container.write_u64(f, metric.rank)
        container.write_u64(f, metric.dim)
        f.write(np.ascontiguousarray(metric.factor, dtype="<f8").tobytes())


def load_metric(path) -> MahalanobisMetric:
    with Path(path).open("rb") as f:
        container.read_magic(f)
        file_type = container.read_str(f)
        if file_type != "metric":
            raise container.ContainerError(f"{path}: not a metric file (type {file_type!r})")
        name = container.read_str(f)
        provenance = container.read_str(f)
        rank = container.read_u64(f)
        dim = container.read_u64(f)
        payload = f.read(rank * dim * 8)
        if len(payload) != rank * dim * 8:
            raise container.ContainerError(f"{path}: truncated factor payload")
        factor = np.frombuffer(payload, dtype="<f8").reshape(rank, dim).copy()
    return MahalanobisMetric(factor, name=name, provenance=provenance)
