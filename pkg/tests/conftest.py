import numpy as np
import pytest

from metricforge import FeatureSet, LabelTable

# filled by test_acceptance.py; printed as one line per criterion at the end
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def blobs(n_classes, per_class, dim, spread=0.3, separation=6.0, seed=0):
    """Well-separated Gaussian blobs with integer labels."""
    rng = np.random.default_rng(seed)
    means = separation * rng.standard_normal((n_classes, dim))
    X = np.vstack([
        means[c] + spread * rng.standard_normal((per_class, dim))
        for c in range(n_classes)
    ])
    y = np.repeat(np.arange(n_classes), per_class)
    return X, y


def planted_spectrum(eigenvalues, n, seed=0):
    """Data whose sample covariance is exactly Q diag(eigenvalues) Q'.

    Centering a standard normal draw makes the all-ones vector orthogonal
    to its column space, so the thin-SVD basis U has zero column means and
    U * sqrt(n-1) has identity sample covariance by construction.
    """
    eigenvalues = np.asarray(eigenvalues, dtype=float)
    d = len(eigenvalues)
    if n <= d:
        raise ValueError("need n > dim for an exact planted spectrum")
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, d))
    Z -= Z.mean(axis=0)
    U, _, _ = np.linalg.svd(Z, full_matrices=False)
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    X = (U * np.sqrt(n - 1)) @ (np.sqrt(eigenvalues)[:, None] * Q.T)
    return X, Q


def feature_set(matrix, kind="synthetic", prefix="img"):
    ids = tuple(f"{prefix}{i:04d}" for i in range(len(matrix)))
    return FeatureSet(kind, ids, np.asarray(matrix, dtype=np.float64))


def label_table(ids, styles=None, genres=None, artists=None):
    rows = {}
    for i, img_id in enumerate(ids):
        rows[img_id] = {
            "style": None if styles is None else styles[i],
            "genre": None if genres is None else genres[i],
            "artist": None if artists is None else artists[i],
        }
    return LabelTable(rows)


@pytest.fixture
def small_blobs():
    return blobs(3, 10, 6, seed=7)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, text = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"CRITERION {n} {'PASS' if ok else 'FAIL'}: {text}")
