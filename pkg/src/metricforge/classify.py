"""One-vs-all linear SVM classification and cross-validated evaluation.

The binary solver is dual coordinate descent on the L1-loss linear SVM.
The bias rides along as an always-1 trailing feature, so it is regularized
together with w; iteration order is cyclic and fixed, which makes training
deterministic.  Multiclass prediction picks the class whose binary
classifier reports the highest decision value.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import container
from .dataset import FeatureSet, SplitPlan, TaskSubset
from .metric_core import MahalanobisMetric, metric_project

DEFAULT_C = 10.0

# canonical row order for report tables
METRIC_ROW_ORDER = ("baseline", "boost", "itml", "lmnn", "mlkr", "nca")
ROW_LABELS = {
    "baseline": "Baseline",
    "boost": "Boost",
    "itml": "ITML",
    "lmnn": "LMNN",
    "mlkr": "MLKR",
    "nca": "NCA",
}


@dataclass(frozen=True)
class LinearSvm:
    """Binary linear classifier: decision value is w.x + b."""

    w: np.ndarray
    b: float
    C: float

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        object.__setattr__(self, "w", w)
        if not (np.all(np.isfinite(w)) and np.isfinite(self.b)):
            raise ValueError("SVM parameters must be finite")

    def decision(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.w + self.b


def train_linear_svm(
    X: np.ndarray,
    y: np.ndarray,
    C: float = DEFAULT_C,
    max_epochs: int = 1000,
    tol: float = 1e-8,
) -> LinearSvm:
    """Dual coordinate descent for min over w, b of
    (1/2)(|w|^2 + b^2) + C * sum_i hinge(y_i * (w.x_i + b)).

    y must contain both +1 and -1.  Stops when the largest projected
    gradient over a full sweep drops below tol.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one label per row")
    present = set(np.unique(y))
    if not present <= {-1.0, 1.0}:
        raise ValueError(f"labels must be +/-1, got {sorted(present)}")
    if len(present) < 2:
        raise ValueError("training labels are single-class")
    if C <= 0:
        raise ValueError(f"C must be > 0, got {C}")

    n, d = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    q = np.einsum("ij,ij->i", Xa, Xa)  # never zero: the bias feature is 1
    alpha = np.zeros(n)
    wa = np.zeros(d + 1)
    for _ in range(max_epochs):
        worst = 0.0
        for i in range(n):
            g = y[i] * float(Xa[i] @ wa) - 1.0
            a = alpha[i]
            if a <= 0.0:
                pg = min(g, 0.0)
            elif a >= C:
                pg = max(g, 0.0)
            else:
                pg = g
            if pg != 0.0:
                worst = max(worst, abs(pg))
                new = min(max(a - g / q[i], 0.0), C)
                if new != a:
                    wa += (new - a) * y[i] * Xa[i]
                    alpha[i] = new
        if worst < tol:
            break
    else:
        warnings.warn("SVM hit the epoch cap before reaching tolerance")
    return LinearSvm(wa[:d], float(wa[d]), C)


def svm_primal_objective(svm: LinearSvm, X: np.ndarray, y: np.ndarray) -> float:
    """The objective train_linear_svm minimizes, for direct comparison."""
    margins = np.asarray(y, dtype=np.float64) * svm.decision(X)
    hinge = np.maximum(0.0, 1.0 - margins).sum()
    return 0.5 * (float(svm.w @ svm.w) + svm.b ** 2) + svm.C * float(hinge)


@dataclass(frozen=True)
class OneVsAllModel:
    """One binary SVM per class; prediction is the confidence argmax."""

    classes: tuple[str, ...]
    svms: tuple[LinearSvm, ...]
    feature_kind: str = ""
    metric_name: str = ""

    def __post_init__(self):
        if len(self.classes) != len(self.svms):
            raise ValueError("one classifier per class required")
        dims = {len(s.w) for s in self.svms}
        if len(dims) > 1:
            raise ValueError(f"classifiers disagree on input dimension: {sorted(dims)}")

    @property
    def dim(self) -> int:
        return len(self.svms[0].w)

    def decision_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.stack([svm.decision(X) for svm in self.svms], axis=1)

    def predict_codes(self, X: np.ndarray) -> np.ndarray:
        # np.argmax keeps the first maximum, which is the tie-break rule:
        # lowest class ordinal wins
        return np.argmax(self.decision_matrix(X), axis=1)


def train_one_vs_all(
    X: np.ndarray,
    codes: np.ndarray,
    classes: tuple[str, ...] | list[str],
    C: float = DEFAULT_C,
    feature_kind: str = "",
    metric_name: str = "",
) -> OneVsAllModel:
    """Independent class-vs-rest binary problems over integer class codes."""
    X = np.asarray(X, dtype=np.float64)
    codes = np.asarray(codes)
    classes = tuple(classes)
    if len(classes) < 2:
        raise ValueError("one-vs-all needs at least 2 classes")
    counts = np.bincount(codes, minlength=len(classes))
    empty = [classes[i] for i in range(len(classes)) if counts[i] == 0]
    if empty:
        raise ValueError(f"classes with no training rows: {', '.join(empty)}")
    svms = []
    for c in range(len(classes)):
        y = np.where(codes == c, 1.0, -1.0)
        svms.append(train_linear_svm(X, y, C))
    return OneVsAllModel(classes, tuple(svms), feature_kind, metric_name)


def predict(model: OneVsAllModel, x: np.ndarray) -> str:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.dim,):
        raise ValueError(f"expected a vector of dim {model.dim}, got shape {x.shape}")
    code = int(model.predict_codes(x.reshape(1, -1))[0])
    return model.classes[code]


# ---------------------------------------------------------------------------
# evaluation

@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class."""

    classes: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (len(self.classes), len(self.classes)):
            raise ValueError(f"counts shape {counts.shape} does not match class list")
        if np.any(counts < 0):
            raise ValueError("confusion counts must be nonnegative")
        object.__setattr__(self, "counts", counts)

    def accuracy(self) -> float:
        total = int(self.counts.sum())
        if total == 0:
            raise ValueError("empty confusion matrix has no accuracy")
        return float(np.trace(self.counts)) / total

    def normalized(self) -> np.ndarray:
        """Row-normalized view; all-zero rows stay zero."""
        sums = self.counts.sum(axis=1, keepdims=True)
        out = np.zeros(self.counts.shape, dtype=np.float64)
        np.divide(self.counts, sums, out=out, where=sums > 0)
        return out

    def reordered(self, class_order: list[str]) -> "ConfusionMatrix":
        if sorted(class_order) != sorted(self.classes):
            raise ValueError("class_order must be a permutation of the matrix classes")
        idx = [self.classes.index(c) for c in class_order]
        return ConfusionMatrix(tuple(class_order), self.counts[np.ix_(idx, idx)])


@dataclass(frozen=True)
class AccuracyReport:
    """Cross-validation outcome for one (task, feature kind, metric) cell."""

    task: str
    feature_kind: str
    metric_name: str
    fold_accuracies: tuple[float, ...]
    dim: int

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracies))


def evaluate_cv(
    features: FeatureSet,
    subset: TaskSubset,
    plan: SplitPlan,
    metric: MahalanobisMetric | None = None,
    C: float = DEFAULT_C,
    metric_name: str | None = None,
) -> tuple[AccuracyReport, ConfusionMatrix]:
    """Cross-validated one-vs-all accuracy under an optional metric.

    The metric, when given, must have been fitted on rows disjoint from the
    plan's members; this function only applies it.  Passing metric=None
    scores the unprojected features (the baseline), which is bit-identical
    to projecting with an identity metric.

    Per fold: train one-vs-all on the other folds, score the held-out fold.
    Fold accuracy is trace/sum of that fold's own confusion counts, and the
    returned matrix pools counts over folds, so the accounting identity
    accuracy == trace/sum holds at both levels.
    """
    member_ids = sorted(plan.assignment)
    if set(member_ids) - set(subset.member_ids):
        raise ValueError("plan contains ids outside the task subset")
    rows = features.select(member_ids)
    codes = subset.codes_for(member_ids)
    Z = metric_project(metric, rows.matrix) if metric is not None else rows.matrix
    name = metric_name if metric_name is not None else (
        metric.name if metric is not None else "baseline")

    id_to_pos = {i: p for p, i in enumerate(member_ids)}
    n_classes = len(subset.classes)
    pooled = np.zeros((n_classes, n_classes), dtype=np.int64)
    fold_acc = []
    for fold in range(plan.k):
        test_pos = np.asarray([id_to_pos[i] for i in plan.fold_ids(fold)], dtype=np.intp)
        train_mask = np.ones(len(member_ids), dtype=bool)
        train_mask[test_pos] = False
        try:
            model = train_one_vs_all(
                Z[train_mask], codes[train_mask], subset.classes, C,
                feature_kind=features.kind, metric_name=name,
            )
        except ValueError as exc:
            raise ValueError(f"fold {fold}: {exc}") from exc
        pred = model.predict_codes(Z[test_pos])
        true = codes[test_pos]
        missing = set(range(n_classes)) - set(true.tolist())
        if missing:
            names = ", ".join(subset.classes[c] for c in sorted(missing))
            warnings.warn(f"fold {fold}: no test rows for {names}; "
                          "those classes contribute nothing to this fold's recall")
        fold_counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(fold_counts, (true, pred), 1)
        pooled += fold_counts
        fold_acc.append(float(np.trace(fold_counts)) / len(test_pos))

    dim = Z.shape[1]
    report = AccuracyReport(subset.task, features.kind, name, tuple(fold_acc), dim)
    return report, ConfusionMatrix(subset.classes, pooled)


# ---------------------------------------------------------------------------
# report emission

def accuracy_table_csv(reports: list[AccuracyReport], feature_order: list[str] | None = None) -> str:
    """Accuracy grid: metric rows, feature-kind columns, trailing Dim column.

    Cells are percentages with two decimals; missing cells stay empty.
    """
    if not reports:
        raise ValueError("no reports to tabulate")
    kinds = feature_order or sorted({r.feature_kind for r in reports})
    by_cell = {(r.metric_name, r.feature_kind): r for r in reports}
    names = [m for m in METRIC_ROW_ORDER if any(r.metric_name == m for r in reports)]
    names += sorted({r.metric_name for r in reports} - set(names))
    lines = ["Metric," + ",".join(kinds) + ",Dim"]
    for name in names:
        cells = []
        dims = []
        for kind in kinds:
            rep = by_cell.get((name, kind))
            cells.append(f"{100.0 * rep.mean_accuracy:.2f}" if rep else "")
            if rep:
                dims.append(rep.dim)
        dim_text = "/".join(str(d) for d in dict.fromkeys(dims))
        lines.append(f"{ROW_LABELS.get(name, name)}," + ",".join(cells) + f",{dim_text}")
    return "\n".join(lines) + "\n"


def confusion_csv(cm: ConfusionMatrix, normalized: bool = False) -> str:
    header = "class," + ",".join(cm.classes)
    lines = [header]
    values = cm.normalized() if normalized else cm.counts
    for i, cls in enumerate(cm.classes):
        if normalized:
            row = ",".join(f"{v:.6f}" for v in values[i])
        else:
            row = ",".join(str(int(v)) for v in values[i])
        lines.append(f"{cls},{row}")
    return "\n".join(lines) + "\n"


def load_class_order(path) -> list[str]:
    """One class name per line; blank lines and # comments skipped."""
    order = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            order.append(line)
    if len(set(order)) != len(order):
        raise ValueError(f"duplicate class names in {path}")
    return order


# ---------------------------------------------------------------------------
# model files

_OVA_TAG = "ova-model"


def save_one_vs_all(path, model: OneVsAllModel) -> None:
    with open(path, "wb") as f:
        container.write_magic(f)
        container.write_str(f, _OVA_TAG)
        container.write_str(f, model.feature_kind)
        container.write_str(f, model.metric_name)
        container.write_str_list(f, list(model.classes))
        container.write_f64(f, model.svms[0].C)
        container.write_matrix(f, np.stack([s.w for s in model.svms]))
        container.write_matrix(f, np.asarray([s.b for s in model.svms]))


def load_one_vs_all(path) -> OneVsAllModel:
    with open(path, "rb") as f:
        container.read_magic(f)
        tag = container.read_str(f)
        if tag != _OVA_TAG:
            raise container.ContainerError(f"expected a {_OVA_TAG} file, found {tag!r}")
        feature_kind = container.read_str(f)
        metric_name = container.read_str(f)
        classes = tuple(container.read_str_list(f))
        C = container.read_f64(f)
        weights = container.read_matrix(f)
        biases = container.read_matrix(f).ravel()
    svms = tuple(LinearSvm(weights[i], float(biases[i]), C) for i in range(len(classes)))
    return OneVsAllModel(classes, svms, feature_kind, metric_name)
