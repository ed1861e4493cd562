"""Experiment grids: run (task x feature x metric) cells and emit tables.

A plain key=value spec file drives one task under one of three
methodologies: ``single`` evaluates each metric on each feature kind
separately, ``feature-fusion`` fits one metric per feature kind and
concatenates the projections, ``metric-fusion`` projects one feature kind
through several metrics and concatenates those.  Metric-learning rows are
fitted on a stratified sample that is excluded from the classification
folds, so test folds never touch metric training data.

Every emitted CSV starts with a provenance comment carrying the spec hash
and seed; reruns of the same spec are byte-identical.
"""

from __future__ import annotations

import hashlib
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .classify import (
    AccuracyReport,
    ConfusionMatrix,
    accuracy_table_csv,
    confusion_csv,
    evaluate_cv,
    load_class_order,
)
from .dataset import (
    DataError,
    FeatureSet,
    LabelTable,
    SampleSet,
    TaskSubset,
    load_feature_table,
    load_label_table,
    make_folds,
    select_task_subset,
    stratified_subsample,
)
from .fusion import feature_fusion, metric_fusion
from .learners import LEARNERS
from .metric_core import LearnerConfig, MahalanobisMetric, metric_project
from .pca import fit_pca, project_features

METRIC_NAMES = ("baseline",) + tuple(sorted(LEARNERS))
METHODOLOGIES = ("single", "feature-fusion", "metric-fusion")
AUTO_SAMPLE_CAP = 3000


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything one evaluate run needs, straight from a key=value file."""

    task: str
    labels_path: str
    features: tuple[tuple[str, str], ...]        # (kind, path) in declared order
    metrics: tuple[str, ...]
    out_dir: str
    methodology: str = "single"
    pca_dim: int = 0                             # 0 = no reduction
    l2_normalize: bool = False
    svm_c: float = 10.0
    folds: int = 3
    seed: int = 0
    min_count: int = 1
    sample: int = -1                             # -1 = auto, 0 = none
    normalize_blocks: bool = False
    class_order_path: str = ""
    overrides: tuple[tuple[str, str, str], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.methodology not in METHODOLOGIES:
            raise DataError(
                f"unknown methodology {self.methodology!r}, expected one of {METHODOLOGIES}"
            )
        if not self.features:
            raise DataError("spec lists no feature kinds")
        if not self.metrics:
            raise DataError("spec lists no metrics")
        unknown = [m for m in self.metrics if m not in METRIC_NAMES]
        if unknown:
            raise DataError(f"unknown metrics {unknown}; valid: {', '.join(METRIC_NAMES)}")
        if len(set(k for k, _ in self.features)) != len(self.features):
            raise DataError("duplicate feature kinds in spec")
        if len(set(self.metrics)) != len(self.metrics):
            raise DataError("duplicate metrics in spec")
        if self.methodology == "feature-fusion" and len(self.features) < 2:
            raise DataError("feature-fusion needs at least 2 feature kinds")
        if self.methodology == "metric-fusion" and len(self.metrics) < 2:
            raise DataError("metric-fusion needs at least 2 metrics")

    def canonical(self) -> str:
        """Stable textual form, the input to the provenance hash."""
        lines = [
            f"task={self.task}",
            f"labels={self.labels_path}",
            f"methodology={self.methodology}",
            f"pca_dim={self.pca_dim}",
            f"l2_normalize={int(self.l2_normalize)}",
            f"svm_c={self.svm_c!r}",
            f"folds={self.folds}",
            f"seed={self.seed}",
            f"min_count={self.min_count}",
            f"sample={self.sample}",
            f"normalize_blocks={int(self.normalize_blocks)}",
            f"class_order={self.class_order_path}",
        ]
        lines += [f"feature={kind}:{path}" for kind, path in self.features]
        lines += [f"metric={m}" for m in self.metrics]
        lines += [f"{scope}.{key}={value}" for scope, key, value in sorted(self.overrides)]
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]

    def learner_config(self, learner: str) -> LearnerConfig:
        pairs: dict[str, str | int] = {"seed": self.seed}
        for scope, key, value in self.overrides:
            if scope == "all":
                pairs[key] = value
        for scope, key, value in self.overrides:
            if scope == learner:
                pairs[key] = value
        return LearnerConfig.from_pairs(pairs)


_SCALAR_KEYS = {
    "task", "labels", "methodology", "pca_dim", "l2_normalize", "svm_c",
    "folds", "seed", "min_count", "sample", "normalize_blocks", "out_dir",
    "class_order",
}


def parse_experiment_spec(path) -> ExperimentSpec:
    """Plain key=value lines; ``feature`` and ``metric`` keys repeat."""
    path = Path(path)
    scalars: dict[str, str] = {}
    features: list[tuple[str, str]] = []
    metrics: list[str] = []
    overrides: list[tuple[str, str, str]] = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "feature":
            kind, sep, fpath = value.partition(":")
            if not sep or not kind.strip() or not fpath.strip():
                raise DataError(f"{path}:{lineno}: feature wants kind:path, got {value!r}")
            features.append((kind.strip(), fpath.strip()))
        elif key == "metric":
            metrics.append(value)
        elif "." in key:
            scope, _, subkey = key.partition(".")
            if scope != "all" and scope not in LEARNERS:
                raise DataError(
                    f"{path}:{lineno}: override scope {scope!r} is not a learner "
                    f"(valid: all, {', '.join(sorted(LEARNERS))})"
                )
            overrides.append((scope, subkey, value))
        elif key in _SCALAR_KEYS:
            if key in scalars:
                raise DataError(f"{path}:{lineno}: duplicate key {key!r}")
            scalars[key] = value
        else:
            raise DataError(f"{path}:{lineno}: unknown key {key!r}")
    for required in ("task", "labels", "out_dir"):
        if required not in scalars:
            raise DataError(f"{path}: missing required key {required!r}")
    return ExperimentSpec(
        task=scalars["task"],
        labels_path=scalars["labels"],
        features=tuple(features),
        metrics=tuple(metrics),
        out_dir=scalars["out_dir"],
        methodology=scalars.get("methodology", "single"),
        pca_dim=int(scalars.get("pca_dim", "0")),
        l2_normalize=_parse_bool(scalars.get("l2_normalize", "0")),
        svm_c=float(scalars.get("svm_c", "10")),
        folds=int(scalars.get("folds", "3")),
        seed=int(scalars.get("seed", "0")),
        min_count=int(scalars.get("min_count", "1")),
        sample=int(scalars.get("sample", "-1")),
        normalize_blocks=_parse_bool(scalars.get("normalize_blocks", "0")),
        class_order_path=scalars.get("class_order", ""),
        overrides=tuple(overrides),
    )


def _parse_bool(raw: str) -> bool:
    if raw in ("1", "true", "yes"):
        return True
    if raw in ("0", "false", "no"):
        return False
    raise DataError(f"expected a boolean (0/1/true/false), got {raw!r}")


@dataclass(frozen=True)
class ExperimentResult:
    reports: tuple[AccuracyReport, ...]
    confusions: dict[tuple[str, str], ConfusionMatrix]   # (metric row, kind) -> matrix
    table_csv: str
    written: tuple[Path, ...]


def run_experiment(spec: ExperimentSpec, jobs: int = 1) -> ExperimentResult:
    labels = load_label_table(spec.labels_path)
    subset = select_task_subset(labels, spec.task, spec.min_count)

    prepared: dict[str, FeatureSet] = {}
    for kind, fpath in spec.features:
        if not Path(fpath).exists():
            raise DataError(f"feature file for {kind!r} is missing: {fpath}")
        fs = load_feature_table(fpath, format=_sniff_format(fpath), kind=kind)
        missing = [i for i in subset.member_ids if i not in fs.row_index()]
        if missing:
            raise DataError(
                f"feature kind {kind!r} lacks {len(missing)} subset ids "
                f"(first: {missing[0]!r})"
            )
        if spec.pca_dim:
            model = fit_pca(fs, spec.pca_dim, l2_normalize=spec.l2_normalize)
            fs = project_features(model, fs)
        prepared[kind] = fs

    learned = [m for m in spec.metrics if m != "baseline"]
    sample_n = spec.sample
    if sample_n < 0:
        sample_n = min(AUTO_SAMPLE_CAP, len(subset.member_ids) // 3) if learned else 0
    samples: dict[str, SampleSet] = {}
    if sample_n:
        for kind in prepared:
            samples[kind] = stratified_subsample(
                subset, prepared[kind], sample_n, spec.seed
            )
    elif learned:
        warnings.warn(
            "metric learners will train on the same rows used for classification "
            "folds (sample=0); results are optimistic"
        )
        for kind in prepared:
            rows = prepared[kind].select(list(subset.member_ids))
            samples[kind] = SampleSet(
                tuple(subset.member_ids), rows.matrix, subset.codes_for(subset.member_ids)
            )

    cls_subset = subset.without(samples[next(iter(samples))].ids) if sample_n else subset
    plan = make_folds(cls_subset, spec.folds, spec.seed)

    def fit(learner: str, kind: str) -> MahalanobisMetric:
        cfg = spec.learner_config(learner)
        sample = samples[kind]
        metric = LEARNERS[learner](sample.matrix, sample.codes, cfg)
        return metric.with_provenance(
            f"task={spec.task};feature={kind};learner={learner};"
            f"seed={spec.seed};config={spec.config_hash()}"
        )

    cells: list[tuple[str, str]] = []       # (metric row, kind column)
    if spec.methodology == "single":
        cells = [(m, kind) for m in spec.metrics for kind in prepared]
    elif spec.methodology == "feature-fusion":
        cells = [(m, "fused") for m in spec.metrics]
    else:
        cells = [("fusion", kind) for kind in prepared]

    def run_cell(cell: tuple[str, str]) -> tuple[AccuracyReport, ConfusionMatrix]:
        row, column = cell
        if spec.methodology == "single":
            fs = prepared[column]
            metric = None if row == "baseline" else fit(row, column)
            return evaluate_cv(fs, cls_subset, plan, metric, spec.svm_c, metric_name=row)
        if spec.methodology == "feature-fusion":
            blocks = []
            for kind, _ in spec.features:
                fs = prepared[kind].select(list(cls_subset.member_ids))
                if row == "baseline":
                    blocks.append((fs, "baseline"))
                else:
                    metric = fit(row, kind)
                    blocks.append((fs.with_matrix(metric_project(metric, fs.matrix)), row))
            fused = feature_fusion(blocks, normalize_blocks=spec.normalize_blocks)
            return evaluate_cv(
                fused.as_feature_set(), cls_subset, plan, None, spec.svm_c, metric_name=row
            )
        # metric-fusion: all learned metrics of one kind, identity for baseline
        fs = prepared[column].select(list(cls_subset.member_ids))
        parts = []
        for m in spec.metrics:
            if m == "baseline":
                parts.append(MahalanobisMetric.identity(fs.dim, name="baseline"))
            else:
                parts.append(fit(m, column))
        fused = metric_fusion(fs, parts, normalize_blocks=spec.normalize_blocks)
        return evaluate_cv(
            fused.as_feature_set(kind=column), cls_subset, plan, None,
            spec.svm_c, metric_name="fusion",
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {cell: pool.submit(run_cell, cell) for cell in cells}
            outcomes = {cell: futures[cell].result() for cell in cells}
    else:
        outcomes = {cell: run_cell(cell) for cell in cells}

    reports = tuple(outcomes[c][0] for c in cells)
    confusions = {c: outcomes[c][1] for c in cells}
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = f"# config={spec.config_hash()} seed={spec.seed} task={spec.task}\n"

    if spec.methodology == "feature-fusion":
        kind_order = ["fused"]
    else:
        kind_order = [k for k, _ in spec.features]
    table = accuracy_table_csv(list(reports), feature_order=kind_order)
    written = []
    table_path = out_dir / f"accuracy_{spec.task}.csv"
    table_path.write_text(header + table)
    written.append(table_path)

    class_order = None
    if spec.class_order_path:
        class_order = load_class_order(spec.class_order_path)
    for cell in cells:
        cm = confusions[cell]
        if class_order:
            cm = cm.reordered(class_order)
        name = f"confusion_{spec.task}_{cell[0]}_{cell[1]}.csv"
        cm_path = out_dir / name
        cm_path.write_text(header + confusion_csv(cm))
        written.append(cm_path)
    return ExperimentResult(reports, confusions, table, tuple(written))


def _sniff_format(path) -> str:
    with open(path, "rb") as f:
        return "binary" if f.read(4) == b"MFRG" else "csv"
