"""Command-line driver.

Every subcommand is a pure function of its input files, flags, and seed:
rerunning with identical inputs produces byte-identical artifacts.  The
seed comes from ``--seed`` when given, else the ``METRICFORGE_SEED``
environment variable, else 0.  Failures print a single ``error: ...`` line
on stderr and exit 1; bad usage exits 2 via argparse.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from pathlib import Path

import numpy as np

from .classify import save_one_vs_all, train_one_vs_all
from .container import ContainerError
from .dataset import (
    DataError,
    FeatureSet,
    generate_synthetic,
    load_feature_table,
    load_label_table,
    save_features_binary,
    save_features_csv,
    save_label_table,
    select_task_subset,
    stratified_subsample,
)
from .experiment import parse_experiment_spec, run_experiment
from .fusion import feature_fusion, save_fused
from .learners import LEARNERS
from .metric_core import LearnerConfig, load_metric, metric_project, read_config_pairs, save_metric
from .pca import PcaModel, explained_fraction, fit_pca, project_features, save_pca
from .retrieval import build_index, nearest, nearest_excluding, results_to_csv

ENV_SEED = "METRICFORGE_SEED"


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        args.run(args)
    except (DataError, ContainerError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metricforge",
        description="Learn task-optimized Mahalanobis metrics over image "
                    "features; classify, fuse, and search with them.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--classes", type=_positive_int, required=True)
    p.add_argument("--per-class", type=_positive_int, required=True)
    p.add_argument("--dim", type=_positive_int, required=True)
    p.add_argument("--intrinsic-dim", type=_positive_int, default=None)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=2.5)
    p.add_argument("--kind", default="synthetic")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-features", required=True)
    p.add_argument("--out-labels", required=True)
    p.set_defaults(run=_cmd_synth)

    p = sub.add_parser("pca", help="fit PCA and project a feature table")
    p.add_argument("--features", required=True)
    p.add_argument("--k", type=_positive_int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=None, help="also save the fitted model here")
    p.add_argument("--l2-normalize", action="store_true")
    p.set_defaults(run=_cmd_pca)

    p = sub.add_parser("train-metric", help="fit a metric on a task's labels")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--task", required=True, choices=("style", "genre", "artist"))
    p.add_argument("--learner", required=True, choices=tuple(sorted(LEARNERS)))
    p.add_argument("--out", required=True)
    p.add_argument("--sample", type=int, default=0,
                   help="stratified sample size to fit on (0 = all subset rows)")
    p.add_argument("--min-count", type=_positive_int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="key=value learner config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.set_defaults(run=_cmd_train_metric)

    p = sub.add_parser("project", help="project features through a saved metric")
    p.add_argument("--features", required=True)
    p.add_argument("--metric", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(run=_cmd_project)

    p = sub.add_parser("train-classifier", help="train one-vs-all linear SVMs")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--task", required=True, choices=("style", "genre", "artist"))
    p.add_argument("--C", type=float, default=10.0)
    p.add_argument("--min-count", type=_positive_int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(run=_cmd_train_classifier)

    p = sub.add_parser("evaluate", help="run an experiment spec, emit report CSVs")
    p.add_argument("--spec", required=True)
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.set_defaults(run=_cmd_evaluate)

    p = sub.add_parser("fuse", help="concatenate projected feature files")
    p.add_argument("--block", action="append", required=True, metavar="PATH",
                   help="projected feature file (repeat in fusion order)")
    p.add_argument("--normalize-blocks", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(run=_cmd_fuse)

    p = sub.add_parser("search", help="nearest-neighbor lookup in a feature space")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument("--metric", default=None, help="project through this metric first")
    p.add_argument("--query", action="append", required=True, metavar="ID")
    p.add_argument("--k", type=_positive_int, required=True)
    p.add_argument("--exclude-same", default=None, metavar="FIELD",
                   choices=("style", "genre", "artist"))
    p.add_argument("--out", required=True)
    p.set_defaults(run=_cmd_search)
    return parser


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _resolve_seed(flag_value: int | None) -> int:
    if flag_value is not None:
        return flag_value
    return int(os.environ.get(ENV_SEED, "0"))


def _load_features(path) -> FeatureSet:
    if not Path(path).exists():
        raise DataError(f"feature file is missing: {path}")
    with open(path, "rb") as f:
        binary = f.read(4) == b"MFRG"
    return load_feature_table(path, format="binary" if binary else "csv")


def _save_features(path, features: FeatureSet) -> None:
    if str(path).endswith(".csv"):
        save_features_csv(path, features)
    else:
        save_features_binary(path, features)


def _cmd_synth(args) -> None:
    corpus = generate_synthetic(
        n_classes=args.classes,
        per_class=args.per_class,
        ambient_dim=args.dim,
        intrinsic_dim=args.intrinsic_dim,
        separation=args.separation,
        cluster_spread=args.spread,
        noise_scale=args.noise,
        seed=_resolve_seed(args.seed),
        kind=args.kind,
    )
    _save_features(args.out_features, corpus.features)
    save_label_table(args.out_labels, corpus.labels)
    print(f"wrote {corpus.features.n} x {corpus.features.dim} features "
          f"({args.classes} classes) to {args.out_features}")


def _cmd_pca(args) -> None:
    features = _load_features(args.features)
    # fit the full spectrum so the reported fraction is against the true
    # total, then keep only the requested components; same SVD either way
    full = fit_pca(features, min(features.n, features.dim), l2_normalize=args.l2_normalize)
    if args.k > full.k:
        raise DataError(f"k={args.k} out of range [1, min(N,D)={full.k}]")
    model = PcaModel(
        mean=full.mean,
        components=full.components[:args.k].copy(),
        eigenvalues=full.eigenvalues[:args.k].copy(),
        l2_normalize=full.l2_normalize,
    )
    projected = project_features(model, features)
    _save_features(args.out, projected)
    if args.model:
        save_pca(args.model, model)
    print(f"explained fraction at k={args.k}: {explained_fraction(full, args.k):.4f}")


def _cmd_train_metric(args) -> None:
    # precedence: --seed flag > --set seed=... > config file > env > 0
    pairs: dict[str, str | int] = {}
    if args.config:
        pairs.update(read_config_pairs(args.config))
    for item in args.set:
        if "=" not in item:
            raise DataError(f"--set wants KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        pairs[key.strip()] = value.strip()
    if args.seed is not None:
        pairs["seed"] = args.seed
    elif "seed" not in pairs:
        pairs["seed"] = _resolve_seed(None)
    cfg = LearnerConfig.from_pairs(pairs)

    features = _load_features(args.features)
    labels = load_label_table(args.labels)
    subset = select_task_subset(labels, args.task, args.min_count)
    missing = [i for i in subset.member_ids if i not in features.row_index()]
    if missing:
        raise DataError(f"features lack {len(missing)} subset ids (first: {missing[0]!r})")
    if args.sample:
        sample = stratified_subsample(subset, features, args.sample, cfg.seed)
        X, codes = sample.matrix, sample.codes
    else:
        rows = features.select(list(subset.member_ids))
        X, codes = rows.matrix, subset.codes_for(subset.member_ids)

    metric = LEARNERS[args.learner](X, codes, cfg)
    cfg_hash = hashlib.sha256(repr(cfg).encode()).hexdigest()[:12]
    metric = metric.with_provenance(
        f"task={args.task};feature={features.kind};learner={args.learner};"
        f"seed={cfg.seed};config={cfg_hash}"
    )
    save_metric(args.out, metric)
    print(f"trained {args.learner} on {len(X)} rows: rank {metric.rank}, dim {metric.dim}")


def _cmd_project(args) -> None:
    features = _load_features(args.features)
    metric = load_metric(args.metric)
    projected = features.with_matrix(metric_project(metric, features.matrix))
    _save_features(args.out, projected)
    print(f"projected {features.n} rows to dim {projected.dim}")


def _cmd_train_classifier(args) -> None:
    features = _load_features(args.features)
    labels = load_label_table(args.labels)
    subset = select_task_subset(labels, args.task, args.min_count)
    rows = features.select(list(subset.member_ids))
    codes = subset.codes_for(subset.member_ids)
    model = train_one_vs_all(
        rows.matrix, codes, subset.classes, args.C,
        feature_kind=features.kind, metric_name="",
    )
    save_one_vs_all(args.out, model)
    print(f"trained {len(subset.classes)} one-vs-all classifiers on {rows.n} rows")


def _cmd_evaluate(args) -> None:
    spec = parse_experiment_spec(args.spec)
    result = run_experiment(spec, jobs=args.jobs)
    for path in result.written:
        print(f"wrote {path}")


def _cmd_fuse(args) -> None:
    blocks = []
    for path in args.block:
        fs = _load_features(path)
        blocks.append((fs, fs.kind))
    fused = feature_fusion(blocks, normalize_blocks=args.normalize_blocks)
    save_fused(args.out, fused)
    print(f"fused {len(blocks)} blocks into dim {fused.dim}")


def _cmd_search(args) -> None:
    features = _load_features(args.features)
    if args.metric:
        metric = load_metric(args.metric)
        features = features.with_matrix(metric_project(metric, features.matrix))
    labels = load_label_table(args.labels) if args.labels else None
    if args.exclude_same and labels is None:
        raise DataError("--exclude-same needs --labels")
    index = build_index(features.matrix, features.ids, labels)

    results = {}
    row_index = features.row_index()
    for query_id in args.query:
        if query_id not in row_index:
            raise DataError(f"unknown query id {query_id!r}")
        if args.exclude_same:
            results[query_id] = nearest_excluding(index, query_id, args.exclude_same, args.k)
        else:
            results[query_id] = nearest(index, features.matrix[row_index[query_id]], args.k)
    results_to_csv(args.out, results, labels, args.exclude_same or "style")
    print(f"wrote {sum(len(v) for v in results.values())} hits for "
          f"{len(results)} queries to {args.out}")


if __name__ == "__main__":
    sys.exit(main())
