"""metricforge: task-optimized Mahalanobis metrics for image features.

Learn a metric from labeled examples with any of five learners (NCA, LMNN,
BoostMetric, ITML, MLKR), then use it three ways: project features for
one-vs-all SVM classification, fuse projections across feature kinds or
across metrics, or rank images by projected distance for similarity search.
"""

from .classify import (
    AccuracyReport,
    ConfusionMatrix,
    LinearSvm,
    OneVsAllModel,
    evaluate_cv,
    predict,
    train_linear_svm,
    train_one_vs_all,
)
from .dataset import (
    DataError,
    FeatureSet,
    LabelTable,
    SampleSet,
    SplitPlan,
    SyntheticCorpus,
    TaskSubset,
    generate_synthetic,
    load_feature_table,
    load_label_table,
    make_folds,
    select_task_subset,
    stratified_subsample,
)
from .fusion import BlockDescriptor, FusedFeatureSet, feature_fusion, metric_fusion
from .learners import LEARNERS, fit_boostmetric, fit_itml, fit_lmnn, fit_mlkr, fit_nca
from .metric_core import (
    ConstraintSet,
    LearnerConfig,
    MahalanobisMetric,
    build_constraints,
    factorize_metric,
    load_metric,
    mahalanobis_distance,
    metric_project,
    save_metric,
    validate_metric,
)
from .pca import PcaModel, explained_fraction, fit_pca, load_pca, pca_project, save_pca
from .retrieval import SearchIndex, build_index, nearest, nearest_excluding

__version__ = "0.1.0"

__all__ = [
    "AccuracyReport",
    "BlockDescriptor",
    "ConfusionMatrix",
    "ConstraintSet",
    "DataError",
    "FeatureSet",
    "FusedFeatureSet",
    "LEARNERS",
    "LabelTable",
    "LearnerConfig",
    "LinearSvm",
    "MahalanobisMetric",
    "OneVsAllModel",
    "PcaModel",
    "SampleSet",
    "SearchIndex",
    "SplitPlan",
    "SyntheticCorpus",
    "TaskSubset",
    "build_constraints",
    "build_index",
    "evaluate_cv",
    "explained_fraction",
    "factorize_metric",
    "feature_fusion",
    "fit_boostmetric",
    "fit_itml",
    "fit_lmnn",
    "fit_mlkr",
    "fit_nca",
    "fit_pca",
    "generate_synthetic",
    "load_feature_table",
    "load_label_table",
    "load_metric",
    "load_pca",
    "mahalanobis_distance",
    "make_folds",
    "metric_fusion",
    "metric_project",
    "nearest",
    "nearest_excluding",
    "pca_project",
    "predict",
    "save_metric",
    "save_pca",
    "select_task_subset",
    "stratified_subsample",
    "train_linear_svm",
    "train_one_vs_all",
    "validate_metric",
]
