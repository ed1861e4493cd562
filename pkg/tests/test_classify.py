"""Linear SVM against a convex solver, one-vs-all bookkeeping, and the
cross-validation accounting identities the report tables rely on.
"""
from __future__ import annotations

import numpy as np
import pytest

import oracles
from conftest import blobs, feature_set, label_table
from metricforge.classify import (
    AccuracyReport,
    ConfusionMatrix,
    LinearSvm,
    OneVsAllModel,
    accuracy_table_csv,
    confusion_csv,
    evaluate_cv,
    load_class_order,
    load_one_vs_all,
    predict,
    save_one_vs_all,
    svm_primal_objective,
    train_linear_svm,
    train_one_vs_all,
)
from metricforge.dataset import SplitPlan, make_folds, select_task_subset
from metricforge.metric_core import MahalanobisMetric


def separable_task(n_classes=3, per_class=8, dim=4, seed=0):
    X, y = blobs(n_classes, per_class, dim, spread=0.3, separation=8.0, seed=seed)
    return X, y


# ---------------------------------------------------------------- binary SVM


class TestLinearSvm:
    def test_symmetric_pair_has_unit_slope(self):
        # For +/-1 at -/+1 with C >= 1/2 the optimum is w=1, b=0, value 1/2.
        X = np.array([[-1.0], [1.0]])
        y = np.array([-1.0, 1.0])
        svm = train_linear_svm(X, y, C=10.0)
        assert svm.w[0] == pytest.approx(1.0, abs=1e-6)
        assert svm.b == pytest.approx(0.0, abs=1e-6)
        assert svm_primal_objective(svm, X, y) == pytest.approx(0.5, rel=1e-6)

    def test_objective_matches_convex_solver(self):
        rng = np.random.default_rng(21)
        X = np.vstack([
            rng.standard_normal((10, 3)) + [1.2, 0.0, 0.0],
            rng.standard_normal((10, 3)) - [1.2, 0.0, 0.0],
        ])
        y = np.repeat([1.0, -1.0], 10)
        for C in (0.1, 1.0, 10.0):
            svm = train_linear_svm(X, y, C=C)
            got = svm_primal_objective(svm, X, y)
            want = oracles.svm_primal_optimum(X, y, C)
            assert got == pytest.approx(want, rel=1e-3)

    def test_separable_data_classified_perfectly(self):
        rng = np.random.default_rng(5)
        X = np.vstack([
            rng.standard_normal((15, 4)) + 4.0,
            rng.standard_normal((15, 4)) - 4.0,
        ])
        y = np.repeat([1.0, -1.0], 15)
        svm = train_linear_svm(X, y, C=10.0)
        assert np.all(np.sign(svm.decision(X)) == y)

    def test_doubling_c_keeps_separable_training_accuracy(self):
        rng = np.random.default_rng(9)
        X = np.vstack([
            rng.standard_normal((12, 3)) + 3.0,
            rng.standard_normal((12, 3)) - 3.0,
        ])
        y = np.repeat([1.0, -1.0], 12)
        for C in (1.0, 2.0, 4.0):
            svm = train_linear_svm(X, y, C=C)
            assert np.all(np.sign(svm.decision(X)) == y)

    def test_label_validation(self):
        X = np.ones((4, 2))
        with pytest.raises(ValueError, match=r"\+/-1"):
            train_linear_svm(X, np.array([0.0, 1.0, 0.0, 1.0]))
        with pytest.raises(ValueError, match="single-class"):
            train_linear_svm(X, np.ones(4))
        with pytest.raises(ValueError, match="C must be"):
            train_linear_svm(X, np.array([1.0, -1.0, 1.0, -1.0]), C=0.0)


# ---------------------------------------------------------------- one-vs-all


class TestOneVsAll:
    def test_separable_blobs_recovered(self):
        X, y = separable_task()
        model = train_one_vs_all(X, y, ("a", "b", "c"))
        assert np.array_equal(model.predict_codes(X), y)

    def test_predict_returns_class_name(self):
        X, y = separable_task()
        model = train_one_vs_all(X, y, ("a", "b", "c"))
        names = ["a", "b", "c"]
        for i in range(len(X)):
            assert predict(model, X[i]) == names[y[i]]

    def test_argmax_tie_breaks_to_lowest_ordinal(self):
        # fixed decision values: w=0 makes the decision equal b everywhere
        def flat(b):
            return LinearSvm(w=np.zeros(2), b=b, C=1.0)

        model = OneVsAllModel(("a", "b", "c"), (flat(0.2), flat(0.9), flat(-1.0)),
                              "", "")
        assert model.predict_codes(np.zeros((1, 2)))[0] == 1
        tied = OneVsAllModel(("a", "b", "c"), (flat(0.5), flat(0.5), flat(-1.0)),
                             "", "")
        assert tied.predict_codes(np.zeros((1, 2)))[0] == 0

    def test_class_order_permutation_maps_predictions(self):
        X, y = separable_task(seed=3)
        names = np.array(["a", "b", "c"])
        model = train_one_vs_all(X, y, tuple(names))
        # same problem presented with classes listed in reverse
        y_rev = 2 - y
        model_rev = train_one_vs_all(X, y_rev, tuple(names[::-1]))
        pred = [model.classes[c] for c in model.predict_codes(X)]
        pred_rev = [model_rev.classes[c] for c in model_rev.predict_codes(X)]
        assert pred == pred_rev

    def test_needs_two_classes_and_full_coverage(self):
        X = np.ones((4, 2))
        with pytest.raises(ValueError, match="at least 2"):
            train_one_vs_all(X, np.zeros(4, dtype=int), ("a",))
        with pytest.raises(ValueError, match="no training rows"):
            train_one_vs_all(X, np.array([0, 0, 1, 1]), ("a", "b", "c"))

    def test_round_trip_preserves_predictions(self, tmp_path):
        X, y = separable_task(seed=11)
        model = train_one_vs_all(X, y, ("a", "b", "c"), feature_kind="vgg",
                                 metric_name="lmnn")
        path = tmp_path / "model.bin"
        save_one_vs_all(path, model)
        back = load_one_vs_all(path)
        assert back.classes == model.classes
        assert back.feature_kind == "vgg"
        assert back.metric_name == "lmnn"
        assert np.array_equal(back.predict_codes(X), model.predict_codes(X))
        for a, b in zip(back.svms, model.svms):
            assert a.w.tobytes() == b.w.tobytes()
            assert a.b == b.b


# ---------------------------------------------------------------- cross-validation


def cv_setup(n_classes=3, per_class=9, dim=4, seed=0, spread=0.3, separation=8.0):
    X, y = blobs(n_classes, per_class, dim, spread=spread,
                 separation=separation, seed=seed)
    feats = feature_set(X)
    names = [f"s{c}" for c in y]
    labels = label_table(feats.ids, styles=names)
    subset = select_task_subset(labels, "style", min_count=2)
    plan = make_folds(subset, 3, seed=0)
    return feats, subset, plan


class TestEvaluateCv:
    def test_separable_data_scores_perfectly(self):
        feats, subset, plan = cv_setup()
        report, cm = evaluate_cv(feats, subset, plan)
        assert report.mean_accuracy == 1.0
        assert all(a == 1.0 for a in report.fold_accuracies)
        assert cm.accuracy() == 1.0

    def test_confusion_rows_sum_to_class_counts(self):
        feats, subset, plan = cv_setup(per_class=7, spread=2.0, separation=1.0)
        _, cm = evaluate_cv(feats, subset, plan)
        assert cm.counts.sum() == len(subset.member_ids)
        assert np.all(cm.counts.sum(axis=1) == 7)

    def test_accuracy_is_trace_over_total(self):
        feats, subset, plan = cv_setup(spread=2.0, separation=1.0, seed=4)
        report, cm = evaluate_cv(feats, subset, plan)
        assert cm.accuracy() == pytest.approx(
            np.trace(cm.counts) / cm.counts.sum()
        )
        assert report.mean_accuracy == pytest.approx(
            float(np.mean(report.fold_accuracies))
        )

    def test_no_metric_equals_identity_metric(self):
        feats, subset, plan = cv_setup(seed=2, spread=1.5, separation=2.0)
        base_rep, base_cm = evaluate_cv(feats, subset, plan)
        ident = MahalanobisMetric.identity(feats.dim)
        id_rep, id_cm = evaluate_cv(feats, subset, plan, metric=ident)
        assert base_rep.fold_accuracies == id_rep.fold_accuracies
        assert np.array_equal(base_cm.counts, id_cm.counts)

    def test_power_of_two_rescaling_is_exact(self):
        # features times 4 under a factor of 1/4 reproduce the original
        # rows exactly in floating point, so every count must match
        feats, subset, plan = cv_setup(seed=6, spread=1.5, separation=2.0)
        scaled = feats.with_matrix(feats.matrix * 4.0)
        quarter = MahalanobisMetric(np.eye(feats.dim) * 0.25, name="scale")
        rep_a, cm_a = evaluate_cv(feats, subset, plan)
        rep_b, cm_b = evaluate_cv(scaled, subset, plan, metric=quarter)
        assert rep_a.fold_accuracies == rep_b.fold_accuracies
        assert np.array_equal(cm_a.counts, cm_b.counts)

    def test_report_carries_projection_dim(self):
        feats, subset, plan = cv_setup()
        rank2 = MahalanobisMetric(np.eye(feats.dim)[:2], name="lmnn")
        report, _ = evaluate_cv(feats, subset, plan, metric=rank2)
        assert report.dim == 2
        assert report.metric_name == "lmnn"
        base, _ = evaluate_cv(feats, subset, plan)
        assert base.dim == feats.dim

    def test_fold_without_class_rows_warns(self):
        feats, subset, plan = cv_setup(n_classes=3, per_class=6)
        # push every s2 member out of fold 2 so that fold has no s2 test
        # rows while every training union still sees the class
        assignment = dict(plan.assignment)
        for img_id in subset.member_ids:
            if subset.codes_for([img_id])[0] == 2 and assignment[img_id] == 2:
                assignment[img_id] = 1
        fixed = SplitPlan(3, 0, assignment)
        with pytest.warns(UserWarning, match="no test rows"):
            evaluate_cv(feats, subset, fixed)

    def test_plan_outside_subset_rejected(self):
        feats, subset, plan = cv_setup()
        bad = SplitPlan(3, 0, {**plan.assignment, "ghost": 0})
        with pytest.raises(ValueError, match="outside the task subset"):
            evaluate_cv(feats, subset, bad)


# ---------------------------------------------------------------- report tables


def fake_report(metric_name, kind, accs, dim):
    return AccuracyReport(
        task="style", feature_kind=kind, metric_name=metric_name,
        fold_accuracies=tuple(accs), dim=dim,
    )


class TestTables:
    def test_accuracy_table_layout(self):
        reports = [
            fake_report("baseline", "vgg", (0.5, 0.6), 512),
            fake_report("baseline", "hog", (0.4, 0.4), 512),
            fake_report("lmnn", "vgg", (0.7, 0.8), 100),
            fake_report("lmnn", "hog", (0.6, 0.6), 100),
        ]
        csv = accuracy_table_csv(reports, feature_order=["vgg", "hog"])
        lines = csv.strip().splitlines()
        assert lines[0] == "Metric,vgg,hog,Dim"
        assert lines[1] == "Baseline,55.00,40.00,512"
        assert lines[2] == "LMNN,75.00,60.00,100"

    def test_mixed_dims_joined(self):
        reports = [
            fake_report("nca", "vgg", (0.5,), 27),
            fake_report("nca", "hog", (0.5,), 27),
            fake_report("mlkr", "vgg", (0.5,), 512),
            fake_report("mlkr", "hog", (0.5,), 300),
        ]
        csv = accuracy_table_csv(reports, feature_order=["vgg", "hog"])
        lines = csv.strip().splitlines()
        by_name = {ln.split(",")[0]: ln for ln in lines[1:]}
        assert by_name["NCA"].endswith(",27")
        assert by_name["MLKR"].endswith(",512/300")

    def test_unknown_metric_rows_sorted_after_known(self):
        reports = [
            fake_report("zzz", "vgg", (0.1,), 5),
            fake_report("custom", "vgg", (0.2,), 5),
            fake_report("baseline", "vgg", (0.3,), 5),
        ]
        lines = accuracy_table_csv(reports).strip().splitlines()
        assert [ln.split(",")[0] for ln in lines[1:]] == ["Baseline", "custom", "zzz"]

    def test_confusion_csv_counts_and_normalized(self):
        cm = ConfusionMatrix(("a", "b"), np.array([[3, 1], [0, 4]], dtype=float))
        raw = confusion_csv(cm).strip().splitlines()
        assert raw[0] == "class,a,b"
        assert raw[1] == "a,3,1"
        norm = confusion_csv(cm, normalized=True).strip().splitlines()
        cells = [float(x) for x in norm[1].split(",")[1:]]
        assert cells == pytest.approx([0.75, 0.25])

    def test_reordered_confusion_keeps_totals(self):
        cm = ConfusionMatrix(("a", "b", "c"),
                             np.arange(9, dtype=float).reshape(3, 3))
        back = cm.reordered(["c", "a", "b"])
        assert back.classes == ("c", "a", "b")
        assert back.counts.sum() == cm.counts.sum()
        assert back.counts[0, 0] == cm.counts[2, 2]

    def test_class_order_file(self, tmp_path):
        p = tmp_path / "order.txt"
        p.write_text("b\n\na\n# not a class\nc\n")
        assert load_class_order(p) == ["b", "a", "c"]
