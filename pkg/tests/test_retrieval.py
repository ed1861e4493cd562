"""Nearest-neighbor search against exhaustive ranking oracles, including
the different-label variant used for cross-style lookups.
"""
from __future__ import annotations

import csv

import numpy as np
import pytest

import oracles
from conftest import label_table
from metricforge.retrieval import (
    build_index,
    nearest,
    nearest_excluding,
    results_to_csv,
)


def make_index(n=50, dim=4, seed=0, labels=None):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, dim))
    ids = tuple(f"img{i:04d}" for i in range(n))
    return build_index(X, ids, labels=labels), X, ids


class TestNearest:
    def test_self_query_ranks_first_at_zero(self):
        index, X, ids = make_index()
        hits = nearest(index, X[7], k=3)
        assert hits[0] == (ids[7], 0.0)
        assert hits[1][1] > 0.0

    def test_matches_exhaustive_ranking(self):
        index, X, ids = make_index(n=200, dim=5, seed=3)
        rng = np.random.default_rng(9)
        for _ in range(10):
            q = rng.standard_normal(5)
            want = oracles.ranked_hits(X, ids, q)
            for k in (1, 5, 20):
                got = nearest(index, q, k)
                assert [h[0] for h in got] == [w[0] for w in want[:k]]
                for (_, d_got), (_, d_want) in zip(got, want[:k]):
                    assert d_got == pytest.approx(d_want, rel=1e-12)

    def test_colinear_points_rank_by_distance(self):
        X = np.array([[0.0], [1.0], [3.0], [7.0]])
        ids = ("a", "b", "c", "d")
        index = build_index(X, ids)
        hits = nearest(index, np.array([2.9]), k=4)
        assert [h[0] for h in hits] == ["c", "b", "a", "d"]
        assert hits[0][1] == pytest.approx(0.1)

    def test_exact_distance_ties_break_by_id(self):
        # integer coordinates make the two distances bit-identical
        X = np.array([[1.0, 0.0], [-1.0, 0.0], [5.0, 5.0]])
        index = build_index(X, ("zeta", "alpha", "far"))
        hits = nearest(index, np.array([0.0, 0.0]), k=2)
        assert [h[0] for h in hits] == ["alpha", "zeta"]

    def test_distances_nonnegative_nondecreasing(self):
        index, X, _ = make_index(n=80, seed=5)
        hits = nearest(index, X[0] + 0.1, k=80)
        dists = [d for _, d in hits]
        assert all(d >= 0.0 for d in dists)
        assert all(a <= b for a, b in zip(dists, dists[1:]))

    def test_oversized_k_returns_all_with_warning(self):
        index, _, _ = make_index(n=6)
        with pytest.warns(UserWarning, match="exceeds index size"):
            hits = nearest(index, np.zeros(4), k=10)
        assert len(hits) == 6

    def test_bad_query_and_k_rejected(self):
        index, _, _ = make_index()
        with pytest.raises(ValueError, match="does not match index dim"):
            nearest(index, np.zeros(3), k=1)
        with pytest.raises(ValueError, match="k must be"):
            nearest(index, np.zeros(4), k=0)


class TestNearestExcluding:
    def _labeled_index(self, n=40, seed=2):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((n, 3))
        ids = [f"img{i:04d}" for i in range(n)]
        styles = [("cubism" if i % 2 else "baroque") for i in range(n)]
        labels = label_table(ids, styles=styles)
        return build_index(X, tuple(ids), labels=labels), X, ids, styles

    def test_hits_never_share_the_query_label(self):
        index, X, ids, styles = self._labeled_index()
        by_id = dict(zip(ids, styles))
        for qid in ids[:8]:
            for hit_id, _ in nearest_excluding(index, qid, "style", k=5):
                assert by_id[hit_id] != by_id[qid]
                assert hit_id != qid

    def test_matches_filtered_oracle(self):
        index, X, ids, styles = self._labeled_index(n=60, seed=8)
        by_id = dict(zip(ids, styles))
        for qid in (ids[0], ids[1], ids[31]):
            allowed = [i for i in ids if by_id[i] != by_id[qid]]
            q = X[ids.index(qid)]
            want = oracles.ranked_hits(index.matrix, ids, q, allowed_ids=allowed)
            got = nearest_excluding(index, qid, "style", k=7)
            assert [h[0] for h in got] == [w[0] for w in want[:7]]

    def test_unlabeled_rows_are_skipped(self):
        X = np.array([[0.0, 0.0], [0.1, 0.0], [0.2, 0.0], [5.0, 0.0]])
        ids = ("q", "near_unlabeled", "near_other", "far_other")
        labels = label_table(ids, styles=["a", None, "b", "b"])
        index = build_index(X, ids, labels=labels)
        hits = nearest_excluding(index, "q", "style", k=2)
        assert [h[0] for h in hits] == ["near_other", "far_other"]

    def test_all_same_label_rejected(self):
        X = np.zeros((3, 2))
        ids = ("a", "b", "c")
        labels = label_table(ids, styles=["x", "x", "x"])
        index = build_index(X, ids, labels=labels)
        with pytest.raises(ValueError, match="labeled differently"):
            nearest_excluding(index, "a", "style", k=1)

    def test_query_validation(self):
        index, _, ids, _ = self._labeled_index()
        with pytest.raises(ValueError, match="not in the label table"):
            nearest_excluding(index, "ghost", "style", k=1)
        unlabeled = build_index(index.matrix, index.ids)
        with pytest.raises(ValueError, match="without labels"):
            nearest_excluding(unlabeled, ids[0], "style", k=1)

    def test_oversized_k_clips_to_candidates(self):
        index, _, ids, styles = self._labeled_index(n=10)
        n_other = sum(1 for s in styles if s != styles[0])
        with pytest.warns(UserWarning, match="differently-labeled"):
            hits = nearest_excluding(index, ids[0], "style", k=50)
        assert len(hits) == n_other


class TestResultsCsv:
    def test_layout_and_label_column(self, tmp_path):
        ids = ("a", "b", "c")
        labels = label_table(ids, styles=["s1", "s2", None])
        results = {"a": [("b", 0.5), ("c", 1.25)]}
        path = tmp_path / "hits.csv"
        results_to_csv(path, results, labels=labels)
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["query_id", "rank", "hit_id", "distance", "hit_label"]
        assert rows[1] == ["a", "1", "b", "0.5", "s2"]
        assert rows[2] == ["a", "2", "c", "1.25", ""]

    def test_rank_column_counts_from_one_per_query(self, tmp_path):
        results = {"q1": [("x", 1.0)], "q2": [("y", 2.0), ("z", 3.0)]}
        path = tmp_path / "hits.csv"
        results_to_csv(path, results)
        rows = list(csv.reader(path.open()))[1:]
        assert [(r[0], r[1]) for r in rows] == [("q1", "1"), ("q2", "1"), ("q2", "2")]
