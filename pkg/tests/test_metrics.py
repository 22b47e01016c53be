import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn import metrics as skm

from selfclassifier import metrics as M
from selfclassifier.errors import DimensionError, ParameterError

import oracles

INDEP_PRED = [0, 0, 1, 1]
INDEP_TRUTH = [0, 1, 0, 1]


def relabel(labels, rng):
    labels = np.asarray(labels)
    values = np.unique(labels)
    perm = rng.permutation(len(values)) + 10
    return np.array([perm[np.searchsorted(values, v)] for v in labels])


class TestContingency:
    def test_counts(self):
        ct = M.contingency([0, 0, 1, 2], [1, 1, 1, 0])
        np.testing.assert_array_equal(ct.table, [[0, 2], [0, 1], [1, 0]])
        assert ct.total == 4
        np.testing.assert_array_equal(ct.row_sums, [2, 1, 1])

    def test_length_mismatch(self):
        for fn in (M.nmi, M.ami, M.ari, M.hungarian_acc):
            with pytest.raises(DimensionError):
                fn([0, 1], [0, 1, 1])


class TestNMI:
    def test_identical(self):
        assert M.nmi([0, 1, 1, 2], [5, 3, 3, 4]) == pytest.approx(1.0)

    def test_constant_pred(self):
        assert M.nmi([0, 0, 0, 0], [0, 1, 0, 1]) == 0.0

    def test_independent(self):
        assert M.nmi(INDEP_PRED, INDEP_TRUTH) == pytest.approx(0.0, abs=1e-15)

    def test_both_constant(self):
        assert M.nmi([0, 0, 0], [4, 4, 4]) == 1.0

    @pytest.mark.parametrize("average", M.AVERAGES)
    def test_matches_sklearn(self, average):
        rng = np.random.default_rng(0)
        for _ in range(20):
            p, t = rng.integers(0, 4, 50), rng.integers(0, 3, 50)
            assert M.nmi(p, t, average) == pytest.approx(
                skm.normalized_mutual_info_score(t, p, average_method=average), abs=1e-12)

    def test_bad_average(self):
        with pytest.raises(ParameterError):
            M.nmi([0, 1], [0, 1], "harmonic")


class TestAMI:
    def test_identical(self):
        assert M.ami([0, 1, 1, 2, 2, 2], [2, 0, 0, 1, 1, 1]) == pytest.approx(1.0)

    def test_four_item_example_against_permutation_oracle(self):
        expected = oracles.ami(INDEP_PRED, INDEP_TRUTH)
        assert M.ami(INDEP_PRED, INDEP_TRUTH) == pytest.approx(expected, abs=1e-12)
        # E[MI] here averages MI over 4! relabelings: 16 give MI=0, 8 give ln 2
        assert oracles.expected_mi(INDEP_PRED, INDEP_TRUTH) == pytest.approx(math.log(2) / 3)
        assert expected == pytest.approx(-0.5)

    def test_emi_matches_permutation_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            m = int(rng.integers(2, 8))
            p, t = rng.integers(0, 3, m), rng.integers(0, 3, m)
            ct = M.contingency(p, t)
            assert M.expected_mutual_info(ct.row_sums, ct.col_sums) == pytest.approx(
                oracles.expected_mi(list(p), list(t)), abs=1e-12)

    @pytest.mark.parametrize("average", M.AVERAGES)
    def test_matches_sklearn(self, average):
        rng = np.random.default_rng(2)
        for _ in range(20):
            p, t = rng.integers(0, 5, 80), rng.integers(0, 4, 80)
            assert M.ami(p, t, average) == pytest.approx(
                skm.adjusted_mutual_info_score(t, p, average_method=average), abs=1e-10)

    def test_chance_level(self):
        rng = np.random.default_rng(3)
        truth = np.arange(200) % 5
        vals = [M.ami(rng.permutation(truth), truth) for _ in range(300)]
        assert abs(np.mean(vals)) < 0.02

    def test_degenerate_denominator(self):
        assert M.ami([0, 0, 0], [1, 1, 1]) == 1.0
        assert M.ami([0, 1, 2], [2, 1, 0]) == 1.0


class TestARI:
    def test_identical(self):
        assert M.ari([0, 0, 1, 2], [1, 1, 0, 2]) == 1.0

    def test_independent(self):
        # all-ones 2x2 table: sum C(nij,2) = 0, E = 2*2/6 = 2/3, max term = 2
        # so ARI = (0 - 2/3) / (2 - 2/3) = -1/2
        assert oracles.ari(INDEP_PRED, INDEP_TRUTH) == -oracles.Fraction(1, 2)
        assert M.ari(INDEP_PRED, INDEP_TRUTH) == -0.5

    def test_constant_pred(self):
        assert M.ari([0] * 6, [0, 0, 1, 1, 2, 2]) == 0.0

    def test_matches_sklearn(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            p, t = rng.integers(0, 5, 60), rng.integers(0, 4, 60)
            assert M.ari(p, t) == pytest.approx(skm.adjusted_rand_score(t, p), abs=1e-12)

    def test_needs_two_items(self):
        with pytest.raises(DimensionError):
            M.ari([0], [0])


class TestHungarianAcc:
    def test_permuted_truth(self):
        rng = np.random.default_rng(5)
        truth = rng.integers(0, 6, 40)
        acc, _ = M.hungarian_acc(truth, relabel(truth, rng))
        assert acc == 1.0

    def test_exact_permutation_mapping(self):
        acc, mapping = M.hungarian_acc([0, 0, 0, 1, 1, 2], [1, 1, 1, 0, 0, 2])
        assert acc == 1.0
        assert mapping == {0: 1, 1: 0, 2: 2}

    def test_matches_brute_force(self):
        rng = np.random.default_rng(6)
        for _ in range(15):
            k = int(rng.integers(2, 7))
            p, t = rng.integers(0, k, 60), rng.integers(0, k, 60)
            acc, _ = M.hungarian_acc(p, t)
            assert acc == pytest.approx(oracles.best_permutation_acc(list(p), list(t)), abs=1e-12)

    def test_rectangular(self):
        # more clusters than classes: surplus cluster stays unmatched
        acc, mapping = M.hungarian_acc([0, 0, 1, 1, 2, 2], [0, 0, 1, 1, 1, 1])
        assert acc == pytest.approx(4 / 6)
        assert len(mapping) == 2

    def test_majority_mode(self):
        acc, mapping = M.hungarian_acc([0, 0, 1, 1, 2, 2], [0, 0, 1, 1, 1, 1], mode="majority")
        assert acc == 1.0
        assert mapping == {0: 0, 1: 1, 2: 1}

    def test_at_least_any_fixed_permutation(self):
        rng = np.random.default_rng(7)
        p, t = rng.integers(0, 5, 100), rng.integers(0, 5, 100)
        acc, _ = M.hungarian_acc(p, t)
        for _ in range(50):
            perm = rng.permutation(5)
            assert acc >= np.mean(perm[p] == t)


class TestExhaustiveSmallPartitions:
    @pytest.mark.parametrize("m", [1, 2, 3, 4, 5])
    def test_all_pairs(self, m):
        parts = list(oracles.set_partitions(m))
        for p in parts:
            for t in parts:
                assert M.nmi(p, t) == pytest.approx(oracles.nmi(p, t), abs=1e-12)
                assert M.ami(p, t) == pytest.approx(oracles.ami(p, t), abs=1e-12)
                assert M.hungarian_acc(p, t)[0] == pytest.approx(oracles.best_permutation_acc(p, t), abs=1e-12)
                if m >= 2:
                    assert M.ari(p, t) == pytest.approx(float(oracles.ari(p, t)), abs=1e-12)


label_lists = st.integers(2, 30).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 4), min_size=n, max_size=n),
                        st.lists(st.integers(0, 4), min_size=n, max_size=n)))


class TestProperties:
    @settings(max_examples=80, deadline=None)
    @given(label_lists, st.integers(0, 2**32 - 1))
    def test_relabel_invariance(self, pt, seed):
        p, t = map(np.array, pt)
        rng = np.random.default_rng(seed)
        p2, t2 = relabel(p, rng), relabel(t, rng)
        base = M.flat_metrics(p, t)
        moved = M.flat_metrics(p2, t2)
        for k in base:
            assert moved[k] == pytest.approx(base[k], abs=1e-12)

    @settings(max_examples=80, deadline=None)
    @given(label_lists)
    def test_ranges(self, pt):
        p, t = pt
        m = M.flat_metrics(p, t)
        assert 0.0 <= m["nmi"] <= 1.0
        assert 0.0 <= m["acc"] <= 1.0
        assert m["ami"] <= 1.0 + 1e-12
        assert m["ari"] <= 1.0 + 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 4), min_size=2, max_size=30))
    def test_identical_scores_one(self, p):
        m = M.flat_metrics(p, p)
        for v in m.values():
            assert v == pytest.approx(1.0, abs=1e-12)

    def test_ari_independent_near_zero(self):
        rng = np.random.default_rng(8)
        vals = [M.ari(rng.integers(0, 5, 200), rng.integers(0, 5, 200)) for _ in range(300)]
        assert abs(np.mean(vals)) < 0.02


class TestHierarchy:
    def test_single_superclass(self):
        h = M.HierarchyMap({"top": {0: 0, 1: 0, 2: 0}})
        res = M.hierarchical_eval([0, 1, 2, 0, 1, 2], [0, 0, 1, 1, 2, 2], h)
        assert res["top"]["acc"] == 1.0

    def test_identity_level_equals_flat(self):
        pred, truth = [0, 1, 1, 2, 0, 2], [0, 0, 1, 2, 1, 2]
        h = M.HierarchyMap({"leaf": {0: 0, 1: 1, 2: 2}})
        assert M.hierarchical_eval(pred, truth, h)["leaf"] == M.flat_metrics(pred, truth)

    def test_two_level_example(self):
        # leaves 0 and 1 merge into super 0 at level 1; leaf 2 becomes super 1
        truth = [0, 0, 1, 1, 2, 2]
        pred = [0, 1, 0, 1, 2, 2]  # clusters 0/1 each mix leaves 0 and 1; cluster 2 is leaf 2
        h = M.HierarchyMap({"level1": {0: 0, 1: 0, 2: 1}, "leaf": {0: 0, 1: 1, 2: 2}})
        res = M.hierarchical_eval(pred, truth, h)
        # by hand: leaf matching 0->0, 1->1, 2->2 is right on items 0, 3, 4, 5
        assert res["leaf"]["acc"] == pytest.approx(4 / 6)
        # rolled up: clusters 0, 1 -> super 0 and cluster 2 -> super 1, all six right
        assert res["level1"]["acc"] == 1.0
        # the raw clusters are not merged for the information metrics
        assert res["level1"]["nmi"] < 1.0
        # one-to-one matching at level 1 cannot reach 1.0 with three clusters for two supers
        assert M.hierarchical_eval(pred, truth, h, "hungarian")["level1"]["acc"] == pytest.approx(4 / 6)
        assert M.hierarchical_eval(pred, truth, h, "majority")["level1"]["acc"] == 1.0

    def test_surplus_clusters_single_superclass(self):
        h = M.HierarchyMap({"top": {0: 0, 1: 0}})
        res = M.hierarchical_eval([0, 1, 2, 3, 4, 5], [0, 0, 0, 1, 1, 1], h)
        assert res["top"]["acc"] == 1.0

    def test_unmapped_leaf(self):
        h = M.HierarchyMap({"l": {0: 0, 1: 0}})
        with pytest.raises(ParameterError):
            M.hierarchical_eval([0, 1, 2], [0, 1, 2], h)

    def test_tsv_roundtrip(self, tmp_path):
        h = M.HierarchyMap({"coarse": {0: 0, 1: 0, 2: 1}, "leaf": {0: 0, 1: 1, 2: 2}})
        path = tmp_path / "h.tsv"
        h.write_tsv(path)
        assert path.read_text().splitlines()[0] == "leaf\tlevel\tsuper"
        back = M.HierarchyMap.read_tsv(path)
        assert list(back.levels) == ["coarse", "leaf"]
        assert back.levels == h.levels

    def test_tsv_rejects_partial_level(self, tmp_path):
        path = tmp_path / "h.tsv"
        path.write_text("leaf\tlevel\tsuper\n0\ta\t0\n1\ta\t0\n0\tb\t0\n")
        with pytest.raises(ParameterError):
            M.HierarchyMap.read_tsv(path)


class TestKNN:
    def test_unique_match_k1(self):
        train = np.eye(3)
        pred = M.knn_predict(train, [7, 8, 9], np.eye(3)[[1]], k=1)
        assert pred.tolist() == [8]

    def test_all_same_label(self):
        rng = np.random.default_rng(9)
        train = rng.normal(size=(10, 4))
        train /= np.linalg.norm(train, axis=1, keepdims=True)
        test_labels = np.array([3, 3, 1, 0, 3])
        acc = M.knn_probe(train, np.full(10, 3), train[:5], test_labels, k=4)
        assert acc == pytest.approx(np.mean(test_labels == 3))

    def test_tie_goes_to_most_similar(self):
        train = np.array([[1.0, 0.0], [0.0, 1.0]])
        query = np.array([[0.6, 0.8]])
        assert M.knn_predict(train, [0, 1], query, k=2).tolist() == [1]

    def test_k_capped_in_probe(self):
        # K=20 is capped at 2; each query ties 1-1 and the most similar neighbour is itself
        assert M.knn_probe(np.eye(2), [0, 1], np.eye(2), [0, 1], k=20) == 1.0

    def test_errors(self):
        with pytest.raises(ParameterError):
            M.knn_predict(np.zeros((0, 2)), [], np.ones((1, 2)))
        with pytest.raises(ParameterError):
            M.knn_predict(np.eye(2), [0, 1], np.eye(2), k=3)
