import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mitfusion.metrics import (
    error_score,
    evaluate,
    render_report,
    report_tsv,
    sample_errors,
    topk_accuracy,
    topk_indices,
    topk_labels,
)
from oracles import eq3_error_direct, topk_direct

CLASSES20 = [f"c{i:02d}" for i in range(20)]


def random_proba(n, c, seed):
    rng = np.random.default_rng(seed)
    p = rng.random((n, c))
    return p / p.sum(axis=1, keepdims=True)


class TestTopK:
    def test_forced_order(self):
        assert topk_labels([0.1, 0.7, 0.2], 2) == [1, 2]

    def test_uniform_ties(self):
        assert topk_labels([0.25] * 4, 3) == [0, 1, 2]

    def test_named(self):
        assert topk_labels([0.1, 0.7, 0.2], 1, classes=["a", "b", "c"]) == ["b"]

    def test_bad_k(self):
        with pytest.raises(ValueError):
            topk_labels([0.5, 0.5], 0)
        with pytest.raises(ValueError):
            topk_labels([0.5, 0.5], 3)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_sort_oracle(self, seed):
        p = random_proba(50, 20, seed)
        # inject exact ties
        p[:, 5] = p[:, 6]
        got = topk_indices(p, 5)
        for row, g in zip(p, got):
            assert list(g) == topk_direct(list(row), 5)


class TestErrorScore:
    def test_truth_ranked_third(self):
        p = np.array([[0.5, 0.3, 0.1, 0.05, 0.05]])
        assert error_score(p, [2], 5) == 0.0
        assert error_score(p, [2], 1) == 1.0

    def test_all_correct(self):
        p = np.eye(6) * 0.9 + 0.02
        for k in (1, 3, 5):
            assert error_score(p, np.arange(6), k) == 0.0

    def test_matches_per_sample_oracle(self):
        p = random_proba(100, 20, 7)
        y = np.random.default_rng(8).integers(0, 20, 100)
        for k in (1, 2, 5, 20):
            expected = sum(eq3_error_direct(list(row), t, k) for row, t in zip(p, y)) / 100
            assert error_score(p, y, k) == expected

    def test_string_labels(self):
        p = np.array([[0.2, 0.8], [0.6, 0.4]])
        assert error_score(p, ["b", "b"], 1, classes=["a", "b"]) == 0.5

    def test_errors(self):
        with pytest.raises(ValueError):
            error_score(np.zeros((0, 3)), [], 1)
        with pytest.raises(ValueError):
            error_score(np.ones((2, 3)) / 3, [0], 1)
        with pytest.raises(ValueError, match="outside"):
            error_score(np.ones((1, 2)) / 2, ["zz"], 1, classes=["a", "b"])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 12), st.integers(1, 40))
    def test_identity_and_monotone(self, seed, c, n):
        p = random_proba(n, c, seed)
        y = np.random.default_rng(seed + 1).integers(0, c, n)
        accs = [topk_accuracy(p, y, k) for k in range(1, c + 1)]
        for k in range(1, c + 1):
            # accuracy is defined as 1 - error, so this direction is exact in floats
            assert accs[k - 1] == 1.0 - error_score(p, y, k)
            assert abs(error_score(p, y, k) - (1.0 - accs[k - 1])) <= 2**-53
        assert all(a <= b for a, b in zip(accs, accs[1:]))
        assert accs[-1] == 1.0


class TestEvaluate:
    def test_all_correct_20(self):
        p = np.eye(20) * 0.5 + 0.5 / 20
        res = evaluate(p, np.arange(20), CLASSES20)
        assert res.top1 == 1.0 and res.top5 == 1.0
        assert all(v == 1.0 for v in res.per_class.values())

    def test_skewed(self):
        # class A: 3 of 4 correct, class B: 0 of 4 correct
        a_right = [0.9, 0.1]
        b_wrong = [0.9, 0.1]
        p = np.array([a_right] * 3 + [[0.1, 0.9]] + [b_wrong] * 4)
        y = ["A"] * 4 + ["B"] * 4
        res = evaluate(p, y, ["A", "B"])
        assert res.per_class == {"A": 0.75, "B": 0.0}
        assert res.top1 == 0.375
        assert res.top5 == 1.0

    def test_top5_at_least_top1(self):
        p = random_proba(200, 20, 3)
        y = np.random.default_rng(4).integers(0, 20, 200)
        res = evaluate(p, y, CLASSES20)
        assert res.top5 >= res.top1

    def test_weighted_per_class_equals_overall(self):
        p = random_proba(300, 20, 5)
        y = np.random.default_rng(6).integers(0, 20, 300)
        res = evaluate(p, y, CLASSES20)
        weighted = sum(res.per_class[c] * res.class_counts[c] for c in CLASSES20 if res.class_counts[c]) / 300
        assert abs(weighted - res.top1) < 1e-12

    def test_permutation_invariant(self):
        p = random_proba(80, 20, 9)
        y = np.random.default_rng(10).integers(0, 20, 80)
        perm = np.random.default_rng(11).permutation(80)
        a = evaluate(p, y, CLASSES20)
        b = evaluate(p[perm], y[perm], CLASSES20)
        assert a == b

    def test_missing_class_reported_na(self):
        res = evaluate(np.array([[0.7, 0.2, 0.1]]), [0], ["x", "y", "z"])
        assert res.per_class["y"] is None
        assert res.top5 == 1.0
        assert "n/a" in render_report(res)

    def test_report_layout(self):
        p = np.eye(20) * 0.5 + 0.5 / 20
        text = render_report(evaluate(p, np.arange(20), CLASSES20), title="demo")
        lines = text.splitlines()
        assert lines[0] == "demo"
        rows = [line for line in lines if line.startswith("| c")]
        assert len(rows) == 10
        assert rows[0].split("|")[1].strip() == "c00" and rows[0].split("|")[3].strip() == "c10"
        tsv = report_tsv(evaluate(p, np.arange(20), CLASSES20))
        assert "top1\t1.000000" in tsv

    def test_sample_errors_vector(self):
        p = np.array([[0.6, 0.4], [0.3, 0.7]])
        np.testing.assert_array_equal(sample_errors(p, [0, 0], 1), [0.0, 1.0])
