"""GAP@20 against a brute-force AP oracle, plus top-k contracts."""

import numpy as np
import pytest

from gatedpool.metrics import GapAccumulator, gap_at_20, topk

from oracles import brute_force_gap, random_instance


class TestExamples:
    def test_single_true_label_first(self):
        assert gap_at_20(np.array([[0.9, 0.1, 0.2]]), [{0}]) == 1.0

    def test_ranks_one_and_three(self):
        scores = np.array([[0.9, 0.8, 0.7, 0.1]])
        assert gap_at_20(scores, [{0, 2}]) == pytest.approx((1 + 2 / 3) / 2, abs=1e-15)

    def test_positive_ranked_last_of_twenty(self):
        scores = np.linspace(1.0, 0.05, 20)[None, :]
        assert gap_at_20(scores, [{19}]) == pytest.approx(1 / 20, abs=1e-15)

    def test_positive_outside_top_twenty_counts_as_missed(self):
        scores = np.linspace(1.0, 0.0, 30)[None, :]
        assert gap_at_20(scores, [{25}]) == 0.0

    def test_multi_hot_labels_accepted(self):
        scores = np.array([[0.2, 0.9], [0.8, 0.1]])
        y = np.array([[0, 1], [1, 0]], dtype=bool)
        assert gap_at_20(scores, y) == 1.0


class TestAgainstOracle:
    def test_random_instances(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            scores, labels = random_instance(rng)
            assert abs(gap_at_20(scores, labels) - brute_force_gap(scores, labels)) <= 1e-12

    def test_random_instances_with_ties(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            scores, labels = random_instance(rng, ties=True)
            assert abs(gap_at_20(scores, labels) - brute_force_gap(scores, labels)) <= 1e-12


class TestProperties:
    def test_monotone_transform_invariance_is_exact(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            scores, labels = random_instance(rng)
            base = gap_at_20(scores, labels)
            assert gap_at_20(np.exp(3 * scores) - 7, labels) == base
            assert gap_at_20(scores ** 3, labels) == base

    def test_range_and_perfect_ranking(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            scores, labels = random_instance(rng)
            g = gap_at_20(scores, labels)
            assert 0.0 <= g <= 1.0
            y = np.zeros_like(scores)
            for v, ls in enumerate(labels):
                y[v, list(ls)] = 1.0
            perfect = y + 0.01 * rng.random(scores.shape)
            if all(len(ls) <= 20 for ls in labels) and any(labels):
                assert gap_at_20(perfect, labels) == pytest.approx(1.0, abs=1e-15)

    def test_merge_matches_single_accumulator(self):
        rng = np.random.default_rng(4)
        scores, labels = random_instance(rng)
        whole = GapAccumulator()
        for s, l in zip(scores, labels):
            whole.add(s, l)
        left, right = GapAccumulator(), GapAccumulator()
        cut = len(scores) // 2
        for s, l in zip(scores[:cut], labels[:cut]):
            left.add(s, l)
        for s, l in zip(scores[cut:], labels[cut:]):
            right.add(s, l)
        assert left.merge(right).value() == whole.value()

    def test_positive_count_is_capped(self):
        acc = GapAccumulator()
        acc.add(np.arange(30.0), set(range(30)))
        assert acc.num_positives == 20
        assert acc.value() == 1.0


class TestErrors:
    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            gap_at_20(np.zeros((0, 5)), [])
        with pytest.raises(ValueError):
            GapAccumulator().value()

    def test_non_finite_predictions(self):
        with pytest.raises(ValueError):
            gap_at_20(np.array([[0.1, np.nan]]), [{0}])


class TestTopK:
    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(5)
        s = rng.random(12)
        got = [l for l, _ in topk(s, 5)]
        assert got == list(np.argsort(-s)[:5])

    def test_ties_prefer_lower_label(self):
        assert [l for l, _ in topk(np.ones(6), 3)] == [0, 1, 2]

    def test_k_at_or_beyond_length(self):
        s = np.array([0.3, 0.9, 0.1])
        assert [l for l, _ in topk(s, 3)] == [1, 0, 2]
        assert len(topk(s, 10)) == 3

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            topk(np.ones(3), 0)
