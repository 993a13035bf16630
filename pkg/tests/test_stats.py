"""Tests for proof-length statistics."""

import pytest

from lemmaforge.errors import EmptyInput, MissingLength
from lemmaforge.stats import (
    CANONICAL_BUCKETS,
    LengthBucket,
    accuracy_by_length,
    bucket_for,
    length_stats,
    pass_at_k,
)


# --- length_stats tests ---


class TestLengthStats:
    def test_constant_lengths(self):
        stats = length_stats([3, 3, 3])
        assert stats.mean == 3.0
        assert stats.std == 0.0
        assert stats.count == 3

    def test_population_std(self):
        assert length_stats([1, 3]).std == pytest.approx(1.0)

    def test_extremes_land_in_buckets(self):
        stats = length_stats([1, 298])
        assert stats.histogram["1-2"] == 1
        assert stats.histogram["101-298"] == 1
        assert stats.max == 298
        assert stats.min == 1
        assert stats.out_of_range == 0

    def test_measures_proof_text(self):
        stats = length_stats(["simp\n-- note\nring", "rfl"])
        assert stats.values == [2, 1]

    def test_out_of_range(self):
        stats = length_stats([299, 5])
        assert stats.out_of_range == 1
        assert sum(stats.histogram.values()) == 1

    def test_empty(self):
        with pytest.raises(EmptyInput):
            length_stats([])


class TestBuckets:
    def test_canonical_labels(self):
        assert [b.label for b in CANONICAL_BUCKETS] == [
            "1-2", "3-5", "6-10", "11-15", "16-25", "26-100", "101-298",
        ]

    def test_bucket_for(self):
        assert bucket_for(5).label == "3-5"
        assert bucket_for(6).label == "6-10"
        assert bucket_for(0) is None

    def test_contains(self):
        assert 3 in LengthBucket(3, 5)
        assert "3" not in LengthBucket(3, 5)


# --- accuracy_by_length tests ---


class TestAccuracyByLength:
    def test_half_solved(self):
        lengths = {"a": 1, "b": 2, "c": 1, "d": 2}
        rows = accuracy_by_length({"a": True, "b": True, "c": False}, lengths)
        assert rows[0].total == 4
        assert rows[0].solved == 2
        assert rows[0].percent == 50.0

    def test_denominators_sum_to_dataset_size(self):
        sizes = [497, 204, 169, 103, 128, 210, 18]
        lengths = {
            f"{bucket.label}-{i}": bucket.lower
            for bucket, size in zip(CANONICAL_BUCKETS, sizes)
            for i in range(size)
        }
        solved = {lemma_id: i % 2 == 0 for i, lemma_id in enumerate(lengths)}
        rows = accuracy_by_length(solved, lengths)
        assert [row.total for row in rows] == sizes
        assert sum(row.total for row in rows) == len(lengths)
        assert sum(row.solved for row in rows) == sum(solved.values())

    def test_missing_outcome_is_unsolved(self):
        rows = accuracy_by_length({}, {"a": 4})
        assert rows[1].total == 1
        assert rows[1].solved == 0
        assert rows[1].percent == 0.0

    def test_missing_length_excluded(self):
        rows = accuracy_by_length({"a": True, "ghost": True}, {"a": 1})
        assert sum(row.total for row in rows) == 1

    def test_missing_length_strict(self):
        with pytest.raises(MissingLength, match="ghost"):
            accuracy_by_length({"ghost": True}, {}, strict=True)

    def test_empty_bucket(self):
        rows = accuracy_by_length({}, {})
        assert all(row.fraction == 0.0 for row in rows)


# --- pass_at_k tests ---


class TestPassAtK:
    @pytest.mark.parametrize("n, c, k, expected", [
        (10, 0, 1, 0.0),
        (10, 10, 1, 1.0),
        (10, 3, 1, 0.3),
        (5, 2, 5, 1.0),
        (10, 5, 3, 1 - 10 / 120),
    ])
    def test_unbiased_estimate(self, n, c, k, expected):
        assert pass_at_k(n, c, k) == pytest.approx(expected)
