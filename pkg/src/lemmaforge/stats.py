"""Proof-length statistics, length buckets and accuracy by length."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyInput, MissingLength
from .script import text_proof_length

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LengthBucket:
    """Inclusive range of proof lengths."""
    lower: int
    upper: int

    @property
    def label(self) -> str:
        return f"{self.lower}-{self.upper}"

    def __contains__(self, length: object) -> bool:
        return isinstance(length, int) and self.lower <= length <= self.upper


CANONICAL_BUCKETS = (
    LengthBucket(1, 2),
    LengthBucket(3, 5),
    LengthBucket(6, 10),
    LengthBucket(11, 15),
    LengthBucket(16, 25),
    LengthBucket(26, 100),
    LengthBucket(101, 298),
)


def bucket_for(length: int, buckets: Sequence[LengthBucket] = CANONICAL_BUCKETS) -> LengthBucket | None:
    for bucket in buckets:
        if length in bucket:
            return bucket
    return None


@dataclass
class LengthStats:
    count: int
    mean: float
    std: float
    max: int
    min: int
    histogram: dict[str, int]
    values: list[int] = field(repr=False, default_factory=list)
    out_of_range: int = 0


def length_stats(
    proofs: Iterable[int | str],
    buckets: Sequence[LengthBucket] = CANONICAL_BUCKETS,
) -> LengthStats:
    """Mean, population std, max, min and bucket histogram of proof lengths.

    Args:
        proofs: Proof lengths, or tactic bodies to measure

    Raises:
        EmptyInput: no proofs given
    """
    values = [p if isinstance(p, int) else text_proof_length(p) for p in proofs]
    if not values:
        raise EmptyInput("length statistics need at least one proof")

    arr = np.asarray(values, dtype=np.float64)
    histogram = {bucket.label: 0 for bucket in buckets}
    out_of_range = 0
    for value in values:
        bucket = bucket_for(value, buckets)
        if bucket is None:
            out_of_range += 1
        else:
            histogram[bucket.label] += 1
    if out_of_range:
        logger.warning("%d proof length(s) outside the bucket range", out_of_range)

    return LengthStats(
        count=len(values),
        mean=float(arr.mean()),
        std=float(arr.std(ddof=0)),
        max=int(arr.max()),
        min=int(arr.min()),
        histogram=histogram,
        values=values,
        out_of_range=out_of_range,
    )


@dataclass
class BucketAccuracy:
    bucket: LengthBucket
    solved: int = 0
    total: int = 0

    @property
    def fraction(self) -> float:
        return self.solved / self.total if self.total else 0.0

    @property
    def percent(self) -> float:
        return round(100.0 * self.fraction, 1)


def accuracy_by_length(
    solved: Mapping[str, bool],
    lengths: Mapping[str, int],
    buckets: Sequence[LengthBucket] = CANONICAL_BUCKETS,
    strict: bool = False,
) -> list[BucketAccuracy]:
    """Solved fraction per length bucket.

    Denominators count every lemma in `lengths` (the dataset), so they sum
    to the dataset size; lemmas without an outcome count as unsolved.

    Args:
        solved: Lemma id -> solved flag, from evaluation outcomes
        lengths: Lemma id -> dataset proof length
        strict: Raise instead of warning about outcomes without a length

    Raises:
        MissingLength: in strict mode, an outcome's lemma has no length
    """
    rows = [BucketAccuracy(bucket) for bucket in buckets]
    by_label = {row.bucket.label: row for row in rows}

    missing = sorted(set(solved) - set(lengths))
    if missing and strict:
        raise MissingLength(f"no dataset proof length for {', '.join(missing)}")
    for lemma_id in missing:
        logger.warning("%s: no dataset proof length, excluded", lemma_id)

    for lemma_id, length in lengths.items():
        bucket = bucket_for(length, buckets)
        if bucket is None:
            logger.warning("%s: proof length %d outside the bucket range", lemma_id, length)
            continue
        row = by_label[bucket.label]
        row.total += 1
        if solved.get(lemma_id, False):
            row.solved += 1
    return rows


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased pass@k estimate from n samples of which c are correct."""
    if n - c < k:
        return 1.0
    return float(1.0 - np.prod(1.0 - k / np.arange(n - c + 1, n + 1)))
