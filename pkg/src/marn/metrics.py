"""Per-user AUC (strict-inequality pair counting, averaged uniformly over
users) and grouped variants over popularity buckets and the unseen flag."""

from __future__ import annotations

import bisect
from collections import defaultdict
from dataclasses import dataclass


class MetricsError(ValueError):
    pass


@dataclass
class ScoredExample:
    user: int
    item: int
    probability: float
    label: int
    bucket: int = 0
    unseen: bool = False


@dataclass
class AucReport:
    auc: float
    users_evaluated: int
    users_excluded: int  # users lacking a positive or a negative


def _user_auc(positives: list, negatives: list) -> float:
    """Fraction of (positive, negative) pairs strictly ordered correctly.

    Ties contribute zero, per the strict indicator in the metric definition
    (this deliberately differs from the common 0.5-per-tie convention)."""
    negatives = sorted(negatives)
    won = 0
    for p in positives:
        won += bisect.bisect_left(negatives, p)
    return won / (len(positives) * len(negatives))


def compute_auc(examples) -> AucReport:
    """Average per-user AUC; users without both classes are excluded and
    counted."""
    by_user: dict = defaultdict(lambda: ([], []))
    for ex in examples:
        by_user[ex.user][0 if ex.label == 1 else 1].append(ex.probability)
    aucs = []
    excluded = 0
    for pos, neg in by_user.values():
        if pos and neg:
            aucs.append(_user_auc(pos, neg))
        else:
            excluded += 1
    if not aucs:
        raise MetricsError("no user has both a positive and a negative example")
    return AucReport(sum(aucs) / len(aucs), len(aucs), excluded)


def auc_by_bucket(examples) -> dict:
    """AUC restricted to candidates in each popularity bucket; buckets with no
    qualifying user are absent from the result."""
    by_bucket: dict = defaultdict(list)
    for ex in examples:
        by_bucket[ex.bucket].append(ex)
    out = {}
    for bucket, subset in sorted(by_bucket.items()):
        try:
            out[bucket] = compute_auc(subset)
        except MetricsError:
            continue
    return out


def auc_for_subset(examples, predicate) -> AucReport | None:
    subset = [ex for ex in examples if predicate(ex)]
    if not subset:
        return None
    try:
        return compute_auc(subset)
    except MetricsError:
        return None
