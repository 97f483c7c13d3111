"""Supervision tasks: the aggregate function g and its label space.

Each task turns a tuple of hidden per-instance labels y_1..y_m into one
observed group label z:

==================  ====  =========  ==========================================
kind                m     labels     z
==================  ====  =========  ==========================================
pairwise            2     1..k       1 if y1 == y2 else 0
triplet             3     1..k       1 if y1 == y2 and y1 != y3 else 0
llp                 >=2   1..k       count vector (n of class 1, ..., class k)
mil                 >=2   {0, 1}     max(y_1..y_m)  -- 1 iff any positive
rank                2     1..k       1 if y1 < y2 else 0
ordinal_triplet     3     1..k       1 if |y1 - y2| < |y1 - y3| else 0
==================  ====  =========  ==========================================

The triplet comparison uses the 0/1 disagreement distance between classes;
the ordinal variant uses |y - y'| on the ordered label set. MIL is binary
with label 1 the positive class.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

TASK_KINDS = ("pairwise", "triplet", "llp", "mil", "rank", "ordinal_triplet")

# Tasks whose group size is fixed by definition.
FIXED_GROUP_SIZE = {"pairwise": 2, "triplet": 3, "rank": 2, "ordinal_triplet": 3}

# Hard cap on the number of count vectors enumerate_z will materialize.
MAX_COMPOSITIONS = 10**6


@dataclass(frozen=True)
class Task:
    """A supervision regime: kind of aggregate label, group size m, class count k."""

    kind: str
    m: int
    k: int

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; expected one of {TASK_KINDS}")
        fixed = FIXED_GROUP_SIZE.get(self.kind)
        if fixed is not None and self.m != fixed:
            raise ValueError(f"task {self.kind!r} requires m={fixed}, got m={self.m}")
        if self.kind in ("llp", "mil") and self.m < 2:
            raise ValueError(f"task {self.kind!r} requires m >= 2, got m={self.m}")
        if self.kind == "mil" and self.k != 2:
            raise ValueError(f"task 'mil' is binary (k=2), got k={self.k}")
        if self.kind in ("pairwise", "triplet") and self.k < 2:
            raise ValueError(f"task {self.kind!r} requires k >= 2, got k={self.k}")
        if self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")

    @property
    def label_values(self) -> tuple[int, ...]:
        """Per-instance label alphabet: {0,1} for MIL, 1..k otherwise."""
        if self.kind == "mil":
            return (0, 1)
        return tuple(range(1, self.k + 1))

    def is_binary_z(self) -> bool:
        """True when the aggregate label is a 0/1 indicator (all tasks but llp)."""
        return self.kind != "llp"


def _check_labels(task: Task, labels) -> tuple[int, ...]:
    labels = tuple(int(y) for y in labels)
    if len(labels) != task.m:
        raise ValueError(f"expected {task.m} labels for task {task.kind!r}, got {len(labels)}")
    valid = set(task.label_values)
    for y in labels:
        if y not in valid:
            raise ValueError(f"label {y} outside the task's label set {sorted(valid)}")
    return labels


def aggregate_label(task: Task, labels):
    """Apply the task's aggregate function g to a tuple of instance labels.

    Returns 0/1 for the indicator tasks and a tuple of k counts for llp.
    """
    labels = _check_labels(task, labels)
    if task.kind == "pairwise":
        return int(labels[0] == labels[1])
    if task.kind == "triplet":
        # 0/1 class distance: d(y1,y2) < d(y1,y3) iff y1 == y2 and y1 != y3
        return int(labels[0] == labels[1] and labels[0] != labels[2])
    if task.kind == "llp":
        counts = [0] * task.k
        for y in labels:
            counts[y - 1] += 1
        return tuple(counts)
    if task.kind == "mil":
        return int(max(labels))
    if task.kind == "rank":
        return int(labels[0] < labels[1])
    if task.kind == "ordinal_triplet":
        return int(abs(labels[0] - labels[1]) < abs(labels[0] - labels[2]))
    raise AssertionError(task.kind)


def count_compositions(m: int, k: int) -> int:
    """Number of ways to write m as an ordered sum of k nonnegative counts."""
    return math.comb(m + k - 1, k - 1)


def _compositions(m: int, k: int):
    """All count vectors of length k summing to m, first coordinate descending."""
    if k == 1:
        yield (m,)
        return
    for first in range(m, -1, -1):
        for rest in _compositions(m - first, k - 1):
            yield (first,) + rest


def enumerate_z(task: Task) -> list:
    """All feasible aggregate labels for the task, duplicate-free.

    Binary tasks return [0, 1]. For llp this is every count vector of the
    group size over k classes; raises if that set exceeds MAX_COMPOSITIONS.
    """
    if task.is_binary_z():
        return [0, 1]
    n_comp = count_compositions(task.m, task.k)
    if n_comp > MAX_COMPOSITIONS:
        raise ValueError(
            f"llp label space has {n_comp} count vectors, above the "
            f"{MAX_COMPOSITIONS} enumeration bound"
        )
    return list(_compositions(task.m, task.k))


def consistent_tuples(task: Task, z, max_tuples: int = 10**7, m: int | None = None) -> list[tuple[int, ...]]:
    """All label tuples y_1..y_m with g(y_1..y_m) = z, in lexicographic order.

    The total label space has |labels|^m tuples; raises when that exceeds
    max_tuples. ``m`` defaults to the task's group size (llp/mil groups may
    deviate from it).
    """
    m = task.m if m is None else int(m)
    sized = task if m == task.m else Task(task.kind, m, task.k)
    n_values = len(task.label_values)
    if n_values**m > max_tuples:
        raise ValueError(
            f"label space {n_values}^{m} exceeds the enumeration bound {max_tuples}"
        )
    if task.kind == "llp":
        z = tuple(int(c) for c in z)
    else:
        z = int(z)
    return [
        tup
        for tup in itertools.product(task.label_values, repeat=m)
        if aggregate_label(sized, tup) == z
    ]
