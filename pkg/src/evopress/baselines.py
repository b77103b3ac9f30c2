"""Exact and heuristic baselines: exhaustive scan, knapsack DP, greedy scoring."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .fitness import Batch, FitnessOracle
from .level_space import (
    Budget,
    InfeasibleBudget,
    LevelAssignment,
    LevelDatabase,
    assignment_size,
)


class BaselineError(Exception):
    pass


class SearchSpaceTooLarge(BaselineError):
    pass


class KTooLarge(BaselineError):
    pass


DEFAULT_ENUMERATION_CAP = 1_000_000


def iter_assignments(db: LevelDatabase) -> Iterator[LevelAssignment]:
    """Every assignment in the cartesian product of per-unit levels."""
    ranges = [range(db.num_levels(i)) for i in range(db.n_units)]
    for combo in itertools.product(*ranges):
        yield LevelAssignment(combo)


def exact_drop_assignments(db: LevelDatabase, k: int) -> Iterator[LevelAssignment]:
    """Assignments with exactly k units at their most compressed level, rest at 0."""
    n = db.n_units
    if k < 0 or k > n:
        raise KTooLarge(f"cannot drop {k} of {n} units")
    for chosen in itertools.combinations(range(n), k):
        levels = [0] * n
        for i in chosen:
            levels[i] = db.max_level(i)
        yield LevelAssignment(tuple(levels))


def grouped_drop_assignments(
    db: LevelDatabase, groups: Sequence[Sequence[int]], choose: int
) -> Iterator[LevelAssignment]:
    """Assignments dropping exactly ``choose`` whole groups of units.

    Groups are disjoint unit-index tuples (consecutive pairs, say); a dropped
    group has every member at its most compressed level.
    """
    if choose < 0 or choose > len(groups):
        raise KTooLarge(f"cannot choose {choose} of {len(groups)} groups")
    for chosen in itertools.combinations(range(len(groups)), choose):
        levels = [0] * db.n_units
        for g in chosen:
            for i in groups[g]:
                levels[i] = db.max_level(i)
        yield LevelAssignment(tuple(levels))


def enumerate_feasible(
    db: LevelDatabase,
    budget: Budget,
    enumerator: Iterable[LevelAssignment] | None = None,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> list[LevelAssignment]:
    """Collect budget-feasible assignments, refusing to exceed ``cap`` of them."""
    source = enumerator if enumerator is not None else iter_assignments(db)
    feasible: list[LevelAssignment] = []
    for a in source:
        if assignment_size(db, a) <= budget.max_size:
            feasible.append(a)
            if len(feasible) > cap:
                raise SearchSpaceTooLarge(f"more than {cap} feasible assignments")
    if not feasible:
        raise InfeasibleBudget(f"no assignment fits the budget {budget.max_size}")
    return feasible


def exhaustive_search(
    db: LevelDatabase,
    budget: Budget,
    oracle: FitnessOracle,
    batch: Batch,
    enumerator: Iterable[LevelAssignment] | None = None,
    cap: int = DEFAULT_ENUMERATION_CAP,
    jobs: int = 1,
) -> tuple[LevelAssignment, float]:
    """Evaluate every feasible assignment on one shared batch; return the argmin.

    Ties go to the earlier enumerated assignment, so the result is
    deterministic for a fixed enumerator and batch.
    """
    feasible = enumerate_feasible(db, budget, enumerator, cap)
    fits = oracle.evaluate_pool(db, feasible, batch, jobs=jobs)
    best = min(range(len(feasible)), key=lambda i: (fits[i], i))
    return feasible[best], fits[best]


@dataclass(frozen=True)
class ErrorTable:
    """Per-(unit, level) errors and integer sizes, aligned with a database."""

    errors: tuple[tuple[float, ...], ...]
    sizes: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.errors) != len(self.sizes) or not self.errors:
            raise ValueError("errors and sizes must be non-empty and aligned")
        for i, (erow, srow) in enumerate(zip(self.errors, self.sizes)):
            if len(erow) != len(srow) or not erow:
                raise ValueError(f"unit {i}: errors and sizes rows must be non-empty and aligned")
            for s in srow:
                if isinstance(s, bool) or not isinstance(s, int) or s < 0:
                    raise ValueError(f"unit {i}: sizes must be non-negative integers, got {s!r}")

    @property
    def n_units(self) -> int:
        return len(self.errors)


def error_table_from_dict(doc: dict) -> ErrorTable:
    if not isinstance(doc, dict):
        raise ValueError("error table document must be a JSON object")
    unknown = set(doc) - {"errors", "sizes"}
    if unknown:
        raise ValueError(f"unknown field(s) {sorted(unknown)} in error table")
    try:
        errors = tuple(tuple(float(e) for e in row) for row in doc["errors"])
        sizes = tuple(tuple(int(s) for s in row) for row in doc["sizes"])
    except (KeyError, TypeError) as e:
        raise ValueError(f"malformed error table: {e}") from e
    return ErrorTable(errors=errors, sizes=sizes)


def load_error_table(path: str | Path) -> ErrorTable:
    with open(path, "r", encoding="utf-8") as fh:
        return error_table_from_dict(json.load(fh))


def table_error(table: ErrorTable, assignment: LevelAssignment) -> float:
    return sum(table.errors[i][l] for i, l in enumerate(assignment.levels))


def table_size(table: ErrorTable, assignment: LevelAssignment) -> int:
    return sum(table.sizes[i][l] for i, l in enumerate(assignment.levels))


def dp_allocate(table: ErrorTable, budget: int) -> LevelAssignment:
    """Minimize total error subject to total size <= budget, exactly.

    Multiple-choice knapsack over (unit, used size). Ties prefer the less
    compressed level. Cost is O(n_units * n_levels * budget).
    """
    if budget < 0:
        raise InfeasibleBudget(f"budget must be non-negative, got {budget}")
    n = table.n_units
    cap = min(budget, sum(max(row) for row in table.sizes))
    inf = float("inf")
    dp = np.zeros(cap + 1, dtype=np.float64)
    choices = np.zeros((n, cap + 1), dtype=np.int32)
    for i in range(n):
        new_dp = np.full(cap + 1, inf)
        choice = np.full(cap + 1, -1, dtype=np.int32)
        for l, (err, size) in enumerate(zip(table.errors[i], table.sizes[i])):
            if size > cap:
                continue
            cand = np.full(cap + 1, inf)
            cand[size:] = dp[: cap + 1 - size] + err
            better = cand < new_dp  # strict: earlier (less compressed) levels win ties
            new_dp = np.where(better, cand, new_dp)
            choice = np.where(better, l, choice)
        dp = new_dp
        choices[i] = choice
    if not np.isfinite(dp[cap]):
        raise InfeasibleBudget(f"no level combination fits size budget {budget}")
    levels = [0] * n
    s = cap
    for i in range(n - 1, -1, -1):
        l = int(choices[i][s])
        levels[i] = l
        s -= table.sizes[i][l]
    return LevelAssignment(tuple(levels))


def greedy_score_drop(db: LevelDatabase, scores: Sequence[float], k: int) -> LevelAssignment:
    """Fully compress the k lowest-scoring units; ties go to the lower index."""
    n = db.n_units
    if len(scores) != n:
        raise ValueError(f"got {len(scores)} scores for {n} units")
    if k < 0 or k > n:
        raise KTooLarge(f"cannot drop {k} of {n} units")
    order = np.argsort(np.asarray(scores, dtype=np.float64), kind="stable")
    levels = [0] * n
    for i in order[:k]:
        levels[int(i)] = db.max_level(int(i))
    return LevelAssignment(tuple(levels))
