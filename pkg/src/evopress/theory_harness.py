"""Empirical checks of the convergence theory on constrained bit strings.

The object of study is the (1+lambda) search restricted to bit strings with a
fixed number of ones, optimizing a linear function with strictly increasing
weights. Progress is measured by the inversion potential: the number of pairs
(i < j) with x_i > x_j, zero exactly at the optimum. The harness drives the
real engine (single exact-fitness stage, one switch per mutation) so the
measurements certify the shipped implementation, not a simplified copy.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .fitness import Batch, FitnessOracle, LinearOracle
from .level_space import Budget, LevelAssignment, LevelDatabase, binary_database
from .mutation_search import (
    MutationCountDistribution,
    SearchState,
    SelectionSchedule,
    SelectionStage,
    run_generation,
)


class NoInversions(Exception):
    """The bit string is already sorted; spread is undefined."""


@dataclass(frozen=True)
class BitString:
    """A tuple over {0, 1}; ones mark retained units, zeros compressed ones."""

    bits: tuple[int, ...]

    def __post_init__(self):
        for b in self.bits:
            if b not in (0, 1):
                raise ValueError(f"bits must be 0 or 1, got {b!r}")

    @property
    def n(self) -> int:
        return len(self.bits)

    @property
    def zeros(self) -> int:
        return sum(1 for b in self.bits if b == 0)


def count_inversions(x: BitString) -> int:
    """Number of pairs (i < j) with x_i > x_j.

    Computed by the closed form sum(position of each zero, 1-based) minus
    k(k+1)/2 for k zeros, which equals the pair count for 0/1 strings.
    """
    total = 0
    k = 0
    for pos, b in enumerate(x.bits, start=1):
        if b == 0:
            total += pos
            k += 1
    return total - k * (k + 1) // 2


def average_spread(x: BitString) -> Fraction:
    """Mean index distance j - i over all inversions, as an exact rational."""
    ones_before = 0
    pos_sum_before = 0  # sum of 1-based positions of ones seen so far
    count = 0
    spread = 0
    for pos, b in enumerate(x.bits, start=1):
        if b == 1:
            ones_before += 1
            pos_sum_before += pos
        else:
            count += ones_before
            spread += ones_before * pos - pos_sum_before
    if count == 0:
        raise NoInversions("bit string has no inversions")
    return Fraction(spread, count)


def spread_lemma_violations(n: int) -> int:
    """Count strings of length n whose average spread falls below sqrt(s)/16.

    Exhaustive over all 2^n strings; the comparison is done in integers
    (256 * spread_sum^2 >= s^3) so no floating point is involved.
    """
    if n < 1 or n > 24:
        raise ValueError(f"exhaustive check supports 1 <= n <= 24, got {n}")
    codes = np.arange(2**n, dtype=np.int64)
    bits = (codes[:, None] >> np.arange(n, dtype=np.int64)[None, :]) & 1
    pos = np.arange(1, n + 1, dtype=np.int64)
    ones_cum = np.cumsum(bits, axis=1)
    wsum_cum = np.cumsum(bits * pos, axis=1)
    ones_before = ones_cum - bits
    wsum_before = wsum_cum - bits * pos
    zeros = 1 - bits
    s = (zeros * ones_before).sum(axis=1)
    spread = (zeros * (ones_before * pos - wsum_before)).sum(axis=1)
    mask = s > 0
    lhs = 256 * spread[mask] ** 2
    rhs = s[mask] ** 3
    return int(np.count_nonzero(lhs < rhs))


def stage_advance_probability(
    n: int, k: int, j: int, trials: int, rng: np.random.Generator
) -> float:
    """Monte-Carlo estimate of P[one level switch advances a stage-j string].

    Stage j means exactly j of the n-k ones sit in the first k positions. A
    switch picks a uniform one and a uniform zero and swaps them; it advances
    when the new string is at stage j-1.
    """
    if not (1 <= k <= n - 1):
        raise ValueError(f"need 1 <= k <= n-1, got n={n}, k={k}")
    if not (0 <= j <= min(k, n - k)):
        raise ValueError(f"stage j must be in [0, min(k, n-k)], got {j}")
    if trials < 1:
        raise ValueError(f"trials must be positive, got {trials}")
    if j == 0:
        return 0.0
    m = n - k  # total ones
    # stage-j strings: j ones among the first k positions, j zeros among the rest
    first = (np.argsort(rng.random((trials, k)), axis=1) < j).astype(np.int8)
    last = (np.argsort(rng.random((trials, m)), axis=1) >= j).astype(np.int8)
    x = np.concatenate([first, last], axis=1)
    rows = np.arange(trials)
    # positions of ones / zeros per row; counts are equal across rows
    one_pos = np.argsort(1 - x, axis=1, kind="stable")[:, :m]
    zero_pos = np.argsort(x, axis=1, kind="stable")[:, :k]
    pick_one = one_pos[rows, rng.integers(0, m, size=trials)]
    pick_zero = zero_pos[rows, rng.integers(0, k, size=trials)]
    x[rows, pick_one] = 0
    x[rows, pick_zero] = 1
    advanced = x[:, :k].sum(axis=1) == j - 1
    return float(np.count_nonzero(advanced)) / trials


@dataclass(frozen=True)
class ConvergenceStats:
    n: int
    k: int
    lam: int
    trials: int
    mean_generations: float
    std_generations: float
    mean_evaluations: float


class _CountingOracle(FitnessOracle):
    """Forwards to an inner oracle, counting every fitness evaluation."""

    def __init__(self, inner: FitnessOracle):
        self.inner = inner
        self.count = 0

    def draw_batch(self, tokens: int, rng: np.random.Generator) -> Batch:
        return self.inner.draw_batch(tokens, rng)

    def evaluate(self, db, assignment, batch) -> float:
        self.count += 1
        return self.inner.evaluate(db, assignment, batch)

    def evaluate_pool(self, db, pool, batch, jobs: int = 1) -> list[float]:
        self.count += len(pool)
        return self.inner.evaluate_pool(db, pool, batch, jobs=jobs)


def _bits_of(assignment: LevelAssignment) -> BitString:
    # level 0 = retained = bit 1; level 1 = dropped = bit 0
    return BitString(tuple(1 - l for l in assignment.levels))


def measure_convergence(
    n: int, k: int, lam: int, trials: int, rng_seed: int = 0
) -> ConvergenceStats:
    """Generations until zero inversions, averaged over independent trials.

    Each trial draws strictly increasing weights, starts from a uniform random
    string with k zeros, and runs the engine with one switch per mutation and
    exact fitness until the optimum is reached. The inversion potential is
    asserted non-increasing along every run.
    """
    if n < 1 or not (0 <= k <= n):
        raise ValueError(f"need n >= 1 and 0 <= k <= n, got n={n}, k={k}")
    if lam < 1 or trials < 1:
        raise ValueError(f"lambda and trials must be positive, got {lam}, {trials}")
    db = binary_database(n)
    schedule = SelectionSchedule(
        offspring=lam,
        stages=(SelectionStage(tokens=1, survivors=1),),
        initial_candidates=0,
        initial_tokens=1,
    )
    dist = MutationCountDistribution.constant(1)
    harmonic2 = sum(1.0 / (j * j) for j in range(1, k + 1))
    gen_cap = 1000 + int(200 * k * (n - k) * harmonic2 / lam) if k else 1000
    generations = np.zeros(trials, dtype=np.int64)
    evaluations = np.zeros(trials, dtype=np.int64)
    for t in range(trials):
        trial_ss = np.random.SeedSequence((rng_seed & 0xFFFFFFFFFFFFFFFF, t))
        start_child, engine_child = trial_ss.spawn(2)
        start_rng = np.random.default_rng(start_child)
        levels = [0] * n
        for i in start_rng.choice(n, size=k, replace=False):
            levels[int(i)] = 1
        parent = LevelAssignment(tuple(levels))
        w = np.sort(start_rng.random(n))
        w = w + np.arange(n) * 1e-12  # keep strictly increasing even on collisions
        oracle = _CountingOracle(
            LinearOracle(weights=tuple((-float(wi), 0.0) for wi in w))
        )
        state = SearchState(
            parent=parent,
            generation=0,
            best_fitness_history=[],
            rng_seed=int(engine_child.generate_state(2, dtype=np.uint64)[0]),
            stagnation_counter=0,
        )
        potential = count_inversions(_bits_of(parent))
        gens = 0
        while potential > 0:
            state, _ = run_generation(state, db, oracle, schedule, dist)
            gens += 1
            new_potential = count_inversions(_bits_of(state.parent))
            assert new_potential <= potential, "inversion potential increased under elitism"
            potential = new_potential
            if gens > gen_cap:
                raise RuntimeError(f"trial {t} exceeded {gen_cap} generations")
        generations[t] = gens
        evaluations[t] = oracle.count
    std = float(np.std(generations, ddof=1)) if trials > 1 else 0.0
    return ConvergenceStats(
        n=n,
        k=k,
        lam=lam,
        trials=trials,
        mean_generations=float(np.mean(generations)),
        std_generations=std,
        mean_evaluations=float(np.mean(evaluations)),
    )


STATS_HEADER = ("n", "k", "lambda", "trials", "mean_generations", "std_generations", "mean_evaluations")


def write_stats_csv(stats: Iterable[ConvergenceStats], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STATS_HEADER)
        for s in stats:
            writer.writerow(
                [s.n, s.k, s.lam, s.trials, repr(s.mean_generations), repr(s.std_generations), repr(s.mean_evaluations)]
            )
