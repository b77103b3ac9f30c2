"""(1+lambda) evolutionary search over level assignments with staged selection.

Mutation trades single level steps between unit pairs so the total size of the
initial parent is preserved exactly for every candidate ever evaluated. Each
generation filters the offspring through stages of increasing token counts and
shrinking survivor sets; the parent joins the final stage, so the survivor is
never worse than the parent on the shared batch.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .fitness import FitnessOracle, OracleError
from .level_space import (
    Budget,
    InfeasibleBudget,
    LevelAssignment,
    LevelDatabase,
    assignment_size,
    exchangeable,
)

# Stream tags: initialization, per-(generation, stage) batches, per-generation
# mutation randomness. All derive from the single run seed.
_TAG_INIT = 0
_TAG_BATCH = 1
_TAG_MUT = 2
_SEED_MASK = 0xFFFFFFFFFFFFFFFF

# Rejection bounds: 16*n draws for a switch partner, 16*lambda offspring
# regeneration attempts per generation.
_PARTNER_DRAWS_PER_UNIT = 16
_REGEN_FACTOR = 16


class NoFeasibleSwitch(Exception):
    """No constraint-preserving level switch exists for the sampled unit."""


@dataclass(frozen=True)
class SelectionStage:
    tokens: int
    survivors: int


@dataclass(frozen=True)
class SelectionSchedule:
    """Offspring count, selection stages, and initialization sampling sizes."""

    offspring: int
    stages: tuple[SelectionStage, ...]
    initial_candidates: int = 32
    initial_tokens: int = 2048

    def __post_init__(self):
        if self.offspring < 1:
            raise ValueError(f"offspring must be positive, got {self.offspring}")
        if not self.stages:
            raise ValueError("at least one selection stage is required")
        for st in self.stages:
            if st.tokens < 1:
                raise ValueError(f"stage token counts must be positive, got {st.tokens}")
            if st.survivors < 1:
                raise ValueError(f"stage survivor counts must be positive, got {st.survivors}")
        toks = [st.tokens for st in self.stages]
        if any(b <= a for a, b in zip(toks, toks[1:])):
            raise ValueError(f"stage token counts must strictly increase, got {toks}")
        surv = [st.survivors for st in self.stages]
        if any(b > a for a, b in zip(surv, surv[1:])):
            raise ValueError(f"stage survivors must be non-increasing, got {surv}")
        if surv[-1] != 1:
            raise ValueError(f"the final stage must keep exactly one survivor, got {surv[-1]}")
        if self.offspring < surv[-1]:
            raise ValueError("offspring must cover the final stage survivors")
        if self.initial_candidates < 0:
            raise ValueError(f"initial_candidates must be non-negative, got {self.initial_candidates}")
        if self.initial_tokens < 1:
            raise ValueError(f"initial_tokens must be positive, got {self.initial_tokens}")


@dataclass(frozen=True)
class MutationCountDistribution:
    """How many level switches one mutation applies.

    MIN_OF_TWO_UNIFORM draws min(U1, U2) with U1, U2 ~ uniform integers in
    [lo, hi]; CONSTANT always applies c switches.
    """

    dist_kind: str
    lo: int = 1
    hi: int = 1
    c: int = 1

    @classmethod
    def min_of_two_uniform(cls, lo: int, hi: int) -> "MutationCountDistribution":
        if not (1 <= lo <= hi):
            raise ValueError(f"need 1 <= lo <= hi, got lo={lo}, hi={hi}")
        return cls(dist_kind="MIN_OF_TWO_UNIFORM", lo=lo, hi=hi)

    @classmethod
    def constant(cls, c: int) -> "MutationCountDistribution":
        if c < 1:
            raise ValueError(f"switch count must be positive, got {c}")
        return cls(dist_kind="CONSTANT", c=c)


def sample_num_mutations(dist: MutationCountDistribution, rng: np.random.Generator) -> int:
    if dist.dist_kind == "CONSTANT":
        return dist.c
    if dist.dist_kind == "MIN_OF_TWO_UNIFORM":
        a = int(rng.integers(dist.lo, dist.hi + 1))
        b = int(rng.integers(dist.lo, dist.hi + 1))
        return min(a, b)
    raise ValueError(f"unknown mutation count distribution {dist.dist_kind!r}")


def mutation_count_from_dict(doc: dict) -> MutationCountDistribution:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ValueError("mutations document must be an object with a 'kind' field")
    kind = str(doc["kind"]).lower()
    if kind == "min_of_two_uniform":
        unknown = set(doc) - {"kind", "lo", "hi"}
        if unknown:
            raise ValueError(f"unknown field(s) {sorted(unknown)} in mutations")
        return MutationCountDistribution.min_of_two_uniform(int(doc["lo"]), int(doc["hi"]))
    if kind == "constant":
        unknown = set(doc) - {"kind", "c"}
        if unknown:
            raise ValueError(f"unknown field(s) {sorted(unknown)} in mutations")
        return MutationCountDistribution.constant(int(doc["c"]))
    raise ValueError(f"unknown mutation count kind {doc['kind']!r}")


def level_switch_mutation(
    db: LevelDatabase,
    parent: LevelAssignment,
    rng: np.random.Generator,
    num_switches: int,
) -> LevelAssignment:
    """Apply ``num_switches`` size-preserving level switches to a copy of parent.

    Each switch compresses one unit u (drawn uniformly among units with
    compression headroom) by one level and decompresses an exchangeable partner
    v by one matching level. Partners are rejection-sampled uniformly over all
    units; after 16*n failed draws the offspring is abandoned with
    NoFeasibleSwitch and the caller regenerates.
    """
    if num_switches < 1:
        raise ValueError(f"num_switches must be positive, got {num_switches}")
    levels = list(parent.levels)
    n = db.n_units
    draw_bound = _PARTNER_DRAWS_PER_UNIT * n
    for _ in range(num_switches):
        with_headroom = [i for i in range(n) if levels[i] < db.max_level(i)]
        if not with_headroom:
            raise NoFeasibleSwitch("no unit has compression headroom")
        u = with_headroom[int(rng.integers(0, len(with_headroom)))]
        current = LevelAssignment(tuple(levels))
        v = -1
        for _ in range(draw_bound):
            cand = int(rng.integers(0, n))
            if exchangeable(db, current, u, cand):
                v = cand
                break
        if v < 0:
            raise NoFeasibleSwitch(
                f"no exchangeable partner for unit {u} after {draw_bound} draws"
            )
        levels[u] += 1
        levels[v] -= 1
    return LevelAssignment(tuple(levels))


@dataclass
class SearchState:
    parent: LevelAssignment
    generation: int
    best_fitness_history: list[float]
    rng_seed: int
    stagnation_counter: int = 0
    evaluations_used: int = 0  # cumulative token count spent on evaluations


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    survivor_fitness: float
    survivor: LevelAssignment
    evaluations_used: int  # cumulative tokens through this generation
    elapsed: float  # wall-clock seconds spent in this generation


TRACE_HEADER = ("generation", "survivor_fitness", "evaluations_used", "elapsed_s", "assignment")


class SearchTrace:
    """Per-generation records plus the CSV form the CLI writes."""

    def __init__(self, records: Sequence[GenerationRecord] = ()):
        self.records: list[GenerationRecord] = list(records)

    def append(self, rec: GenerationRecord) -> None:
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[GenerationRecord]:
        return iter(self.records)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_HEADER)
            for r in self.records:
                writer.writerow(
                    [
                        r.generation,
                        repr(r.survivor_fitness),
                        r.evaluations_used,
                        f"{r.elapsed:.6f}",
                        "-".join(str(l) for l in r.survivor.levels),
                    ]
                )


def _stream(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed & _SEED_MASK, *tags)))


def _mixing_plan(db: LevelDatabase, budget: Budget):
    """Either an assignment that needs no sampling, or the two levels to mix.

    Returns ("exact", assignment) when some uniform assignment meets the budget
    exactly (or the whole database already fits), else ("mix", lo, hi) where
    uniform(lo) overshoots the budget and uniform(hi) fits under it.
    """
    if budget.max_size < db.min_total_size:
        raise InfeasibleBudget(
            f"budget {budget.max_size} below the fully compressed size {db.min_total_size}"
        )
    max_levels = max(db.num_levels(i) for i in range(db.n_units))
    for l in range(max_levels):
        uniform = db.uniform_assignment(l)
        size = assignment_size(db, uniform)
        if size == budget.max_size:
            return ("exact", uniform)
        if size < budget.max_size:
            if l == 0:
                # nothing less compressed exists; the slack is unusable
                return ("exact", uniform)
            return ("mix", l - 1, l)
    raise InfeasibleBudget("no uniform level fits the budget")  # unreachable after the guard


def _forced_moves(db: LevelDatabase, budget: Budget) -> int:
    """How many units a mixed initialization must push to the more compressed level."""
    plan = _mixing_plan(db, budget)
    if plan[0] == "exact":
        return 0
    _, lo, hi = plan
    base = assignment_size(db, db.uniform_assignment(lo))
    deltas = [
        db.units[i].level_sizes[min(lo, db.max_level(i))] - db.units[i].level_sizes[min(hi, db.max_level(i))]
        for i in range(db.n_units)
    ]
    positive = sorted({d for d in deltas if d > 0})
    deficit = base - budget.max_size
    if len(positive) == 1:
        step = positive[0]
    else:
        # heterogeneous steps: estimate with the mean positive step
        step = max(1, round(sum(positive) / len(positive)))
    return -(-deficit // step)


def _sample_mixed_candidate(
    db: LevelDatabase,
    lo: int,
    hi: int,
    max_size: int,
    rng: np.random.Generator,
) -> LevelAssignment:
    levels = [min(lo, db.max_level(i)) for i in range(db.n_units)]
    size = sum(db.units[i].level_sizes[levels[i]] for i in range(db.n_units))
    movable = [i for i in range(db.n_units) if db.max_level(i) >= hi and levels[i] == lo]
    deltas = {i: db.units[i].level_sizes[lo] - db.units[i].level_sizes[hi] for i in movable}

    if db.exchange_policy.kind_restricted:
        # Kind-restricted mutation can never rebalance per-kind counts, so the
        # initial split must already be exact: equal moves per kind.
        positive = sorted({d for d in deltas.values() if d > 0})
        if len(positive) != 1:
            raise InfeasibleBudget("balanced initialization requires one uniform level step")
        step = positive[0]
        deficit = size - max_size
        moves = -(-deficit // step)
        kinds: list[str] = []
        for i in movable:
            if db.units[i].kind not in kinds:
                kinds.append(db.units[i].kind)
        if moves % len(kinds) != 0:
            raise InfeasibleBudget(
                f"cannot split {moves} compression moves evenly across {len(kinds)} kinds"
            )
        per_kind = moves // len(kinds)
        for kind in kinds:
            members = [i for i in movable if db.units[i].kind == kind and deltas[i] > 0]
            if len(members) < per_kind:
                raise InfeasibleBudget(
                    f"kind {kind!r} has {len(members)} movable units, needs {per_kind}"
                )
            for idx in rng.choice(len(members), size=per_kind, replace=False):
                levels[members[int(idx)]] = hi
        return LevelAssignment(tuple(levels))

    for j in rng.permutation(len(movable)):
        if size <= max_size:
            break
        i = movable[int(j)]
        levels[i] = hi
        size -= deltas[i]
    if size > max_size:
        raise InfeasibleBudget(f"mixing levels {lo} and {hi} cannot reach size {max_size}")
    return LevelAssignment(tuple(levels))


def _initialize_with_cost(
    db: LevelDatabase,
    budget: Budget,
    oracle: FitnessOracle,
    schedule: SelectionSchedule,
    rng: np.random.Generator,
    jobs: int = 1,
) -> tuple[LevelAssignment, int]:
    plan = _mixing_plan(db, budget)
    if plan[0] == "exact":
        return plan[1], 0
    _, lo, hi = plan
    if schedule.initial_candidates < 1:
        raise ValueError(
            "initial_candidates must be positive when the budget falls between uniform levels"
        )
    candidates = [
        _sample_mixed_candidate(db, lo, hi, budget.max_size, rng)
        for _ in range(schedule.initial_candidates)
    ]
    batch = oracle.draw_batch(schedule.initial_tokens, rng)
    fits = oracle.evaluate_pool(db, candidates, batch, jobs=jobs)
    best = min(range(len(candidates)), key=lambda i: (fits[i], i))
    return candidates[best], schedule.initial_candidates * schedule.initial_tokens


def initialize(
    db: LevelDatabase,
    budget: Budget,
    oracle: FitnessOracle,
    schedule: SelectionSchedule,
    rng: np.random.Generator,
) -> LevelAssignment:
    """Pick the starting parent: a uniform exact match when one exists, else the
    fittest of ``initial_candidates`` random mixes of the two adjacent levels."""
    parent, _ = _initialize_with_cost(db, budget, oracle, schedule, rng)
    return parent


def run_generation(
    state: SearchState,
    db: LevelDatabase,
    oracle: FitnessOracle,
    schedule: SelectionSchedule,
    dist: MutationCountDistribution,
    rng: np.random.Generator | None = None,
    jobs: int = 1,
) -> tuple[SearchState, GenerationRecord]:
    """One elitist generation: mutate, filter through the stages, keep the winner.

    Oracle failures propagate as OracleError with the state unchanged.
    """
    start = time.perf_counter()
    gen = state.generation + 1
    if rng is None:
        rng = _stream(state.rng_seed, _TAG_MUT, gen)
    target = assignment_size(db, state.parent)

    offspring: list[LevelAssignment] = []
    attempts = 0
    regen_bound = _REGEN_FACTOR * schedule.offspring
    while len(offspring) < schedule.offspring:
        if attempts >= regen_bound:
            raise NoFeasibleSwitch(
                f"could not build {schedule.offspring} feasible offspring in {regen_bound} attempts"
            )
        attempts += 1
        try:
            child = level_switch_mutation(db, state.parent, rng, sample_num_mutations(dist, rng))
        except NoFeasibleSwitch:
            continue
        offspring.append(child)

    pool = offspring
    parent_pos = -1
    used = 0
    survivor = state.parent
    survivor_fitness = float("nan")
    for s, stage in enumerate(schedule.stages):
        final = s == len(schedule.stages) - 1
        if final:
            pool = pool + [state.parent]
            parent_pos = len(pool) - 1
        for cand in pool:
            assert assignment_size(db, cand) == target, "candidate size drifted from the parent"
        batch = oracle.draw_batch(stage.tokens, _stream(state.rng_seed, _TAG_BATCH, gen, s))
        fits = oracle.evaluate_pool(db, pool, batch, jobs=jobs)
        used += stage.tokens * len(pool)
        # ties favor the parent, then the lower pool index
        order = sorted(range(len(pool)), key=lambda i: (fits[i], 0 if i == parent_pos else 1, i))
        if final:
            winner = order[0]
            assert fits[winner] <= fits[parent_pos], "survivor worse than parent on the shared batch"
            survivor = pool[winner]
            survivor_fitness = fits[winner]
        else:
            pool = [pool[i] for i in order[: stage.survivors]]

    stagnated = survivor == state.parent
    new_state = SearchState(
        parent=survivor,
        generation=gen,
        best_fitness_history=state.best_fitness_history + [survivor_fitness],
        rng_seed=state.rng_seed,
        stagnation_counter=state.stagnation_counter + 1 if stagnated else 0,
        evaluations_used=state.evaluations_used + used,
    )
    record = GenerationRecord(
        generation=gen,
        survivor_fitness=survivor_fitness,
        survivor=survivor,
        evaluations_used=new_state.evaluations_used,
        elapsed=time.perf_counter() - start,
    )
    return new_state, record


def run_search(
    db: LevelDatabase,
    budget: Budget,
    oracle: FitnessOracle,
    schedule: SelectionSchedule,
    dist: MutationCountDistribution,
    max_generations: int,
    patience: int = 20,
    rng_seed: int = 0,
    jobs: int = 1,
) -> tuple[LevelAssignment, SearchTrace]:
    """Full search: initialize, then run generations until the budget of
    ``max_generations`` is spent or the parent has not changed for ``patience``
    generations (patience 0 disables early stopping).

    All randomness derives from ``rng_seed``. If an oracle failure aborts the
    run, the OracleError carries the generations completed so far as
    ``exc.partial_trace``.
    """
    if max_generations < 0:
        raise ValueError(f"max_generations must be non-negative, got {max_generations}")
    if patience < 0:
        raise ValueError(f"patience must be non-negative, got {patience}")
    seed = rng_seed & _SEED_MASK
    parent, init_cost = _initialize_with_cost(
        db, budget, oracle, schedule, _stream(seed, _TAG_INIT), jobs=jobs
    )
    state = SearchState(
        parent=parent,
        generation=0,
        best_fitness_history=[],
        rng_seed=seed,
        stagnation_counter=0,
        evaluations_used=init_cost,
    )
    trace = SearchTrace()
    for _ in range(max_generations):
        if patience and state.stagnation_counter >= patience:
            break
        try:
            state, record = run_generation(state, db, oracle, schedule, dist, jobs=jobs)
        except OracleError as e:
            e.partial_trace = trace  # let callers flush what completed
            raise
        trace.append(record)
    return state.parent, trace
