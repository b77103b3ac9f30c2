"""Search space of per-unit compression levels under an exact size budget.

A database declares, for every compressible unit of a model, the ordered list
of sizes it can take (least compressed first). Assignments pick one level per
unit; the exchange policy says which pairs of units may trade a level step so
that the total size never moves.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence


class LevelSpaceError(Exception):
    """Base class for database and assignment validation failures."""


class DuplicateId(LevelSpaceError):
    pass


class EmptyLevels(LevelSpaceError):
    pass


class IncreasingSizes(LevelSpaceError):
    pass


class LevelOutOfRange(LevelSpaceError):
    pass


class InfeasibleBudget(LevelSpaceError):
    pass


class ExchangePolicy(enum.Enum):
    """Which unit pairs may exchange one compression step.

    Every exchange additionally requires the freed and reclaimed sizes to match
    exactly; the policy only narrows the admissible pairs further.
    """

    ANY = "any"
    SAME_KIND = "same_kind"
    SAME_STEP = "same_step"
    SAME_KIND_AND_STEP = "same_kind_and_step"

    @property
    def kind_restricted(self) -> bool:
        return self in (ExchangePolicy.SAME_KIND, ExchangePolicy.SAME_KIND_AND_STEP)


@dataclass(frozen=True)
class UnitSpec:
    """One compressible unit: identity, kind tag, and its ordered level sizes.

    ``level_sizes[0]`` is the least compressed (largest) size; sizes must be
    non-increasing integers. The last level is the most compressed.
    """

    id: str
    kind: str
    level_sizes: tuple[int, ...]


@dataclass(frozen=True)
class LevelAssignment:
    """One chosen level index per unit, aligned with the database unit order."""

    levels: tuple[int, ...]

    def replace(self, unit: int, level: int) -> "LevelAssignment":
        lv = list(self.levels)
        lv[unit] = level
        return LevelAssignment(tuple(lv))


@dataclass(frozen=True)
class Budget:
    """Inclusive upper bound on the total assignment size."""

    max_size: int


@dataclass(frozen=True)
class LevelDatabase:
    units: tuple[UnitSpec, ...]
    exchange_policy: ExchangePolicy

    @property
    def n_units(self) -> int:
        return len(self.units)

    def num_levels(self, unit: int) -> int:
        return len(self.units[unit].level_sizes)

    def max_level(self, unit: int) -> int:
        return len(self.units[unit].level_sizes) - 1

    @cached_property
    def steps(self) -> tuple[tuple[int, ...], ...]:
        """Per-unit size freed by moving one level toward more compression."""
        return tuple(
            tuple(u.level_sizes[l] - u.level_sizes[l + 1] for l in range(len(u.level_sizes) - 1))
            for u in self.units
        )

    @cached_property
    def min_total_size(self) -> int:
        return sum(u.level_sizes[-1] for u in self.units)

    @cached_property
    def max_total_size(self) -> int:
        return sum(u.level_sizes[0] for u in self.units)

    def uniform_assignment(self, level: int) -> LevelAssignment:
        """Every unit at ``level``, clamped to its own last level."""
        return LevelAssignment(tuple(min(level, self.max_level(i)) for i in range(self.n_units)))


def build_database(unit_specs: Iterable[UnitSpec], exchange_policy: ExchangePolicy) -> LevelDatabase:
    """Validate unit specs and assemble an immutable database.

    Raises DuplicateId, EmptyLevels, or IncreasingSizes on malformed input.
    """
    units = tuple(unit_specs)
    if not units:
        raise EmptyLevels("database needs at least one unit")
    seen: set[str] = set()
    for u in units:
        if u.id in seen:
            raise DuplicateId(f"unit id {u.id!r} appears more than once")
        seen.add(u.id)
        if len(u.level_sizes) == 0:
            raise EmptyLevels(f"unit {u.id!r} has no levels")
        for s in u.level_sizes:
            if isinstance(s, bool) or not isinstance(s, int) or s < 0:
                raise IncreasingSizes(f"unit {u.id!r} has a non-integer or negative size {s!r}")
        for a, b in zip(u.level_sizes, u.level_sizes[1:]):
            if b > a:
                raise IncreasingSizes(f"unit {u.id!r} sizes must be non-increasing, got {u.level_sizes}")
    db = LevelDatabase(units=units, exchange_policy=exchange_policy)
    db.steps  # populate the cache once, while we are validating anyway
    return db


def validate_assignment(db: LevelDatabase, assignment: LevelAssignment) -> None:
    if len(assignment.levels) != db.n_units:
        raise LevelOutOfRange(
            f"assignment has {len(assignment.levels)} levels for {db.n_units} units"
        )
    for i, l in enumerate(assignment.levels):
        if isinstance(l, bool) or not isinstance(l, int) or l < 0 or l > db.max_level(i):
            raise LevelOutOfRange(f"unit {i} level {l!r} outside [0, {db.max_level(i)}]")


def assignment_size(db: LevelDatabase, assignment: LevelAssignment) -> int:
    """Total integer size of an assignment. Raises LevelOutOfRange on bad indices."""
    validate_assignment(db, assignment)
    return sum(u.level_sizes[l] for u, l in zip(db.units, assignment.levels))


def exchangeable(db: LevelDatabase, assignment: LevelAssignment, u: int, v: int) -> bool:
    """True iff compressing u one level and decompressing v one level is admissible.

    Admissible means the policy accepts the pair and the size freed at u equals
    the size reclaimed at v exactly, so the total size cannot move. Returns
    False (never raises) whenever either move is impossible.
    """
    if u == v:
        return False
    lu = assignment.levels[u]
    lv = assignment.levels[v]
    if lu >= db.max_level(u):
        return False
    if lv <= 0:
        return False
    if db.exchange_policy.kind_restricted and db.units[u].kind != db.units[v].kind:
        return False
    return db.steps[u][lu] == db.steps[v][lv - 1]


_DB_KEYS = {"exchange_policy", "units"}
_UNIT_KEYS = {"id", "kind", "level_sizes"}


def _reject_unknown(obj: dict, allowed: set, where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ValueError(f"unknown field(s) {sorted(unknown)} in {where}")


def database_from_dict(doc: dict) -> LevelDatabase:
    if not isinstance(doc, dict):
        raise ValueError("database document must be a JSON object")
    _reject_unknown(doc, _DB_KEYS, "database")
    try:
        policy = ExchangePolicy[str(doc["exchange_policy"]).upper()]
    except KeyError as e:
        raise ValueError(f"missing or invalid exchange_policy: {e}") from e
    units_doc = doc.get("units")
    if not isinstance(units_doc, list):
        raise ValueError("database field 'units' must be a list")
    specs = []
    for i, entry in enumerate(units_doc):
        if not isinstance(entry, dict):
            raise ValueError(f"unit entry {i} must be an object")
        _reject_unknown(entry, _UNIT_KEYS, f"unit entry {i}")
        try:
            specs.append(
                UnitSpec(
                    id=str(entry["id"]),
                    kind=str(entry["kind"]),
                    level_sizes=tuple(entry["level_sizes"]),
                )
            )
        except KeyError as e:
            raise ValueError(f"unit entry {i} missing field {e}") from e
    return build_database(specs, policy)


def database_to_dict(db: LevelDatabase) -> dict:
    return {
        "exchange_policy": db.exchange_policy.name,
        "units": [
            {"id": u.id, "kind": u.kind, "level_sizes": list(u.level_sizes)} for u in db.units
        ],
    }


def load_database(path: str | Path) -> LevelDatabase:
    """Load a database from a UTF-8 JSON file. Unknown fields are rejected."""
    with open(path, "r", encoding="utf-8") as fh:
        return database_from_dict(json.load(fh))


def save_database(db: LevelDatabase, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(database_to_dict(db), fh, indent=2)
        fh.write("\n")


def binary_database(
    n_units: int,
    unit_size: int = 1,
    policy: ExchangePolicy = ExchangePolicy.ANY,
    kinds: Sequence[str] | None = None,
) -> LevelDatabase:
    """Convenience builder for drop/retain spaces: levels [unit_size, 0] per unit."""
    if kinds is None:
        kinds = ["unit"] * n_units
    specs = [
        UnitSpec(id=f"u{i}", kind=kinds[i], level_sizes=(unit_size, 0)) for i in range(n_units)
    ]
    return build_database(specs, policy)
