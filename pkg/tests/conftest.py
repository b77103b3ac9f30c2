"""Shared builders for the test suite."""

import numpy as np
import pytest

from evopress.fitness import LinearOracle
from evopress.level_space import (
    ExchangePolicy,
    UnitSpec,
    build_database,
)


def pairs_database(n_slots: int = 16):
    """Removal space over consecutive block pairs: one slot drops two blocks."""
    specs = [UnitSpec(id=f"pair{i}", kind="pair", level_sizes=(2, 0)) for i in range(n_slots)]
    return build_database(specs, ExchangePolicy.ANY)


def smooth_pair_costs(n_slots: int = 16) -> tuple[tuple[float, float], ...]:
    """Smooth per-slot drop penalties with all values distinct."""
    x = np.linspace(0.0, 3.0, n_slots)
    costs = 0.6 + 0.5 * np.sin(x) ** 2 + 0.08 * x
    return tuple((0.0, float(c)) for c in costs)


def pair_removal_instance(n_slots: int = 16):
    db = pairs_database(n_slots)
    oracle = LinearOracle(weights=smooth_pair_costs(n_slots))
    return db, oracle


@pytest.fixture
def pairs16():
    return pairs_database(16)


@pytest.fixture
def pair_oracle16():
    return LinearOracle(weights=smooth_pair_costs(16))
