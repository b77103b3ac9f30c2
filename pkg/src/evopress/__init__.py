"""Constrained evolutionary search over per-unit compression levels."""

from .level_space import (
    Budget,
    ExchangePolicy,
    LevelAssignment,
    LevelDatabase,
    UnitSpec,
    assignment_size,
    binary_database,
    build_database,
    exchangeable,
    load_database,
)
from .fitness import (
    Batch,
    CorpusMeta,
    ExternalOracle,
    FitnessOracle,
    LinearOracle,
    LogitKLOracle,
    PlantedNonmonotoneOracle,
    kl_divergence,
    sample_batch,
    shipped_planted_instance,
)
from .mutation_search import (
    GenerationRecord,
    MutationCountDistribution,
    SearchState,
    SearchTrace,
    SelectionSchedule,
    SelectionStage,
    initialize,
    level_switch_mutation,
    run_generation,
    run_search,
    sample_num_mutations,
)
from .baselines import (
    ErrorTable,
    dp_allocate,
    exhaustive_search,
    greedy_score_drop,
)
from .oracle_bridge import OracleSession
from .theory_harness import (
    BitString,
    ConvergenceStats,
    average_spread,
    count_inversions,
    measure_convergence,
    stage_advance_probability,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
