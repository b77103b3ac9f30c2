"""Command line interface: search, brute, dp, theory.

Exit codes: 0 success, 2 configuration problems (bad files, bad flags,
infeasible setups), 3 oracle failures. The EVOPRESS_LOG environment variable
(error, info, debug) selects the engine log level.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import baselines, fitness, level_space, mutation_search, oracle_bridge, theory_harness
from .level_space import Budget, LevelSpaceError
from .mutation_search import (
    MutationCountDistribution,
    SelectionSchedule,
    SelectionStage,
    _forced_moves,
)

log = logging.getLogger("evopress")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ORACLE = 3

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class Preset:
    """One named hyperparameter bundle; generations may depend on the problem."""

    name: str
    offspring: int
    stages: tuple[SelectionStage, ...]
    generations: int | None  # None: computed as ceil(k(n-k)/1.5) at runtime
    initial_candidates: int = 32

    def schedule(self) -> SelectionSchedule:
        return SelectionSchedule(
            offspring=self.offspring,
            stages=self.stages,
            initial_candidates=self.initial_candidates,
            initial_tokens=self.stages[0].tokens,
        )

    def max_generations(self, db: level_space.LevelDatabase, budget: Budget) -> int:
        if self.generations is not None:
            return self.generations
        k = _forced_moves(db, budget)
        n = db.n_units
        return -(-2 * k * (n - k) // 3)  # ceil(k(n-k)/1.5) in integers


PRESETS = {
    "depth": Preset(
        name="depth",
        offspring=32,
        stages=(SelectionStage(2048, 2), SelectionStage(32768, 1)),
        generations=None,
    ),
    "sparsity": Preset(
        name="sparsity",
        offspring=64,
        stages=(SelectionStage(2048, 8), SelectionStage(16384, 2), SelectionStage(65536, 1)),
        generations=400,
    ),
    "quantization": Preset(
        name="quantization",
        offspring=128,
        stages=(SelectionStage(2048, 16), SelectionStage(16384, 4), SelectionStage(131072, 1)),
        generations=150,
    ),
    "superfast": Preset(
        name="superfast",
        offspring=16,
        stages=(SelectionStage(512, 1), SelectionStage(8192, 1)),
        generations=400,
    ),
}

DEFAULT_MUTATIONS = MutationCountDistribution.min_of_two_uniform(1, 3)
DEFAULT_PATIENCE = 20

_CONFIG_KEYS = {"budget", "schedule", "mutations", "max_generations", "patience", "seed"}
_SCHEDULE_KEYS = {"offspring", "stages", "initial_candidates", "initial_tokens"}


def schedule_from_dict(doc: dict) -> SelectionSchedule:
    unknown = set(doc) - _SCHEDULE_KEYS
    if unknown:
        raise ValueError(f"unknown field(s) {sorted(unknown)} in schedule")
    try:
        stages = tuple(
            SelectionStage(tokens=int(st["tokens"]), survivors=int(st["survivors"]))
            for st in doc["stages"]
        )
        return SelectionSchedule(
            offspring=int(doc["offspring"]),
            stages=stages,
            initial_candidates=int(doc.get("initial_candidates", 32)),
            initial_tokens=int(doc.get("initial_tokens", stages[0].tokens if stages else 2048)),
        )
    except (KeyError, TypeError) as e:
        raise ValueError(f"malformed schedule: {e}") from e


@dataclass
class SearchConfig:
    budget: int | None = None
    schedule: SelectionSchedule | None = None
    mutations: MutationCountDistribution = DEFAULT_MUTATIONS
    max_generations: int | None = None
    patience: int = DEFAULT_PATIENCE
    seed: int = 0


def load_search_config(path: str | Path) -> SearchConfig:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("search config must be a JSON object")
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown field(s) {sorted(unknown)} in search config")
    cfg = SearchConfig()
    if "budget" in doc:
        cfg.budget = int(doc["budget"])
    if "schedule" in doc:
        cfg.schedule = schedule_from_dict(doc["schedule"])
    if "mutations" in doc:
        cfg.mutations = mutation_search.mutation_count_from_dict(doc["mutations"])
    if "max_generations" in doc:
        cfg.max_generations = int(doc["max_generations"])
    if "patience" in doc:
        cfg.patience = int(doc["patience"])
    if "seed" in doc:
        cfg.seed = int(doc["seed"])
    return cfg


def _setup_logging() -> None:
    raw = os.environ.get("EVOPRESS_LOG", "error")
    level = _LOG_LEVELS.get(raw.lower())
    if level is None:
        raise ConfigError(
            f"EVOPRESS_LOG must be one of {sorted(_LOG_LEVELS)}, got {raw!r}"
        )
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def _assignment_json_path(out: Path) -> Path:
    return out.with_suffix(".assignment.json")


def _write_assignment(path: Path, db, assignment, fitness_value=None, extra: dict | None = None) -> None:
    doc = {
        "levels": list(assignment.levels),
        "size": level_space.assignment_size(db, assignment) if db is not None else None,
    }
    if db is None:
        doc.pop("size")
    if fitness_value is not None and not (isinstance(fitness_value, float) and math.isnan(fitness_value)):
        doc["fitness"] = fitness_value
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def cmd_search(args: argparse.Namespace) -> int:
    db = level_space.load_database(args.db)

    cfg = load_search_config(args.schedule) if args.schedule else SearchConfig()
    if args.preset:
        if args.preset not in PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; valid presets: {sorted(PRESETS)}")
        preset = PRESETS[args.preset]
        if cfg.schedule is None:
            cfg.schedule = preset.schedule()
    else:
        preset = None
    if cfg.schedule is None:
        raise ConfigError("one of --preset or --schedule (with a schedule block) is required")

    if args.budget is not None:
        cfg.budget = args.budget
    if cfg.budget is None:
        raise ConfigError("a budget is required (--budget or the config file)")
    budget = Budget(max_size=cfg.budget)

    if args.seed is not None:
        cfg.seed = args.seed
    if args.patience is not None:
        cfg.patience = args.patience
    if args.max_generations is not None:
        cfg.max_generations = args.max_generations
    if cfg.max_generations is None:
        if preset is not None:
            cfg.max_generations = preset.max_generations(db, budget)
        else:
            raise ConfigError("--max-generations (or the config file) must set a generation budget")

    session = None
    try:
        if args.external_cmd:
            session = oracle_bridge.OracleSession(args.external_cmd)
            session.start()
            session.handshake(db)
            oracle = fitness.ExternalOracle(session)
        elif args.oracle:
            oracle = fitness.load_oracle(args.oracle)
        else:
            raise ConfigError("one of --oracle or --external-cmd is required")

        log.info(
            "search: %d units, budget %d, %d generations, %d offspring, seed %d",
            db.n_units, budget.max_size, cfg.max_generations, cfg.schedule.offspring, cfg.seed,
        )
        out = Path(args.out)
        try:
            best, trace = mutation_search.run_search(
                db,
                budget,
                oracle,
                cfg.schedule,
                cfg.mutations,
                max_generations=cfg.max_generations,
                patience=cfg.patience,
                rng_seed=cfg.seed,
                jobs=args.jobs,
            )
        except fitness.OracleError as e:
            partial = getattr(e, "partial_trace", None)
            if partial is not None:
                partial.write_csv(out)
            raise
        trace.write_csv(out)
        final_fitness = trace.records[-1].survivor_fitness if trace.records else None
        _write_assignment(
            _assignment_json_path(out), db, best, final_fitness, extra={"seed": cfg.seed}
        )
        log.info("search finished: %d generations, best fitness %s", len(trace), final_fitness)
        return EXIT_OK
    finally:
        if session is not None:
            session.close()


def cmd_brute(args: argparse.Namespace) -> int:
    db = level_space.load_database(args.db)
    oracle = fitness.load_oracle(args.oracle)
    if args.choose is not None:
        enumerator = baselines.exact_drop_assignments(db, args.choose)
    else:
        enumerator = None
    budget = Budget(max_size=args.budget if args.budget is not None else db.max_total_size)
    feasible = baselines.enumerate_feasible(db, budget, enumerator, cap=args.cap)
    batch = oracle.draw_batch(args.tokens, np.random.default_rng(args.seed))
    fits = oracle.evaluate_pool(db, feasible, batch, jobs=args.jobs)
    best = min(range(len(feasible)), key=lambda i: (fits[i], i))
    out = Path(args.out)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "fitness", "assignment"])
        for i, (a, f) in enumerate(zip(feasible, fits)):
            writer.writerow([i, repr(f), "-".join(str(l) for l in a.levels)])
    _write_assignment(
        _assignment_json_path(out), db, feasible[best], fits[best], extra={"evaluated": len(feasible)}
    )
    print(f"evaluated {len(feasible)} assignments; best fitness {fits[best]} at index {best}")
    return EXIT_OK


def cmd_dp(args: argparse.Namespace) -> int:
    table = baselines.load_error_table(args.table)
    assignment = baselines.dp_allocate(table, args.budget)
    doc = {
        "levels": list(assignment.levels),
        "total_error": baselines.table_error(table, assignment),
        "total_size": baselines.table_size(table, assignment),
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    print(f"dp: error {doc['total_error']} at size {doc['total_size']} <= {args.budget}")
    return EXIT_OK


def cmd_theory(args: argparse.Namespace) -> int:
    stats = theory_harness.measure_convergence(
        n=args.n, k=args.k, lam=args.lam, trials=args.trials, rng_seed=args.seed
    )
    theory_harness.write_stats_csv([stats], args.out)
    print(
        f"n={stats.n} k={stats.k} lambda={stats.lam}: "
        f"mean {stats.mean_generations:.2f} generations over {stats.trials} trials"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evopress", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="run the evolutionary search")
    p.add_argument("--db", required=True, help="level database JSON")
    p.add_argument("--oracle", help="synthetic oracle JSON")
    p.add_argument("--external-cmd", help="external oracle command line (line protocol v1)")
    p.add_argument("--preset", help=f"hyperparameter preset: {', '.join(sorted(PRESETS))}")
    p.add_argument("--schedule", help="search config JSON (overrides preset schedule)")
    p.add_argument("--budget", type=int, help="maximum total size")
    p.add_argument("--seed", type=int, help="run seed (64-bit)")
    p.add_argument("--jobs", type=int, default=1, help="parallel evaluation workers")
    p.add_argument("--patience", type=int, help="stop after this many stagnant generations (0 disables)")
    p.add_argument("--max-generations", type=int, help="generation budget")
    p.add_argument("--out", required=True, help="trace CSV path; assignment JSON lands next to it")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("brute", help="exhaustively evaluate feasible assignments")
    p.add_argument("--db", required=True)
    p.add_argument("--oracle", required=True)
    p.add_argument("--budget", type=int)
    p.add_argument("--choose", type=int, help="restrict to exactly this many fully compressed units")
    p.add_argument("--tokens", type=int, default=65536, help="batch token count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cap", type=int, default=baselines.DEFAULT_ENUMERATION_CAP)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="CSV of all evaluated assignments")
    p.set_defaults(func=cmd_brute)

    p = sub.add_parser("dp", help="exact additive allocation via knapsack DP")
    p.add_argument("--table", required=True, help="error table JSON")
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--out", required=True, help="assignment JSON")
    p.set_defaults(func=cmd_dp)

    p = sub.add_parser("theory", help="measure convergence on the bit-string model")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=int, required=True)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="stats CSV")
    p.set_defaults(func=cmd_theory)

    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (fitness.OracleError, oracle_bridge.OracleBridgeError) as e:
        print(f"oracle error: {e}", file=sys.stderr)
        return EXIT_ORACLE
    except (
        ConfigError,
        LevelSpaceError,
        baselines.BaselineError,
        fitness.FitnessError,
        mutation_search.NoFeasibleSwitch,
        ValueError,
        OSError,
        json.JSONDecodeError,
    ) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
