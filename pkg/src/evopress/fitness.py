"""Fitness oracles: the KL objective, synthetic landscapes, and external bridges.

All oracles map (assignment, batch) to a scalar where lower is better. The
synthetic families are pure functions of their parameters plus a noise stream
keyed by (assignment, batch seed), so evaluation order and parallelism can
never change a value.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, ClassVar, Sequence

import numpy as np
from scipy.special import log_softmax

from . import oracle_bridge
from .level_space import (
    Budget,
    ExchangePolicy,
    LevelAssignment,
    LevelDatabase,
    UnitSpec,
    build_database,
)


class FitnessError(Exception):
    pass


class OracleError(FitnessError):
    """An oracle failed to produce a fitness value."""


class ShapeMismatch(FitnessError):
    pass


class NonFiniteInput(FitnessError):
    pass


class CorpusTooSmall(FitnessError):
    pass


@dataclass(frozen=True)
class Batch:
    """A calibration batch: which samples it covers and how many tokens it spends.

    ``token_count`` may cut into the final sample (prefix truncation). ``seed``
    identifies the batch to noise streams and to external oracles that own
    their corpus; synthetic batches carry no sample ids.
    """

    sample_ids: tuple[int, ...]
    token_count: int
    seed: int


@dataclass(frozen=True)
class CorpusMeta:
    """Token lengths of the calibration samples an in-process oracle can read."""

    sample_lengths: tuple[int, ...]

    @property
    def total_tokens(self) -> int:
        return sum(self.sample_lengths)


def synthetic_batch(tokens: int, rng: np.random.Generator) -> Batch:
    """A batch with no corpus behind it, identified purely by a drawn seed."""
    if tokens <= 0:
        raise CorpusTooSmall(f"token budget must be positive, got {tokens}")
    return Batch(sample_ids=(), token_count=tokens, seed=int(rng.integers(0, 2**63)))


def sample_batch(corpus: CorpusMeta, tokens: int, rng: np.random.Generator) -> Batch:
    """Draw distinct samples without replacement until the token budget is met.

    The final sample may be used only partially; token_count is hit exactly.
    """
    if tokens <= 0 or tokens > corpus.total_tokens:
        raise CorpusTooSmall(
            f"token budget {tokens} outside (0, {corpus.total_tokens}] for this corpus"
        )
    order = rng.permutation(len(corpus.sample_lengths))
    ids: list[int] = []
    acc = 0
    for sid in order:
        ids.append(int(sid))
        acc += corpus.sample_lengths[sid]
        if acc >= tokens:
            break
    return Batch(sample_ids=tuple(ids), token_count=tokens, seed=int(rng.integers(0, 2**63)))


def kl_divergence(ref_logits, cand_logits) -> float:
    """Mean per-token KL(softmax(ref) || softmax(cand)), computed in log space.

    Double precision with max-subtraction, so the result is invariant under a
    constant shift of either logit row. Rows are tokens, columns vocabulary.
    """
    ref = np.asarray(ref_logits, dtype=np.float64)
    cand = np.asarray(cand_logits, dtype=np.float64)
    if ref.shape != cand.shape:
        raise ShapeMismatch(f"logit shapes differ: {ref.shape} vs {cand.shape}")
    if ref.ndim != 2 or ref.shape[0] == 0 or ref.shape[1] == 0:
        raise ShapeMismatch(f"expected a non-empty (tokens, vocab) array, got shape {ref.shape}")
    if not np.isfinite(ref).all() or not np.isfinite(cand).all():
        raise NonFiniteInput("logits contain nan or inf")
    log_p = log_softmax(ref, axis=-1)
    log_q = log_softmax(cand, axis=-1)
    p = np.exp(log_p)
    # p == 0 rows would produce 0 * -inf below; their contribution is zero
    contrib = np.where(p > 0.0, p * (log_p - log_q), 0.0)
    return max(0.0, float(np.mean(np.sum(contrib, axis=-1))))


def _hash_rng(*ints: int) -> np.random.Generator:
    """Deterministic generator keyed by integers, stable across processes."""
    h = hashlib.blake2b(digest_size=16)
    for x in ints:
        h.update(struct.pack("<q", x & 0xFFFFFFFFFFFFFFFF))
    return np.random.default_rng(np.random.SeedSequence(int.from_bytes(h.digest(), "little")))


class FitnessOracle:
    """Interface all oracles share. Subclasses set ``kind`` and ``evaluate``."""

    kind: ClassVar[str] = "ABSTRACT"

    def draw_batch(self, tokens: int, rng: np.random.Generator) -> Batch:
        return synthetic_batch(tokens, rng)

    def evaluate(self, db: LevelDatabase, assignment: LevelAssignment, batch: Batch) -> float:
        raise NotImplementedError

    def evaluate_pool(
        self,
        db: LevelDatabase,
        pool: Sequence[LevelAssignment],
        batch: Batch,
        jobs: int = 1,
    ) -> list[float]:
        """Evaluate a pool on one shared batch; results match sequential order."""
        if jobs > 1 and len(pool) > 1:
            with ThreadPoolExecutor(max_workers=jobs) as ex:
                return list(ex.map(lambda a: self.evaluate(db, a, batch), pool))
        return [self.evaluate(db, a, batch) for a in pool]


def _check_weight_shape(weights: Sequence[Sequence[float]], db: LevelDatabase) -> None:
    if len(weights) != db.n_units:
        raise ShapeMismatch(f"oracle has weights for {len(weights)} units, database has {db.n_units}")
    for i, row in enumerate(weights):
        if len(row) != db.num_levels(i):
            raise ShapeMismatch(
                f"unit {i} has {db.num_levels(i)} levels but {len(row)} weight entries"
            )


@dataclass(frozen=True)
class LinearOracle(FitnessOracle):
    """Additive per-(unit, level) penalties, optionally with batch noise.

    Noise is Gaussian with standard deviation sigma / sqrt(token_count), drawn
    from a stream keyed by (noise_seed, batch seed, levels): re-evaluating the
    same assignment on the same batch always reproduces the same value.
    """

    weights: tuple[tuple[float, ...], ...]
    sigma: float = 0.0
    noise_seed: int = 0

    kind: ClassVar[str] = "LINEAR"

    def evaluate(self, db: LevelDatabase, assignment: LevelAssignment, batch: Batch) -> float:
        _check_weight_shape(self.weights, db)
        total = 0.0
        for row, l in zip(self.weights, assignment.levels):
            total += row[l]
        if self.sigma > 0.0:
            rng = _hash_rng(self.noise_seed, batch.seed, *assignment.levels)
            total += float(rng.normal(0.0, self.sigma / math.sqrt(batch.token_count)))
        return total


@dataclass(frozen=True)
class PlantedNonmonotoneOracle(FitnessOracle):
    """Additive base penalties plus pairwise interaction terms.

    An interaction (i, j, value) is added whenever both units are compressed
    at all (level >= 1). Negative values make compressing more units cheaper
    than compressing fewer, which breaks error monotonicity on purpose.
    """

    weights: tuple[tuple[float, ...], ...]
    interactions: tuple[tuple[int, int, float], ...]

    kind: ClassVar[str] = "PLANTED_NONMONOTONE"

    def evaluate(self, db: LevelDatabase, assignment: LevelAssignment, batch: Batch) -> float:
        _check_weight_shape(self.weights, db)
        total = 0.0
        for row, l in zip(self.weights, assignment.levels):
            total += row[l]
        lv = assignment.levels
        for i, j, value in self.interactions:
            if lv[i] >= 1 and lv[j] >= 1:
                total += value
        return total


@dataclass
class LogitKLOracle(FitnessOracle):
    """KL between reference and candidate logits supplied by callbacks.

    ``reference_fn(batch)`` and ``candidate_fn(assignment, batch)`` both return
    (tokens, vocab) logit arrays. When a corpus is attached, batches are drawn
    from it; otherwise synthetic seed-only batches are used.
    """

    reference_fn: Callable[[Batch], np.ndarray]
    candidate_fn: Callable[[LevelAssignment, Batch], np.ndarray]
    corpus: CorpusMeta | None = None

    kind: ClassVar[str] = "LOGIT_KL"

    def draw_batch(self, tokens: int, rng: np.random.Generator) -> Batch:
        if self.corpus is None:
            return synthetic_batch(tokens, rng)
        return sample_batch(self.corpus, tokens, rng)

    def evaluate(self, db: LevelDatabase, assignment: LevelAssignment, batch: Batch) -> float:
        try:
            ref = self.reference_fn(batch)
            cand = self.candidate_fn(assignment, batch)
        except Exception as e:
            raise OracleError(f"logit callback failed: {e}") from e
        return kl_divergence(ref, cand)


class ExternalOracle(FitnessOracle):
    """Delegates evaluation to a child process over the line protocol.

    Pool evaluations are pipelined: all requests are written before responses
    are collected, so a slow oracle can answer out of order.
    """

    kind: ClassVar[str] = "EXTERNAL"

    def __init__(self, session: oracle_bridge.OracleSession):
        self.session = session

    def evaluate(self, db: LevelDatabase, assignment: LevelAssignment, batch: Batch) -> float:
        req = self.session.new_request(assignment.levels, batch.seed, batch.token_count)
        try:
            return self.session.evaluate(req).fitness
        except oracle_bridge.OracleBridgeError as e:
            raise OracleError(str(e)) from e

    def evaluate_pool(
        self,
        db: LevelDatabase,
        pool: Sequence[LevelAssignment],
        batch: Batch,
        jobs: int = 1,
    ) -> list[float]:
        reqs = [self.session.new_request(a.levels, batch.seed, batch.token_count) for a in pool]
        try:
            return [r.fitness for r in self.session.evaluate_many(reqs)]
        except oracle_bridge.OracleBridgeError as e:
            raise OracleError(str(e)) from e


_ORACLE_KEYS = {
    "linear": {"kind", "weights", "sigma", "noise_seed"},
    "planted_nonmonotone": {"kind", "weights", "interactions"},
}


def oracle_from_dict(doc: dict) -> FitnessOracle:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ValueError("oracle document must be an object with a 'kind' field")
    kind = str(doc["kind"]).lower()
    if kind not in _ORACLE_KEYS:
        raise ValueError(f"unknown oracle kind {doc['kind']!r}; expected one of {sorted(_ORACLE_KEYS)}")
    unknown = set(doc) - _ORACLE_KEYS[kind]
    if unknown:
        raise ValueError(f"unknown field(s) {sorted(unknown)} in {kind} oracle")
    weights = tuple(tuple(float(w) for w in row) for row in doc["weights"])
    if kind == "linear":
        return LinearOracle(
            weights=weights,
            sigma=float(doc.get("sigma", 0.0)),
            noise_seed=int(doc.get("noise_seed", 0)),
        )
    interactions = tuple(
        (int(i), int(j), float(v)) for i, j, v in doc.get("interactions", [])
    )
    return PlantedNonmonotoneOracle(weights=weights, interactions=interactions)


def load_oracle(path: str | Path) -> FitnessOracle:
    with open(path, "r", encoding="utf-8") as fh:
        return oracle_from_dict(json.load(fh))


def oracle_to_dict(oracle: FitnessOracle) -> dict:
    if isinstance(oracle, LinearOracle):
        return {
            "kind": "linear",
            "weights": [list(r) for r in oracle.weights],
            "sigma": oracle.sigma,
            "noise_seed": oracle.noise_seed,
        }
    if isinstance(oracle, PlantedNonmonotoneOracle):
        return {
            "kind": "planted_nonmonotone",
            "weights": [list(r) for r in oracle.weights],
            "interactions": [list(t) for t in oracle.interactions],
        }
    raise ValueError(f"oracle kind {oracle.kind} has no JSON form")


# Weights of the shipped planted instance. Unit 7 looks expensive on its own
# (2.8) but pairs with unit 2 at -3.6, so dropping both costs only 0.4: scoring
# units one at a time can never see this, while single level switches can still
# descend to the optimum from anywhere once unit 2 is in.
_PLANTED_DROP_COSTS = (1.0, 1.1, 1.2, 1.5, 1.6, 1.7, 1.8, 2.8, 1.9, 2.0, 2.1, 2.2)
_PLANTED_INTERACTION = (2, 7, -3.6)


def shipped_planted_instance() -> tuple[LevelDatabase, PlantedNonmonotoneOracle, Budget]:
    """The packaged non-monotone landscape: 12 drop/retain units, budget 8.

    The budget forces at least 4 drops. The unique optimum drops {0, 1, 2, 7}
    at cost 2.5; greedy marginal scoring drops {0, 1, 2, 3} at cost 4.8.
    """
    specs = [UnitSpec(id=f"u{i}", kind="unit", level_sizes=(1, 0)) for i in range(12)]
    db = build_database(specs, ExchangePolicy.ANY)
    weights = tuple((0.0, c) for c in _PLANTED_DROP_COSTS)
    oracle = PlantedNonmonotoneOracle(weights=weights, interactions=(_PLANTED_INTERACTION,))
    return db, oracle, Budget(max_size=8)
