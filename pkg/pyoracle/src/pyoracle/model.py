"""A tiny seed-deterministic residual network over a synthetic token stream.

The model exists to be compressed. Each block contributes two droppable units,
a token mixer and a feed-forward expansion, added to the residual stream
through per-unit gains. Dropping or pruning a unit therefore perturbs the
output distribution by an amount that depends on the whole stream, not on the
unit alone, which is what makes searching over drop patterns non-trivial.

Everything derives from counter-based RNG keys: two processes given the same
seed produce bit-identical weights, batches, and logits. There is no training;
weights are fixed random draws.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_softmax

VOCAB = 64

# key tags keep the weight, batch, and probe streams disjoint
_TAG_WEIGHTS = 0x57
_TAG_BATCH = 0x42
_PROBE_SEED = 101
_REF_CACHE_MAX = 16


def _rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[np.uint64(seed), np.uint64(tag)]))


def batch_tokens(seed: int, tokens: int) -> np.ndarray:
    """The synthetic calibration stream for one (seed, tokens) request."""
    if seed < 0:
        raise ValueError("batch seed must be non-negative")
    if tokens < 1:
        raise ValueError("token count must be positive")
    return _rng(seed, _TAG_BATCH).integers(0, VOCAB, size=tokens)


def _magnitude_mask(mat: np.ndarray, keep_frac: float) -> np.ndarray:
    """Zero the smallest-magnitude entries, keeping a keep_frac fraction."""
    if keep_frac >= 1.0:
        return mat.copy()
    if keep_frac <= 0.0:
        return np.zeros_like(mat)
    flat = np.abs(mat).ravel()
    keep = max(1, int(round(keep_frac * flat.size)))
    threshold = np.partition(flat, flat.size - keep)[flat.size - keep]
    out = mat.copy()
    out[np.abs(mat) < threshold] = 0.0
    return out


def _shift(h: np.ndarray) -> np.ndarray:
    """Previous-token hidden states, zero-padded at the front (causal)."""
    out = np.zeros_like(h)
    out[1:] = h[:-1]
    return out


class ToyModel:
    """blocks x (mixer, feed-forward) residual network with droppable units.

    Unit 2b is block b's mixer, unit 2b+1 its feed-forward. Level 0 keeps a
    unit dense; higher levels prune an increasing fraction of its weights by
    magnitude; the last level is fully pruned, which is exactly a drop.
    """

    def __init__(self, seed: int = 0, blocks: int = 8, dim: int = 32, levels: int = 2):
        if blocks < 1:
            raise ValueError("blocks must be >= 1")
        if dim < 2:
            raise ValueError("dim must be >= 2")
        if levels < 2:
            raise ValueError("levels must be >= 2")
        self.seed = int(seed)
        self.blocks = int(blocks)
        self.dim = int(dim)
        self.levels = int(levels)
        self.n_units = 2 * self.blocks

        rng = _rng(self.seed, _TAG_WEIGHTS)
        e = self.dim
        self.embedding = rng.normal(0.0, 1.0, size=(VOCAB, e))
        self.output = rng.normal(0.0, 1.0 / np.sqrt(e), size=(e, VOCAB))
        # bimodal gains plant a compressible substructure: a quarter of the
        # units barely touch the stream, the rest carry it, so the cheapest
        # drop set is well separated from everything else
        self.gains = np.exp(rng.uniform(np.log(0.15), np.log(1.0), size=self.n_units))
        light = rng.permutation(self.n_units)[: max(1, self.n_units // 4)]
        self.gains[light] = np.exp(
            rng.uniform(np.log(0.022), np.log(0.038), size=light.size)
        )

        dense = []
        for _b in range(self.blocks):
            wa = rng.normal(0.0, 1.0 / np.sqrt(e), size=(e, e))
            wb = rng.normal(0.0, 1.0 / np.sqrt(e), size=(e, e))
            dense.append((wa, wb))
            w1 = rng.normal(0.0, 1.0 / np.sqrt(e), size=(e, 2 * e))
            w2 = rng.normal(0.0, 1.0 / np.sqrt(2 * e), size=(2 * e, e))
            dense.append((w1, w2))

        self._unit_levels: list[list[tuple[np.ndarray, ...]]] = []
        for mats in dense:
            per_level = []
            for level in range(self.levels):
                keep = 1.0 - level / (self.levels - 1)
                per_level.append(tuple(_magnitude_mask(m, keep) for m in mats))
            self._unit_levels.append(per_level)

        self._ref_cache: dict[tuple[int, int], np.ndarray] = {}

    # --- forward pass ---

    def _unit_output(self, u: int, level: int, h: np.ndarray) -> np.ndarray:
        a, b = self._unit_levels[u][level]
        if u % 2 == 0:
            return np.tanh(h @ a + _shift(h) @ b)
        return np.tanh(h @ a) @ b

    def forward(self, token_ids: np.ndarray, levels=None) -> np.ndarray:
        """Logits (tokens, VOCAB) under the given per-unit levels (None: dense)."""
        if levels is None:
            levels = (0,) * self.n_units
        if len(levels) != self.n_units:
            raise ValueError(f"expected {self.n_units} levels, got {len(levels)}")
        h = self.embedding[np.asarray(token_ids)]
        for u in range(self.n_units):
            level = levels[u]
            if not 0 <= level < self.levels:
                raise ValueError(f"unit {u}: level {level} out of range 0..{self.levels - 1}")
            if level == self.levels - 1:
                continue  # fully pruned: the residual update is exactly zero
            h = h + self.gains[u] * self._unit_output(u, level, h)
        h = h / np.sqrt(np.mean(h * h, axis=-1, keepdims=True) + 1e-8)
        return h @ self.output

    def reference_logits(self, seed: int, tokens: int) -> np.ndarray:
        key = (int(seed), int(tokens))
        hit = self._ref_cache.get(key)
        if hit is None:
            hit = self.forward(batch_tokens(seed, tokens))
            if len(self._ref_cache) >= _REF_CACHE_MAX:
                self._ref_cache.pop(next(iter(self._ref_cache)))
            self._ref_cache[key] = hit
        return hit

    def kl_fitness(self, levels, seed: int, tokens: int) -> float:
        """Mean per-token KL(reference || candidate) on the (seed, tokens) batch."""
        stream = batch_tokens(seed, tokens)
        ref = self.reference_logits(seed, tokens)
        cand = self.forward(stream, levels)
        ls_ref = log_softmax(ref, axis=-1)
        ls_cand = log_softmax(cand, axis=-1)
        per_token = np.sum(np.exp(ls_ref) * (ls_ref - ls_cand), axis=-1)
        return float(np.mean(per_token))

    # --- scoring and structure ---

    def score_units(self, tokens: int = 4096) -> list[float]:
        """One minus cosine(input, input + unit update) per unit on a fixed probe.

        Every unit is probed at the embedding stream, so a unit's score is a
        function of its own weights only: relabeling blocks relabels scores.
        """
        h0 = self.embedding[batch_tokens(_PROBE_SEED, tokens)]
        norm0 = np.linalg.norm(h0, axis=-1)
        scores = []
        for u in range(self.n_units):
            ha = h0 + self.gains[u] * self._unit_output(u, 0, h0)
            cos = np.sum(h0 * ha, axis=-1) / (norm0 * np.linalg.norm(ha, axis=-1))
            scores.append(float(1.0 - np.mean(cos)))
        return scores

    def permuted_blocks(self, order) -> "ToyModel":
        """A new model whose block b carries this model's block order[b] weights."""
        order = list(order)
        if sorted(order) != list(range(self.blocks)):
            raise ValueError(f"order must be a permutation of 0..{self.blocks - 1}")
        other = object.__new__(ToyModel)
        other.seed = self.seed
        other.blocks = self.blocks
        other.dim = self.dim
        other.levels = self.levels
        other.n_units = self.n_units
        other.embedding = self.embedding
        other.output = self.output
        other.gains = np.concatenate(
            [self.gains[2 * b : 2 * b + 2] for b in order]
        )
        other._unit_levels = []
        for b in order:
            other._unit_levels.extend(self._unit_levels[2 * b : 2 * b + 2])
        other._ref_cache = {}
        return other
