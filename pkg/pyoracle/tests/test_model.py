"""ToyModel: determinism, KL behaviour, scoring, and pruning levels."""

import numpy as np
import pytest

from pyoracle import ToyModel, batch_tokens


class TestDeterminism:
    def test_reference_logits_are_bit_identical_across_instances(self):
        a = ToyModel(seed=11)
        b = ToyModel(seed=11)
        stream = batch_tokens(3, 128)
        assert np.array_equal(a.forward(stream), b.forward(stream))

    def test_different_seeds_give_different_models(self):
        stream = batch_tokens(3, 64)
        assert not np.array_equal(
            ToyModel(seed=1).forward(stream), ToyModel(seed=2).forward(stream)
        )

    def test_batch_stream_depends_only_on_seed(self):
        assert np.array_equal(batch_tokens(7, 64), batch_tokens(7, 64))
        assert not np.array_equal(batch_tokens(7, 64), batch_tokens(8, 64))

    def test_same_request_twice_is_identical(self):
        m = ToyModel(seed=4)
        levels = (1, 0) * (m.n_units // 2)
        first = m.kl_fitness(levels, 5, 256)
        second = m.kl_fitness(levels, 5, 256)  # second call hits the ref cache
        fresh = ToyModel(seed=4).kl_fitness(levels, 5, 256)
        assert first == second == fresh

    def test_batch_arguments_validated(self):
        with pytest.raises(ValueError):
            batch_tokens(-1, 64)
        with pytest.raises(ValueError):
            batch_tokens(0, 0)


class TestKlFitness:
    def test_all_retained_is_exactly_zero(self):
        m = ToyModel(seed=9)
        assert m.kl_fitness((0,) * m.n_units, 2, 512) == 0.0

    def test_dropping_any_single_unit_is_positive(self):
        m = ToyModel(seed=9)
        for u in range(m.n_units):
            levels = tuple(1 if i == u else 0 for i in range(m.n_units))
            assert m.kl_fitness(levels, 2, 512) > 0.0, f"unit {u}"

    def test_nonnegative_on_random_assignments(self):
        m = ToyModel(seed=3)
        rng = np.random.default_rng(0)
        for _ in range(10):
            levels = tuple(int(l) for l in rng.integers(0, 2, size=m.n_units))
            assert m.kl_fitness(levels, 4, 256) >= 0.0

    def test_drop_level_equals_a_zero_gain_unit(self):
        # the skip path for a fully pruned unit must match actually silencing it
        m = ToyModel(seed=6)
        silenced = ToyModel(seed=6)
        silenced.gains = silenced.gains.copy()
        silenced.gains[5] = 0.0
        stream = batch_tokens(1, 128)
        levels = tuple(1 if i == 5 else 0 for i in range(m.n_units))
        assert np.array_equal(m.forward(stream, levels), silenced.forward(stream))

    def test_forward_validates_levels(self):
        m = ToyModel(seed=1)
        stream = batch_tokens(1, 16)
        with pytest.raises(ValueError):
            m.forward(stream, (0,) * (m.n_units - 1))
        with pytest.raises(ValueError):
            m.forward(stream, (2,) + (0,) * (m.n_units - 1))

    def test_constructor_validation(self):
        with pytest.raises(ValueError):
            ToyModel(blocks=0)
        with pytest.raises(ValueError):
            ToyModel(dim=1)
        with pytest.raises(ValueError):
            ToyModel(levels=1)


class TestPruningLevels:
    def test_intermediate_level_sits_between_dense_and_dropped(self):
        m = ToyModel(seed=8, levels=3)
        dense = (0,) * m.n_units
        half = tuple(1 if i == 2 else 0 for i in range(m.n_units))
        gone = tuple(2 if i == 2 else 0 for i in range(m.n_units))
        kl_half = m.kl_fitness(half, 3, 512)
        kl_gone = m.kl_fitness(gone, 3, 512)
        assert m.kl_fitness(dense, 3, 512) == 0.0
        assert kl_half > 0.0
        assert kl_gone > 0.0

    def test_last_level_is_fully_pruned(self):
        m = ToyModel(seed=8, levels=4)
        a, b = m._unit_levels[1][-1]
        assert not a.any() and not b.any()


class TestScoreUnits:
    def test_scores_are_nonnegative_and_sized(self):
        m = ToyModel(seed=12)
        scores = m.score_units(tokens=512)
        assert len(scores) == m.n_units
        assert all(s >= 0.0 for s in scores)

    def test_zero_gain_unit_scores_zero(self):
        m = ToyModel(seed=12)
        m.gains = m.gains.copy()
        m.gains[3] = 0.0
        assert abs(m.score_units(tokens=512)[3]) < 1e-12

    def test_scores_follow_block_relabeling_exactly(self):
        m = ToyModel(seed=12)
        order = [3, 0, 7, 2, 6, 1, 5, 4]
        relabeled = m.permuted_blocks(order)
        base = m.score_units(tokens=512)
        moved = relabeled.score_units(tokens=512)
        for new_b, old_b in enumerate(order):
            assert moved[2 * new_b] == base[2 * old_b]
            assert moved[2 * new_b + 1] == base[2 * old_b + 1]

    def test_permutation_must_be_valid(self):
        with pytest.raises(ValueError):
            ToyModel(seed=1, blocks=2).permuted_blocks([0, 0])


class TestPlantedStructure:
    def test_a_quarter_of_the_units_are_distinctly_light(self):
        for seed in (100, 101, 102):
            m = ToyModel(seed=seed)
            gains = np.sort(m.gains)
            n_light = m.n_units // 4
            assert gains[n_light - 1] < 0.04
            assert gains[n_light] > 0.14
