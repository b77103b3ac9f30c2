"""Database construction, assignment sizes, exchange admissibility, JSON I/O."""

import json

import pytest
from hypothesis import given, strategies as st

from evopress.level_space import (
    Budget,
    DuplicateId,
    EmptyLevels,
    ExchangePolicy,
    IncreasingSizes,
    LevelAssignment,
    LevelOutOfRange,
    UnitSpec,
    assignment_size,
    binary_database,
    build_database,
    database_from_dict,
    database_to_dict,
    exchangeable,
    load_database,
    save_database,
    validate_assignment,
)


def two_level_db(sizes_a=(2, 1), sizes_b=(2, 1), policy=ExchangePolicy.ANY, kinds=("m", "m")):
    return build_database(
        [UnitSpec("a", kinds[0], tuple(sizes_a)), UnitSpec("b", kinds[1], tuple(sizes_b))],
        policy,
    )


@st.composite
def databases(draw):
    n = draw(st.integers(2, 6))
    policy = draw(st.sampled_from(list(ExchangePolicy)))
    units = []
    for i in range(n):
        n_levels = draw(st.integers(2, 4))
        steps = draw(st.lists(st.integers(0, 5), min_size=n_levels - 1, max_size=n_levels - 1))
        size = draw(st.integers(0, 3))
        sizes = [size]
        for s in steps:
            size += s
            sizes.append(size)
        kind = draw(st.sampled_from(["attn", "mlp"]))
        units.append(UnitSpec(f"u{i}", kind, tuple(reversed(sizes))))
    return build_database(units, policy)


@st.composite
def db_with_assignment(draw):
    db = draw(databases())
    levels = tuple(draw(st.integers(0, db.max_level(i))) for i in range(db.n_units))
    return db, LevelAssignment(levels)


class TestBuildDatabase:
    def test_symmetric_units_have_uniform_steps(self):
        db = build_database(
            [UnitSpec("a", "m", (4, 3, 2)), UnitSpec("b", "m", (4, 3, 2))],
            ExchangePolicy.ANY,
        )
        assert db.steps == ((1, 1), (1, 1))
        assert db.min_total_size == 4
        assert db.max_total_size == 8

    def test_duplicate_id_rejected(self):
        with pytest.raises(DuplicateId):
            build_database(
                [UnitSpec("a", "m", (2, 1)), UnitSpec("a", "m", (2, 1))],
                ExchangePolicy.ANY,
            )

    def test_no_units_rejected(self):
        with pytest.raises(EmptyLevels):
            build_database([], ExchangePolicy.ANY)

    def test_unit_without_levels_rejected(self):
        with pytest.raises(EmptyLevels):
            build_database([UnitSpec("a", "m", ())], ExchangePolicy.ANY)

    def test_increasing_sizes_rejected(self):
        with pytest.raises(IncreasingSizes):
            build_database([UnitSpec("a", "m", (3, 5))], ExchangePolicy.ANY)

    def test_equal_adjacent_sizes_allowed(self):
        db = build_database([UnitSpec("a", "m", (3, 3, 1))], ExchangePolicy.ANY)
        assert db.steps == ((0, 2),)

    def test_negative_size_rejected(self):
        with pytest.raises(IncreasingSizes):
            build_database([UnitSpec("a", "m", (2, -1))], ExchangePolicy.ANY)

    def test_non_integer_size_rejected(self):
        with pytest.raises(IncreasingSizes):
            build_database([UnitSpec("a", "m", (2.0, 1))], ExchangePolicy.ANY)

    def test_bool_size_rejected(self):
        with pytest.raises(IncreasingSizes):
            build_database([UnitSpec("a", "m", (True, False))], ExchangePolicy.ANY)

    def test_binary_database_shape(self):
        db = binary_database(5, unit_size=3)
        assert db.n_units == 5
        assert all(u.level_sizes == (3, 0) for u in db.units)
        assert db.exchange_policy is ExchangePolicy.ANY

    def test_uniform_assignment_clamps_to_last_level(self):
        db = build_database(
            [UnitSpec("a", "m", (4, 3, 2)), UnitSpec("b", "m", (2, 1))],
            ExchangePolicy.ANY,
        )
        assert db.uniform_assignment(2).levels == (2, 1)
        assert db.uniform_assignment(0).levels == (0, 0)


class TestAssignmentSize:
    def test_all_level_zero_sums_first_entries(self):
        db = build_database(
            [UnitSpec("a", "m", (4, 1)), UnitSpec("b", "m", (3, 0)), UnitSpec("c", "m", (5, 2))],
            ExchangePolicy.ANY,
        )
        assert assignment_size(db, db.uniform_assignment(0)) == 12

    def test_alternating_levels_hand_sum(self):
        # four identical units with sizes (2, 1): 2 + 1 + 2 + 1
        db = build_database(
            [UnitSpec(f"u{i}", "m", (2, 1)) for i in range(4)], ExchangePolicy.ANY
        )
        assert assignment_size(db, LevelAssignment((0, 1, 0, 1))) == 6

    def test_depth_pruning_counts_retained_units(self):
        db = binary_database(32)
        levels = [0] * 32
        for i in range(12):
            levels[i] = 1
        assert assignment_size(db, LevelAssignment(tuple(levels))) == 20

    def test_wrong_length_rejected(self):
        db = binary_database(3)
        with pytest.raises(LevelOutOfRange):
            assignment_size(db, LevelAssignment((0, 0)))

    def test_level_out_of_range_rejected(self):
        db = binary_database(3)
        with pytest.raises(LevelOutOfRange):
            assignment_size(db, LevelAssignment((0, 2, 0)))
        with pytest.raises(LevelOutOfRange):
            assignment_size(db, LevelAssignment((0, -1, 0)))

    def test_bool_level_rejected(self):
        db = binary_database(2)
        with pytest.raises(LevelOutOfRange):
            validate_assignment(db, LevelAssignment((True, 0)))

    def test_replace_returns_new_assignment(self):
        a = LevelAssignment((0, 1, 0))
        b = a.replace(0, 1)
        assert b.levels == (1, 1, 0)
        assert a.levels == (0, 1, 0)


class TestExchangeable:
    def test_uniform_step_any_pair_with_headroom(self):
        db = two_level_db()
        a = LevelAssignment((0, 1))
        assert exchangeable(db, a, 0, 1)

    def test_same_unit_never_exchangeable(self):
        db = two_level_db()
        assert not exchangeable(db, LevelAssignment((0, 1)), 0, 0)

    def test_compressed_unit_has_no_headroom(self):
        db = two_level_db()
        # unit 0 already at its last level: cannot compress further
        assert not exchangeable(db, LevelAssignment((1, 1)), 0, 1)

    def test_partner_at_level_zero_cannot_decompress(self):
        db = two_level_db()
        assert not exchangeable(db, LevelAssignment((0, 0)), 0, 1)

    def test_step_sizes_must_match_exactly(self):
        db = two_level_db(sizes_a=(3, 1), sizes_b=(2, 1))  # steps 2 vs 1
        assert not exchangeable(db, LevelAssignment((0, 1)), 0, 1)
        assert not exchangeable(db, LevelAssignment((1, 0)), 1, 0)

    def test_kind_restriction_blocks_cross_kind_pairs(self):
        db = two_level_db(policy=ExchangePolicy.SAME_KIND, kinds=("attn", "mlp"))
        assert not exchangeable(db, LevelAssignment((0, 1)), 0, 1)
        same = two_level_db(policy=ExchangePolicy.SAME_KIND, kinds=("attn", "attn"))
        assert exchangeable(same, LevelAssignment((0, 1)), 0, 1)

    def test_any_policy_ignores_kinds(self):
        db = two_level_db(policy=ExchangePolicy.ANY, kinds=("attn", "mlp"))
        assert exchangeable(db, LevelAssignment((0, 1)), 0, 1)

    def test_multi_level_step_matching(self):
        # moving a 0->1 frees 1; b must reclaim exactly 1 moving 2->1
        db = two_level_db(sizes_a=(4, 3, 2), sizes_b=(4, 2, 1))
        assert exchangeable(db, LevelAssignment((0, 2)), 0, 1)
        # b 1->0 would reclaim 2, no longer matched
        assert not exchangeable(db, LevelAssignment((0, 1)), 0, 1)

    @given(db_with_assignment())
    def test_exchange_preserves_total_size(self, case):
        db, a = case
        before = assignment_size(db, a)
        for u in range(db.n_units):
            for v in range(db.n_units):
                if exchangeable(db, a, u, v):
                    moved = a.replace(u, a.levels[u] + 1).replace(v, a.levels[v] - 1)
                    validate_assignment(db, moved)
                    assert assignment_size(db, moved) == before

    @given(db_with_assignment())
    def test_kind_restricted_policies_never_pair_across_kinds(self, case):
        db, a = case
        if not db.exchange_policy.kind_restricted:
            return
        for u in range(db.n_units):
            for v in range(db.n_units):
                if exchangeable(db, a, u, v):
                    assert db.units[u].kind == db.units[v].kind


class TestJson:
    def doc(self):
        return {
            "exchange_policy": "same_kind",
            "units": [
                {"id": "a", "kind": "attn", "level_sizes": [4, 2, 0]},
                {"id": "b", "kind": "mlp", "level_sizes": [3, 1]},
            ],
        }

    def test_round_trip_through_dict(self):
        db = database_from_dict(self.doc())
        assert db.exchange_policy is ExchangePolicy.SAME_KIND
        assert db.units[0].level_sizes == (4, 2, 0)
        assert database_from_dict(database_to_dict(db)) == db

    def test_round_trip_through_file(self, tmp_path):
        db = database_from_dict(self.doc())
        path = tmp_path / "db.json"
        save_database(db, path)
        assert load_database(path) == db

    def test_policy_name_is_case_insensitive(self):
        doc = self.doc()
        doc["exchange_policy"] = "SAME_KIND"
        assert database_from_dict(doc).exchange_policy is ExchangePolicy.SAME_KIND

    def test_unknown_policy_rejected(self):
        doc = self.doc()
        doc["exchange_policy"] = "sideways"
        with pytest.raises(ValueError):
            database_from_dict(doc)

    def test_unknown_top_level_field_rejected(self):
        doc = self.doc()
        doc["comment"] = "nope"
        with pytest.raises(ValueError):
            database_from_dict(doc)

    def test_unknown_unit_field_rejected(self):
        doc = self.doc()
        doc["units"][0]["scale"] = 2
        with pytest.raises(ValueError):
            database_from_dict(doc)

    def test_missing_unit_field_rejected(self):
        doc = self.doc()
        del doc["units"][0]["kind"]
        with pytest.raises(ValueError):
            database_from_dict(doc)

    def test_malformed_sizes_surface_as_build_errors(self):
        doc = self.doc()
        doc["units"][0]["level_sizes"] = [1, 2]
        with pytest.raises(IncreasingSizes):
            database_from_dict(doc)

    def test_budget_is_plain_value_object(self):
        assert Budget(max_size=7).max_size == 7
