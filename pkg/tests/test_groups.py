import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coxflow.groups import (
    Group,
    GroupingError,
    GroupingStructure,
    SelectionRule,
    build_sparse_group,
    build_strong_heredity,
    check_rules,
    parse_grouping_file,
    selection_support,
    strong_heredity_rules,
    validate,
    write_grouping_file,
)

DATA = Path(__file__).parent / "data"

CATEGORICAL_NAMES = ("A1", "A2", "B", "A1B", "A2B", "C1", "C2", "C1B", "C2B")


def categorical_structure():
    """The five-group interaction structure over nine covariates."""
    return GroupingStructure(
        (
            Group("gA", (0, 1, 3, 4)),
            Group("gB", (2, 3, 4, 7, 8)),
            Group("gAB", (3, 4)),
            Group("gC", (5, 6, 7, 8)),
            Group("gCB", (7, 8)),
        ),
        9,
        CATEGORICAL_NAMES,
    )


class TestValidate:
    def test_simple_ok(self):
        st_ = GroupingStructure((Group("a", (0, 1)), Group("b", (2,))), 3)
        assert validate(st_) == []

    def test_uncovered_covariate(self):
        st_ = GroupingStructure((Group("a", (0, 1)),), 3)
        diags = validate(st_)
        assert len(diags) == 1 and "x3" in diags[0]

    def test_categorical_structure_ok(self):
        assert validate(categorical_structure()) == []

    def test_reports_out_of_range_and_weight(self):
        st_ = GroupingStructure((Group("a", (0, 5), weight=1.0),), 2)
        object.__setattr__(st_.groups[0], "weight", -1.0)
        diags = validate(st_)
        assert any("out-of-range" in d for d in diags)
        assert any("non-positive weight" in d for d in diags)

    def test_duplicate_names(self):
        st_ = GroupingStructure((Group("a", (0,)), Group("a", (1,))), 2)
        diags = validate(st_)
        assert any("duplicate" in d for d in diags), diags

    def test_unpenalized_not_required_covered(self):
        st_ = GroupingStructure((Group("a", (0,)),), 2, unpenalized=(1,))
        assert validate(st_) == []

    def test_worked_example_structures_all_validate(self):
        # dose indicator pair
        ex1 = GroupingStructure((Group("g1", (1,)), Group("g2", (0, 1))), 2)
        # strong heredity for one interaction
        ex2 = GroupingStructure(
            (Group("g1", (2,)), Group("g2", (0, 2)), Group("g3", (1, 2))), 3)
        # temporal phases
        ex3 = GroupingStructure(
            (Group("g1", (0,)), Group("g2", (0, 1)), Group("g3", (0, 1, 2))), 3)
        # two nested spatial parcels
        ex4 = GroupingStructure(
            (Group("g1", (0,)), Group("g2", (1,)), Group("g3", (2,)),
             Group("g4", (0, 1, 3)), Group("g5", (0, 1, 2, 3, 4))), 5)
        # graph-structured medication groups
        ex5 = parse_grouping_file((DATA / "case_study_groups.json").read_text())
        for ex in (ex1, ex2, ex3, ex4, ex5):
            assert validate(ex) == []


class TestStrongHeredity:
    def test_three_mains(self):
        st_ = build_strong_heredity(3)
        # mains X1,X2,X3 then interactions (1,2),(1,3),(2,3) at indices 3,4,5
        sets = [set(g.members) for g in st_.groups]
        assert sets == [{0, 3, 4}, {1, 3, 5}, {2, 4, 5}, {3}, {4}, {5}]
        assert st_.p == 6 and st_.n_groups == 6

    def test_two_mains_matches_single_interaction_example(self):
        st_ = build_strong_heredity(2)
        sets = [set(g.members) for g in st_.groups]
        assert sets == [{0, 2}, {1, 2}, {2}]

    def test_membership_counts(self):
        st_ = build_strong_heredity(5)
        counts = np.zeros(st_.p, int)
        for g in st_.groups:
            for m in g.members:
                counts[m] += 1
        assert np.all(counts[:5] == 1)       # each main in exactly 1 group
        assert np.all(counts[5:] == 3)       # each interaction in exactly 3

    def test_rejects_small_p(self):
        with pytest.raises(GroupingError):
            build_strong_heredity(1)


class TestSparseGroup:
    def test_block_weights(self):
        blocks = [list(range(20 * b, 20 * (b + 1))) for b in range(10)]
        st_ = build_sparse_group(blocks, 0.5, 0.5)
        assert st_.n_groups == 210 and st_.p == 200
        w = st_.weights()
        assert np.allclose(w[:200], 0.5)
        assert np.allclose(w[200:], math.sqrt(20) * 0.5)
        assert w[200] == pytest.approx(2.2360679774997896, abs=1e-12)

    def test_single_block(self):
        st_ = build_sparse_group([list(range(4))], 1.0, 2.0)
        assert st_.n_groups == 5
        assert set(st_.groups[-1].members) == {0, 1, 2, 3}
        assert st_.groups[-1].weight == pytest.approx(4.0)

    def test_singleton_blocks(self):
        st_ = build_sparse_group([[0], [1], [2]], 1.0, 1.0)
        assert all(len(g.members) == 1 for g in st_.groups)

    def test_rejects_non_partition(self):
        with pytest.raises(GroupingError):
            build_sparse_group([[0, 1], [1, 2]], 1.0, 1.0)


class TestRules:
    def test_implies_violated(self):
        rule = SelectionRule("implies", (3,), (0, 1))
        assert check_rules({3}, [rule]) == [False]

    def test_implies_satisfied(self):
        rule = SelectionRule("implies", (3,), (0, 1))
        assert check_rules({0, 1, 3}, [rule]) == [True]

    def test_empty_selection_vacuous(self):
        rules = [SelectionRule("implies", (3,), (0, 1)), SelectionRule("collective", (0, 1))]
        assert check_rules(set(), rules) == [True, True]

    def test_collective(self):
        rule = SelectionRule("collective", (0, 1))
        assert check_rules({0}, [rule]) == [False]
        assert check_rules({0, 1, 5}, [rule]) == [True]

    @settings(max_examples=60, deadline=None)
    @given(st.sets(st.integers(0, 9)), st.sets(st.integers(0, 9), min_size=1),
           st.sets(st.integers(0, 9), min_size=1))
    def test_implies_monotone_in_consequent(self, selected, a, b):
        rule = SelectionRule("implies", tuple(a), tuple(b))
        if check_rules(selected, [rule])[0]:
            bigger = selected | b
            assert check_rules(bigger, [rule])[0]

    def test_strong_heredity_rules_builder(self):
        rules = strong_heredity_rules(3)
        assert len(rules) == 3
        assert rules[0].antecedent == (3,) and rules[0].consequent == (0, 1)

    def test_rejects_bad_rule(self):
        with pytest.raises(GroupingError):
            SelectionRule("sometimes", (1,))
        with pytest.raises(GroupingError):
            SelectionRule("implies", (1,))


class TestSupport:
    def test_threshold(self):
        sel = selection_support(np.array([0.0, 2e-10, 0.5]), tol=1e-10)
        assert sel.tolist() == [1, 2]

    def test_zero_vector(self):
        assert selection_support(np.zeros(4)).tolist() == []

    def test_negative_tol_rejected(self):
        with pytest.raises(GroupingError):
            selection_support(np.zeros(2), tol=-1.0)


class TestGroupingFile:
    def test_case_study_file_parses_to_24_groups(self):
        st_ = parse_grouping_file((DATA / "case_study_groups.json").read_text())
        assert st_.n_groups == 24
        assert st_.p == 24
        assert validate(st_) == []
        sizes = sorted(len(g.members) for g in st_.groups)
        assert sum(sizes) == 39
        assert sizes[-2:] == [5, 8]

    def test_round_trip_identity(self):
        st_ = categorical_structure()
        text = write_grouping_file(st_)
        back = parse_grouping_file(text)
        assert back == st_

    def test_canonical_write_is_byte_stable(self):
        st_ = categorical_structure()
        text = write_grouping_file(st_)
        again = write_grouping_file(parse_grouping_file(text))
        assert again == text

    def test_weights_render_17_digits(self):
        st_ = GroupingStructure((Group("a", (0,), weight=1 / 3),), 1, ("v",))
        text = write_grouping_file(st_)
        assert "0.33333333333333331" in text
        assert parse_grouping_file(text).groups[0].weight == 1 / 3

    def test_one_based_indices(self):
        st_ = parse_grouping_file('{"p": 3, "groups": [{"name": "g", "members": [1, 3]}]}')
        assert st_.groups[0].members == (0, 2)

    def test_unpenalized_parsed(self):
        text = ('{"variables": ["a", "b"], "unpenalized": ["b"], '
                '"groups": [{"name": "g", "members": ["a"]}]}')
        st_ = parse_grouping_file(text)
        assert st_.unpenalized == (1,)
        assert validate(st_) == []

    def test_rejects_unknown_name(self):
        with pytest.raises(GroupingError, match="unknown covariate name 'z'"):
            parse_grouping_file(
                '{"variables": ["a"], "groups": [{"name": "g", "members": ["z"]}]}')

    def test_rejects_duplicate_group_names(self):
        with pytest.raises(GroupingError, match="duplicate group name"):
            parse_grouping_file(
                '{"p": 2, "groups": [{"name": "g", "members": [1]},'
                ' {"name": "g", "members": [2]}]}')

    def test_rejects_empty_group_list(self):
        with pytest.raises(GroupingError, match="'groups'"):
            parse_grouping_file('{"p": 2, "groups": []}')

    def test_rejects_bad_weight(self):
        with pytest.raises(GroupingError, match="weight"):
            parse_grouping_file(
                '{"p": 1, "groups": [{"name": "g", "weight": 0, "members": [1]}]}')

    def test_syntax_error_reports_line(self):
        with pytest.raises(GroupingError, match="line 2"):
            parse_grouping_file('{\n  "p": 2,,\n}')

    def test_rejects_out_of_range_index(self):
        with pytest.raises(GroupingError, match="outside"):
            parse_grouping_file('{"p": 2, "groups": [{"name": "g", "members": [5]}]}')
