"""
Tests for weight functions, tail sums, membership, sampling and shattering
"""

from fractions import Fraction

import numpy as np
import pytest

from errors import (DimensionMismatchError, DocumentError,
                    ParameterRangeError, UnsupportedTailError, ValidationError)
from rule_tree import Internal, Leaf, RuleTree, canonicalize, coefficient_counts, depth, evaluate
from sparse_class import (bounded_nontrivial_search, chain_cell, custom, exponential, integer_root,
                          is_l1_ball, is_nontrivial, j_epsilon, member, minimal, n_alpha,
                          parse_weight, power_of_two_bounds, sample_rule, shatter_points,
                          shatter_witness, tail_bounds, tail_sum, to_fraction, truncated,
                          weight_to_dict, witness_rule)

SPLIT = RuleTree(1, Internal((Leaf(1), Leaf(-1))))


class TestNumbers:
    def test_to_fraction(self):
        assert to_fraction("0.3") == Fraction(3, 10)
        assert to_fraction(0.1) == Fraction(1, 10)
        assert to_fraction("1/4") == Fraction(1, 4)
        assert to_fraction(np.int64(3)) == 3
        with pytest.raises(ParameterRangeError):
            to_fraction(True)
        with pytest.raises(ParameterRangeError):
            to_fraction("abc")

    def test_integer_root(self):
        assert integer_root(27, 3) == 3
        assert integer_root(26, 3) == 2
        assert integer_root(10 ** 20, 2) == 10 ** 10
        assert integer_root(10 ** 20 - 1, 2) == 10 ** 10 - 1

    def test_power_of_two_bounds(self):
        lo, hi = power_of_two_bounds(Fraction(1, 2))
        assert lo ** 2 <= 2 <= hi ** 2
        assert hi - lo <= Fraction(1, 2 ** 63)
        assert power_of_two_bounds(Fraction(3)) == (8, 8)

    @pytest.mark.parametrize("dim, alpha, expected", [(2, "0.5", 2), (1, "0.5", 0), (3, "0.25", 4)])
    def test_n_alpha(self, dim, alpha, expected):
        assert n_alpha(dim, alpha) == expected

    def test_n_alpha_range(self):
        with pytest.raises(ParameterRangeError):
            n_alpha(1, 1)


class TestWeights:
    def test_budgets(self):
        assert [minimal(1).budget(j) for j in range(4)] == [1, 1, 1, 1]
        assert [minimal(2).budget(j) for j in range(3)] == [1, 3, 3]
        assert [truncated(2, 1).budget(j) for j in range(5)] == [1, 2, 4, 4, 4]
        assert [exponential("0.5", 1).budget(j) for j in range(6)] == [1, 1, 2, 2, 4, 5]
        # d=2, alpha=1/2: full levels up to N=2, then floor(2^j)
        assert [exponential("0.5", 2).budget(j) for j in range(5)] == [1, 4, 16, 8, 16]

    def test_budget_never_exceeds_cell_count(self):
        for w in (minimal(2), truncated(3, 2), exponential("0.3", 3), custom([1, 2, 3], 1, 'geometric', 2)):
            for level in range(12):
                assert w.budget(level) <= 2 ** (w.dim * level)

    def test_custom_validation(self):
        with pytest.raises(ParameterRangeError):
            custom([1, 3], 1, 'zero')
        with pytest.raises(UnsupportedTailError):
            custom([1, 2], 1, 'geometric', '3/2')
        with pytest.raises(ParameterRangeError):
            custom([1, 2], 1, 'geometric', 4)
        with pytest.raises(UnsupportedTailError):
            custom([1, 2], 1).budget(5)

    def test_parse_weight(self):
        assert parse_weight({"kind": "truncated", "K": 2}, 1) == truncated(2, 1)
        assert parse_weight({"kind": "exponential", "alpha": 0.5}, 2) == exponential("1/2", 2)
        assert parse_weight({"kind": "minimal"}, 3) == minimal(3)
        w = parse_weight({"kind": "custom", "table": [1, 2, 1], "tail": "geometric", "ratio": "1/2"}, 1)
        assert w.budget(3) == 0
        assert parse_weight(weight_to_dict(w), 1) == w
        with pytest.raises(DocumentError):
            parse_weight({"kind": "spiral"}, 1)
        with pytest.raises(DocumentError):
            parse_weight({"K": 2}, 1)


class TestTails:
    def test_examples(self):
        assert tail_sum(truncated(2, 1), 4) == Fraction(1, 4)
        assert tail_sum(minimal(1), 0) == 1
        assert tail_sum(truncated(1, 2), 1) == Fraction(1, 3)
        assert tail_sum(truncated(1, 1), 0) == 2

    def test_geometric_tail_ratios(self):
        # integer ratio: closed-form series 2^(j-1) / 4^j summed over j >= 2
        assert tail_sum(custom([1, 1], 2, 'geometric', 2), 1) == Fraction(1, 4)
        # ratio below 1: budgets 1, 0, 0, ... after the table
        assert tail_sum(custom([1, 2], 1, 'geometric', '1/2'), 1) == Fraction(1, 4)
        for ratio in ('3/2', '5/4', 3.5):
            with pytest.raises(UnsupportedTailError, match="integer or below 1"):
                custom([1, 1], 2, 'geometric', ratio)

    @pytest.mark.parametrize("w", [minimal(1), minimal(2), truncated(1, 1), truncated(3, 2),
                                   custom([1, 2, 3], 1, 'geometric', 1), custom([1, 2, 4, 3], 1, 'zero'),
                                   custom([1, 2, 2], 1, 'geometric', '2/3')])
    def test_consecutive_differences(self, w):
        for level in range(10):
            difference = tail_sum(w, level) - tail_sum(w, level + 1)
            assert difference == Fraction(w.budget(level + 1), 2 ** (w.dim * (level + 1)))

    @pytest.mark.parametrize("alpha, dim", [("0.5", 1), ("0.5", 2), ("0.3", 1), ("0.75", 2)])
    def test_exponential_enclosure(self, alpha, dim):
        w = exponential(alpha, dim)
        for level in (0, 3, 9):
            lower, upper = tail_bounds(w, level)
            partial = sum((Fraction(w.budget(j), 2 ** (dim * j)) for j in range(level + 1, level + 400)),
                          Fraction(0))
            assert lower <= upper
            assert upper - lower < Fraction(1, 2 ** 40)
            assert lower - Fraction(1, 2 ** 40) <= partial <= upper

    def test_is_l1_ball(self):
        assert is_l1_ball(truncated(2, 1))
        assert is_l1_ball(exponential("0.5", 2))
        assert not is_l1_ball(custom([1, 2, 4], 1, 'geometric', 2))
        assert not is_l1_ball(custom([1, 2], 1))

    def test_is_nontrivial(self):
        assert is_nontrivial(minimal(1))
        assert not is_nontrivial(custom([1, 0, 1], 1, 'geometric', 1))
        assert is_nontrivial(truncated(1, 1))
        with pytest.raises(ParameterRangeError):
            is_nontrivial(custom([0, 1], 1, 'zero'))

    def test_j_epsilon_examples(self):
        assert j_epsilon(truncated(2, 1), "0.3") == 4
        assert j_epsilon(truncated(1, 1), 3) == 0
        assert j_epsilon(minimal(1), "0.1") == 4
        with pytest.raises(ParameterRangeError):
            j_epsilon(minimal(1), 0)
        with pytest.raises(ValidationError):
            j_epsilon(custom([1, 2, 4], 1, 'geometric', 2), "0.1")

    @pytest.mark.parametrize("w", [minimal(1), truncated(2, 2), exponential("0.5", 1)])
    @pytest.mark.parametrize("eps, A", [("0.3", 1), ("0.01", 2), ("0.001", "3/2")])
    def test_j_epsilon_is_minimal(self, w, eps, A):
        level = j_epsilon(w, eps, A)
        threshold = Fraction(eps) / Fraction(A)
        assert tail_sum(w, level) < threshold
        if level >= 1:
            assert tail_sum(w, level - 1) >= threshold


class TestMembership:
    def test_examples(self):
        assert member(RuleTree(1, Leaf(1)), minimal(1))
        assert not member(SPLIT, minimal(1))
        assert member(SPLIT, truncated(1, 1))

    def test_counts_after_canonical_form(self):
        f = RuleTree(1, Internal((Internal((Leaf(1), Leaf(1))), Leaf(-1))))
        assert member(f, truncated(1, 1))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            member(SPLIT, minimal(2))

    def test_oscillating_block(self):
        f = witness_rule([1, -1], 1)
        assert not member(f, minimal(1))
        assert member(f, minimal(1), oscillating=[chain_cell(3, 1)])
        with pytest.raises(ValidationError):
            member(f, minimal(1), oscillating=[chain_cell(2, 1)])

    def test_monotone_in_weight(self):
        chains = [(minimal(1), truncated(1, 1)), (truncated(1, 1), truncated(2, 1)),
                  (truncated(2, 2), truncated(3, 2))]
        for seed in range(40):
            for smaller, larger in chains:
                f = sample_rule(smaller, 5, seed)
                assert member(f, smaller)
                assert member(f, larger)


class TestSampling:
    def test_members_for_random_classes(self):
        rng = np.random.default_rng(29)
        for _ in range(500):
            dim = int(rng.integers(1, 3))
            kind = rng.integers(3)
            if kind == 0:
                w = minimal(dim)
            elif kind == 1:
                w = truncated(int(rng.integers(1, 4)), dim)
            else:
                w = exponential(str(rng.choice(["0.25", "0.5", "0.75"])), dim)
            max_depth = int(rng.integers(1, 7))
            f = sample_rule(w, max_depth, int(rng.integers(2 ** 32)), float(rng.random()))
            assert member(f, w)
            assert depth(f) <= max_depth
            assert canonicalize(f) == f

    def test_minimal_depth_one(self):
        for seed in range(100):
            f = sample_rule(minimal(1), 1, seed)
            assert member(f, minimal(1))
            assert coefficient_counts(f)[-1] <= 1

    def test_deterministic(self):
        w = truncated(2, 2)
        assert sample_rule(w, 5, 42, 0.7) == sample_rule(w, 5, 42, 0.7)

    def test_full_expansion_of_truncated_class(self):
        f = sample_rule(truncated(1, 1), 8, 3, expand=1.0)
        assert depth(f) == 8
        assert coefficient_counts(f) == [0, 1, 1, 1, 1, 1, 1, 1, 2]

    def test_only_constants_rejected(self):
        with pytest.raises(ValidationError):
            sample_rule(custom([1, 0, 1], 1, 'geometric', 1), 3, 0)

    def test_depth_cap_limits_expansion(self):
        # w(2) = 0: a split root can only close through four leaves at level 3
        w = custom([1, 1, 0, 4], 1, 'zero')
        assert depth(sample_rule(w, 2, 0, expand=1.0)) == 0
        f = sample_rule(w, 3, 0, expand=1.0)
        assert coefficient_counts(f) == [0, 1, 0, 4]
        assert member(f, w)


class TestNontrivialSearch:
    def test_agrees_with_criterion(self):
        rng = np.random.default_rng(31)
        decided = 0
        while decided < 20:
            length = int(rng.integers(2, 5))
            table = [1] + [int(rng.integers(0, 2 ** j + 1)) for j in range(1, length)]
            tail, ratio = [('zero', None), ('geometric', 1), ('geometric', '1/2')][int(rng.integers(3))]
            w = custom(table, 1, tail, ratio)
            total = tail_sum(w, 0)
            partial = total - tail_sum(w, 6)
            # a depth-6 search settles the question only if levels past 6 cannot tip the sum
            if partial < 1 <= total:
                continue
            decided += 1
            found = bounded_nontrivial_search(w, 6)
            assert is_nontrivial(w) == (found is not None)
            if found is not None:
                assert member(found, w)
                assert depth(found) >= 1

    def test_equality_case_needs_infinite_depth(self):
        assert is_nontrivial(minimal(1))
        assert bounded_nontrivial_search(minimal(1), 6) is None


class TestShattering:
    def test_points(self):
        assert shatter_points(1, 1) == [(Fraction(3, 4),)]
        assert shatter_points(2, 2)[1] == (Fraction(5, 8), Fraction(1, 8))

    def test_single_point(self):
        witness = shatter_witness(1, 1)
        assert witness.all_realized

    def test_three_points_in_the_plane(self):
        witness = shatter_witness(3, 2)
        assert witness.realized == 8
        assert witness.all_realized

    @pytest.mark.parametrize("dim", [1, 2])
    def test_ten_points(self, dim):
        witness = shatter_witness(10, dim)
        assert witness.realized == 1024
        assert witness.all_realized

    def test_witness_values(self):
        signs = [1, -1, -1, 1]
        f = witness_rule(signs, 2)
        assert [evaluate(f, x) for x in shatter_points(4, 2)] == signs

    def test_too_many_points(self):
        with pytest.raises(ParameterRangeError):
            shatter_witness(13, 1)
