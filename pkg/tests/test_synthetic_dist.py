"""
Tests for piecewise distributions, exact risks, sampling and the Assouad family
"""

import logging
import math
from fractions import Fraction

import numpy as np
import pytest

from dyadic_index import CellIndex, cells_at_level, flat_index, locate_many, root_cell
from errors import (CertificateError, DimensionMismatchError, NeighborError, ParameterRangeError,
                    StructureError, ValidationError)
from rule_tree import Internal, Leaf, RuleTree, canonicalize, evaluate, evaluate_many
from sparse_class import custom, exponential, minimal, truncated
from synthetic_dist import (LabeledDataset, assouad_constant, assouad_family, assouad_lower_bound,
                            assouad_leaf_maxima, assouad_membership_condition, bayes_risk, bayes_rule,
                            dgl_lower_bound, empirical_risk, excess_risk, family_in_class, from_tables,
                            hellinger_bruteforce, hellinger_closed_form, hellinger_product_bruteforce,
                            hellinger_sq, hellinger_tensorized, make_distribution, ordered_cells, risk,
                            sample, sandwich_check)

from tests.conftest import random_rule

PLUS, MINUS = Leaf(1), Leaf(-1)
SPLIT = RuleTree(1, Internal((PLUS, MINUS)))
HALVES = {CellIndex(1, (0,)): Fraction(3, 2), CellIndex(1, (1,)): Fraction(1, 2)}


def constant_margin(h=Fraction(3, 5)):
    return make_distribution(RuleTree(1, PLUS), h, 1, h)


def random_distribution(rng, h):
    """d=1, level-2 tables: sibling densities 1 +/- t and a random margin profile"""
    fstar = canonicalize(random_rule(rng, 1, 2))
    density = {}
    for k in range(2):
        t = Fraction(int(rng.integers(0, 3)), 4)
        density[CellIndex(2, (2 * k,))] = 1 + t
        density[CellIndex(2, (2 * k + 1,))] = 1 - t
    profile = {cell: h + (1 - h) * Fraction(int(rng.integers(0, 5)), 4) for cell in cells_at_level(2, 1)}
    return make_distribution(fstar, profile, density, h, Fraction(1, 2), Fraction(3, 2))


class TestMakeDistribution:
    def test_constant_margin(self):
        dist = constant_margin()
        assert dist.eta_at(root_cell(1)) == Fraction(4, 5)
        assert bayes_rule(dist) == RuleTree(1, PLUS)

    def test_hard_margin_split(self):
        dist = make_distribution(SPLIT, 1, 1, 1)
        assert dist.eta_at(CellIndex(1, (0,))) == 1
        assert dist.eta_at(CellIndex(1, (1,))) == 0
        assert bayes_rule(dist) == SPLIT

    def test_non_uniform_density(self):
        dist = make_distribution(RuleTree(1, PLUS), 1, HALVES, 1, Fraction(1, 2), Fraction(3, 2))
        assert dist.density_at(CellIndex(2, (0,))) == Fraction(3, 2)
        assert dist.density_at(CellIndex(1, (1,))) == Fraction(1, 2)
        assert dist.resolution == 1

    def test_density_above_bound(self):
        with pytest.raises(CertificateError):
            make_distribution(RuleTree(1, PLUS), 1, HALVES, 1, Fraction(1, 2), 1)

    def test_normalisation(self):
        heavy = {CellIndex(1, (0,)): Fraction(3, 2), CellIndex(1, (1,)): Fraction(3, 2)}
        with pytest.raises(CertificateError):
            make_distribution(RuleTree(1, PLUS), 1, heavy, 1, Fraction(1, 2), Fraction(3, 2))

    def test_margin_below_h(self):
        with pytest.raises(CertificateError):
            make_distribution(RuleTree(1, PLUS), Fraction(1, 2), 1, Fraction(3, 5))

    def test_bad_ranges(self):
        with pytest.raises(ParameterRangeError):
            make_distribution(RuleTree(1, PLUS), 1, 1, 0)
        with pytest.raises(ParameterRangeError):
            make_distribution(RuleTree(1, PLUS), 1, 1, 1, a=Fraction(3, 2), A=2)

    def test_tables_round_trip(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            dist = random_distribution(rng, Fraction(1, 2))
            density, eta = dist.level_tables()
            rebuilt = from_tables(1, dist.resolution, list(density.ravel()), list(eta.ravel()),
                                  dist.h, dist.a, dist.A)
            assert excess_risk(rebuilt, bayes_rule(dist)) == 0
            assert risk(rebuilt, SPLIT) == risk(dist, SPLIT)

    def test_tables_wrong_size(self):
        with pytest.raises(StructureError):
            from_tables(1, 2, [1, 1, 1], [1, 1, 1], 1, 1, 1)


class TestRisks:
    def test_bayes_rule_has_no_excess(self):
        dist = constant_margin()
        assert excess_risk(dist, bayes_rule(dist)) == 0

    def test_opposite_rule(self):
        assert excess_risk(constant_margin(), RuleTree(1, MINUS)) == Fraction(3, 5)

    def test_half_disagreement(self):
        assert excess_risk(constant_margin(), SPLIT) == Fraction(3, 10)

    def test_excess_is_risk_gap(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            dist = random_distribution(rng, Fraction(1, 3))
            f = random_rule(rng, 1, 3)
            assert excess_risk(dist, f) == risk(dist, f) - bayes_risk(dist)

    def test_zero_only_for_bayes_rule(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            dist = random_distribution(rng, Fraction(1, 2))
            f = canonicalize(random_rule(rng, 1, 3))
            assert (excess_risk(dist, f) == 0) == (f == bayes_rule(dist))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            excess_risk(constant_margin(), RuleTree(2, PLUS))

    def test_empirical_risk_matches_exact(self):
        rng = np.random.default_rng(8)
        dist = random_distribution(rng, Fraction(1, 5))
        f = random_rule(rng, 1, 3)
        data = sample(dist, 10 ** 6, 21)
        wrong = evaluate_many(f, data.points) != data.labels
        assert empirical_risk(data, f) == pytest.approx(wrong.mean())
        std_err = wrong.std() / math.sqrt(data.size)
        assert abs(wrong.mean() - float(risk(dist, f))) <= 4 * std_err + 1e-12

        gap = wrong.astype(float) - (evaluate_many(bayes_rule(dist), data.points) != data.labels)
        std_err = gap.std() / math.sqrt(data.size)
        assert abs(gap.mean() - float(excess_risk(dist, f))) <= 4 * std_err + 1e-12

    def test_empirical_risk_of_nothing(self):
        with pytest.raises(ValidationError):
            empirical_risk(sample(constant_margin(), 0, 1), SPLIT)


class TestSandwich:
    def test_bayes_rule(self):
        dist = constant_margin()
        assert tuple(sandwich_check(dist, bayes_rule(dist))) == (0, 0, 0)

    def test_constant_margin_meets_lower_bound(self):
        result = sandwich_check(constant_margin(), SPLIT)
        assert result.lower == result.dpi == Fraction(3, 10)
        assert result.upper == Fraction(1, 2)

    def test_hard_margin_is_tight(self):
        dist = make_distribution(RuleTree(1, PLUS), 1, 1, 1)
        result = sandwich_check(dist, SPLIT)
        assert result.lower == result.dpi == result.upper == Fraction(1, 2)

    def test_non_uniform_density_is_strict(self):
        dist = make_distribution(RuleTree(1, PLUS), Fraction(3, 5), HALVES, Fraction(3, 5),
                                 Fraction(1, 2), Fraction(3, 2))
        result = sandwich_check(dist, RuleTree(1, Internal((MINUS, PLUS))))
        assert result == (Fraction(3, 20), Fraction(9, 20), Fraction(3, 4))

    def test_random_pairs(self):
        rng = np.random.default_rng(10)
        for _ in range(500):
            h = Fraction(int(rng.integers(1, 11)), 10)
            dist = random_distribution(rng, h)
            lower, dpi, upper = sandwich_check(dist, random_rule(rng, 1, 3))
            assert lower <= dpi <= upper


class TestSample:
    def test_empty(self):
        data = sample(constant_margin(), 0, 3)
        assert data.size == 0
        assert data.points.shape == (0, 1)

    def test_negative_size(self):
        with pytest.raises(ParameterRangeError):
            sample(constant_margin(), -1, 3)

    def test_deterministic(self):
        dist = random_distribution(np.random.default_rng(12), Fraction(1, 2))
        first, second = sample(dist, 500, 99), sample(dist, 500, 99)
        assert np.array_equal(first.points, second.points)
        assert np.array_equal(first.labels, second.labels)
        assert not np.array_equal(first.points, sample(dist, 500, 100).points)

    def test_sure_labels(self):
        data = sample(make_distribution(RuleTree(2, PLUS), 1, 1, 1), 1000, 5)
        assert (data.labels == 1).all()

    def test_uniform_cell_counts(self):
        f = RuleTree(1, Internal((Internal((PLUS, MINUS)), PLUS)))
        data = sample(make_distribution(f, 1, 1, 1), 10 ** 6, 7)
        counts = np.bincount(flat_index(locate_many(data.points, 2), 2), minlength=4)
        p = 0.25
        std_err = math.sqrt(data.size * p * (1 - p))
        assert np.all(np.abs(counts - data.size * p) <= 5 * std_err)

    def test_dataset_validation(self):
        with pytest.raises(ValidationError):
            LabeledDataset(1, [[0.5]], [0])
        with pytest.raises(ValidationError):
            LabeledDataset(1, [[1.5]], [1])
        with pytest.raises(ValidationError):
            LabeledDataset(1, [[0.5], [0.2]], [1])
        for labels in ([255, 257], np.array([255, 257]), np.array([1, 2], dtype=np.uint8), ["1", "-1"]):
            with pytest.raises(ValidationError, match="Labels"):
                LabeledDataset(1, [[0.5], [0.2]], labels)
        with pytest.raises(ValidationError, match="numeric"):
            LabeledDataset(1, [["abc"], [0.2]], [1, -1])
        assert LabeledDataset(1, [[0.5], [0.2]], np.array([1.0, -1.0])).labels.tolist() == [1, -1]


class TestAssouadFamily:
    def test_small_family(self):
        family = assouad_family(1, 2, Fraction(1, 2), 2)
        assert family.size == 4
        assert not family.flagged
        for signs, f in zip(family.signs, family.bayes_rules()):
            assert evaluate(f, (0.25,)) == signs[0]
            assert evaluate(f, (0.75,)) == signs[1]

    def test_margin_on_every_member(self):
        family = assouad_family(2, 3, Fraction(3, 5), 4)
        for dist in family.members:
            for _, (_, eta) in dist.leaves():
                assert abs(2 * eta - 1) >= Fraction(3, 5)

    def test_rest_of_cube_is_positive(self):
        family = assouad_family(1, 1, Fraction(1, 2), 2)
        for f in family.bayes_rules():
            assert evaluate(f, (0.75,)) == 1

    def test_hierarchical_order(self):
        cells = ordered_cells(2, 2)
        assert cells[:4] == [CellIndex(2, (0, 0)), CellIndex(2, (0, 1)),
                             CellIndex(2, (1, 0)), CellIndex(2, (1, 1))]

    def test_low_inner_density_is_flagged(self):
        # W = 1/4 on one half: X_0 carries density 3/2, X_1 only 1/2
        family = assouad_family(1, 1, Fraction(1, 2), 4, a=1)
        assert family.flagged
        assert family.members[0].a == Fraction(1, 2)

    def test_low_inner_density_names_its_cells(self, caplog):
        with caplog.at_level(logging.WARNING, logger="synthetic_dist"):
            assouad_family(1, 1, Fraction(1, 2), 4, a=1)
        assert "X_1..X_m density 1/2 below a=1" in caplog.text
        assert "X_0" not in caplog.text
        caplog.clear()
        with caplog.at_level(logging.WARNING, logger="synthetic_dist"):
            assouad_family(1, 1, Fraction(1, 2), 4, a=2)
        assert "X_1..X_m density 1/2, X_0 density 3/2 below a=2" in caplog.text

    def test_density_above_cap(self):
        with pytest.raises(ParameterRangeError):
            assouad_family(1, 1, Fraction(1, 2), 4, A=1)

    @pytest.mark.parametrize("q,m,n", [(5, 17, 32), (2, 2, 2), (1, 3, 2), (1, 0, 2)])
    def test_rejected_parameters(self, q, m, n):
        with pytest.raises(ParameterRangeError):
            assouad_family(q, m, Fraction(1, 2), n)

    def test_membership_condition_agrees(self):
        family = assouad_family(1, 2, Fraction(1, 2), 2)
        assert assouad_membership_condition(truncated(1, 1), 1, 2)
        assert family_in_class(family, truncated(1, 1))
        assert not assouad_membership_condition(minimal(1), 1, 2)
        assert not family_in_class(family, minimal(1))

    def test_leaf_maxima(self):
        # four alternating cells on [0, 1/2]; [1/2, 1] stays one +1 leaf at level 1
        assert assouad_leaf_maxima(3, 4) == [1, 2, 2, 4]
        assert assouad_leaf_maxima(1, 2) == [1, 2]
        assert assouad_leaf_maxima(2, 1) == [1, 1, 2]
        assert assouad_leaf_maxima(1, 4, dim=2) == [1, 4]
        with pytest.raises(ParameterRangeError):
            assouad_leaf_maxima(1, 3)

    def test_leaf_count_beyond_budget_at_deepest_level(self):
        # floor(w(3)) = 2 cannot hold four alternating leaves
        w = exponential("0.5", 1)
        family = assouad_family(3, 4, Fraction(1, 2), 8)
        assert w.budget(3) == 2
        assert not assouad_membership_condition(w, 3, 4)
        assert not family_in_class(family, w)

    @pytest.mark.parametrize("dim,weights", [
        (1, [minimal(1), truncated(1, 1), truncated(2, 1), exponential("0.5", 1),
             custom([1, 2, 2, 2], 1, 'zero'), custom([1, 1, 2, 1], 1, 'zero'), custom([1, 2, 4, 4], 1, 'zero')]),
        (2, [minimal(2), truncated(1, 2), exponential("0.5", 2), custom([1, 2], 2, 'zero'),
             custom([1, 3], 2, 'zero'), custom([1, 4], 2, 'zero')]),
    ])
    def test_membership_condition_matches_family(self, dim, weights):
        max_q = 3 if dim == 1 else 1
        for q in range(1, max_q + 1):
            cell_count = 1 << (dim * q)
            for m in range(1, min(cell_count, 6) + 1):
                family = assouad_family(q, m, Fraction(1, 2), cell_count, dim=dim)
                for w in weights:
                    assert assouad_membership_condition(w, q, m) == family_in_class(family, w), (q, m, str(w))


class TestHellinger:
    def test_closed_form_examples(self):
        assert hellinger_closed_form(Fraction(1, 100), Fraction(3, 5)) == pytest.approx(0.004, abs=1e-15)
        assert hellinger_closed_form(Fraction(1, 4), 1) == pytest.approx(0.5, abs=1e-15)

    def test_hard_margin_quarter(self):
        family = assouad_family(2, 1, 1, 4)
        closed, brute = hellinger_sq(family, 0, 1)
        assert closed == pytest.approx(0.5, abs=1e-15)
        assert brute == pytest.approx(0.5, abs=1e-12)

    def test_identical_members(self):
        family = assouad_family(1, 2, Fraction(1, 2), 2)
        assert tuple(hellinger_sq(family, 2, 2)) == (0.0, 0.0)

    def test_by_sign_vectors(self):
        family = assouad_family(1, 2, Fraction(1, 2), 2)
        assert hellinger_sq(family, (-1, 1), (1, 1)) == hellinger_sq(family, 1, 3)

    def test_non_neighbours(self):
        family = assouad_family(1, 2, Fraction(1, 2), 2)
        with pytest.raises(NeighborError):
            hellinger_sq(family, 0, 3)

    def test_closed_form_matches_brute_force(self):
        rng = np.random.default_rng(14)
        for _ in range(50):
            q = int(rng.integers(1, 3))
            n = int(rng.integers(1 << q, 40))
            m = int(rng.integers(1, (1 << q) + 1))
            if m == 1 << q and n > 1 << q:
                m -= 1
            h = Fraction(int(rng.integers(1, 21)), 20)
            family = assouad_family(q, m, h, n)
            closed, brute = hellinger_sq(family, 0, 1)
            assert abs(closed - brute) <= 1e-12

    @pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
    def test_tensorized_matches_product(self, n):
        family = assouad_family(1, 1, Fraction(3, 5), 2)
        pi1, pi2 = family.members
        single = hellinger_bruteforce(pi1, pi2)
        assert abs(hellinger_tensorized(single, n) - hellinger_product_bruteforce(pi1, pi2, n)) <= 1e-12

    def test_product_size_cap(self):
        family = assouad_family(1, 1, Fraction(3, 5), 2)
        with pytest.raises(ParameterRangeError):
            hellinger_product_bruteforce(*family.members, 6)


class TestLowerBounds:
    def test_constant_at_hard_margin(self):
        assert assouad_constant(1) == pytest.approx(dgl_lower_bound())
        assert dgl_lower_bound() == pytest.approx(1 / (8 * math.e))

    def test_lower_bound_truncated(self):
        # q = 10, floor(w(11)) = 2 for K = 1, d = 1
        assert assouad_lower_bound(truncated(1, 1), 1024, 1) == pytest.approx(assouad_constant(1) / 1024)

    def test_lower_bound_minimal_is_zero(self):
        assert assouad_lower_bound(minimal(1), 1024, 1) == 0
