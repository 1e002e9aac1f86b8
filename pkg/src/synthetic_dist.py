"""
Piecewise-constant distributions pi = (P^X, eta) on dyadic cells

A distribution is stored as a dyadic partition tree whose leaves carry exact
(density, eta) pairs. Every risk below is an exact rational; sampling is seeded.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from config import config
from dyadic_index import (CellIndex, ancestor_path, cell_measure, cells_at_level, children,
                          is_ancestor, root_cell)
from errors import (CertificateError, DimensionMismatchError, NeighborError,
                    ParameterRangeError, StructureError, ValidationError)
from rule_tree import (Internal, Leaf, Node, RuleTree, cells_to_grid, collapse, collapse_grid,
                       evaluate_many, iter_leaves, l1_distance, node_depth, refine_leaves,
                       zip_trees)
from sparse_class import WeightFunction, member, to_fraction

logger = logging.getLogger(__name__)

HALF = Fraction(1, 2)


@dataclass(frozen=True)
class PiecewiseDistribution:
    """Marginal density and regression function, constant on the leaves of `root`

    Leaf values are (density, eta) pairs of Fractions. The constructor certifies
    normalisation, a <= density <= A, 0 <= eta <= 1 and |2 eta - 1| >= h.
    """
    dim: int
    root: Node
    h: Fraction
    a: Fraction
    A: Fraction
    resolution: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'resolution', max(self.resolution, node_depth(self.root)))
        self._certify()

    def _certify(self):
        if not 0 < self.h <= 1:
            raise ParameterRangeError(f"Margin h must lie in (0, 1], got {self.h}")
        if not 0 < self.a <= 1 <= self.A:
            raise ParameterRangeError(f"Density bounds need 0 < a <= 1 <= A, got a={self.a}, A={self.A}")
        total = Fraction(0)
        for cell, (density, eta) in self.leaves():
            if not self.a <= density <= self.A:
                raise CertificateError(
                    f"Density {density} on cell {cell} outside [{self.a}, {self.A}]")
            if not 0 <= eta <= 1:
                raise CertificateError(f"eta {eta} on cell {cell} outside [0, 1]")
            if abs(2 * eta - 1) < self.h:
                raise CertificateError(f"Margin |2 eta - 1| = {abs(2 * eta - 1)} below h={self.h} on cell {cell}")
            total += density * cell_measure(cell)
        if total != 1:
            raise CertificateError(f"Density integrates to {total}, not 1")

    def leaves(self):
        return iter_leaves(self.root, root_cell(self.dim))

    def _leaf_value(self, cell: CellIndex) -> Tuple[Fraction, Fraction]:
        if cell.dim != self.dim:
            raise DimensionMismatchError(f"Cell {cell} is not {self.dim}-dimensional")
        node = self.root
        current = root_cell(self.dim)
        while isinstance(node, Internal):
            if current.level == cell.level:
                raise StructureError(f"Cell {cell} is coarser than the partition")
            for child, child_cell in zip(node.children, children(current)):
                if is_ancestor(child_cell, cell):
                    node, current = child, child_cell
                    break
        return node.value

    def density_at(self, cell: CellIndex) -> Fraction:
        return self._leaf_value(cell)[0]

    def eta_at(self, cell: CellIndex) -> Fraction:
        return self._leaf_value(cell)[1]

    def level_tables(self) -> Tuple[np.ndarray, np.ndarray]:
        """Density and eta as object arrays of shape (2^R,)*d"""
        shape = (1 << self.resolution,) * self.dim
        density = np.empty(shape, dtype=object)
        eta = np.empty(shape, dtype=object)
        for cell, (cell_density, cell_eta) in self.leaves():
            span = 1 << (self.resolution - cell.level)
            block = tuple(slice(k * span, (k + 1) * span) for k in cell.index)
            density[block] = cell_density
            eta[block] = cell_eta
        return density, eta


@dataclass(frozen=True)
class LabeledDataset:
    dim: int
    points: np.ndarray
    labels: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        try:
            points = np.asarray(self.points, dtype=np.float64).reshape(-1, self.dim)
        except (TypeError, ValueError) as e:
            raise ValidationError(f"Point coordinates must be numeric: {e}")
        # checked before narrowing to int8, which would wrap 255 to -1
        raw_labels = np.asarray(self.labels).reshape(-1)
        if raw_labels.size and (raw_labels.dtype.kind not in 'iuf'
                                or not np.isin(raw_labels, (-1, 1)).all()):
            raise ValidationError("Labels must be -1 or +1")
        labels = raw_labels.astype(np.int8)
        if points.shape[0] != labels.shape[0]:
            raise ValidationError(f"{points.shape[0]} points but {labels.shape[0]} labels")
        if points.size and (np.isnan(points).any() or points.min() < 0 or points.max() > 1):
            raise ValidationError("Point coordinates must lie in [0, 1]")
        object.__setattr__(self, 'points', points)
        object.__setattr__(self, 'labels', labels)

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])


class SandwichResult(NamedTuple):
    lower: Fraction
    dpi: Fraction
    upper: Fraction


class HellingerPair(NamedTuple):
    closed_form: float
    brute_force: float


# Construction

def uniform_density() -> Fraction:
    return Fraction(1)


def constant_profile(h: Any) -> Fraction:
    return to_fraction(h)


def _table_level(values: Any) -> int:
    if isinstance(values, Mapping) and values:
        return next(iter(values)).level
    return 0


def _value_tree(values: Any, dim: int) -> Node:
    if isinstance(values, Mapping):
        return collapse_grid(_mapping_grid(values, dim), convert=to_fraction)
    return Leaf(to_fraction(values))


def _mapping_grid(values: Mapping[CellIndex, Any], dim: int) -> np.ndarray:
    return cells_to_grid({cell: to_fraction(value) for cell, value in values.items()}, dim)


def make_distribution(fstar: RuleTree, margin_profile: Any, density: Any, h: Any,
                      a: Any = 1, A: Any = 1) -> PiecewiseDistribution:
    """pi with Bayes rule fstar: eta = (1 + fstar * profile) / 2 on every cell

    `margin_profile` and `density` are either constants or complete single-level
    {CellIndex: value} tables.
    """
    h = to_fraction(h)
    profile_tree = _value_tree(margin_profile, fstar.dim)
    for _, (profile,) in refine_leaves([profile_tree], root_cell(fstar.dim)):
        if not h <= profile <= 1:
            raise CertificateError(f"Margin profile value {profile} outside [{h}, 1]")

    def combine(sign: int, cell_density: Fraction, profile: Fraction) -> Tuple[Fraction, Fraction]:
        return cell_density, (1 + sign * profile) / 2

    root = collapse(zip_trees([fstar.root, _value_tree(density, fstar.dim), profile_tree], combine))
    resolution = max(node_depth(fstar.root), _table_level(density), _table_level(margin_profile))
    return PiecewiseDistribution(fstar.dim, root, h, to_fraction(a), to_fraction(A), resolution)


def from_tables(dim: int, resolution: int, density: Sequence[Any], eta: Sequence[Any],
                h: Any, a: Any, A: Any) -> PiecewiseDistribution:
    """Distribution from row-major level-R tables (the on-disk form)"""
    size = 1 << (dim * resolution)
    if len(density) != size or len(eta) != size:
        raise StructureError(
            f"Level-{resolution} tables need {size} entries, got {len(density)} and {len(eta)}")
    shape = (1 << resolution,) * dim
    density_grid = np.empty(size, dtype=object)
    eta_grid = np.empty(size, dtype=object)
    density_grid[:] = [to_fraction(value) for value in density]
    eta_grid[:] = [to_fraction(value) for value in eta]
    root = collapse(zip_trees([collapse_grid(density_grid.reshape(shape)),
                               collapse_grid(eta_grid.reshape(shape))],
                              lambda cell_density, cell_eta: (cell_density, cell_eta)))
    return PiecewiseDistribution(dim, root, to_fraction(h), to_fraction(a), to_fraction(A), resolution)


# Sampling

def sample(dist: PiecewiseDistribution, n: int, seed: int) -> LabeledDataset:
    """n i.i.d. draws: a cell by its mass, a uniform point inside it, then Y ~ eta"""
    if n < 0:
        raise ParameterRangeError(f"Sample size must be >= 0, got {n}")
    rng = np.random.default_rng(seed)
    cells = list(dist.leaves())
    masses = np.array([float(value[0] * cell_measure(cell)) for cell, value in cells])
    lows = np.array([[float(k) / (1 << cell.level) for k in cell.index] for cell, _ in cells])
    widths = np.array([1.0 / (1 << cell.level) for cell, _ in cells])
    etas = np.array([float(value[1]) for _, value in cells])

    chosen = rng.choice(len(cells), size=n, p=masses / masses.sum())
    points = lows[chosen] + widths[chosen, None] * rng.random((n, dist.dim))
    labels = np.where(rng.random(n) < etas[chosen], 1, -1).astype(np.int8)
    return LabeledDataset(dist.dim, points, labels, seed)


# Risks

def _check_dims(dist: PiecewiseDistribution, f: RuleTree):
    if dist.dim != f.dim:
        raise DimensionMismatchError(
            f"Distribution is {dist.dim}-dimensional, rule is {f.dim}-dimensional")


def bayes_rule(dist: PiecewiseDistribution) -> RuleTree:
    """f* = sign(2 eta - 1), canonical"""
    return RuleTree(dist.dim, collapse(zip_trees(
        [dist.root], lambda value: 1 if value[1] > HALF else -1)))


def excess_risk(dist: PiecewiseDistribution, f: RuleTree) -> Fraction:
    """d_pi(f, f*) = E[|2 eta - 1| 1{f != f*}], exact"""
    _check_dims(dist, f)
    total = Fraction(0)
    for cell, ((density, eta), sign) in refine_leaves([dist.root, f.root], root_cell(dist.dim)):
        best = 1 if eta > HALF else -1
        if sign != best:
            total += abs(2 * eta - 1) * density * cell_measure(cell)
    return total


def risk(dist: PiecewiseDistribution, f: RuleTree) -> Fraction:
    """R(f) = P(f(X) != Y), exact"""
    _check_dims(dist, f)
    total = Fraction(0)
    for cell, ((density, eta), sign) in refine_leaves([dist.root, f.root], root_cell(dist.dim)):
        wrong = eta if sign == -1 else 1 - eta
        total += wrong * density * cell_measure(cell)
    return total


def bayes_risk(dist: PiecewiseDistribution) -> Fraction:
    return risk(dist, bayes_rule(dist))


def empirical_risk(data: LabeledDataset, f: RuleTree) -> float:
    if data.size == 0:
        raise ValidationError("Empirical risk of an empty dataset")
    if data.dim != f.dim:
        raise DimensionMismatchError(f"Dataset is {data.dim}-dimensional, rule is {f.dim}-dimensional")
    return float(np.mean(evaluate_many(f, data.points) != data.labels))


def sandwich_check(dist: PiecewiseDistribution, f: RuleTree) -> SandwichResult:
    """(a h ||f - f*||_1 / 2, d_pi, A ||f - f*||_1 / 2); raises if the ordering fails"""
    distance = l1_distance(f, bayes_rule(dist))
    result = SandwichResult(dist.a * dist.h * distance / 2, excess_risk(dist, f),
                            dist.A * distance / 2)
    if not result.lower <= result.dpi <= result.upper:
        raise CertificateError(f"Sandwich inequality fails: {result}")
    return result


# Assouad hypercube

@dataclass(frozen=True)
class AssouadFamily:
    """The 2^m distributions pi_sigma built on the level-q grid"""
    q: int
    m: int
    dim: int
    h: Fraction
    W: Fraction
    cells: Tuple[CellIndex, ...]
    signs: Tuple[Tuple[int, ...], ...]
    members: Tuple[PiecewiseDistribution, ...]
    flagged: bool = False

    @property
    def size(self) -> int:
        return len(self.members)

    def index_of(self, signs: Sequence[int]) -> int:
        return self.signs.index(tuple(signs))

    def bayes_rules(self) -> List[RuleTree]:
        return [bayes_rule(dist) for dist in self.members]


def ordered_cells(q: int, dim: int) -> List[CellIndex]:
    """Level-q cells in hierarchical order: each ancestor block stays contiguous"""
    return sorted(cells_at_level(q, dim), key=ancestor_path)


def assouad_family(q: int, m: int, h: Any, n: int, dim: int = 1,
                   a: Any = None, A: Any = None) -> AssouadFamily:
    """Hypercube of distributions with W = 1/n mass on each of X_1..X_m

    Density is W 2^(dq) on X_1..X_m and (1 - mW) / lambda(X_0) on X_0; eta_sigma is
    (1 + sigma_j h) / 2 on X_j and 1 on X_0. When either density falls below
    a requested `a` the members are kept and the family is flagged.
    """
    h = to_fraction(h)
    if not 0 < h <= 1:
        raise ParameterRangeError(f"Margin h must lie in (0, 1], got {h}")
    if q < 0 or n < 1:
        raise ParameterRangeError(f"Need q >= 0 and n >= 1, got q={q}, n={n}")
    cell_count = 1 << (dim * q)
    if not 1 <= m <= cell_count:
        raise ParameterRangeError(f"m must lie in [1, {cell_count}], got {m}")
    if m > config.MAX_FAMILY_SIZE:
        raise ParameterRangeError(f"m={m} exceeds {config.MAX_FAMILY_SIZE}: 2^m members is too many")
    W = Fraction(1, n)
    if W > Fraction(1, cell_count):
        raise ParameterRangeError(f"W = 1/{n} exceeds the cell measure 2^-{dim * q}")
    if m * W > 1 or (m * W == 1 and m < cell_count):
        raise ParameterRangeError(f"mW = {m * W} leaves no mass for X_0")

    cells = ordered_cells(q, dim)
    chosen, rest = cells[:m], cells[m:]
    inner_density = W * cell_count
    outer_density = (1 - m * W) / (1 - Fraction(m, cell_count)) if rest else None
    densities = [inner_density] + ([outer_density] if rest else [])
    a_cert, A_cert = min(densities + [Fraction(1)]), max(densities + [Fraction(1)])

    flagged = False
    if a is not None and a_cert < to_fraction(a):
        flagged = True
        low = [f"{name} density {value}"
               for name, value in (("X_1..X_m", inner_density), ("X_0", outer_density))
               if value is not None and value < to_fraction(a)]
        detail = ", ".join(low) or f"density {a_cert}"
        logger.warning(f"{detail} below a={a}; family kept and flagged")
    if A is not None and A_cert > to_fraction(A):
        raise ParameterRangeError(f"Density {A_cert} exceeds A={A}")

    density_table = {cell: inner_density for cell in chosen}
    density_table.update({cell: outer_density for cell in rest})
    signs = list(itertools.product((-1, 1), repeat=m))
    members = []
    for sigma in signs:
        eta_table = {cell: (1 + s * h) / 2 for cell, s in zip(chosen, sigma)}
        eta_table.update({cell: Fraction(1) for cell in rest})
        root = collapse(zip_trees([_value_tree(density_table, dim), _value_tree(eta_table, dim)],
                                  lambda cell_density, cell_eta: (cell_density, cell_eta)))
        members.append(PiecewiseDistribution(dim, root, h, a_cert, A_cert, q))
    logger.info(f"Built Assouad family q={q}, m={m}, d={dim}, W={W}: {len(members)} members")
    return AssouadFamily(q, m, dim, h, W, tuple(cells), tuple(signs), tuple(members), flagged)


def assouad_leaf_maxima(q: int, m: int, dim: int = 1) -> List[int]:
    """Largest leaf count at each level 0..q over the canonical Bayes rules of the family

    Every f*_sigma is +1 on X_0 and sigma_j on X_j. Subtrees holding no X_j are a
    single +1 leaf; the others are either merged into one signed leaf or split,
    and the maximum is taken over every sign pattern that yields each outcome.
    """
    cell_count = 1 << (dim * q)
    if q < 0 or not 1 <= m <= cell_count:
        raise ParameterRangeError(f"Need q >= 0 and 1 <= m <= {cell_count}, got q={q}, m={m}")
    chosen = ordered_cells(q, dim)[:m]

    def outcomes(cell: CellIndex, level: int) -> Dict[str, int]:
        # canonical outcome ('+', '-' or 'split') -> most leaves at `level` inside the subtree
        as_leaf = 1 if cell.level == level else 0
        if not any(is_ancestor(cell, x) for x in chosen):
            return {'+': as_leaf}
        if cell.level == q:
            return {'+': as_leaf, '-': as_leaf}
        combined: Dict[str, int] = {}
        for child in children(cell):
            child_outcomes = outcomes(child, level)
            if not combined:
                combined = {('mixed' if state == 'split' else state): value
                            for state, value in child_outcomes.items()}
                continue
            merged: Dict[str, int] = {}
            for left, left_value in combined.items():
                for right, right_value in child_outcomes.items():
                    state = left if left == right and left != 'split' else 'mixed'
                    merged[state] = max(merged.get(state, -1), left_value + right_value)
            combined = merged
        result = {state: as_leaf for state in ('+', '-') if state in combined}
        if 'mixed' in combined:
            result['split'] = combined['mixed']
        return result

    return [max(outcomes(root_cell(dim), level).values()) for level in range(q + 1)]


def assouad_membership_condition(w: WeightFunction, q: int, m: int) -> bool:
    """True iff floor(w(j)) covers the largest leaf count at every level j <= q"""
    maxima = assouad_leaf_maxima(q, m, w.dim)
    return all(count <= w.budget(level) for level, count in enumerate(maxima))


def family_in_class(family: AssouadFamily, w: WeightFunction) -> bool:
    return all(member(f, w) for f in family.bayes_rules())


# Hellinger distance

def outcome_probabilities(pi1: PiecewiseDistribution,
                          pi2: PiecewiseDistribution) -> Tuple[np.ndarray, np.ndarray]:
    """Probabilities of every (cell, y) outcome on the common refinement"""
    if pi1.dim != pi2.dim:
        raise DimensionMismatchError("Distributions live in different dimensions")
    first, second = [], []
    for cell, ((d1, e1), (d2, e2)) in refine_leaves([pi1.root, pi2.root], root_cell(pi1.dim)):
        measure = cell_measure(cell)
        first.extend((float(d1 * measure * e1), float(d1 * measure * (1 - e1))))
        second.extend((float(d2 * measure * e2), float(d2 * measure * (1 - e2))))
    return np.array(first), np.array(second)


def hellinger_bruteforce(pi1: PiecewiseDistribution, pi2: PiecewiseDistribution) -> float:
    """sum over (cell, y) of (sqrt p1 - sqrt p2)^2"""
    p1, p2 = outcome_probabilities(pi1, pi2)
    return math.fsum((np.sqrt(p1) - np.sqrt(p2)) ** 2)


def hellinger_closed_form(W: Any, h: Any) -> float:
    W, h = float(to_fraction(W)), float(to_fraction(h))
    return 2 * W * (1 - math.sqrt(1 - h * h))


def hellinger_sq(family: AssouadFamily, first: Union[int, Sequence[int]],
                 second: Union[int, Sequence[int]]) -> HellingerPair:
    """Closed form and brute force H^2 between two members one coordinate apart"""
    i = first if isinstance(first, int) else family.index_of(first)
    j = second if isinstance(second, int) else family.index_of(second)
    hamming = sum(1 for s, t in zip(family.signs[i], family.signs[j]) if s != t)
    if hamming > 1:
        raise NeighborError(f"Members {family.signs[i]} and {family.signs[j]} differ in {hamming} coordinates")
    closed = 0.0 if hamming == 0 else hellinger_closed_form(family.W, family.h)
    return HellingerPair(closed, hellinger_bruteforce(family.members[i], family.members[j]))


def hellinger_tensorized(h2: float, n: int) -> float:
    """H^2 between n-fold products: 2 (1 - (1 - H^2 / 2)^n)"""
    if n < 0:
        raise ParameterRangeError(f"n must be >= 0, got {n}")
    return 2 * (1 - (1 - h2 / 2) ** n)


def hellinger_product_bruteforce(pi1: PiecewiseDistribution, pi2: PiecewiseDistribution,
                                 n: int) -> float:
    """H^2 between n-fold products summed directly over all outcome tuples"""
    if not 1 <= n <= 5:
        raise ParameterRangeError(f"Direct product sum supports 1 <= n <= 5, got {n}")
    p1, p2 = outcome_probabilities(pi1, pi2)
    joint1, joint2 = p1, p2
    for _ in range(n - 1):
        joint1 = np.multiply.outer(joint1, p1).ravel()
        joint2 = np.multiply.outer(joint2, p2).ravel()
    return math.fsum((np.sqrt(joint1) - np.sqrt(joint2)) ** 2)


# Lower-bound constants

def assouad_constant(h: Any) -> float:
    """C_0 = (h / 8) exp(-(1 - sqrt(1 - h^2)))"""
    h = float(to_fraction(h))
    return h / 8 * math.exp(-(1 - math.sqrt(1 - h * h)))


def assouad_lower_bound(w: WeightFunction, n: int, h: Any) -> float:
    """C_0 n^-1 (floor(w(q + 1)) - (2^d - 1)) with q = floor(log2(n) / d)"""
    if n < 1:
        raise ParameterRangeError(f"n must be >= 1, got {n}")
    q = (n.bit_length() - 1) // w.dim
    return assouad_constant(h) / n * (w.budget(q + 1) - ((1 << w.dim) - 1))


def dgl_lower_bound() -> float:
    """Minimax floor 1 / (8 e) over the unrestricted class with h = 1"""
    return 1 / (8 * math.e)
