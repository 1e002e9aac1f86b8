"""
Per-cell majority vote plug-in classifier and its resolution rules
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Dict, List, Tuple

import numpy as np

from dyadic_index import CellIndex, cell_measure, children, flat_index, locate_many, root_cell
from errors import DimensionMismatchError, ParameterRangeError
from rule_tree import Leaf, Node, RuleTree, iter_leaves
from sparse_class import WeightFunction, is_l1_ball, j_epsilon, tail_sum, to_fraction
from synthetic_dist import HALF, LabeledDataset, PiecewiseDistribution

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FittedRule:
    """Majority-vote coefficients and sample tallies at level J"""
    level: int
    dim: int
    coefficients: np.ndarray
    n_plus: np.ndarray
    n_minus: np.ndarray

    def to_rule(self) -> RuleTree:
        """Canonical tree of depth <= J"""
        return RuleTree.from_grid(self.coefficients)

    def counts_rows(self) -> List[Dict[str, int]]:
        """Rows of the counts table: j, k1..kd, n_plus, n_minus"""
        rows = []
        for index in np.ndindex(*self.coefficients.shape):
            row = {"j": self.level}
            row.update({f"k{axis + 1}": int(k) for axis, k in enumerate(index)})
            row["n_plus"] = int(self.n_plus[index])
            row["n_minus"] = int(self.n_minus[index])
            rows.append(row)
        return rows


def fit(data: LabeledDataset, level: int, dim: int = None) -> FittedRule:
    """Tally each sample into its level-J cell and vote: +1 iff n_plus >= 1 and n_plus > n_minus"""
    if level < 0:
        raise ParameterRangeError(f"Level must be >= 0, got {level}")
    if dim is not None and dim != data.dim:
        raise DimensionMismatchError(f"Dataset is {data.dim}-dimensional, expected {dim}")
    shape = (1 << level,) * data.dim
    cells = 1 << (data.dim * level)
    if data.size:
        positions = flat_index(locate_many(data.points, level), level)
    else:
        positions = np.zeros(0, dtype=np.int64)
    n_plus = np.bincount(positions[data.labels == 1], minlength=cells).reshape(shape)
    n_minus = np.bincount(positions[data.labels == -1], minlength=cells).reshape(shape)
    coefficients = np.where((n_plus >= 1) & (n_plus > n_minus), 1, -1).astype(np.int8)
    logger.debug(f"Fitted level {level} on {data.size} samples: "
                 f"{int((coefficients == 1).sum())} positive cells of {cells}")
    return FittedRule(level, data.dim, coefficients, n_plus, n_minus)


def select_j(n: int, a: Any, dim: int) -> int:
    """J_n = ceil(ln(a n / (2^d ln n)) / (d ln 2)), clamped at 0"""
    if n < 3:
        raise ParameterRangeError(f"Sample size must be >= 3 to choose a level, got {n}")
    a = float(to_fraction(a))
    if not 0 < a <= 1:
        raise ParameterRangeError(f"a must lie in (0, 1], got {a}")
    argument = a * n / ((1 << dim) * math.log(n))
    return max(0, math.ceil(math.log(argument) / (dim * math.log(2))))


def cell_probabilities(dist: PiecewiseDistribution, level: int) -> np.ndarray:
    """p_k = P(Y = 1 | X in I_k^(J)) for every level-J cell, exact, as an object array"""
    shape = (1 << level,) * dist.dim
    table = np.empty(shape, dtype=object)

    def masses(node: Node, cell: CellIndex) -> Tuple[Fraction, Fraction]:
        total = Fraction(0)
        positive = Fraction(0)
        for leaf_cell, (density, eta) in iter_leaves(node, cell):
            mass = density * cell_measure(leaf_cell)
            total += mass
            positive += mass * eta
        return total, positive

    def walk(node: Node, cell: CellIndex):
        if isinstance(node, Leaf) and cell.level <= level:
            span = 1 << (level - cell.level)
            table[tuple(slice(k * span, (k + 1) * span) for k in cell.index)] = node.value[1]
        elif cell.level == level:
            total, positive = masses(node, cell)
            table[cell.index] = positive / total
        else:
            for child, child_cell in zip(node.children, children(cell)):
                walk(child, child_cell)

    walk(dist.root, root_cell(dist.dim))
    return table


def approximate(dist: PiecewiseDistribution, eps: Any, w: WeightFunction) -> RuleTree:
    """f_eps: at level J_eps, +1 on cells with p_k > 1/2 and -1 elsewhere"""
    eps = to_fraction(eps)
    if eps <= 0:
        raise ParameterRangeError(f"eps must be positive, got {eps}")
    if w.dim != dist.dim:
        raise DimensionMismatchError(f"Weight is {w.dim}-dimensional, distribution is {dist.dim}-dimensional")
    level = j_epsilon(w, eps, dist.A)
    probabilities = cell_probabilities(dist, level)
    signs = np.empty(probabilities.shape, dtype=np.int8)
    for index in np.ndindex(*probabilities.shape):
        signs[index] = 1 if probabilities[index] > HALF else -1
    logger.debug(f"Approximation at J_eps={level} for eps={eps}")
    return RuleTree.from_grid(signs)


def theoretical_bound(eps: Any, n: int, a: Any, A: Any, h: Any, dim: int, j_eps: int) -> float:
    """(1 + A) eps + exp(-n a (1 - exp(-h^2 / 2)) 2^(-d J_eps))"""
    eps, a, A, h = (float(to_fraction(value)) for value in (eps, a, A, h))
    _check_ranges(a, A, h)
    if eps < 0:
        raise ParameterRangeError(f"eps must be >= 0, got {eps}")
    if n < 0 or j_eps < 0 or dim < 1:
        raise ParameterRangeError(f"Need n >= 0, J >= 0 and d >= 1, got n={n}, J={j_eps}, d={dim}")
    return (1 + A) * eps + math.exp(-n * a * (1 - math.exp(-h * h / 2)) * 2.0 ** (-dim * j_eps))


def bias_variance(eps: Any, n: int, a: Any, A: Any, h: Any, dim: int, j_eps: int) -> Tuple[float, float]:
    """The bound split into its approximation part eps and estimation part A eps + exp(...)"""
    total = theoretical_bound(eps, n, a, A, h, dim, j_eps)
    bias = float(to_fraction(eps))
    return bias, total - bias


def bound_epsilon_for_level(w: WeightFunction, level: int, A: Any) -> Fraction:
    """Infimum of the eps whose J_eps equals `level`: A * tail_sum(w, level)"""
    if not is_l1_ball(w):
        raise ParameterRangeError(f"{w} is not an L1-ball of rules")
    return to_fraction(A) * tail_sum(w, level)


def _check_ranges(a: float, A: float, h: float):
    if not 0 < h <= 1:
        raise ParameterRangeError(f"h must lie in (0, 1], got {h}")
    if not 0 < a <= 1 <= A:
        raise ParameterRangeError(f"Need 0 < a <= 1 <= A, got a={a}, A={A}")


def truncated_rate_constant(K: int, dim: int, h: Any, a: Any, A: Any) -> float:
    """2 (1 + A) / C with C = a (1 - e^(-h^2/2)) (2^d - 1) / (A 2^(d (K + 1)))"""
    a, A, h = (float(to_fraction(value)) for value in (a, A, h))
    _check_ranges(a, A, h)
    c = a * (1 - math.exp(-h * h / 2)) * ((1 << dim) - 1) / (A * 2.0 ** (dim * (K + 1)))
    return 2 * (1 + A) / c


def exponential_rate_constant(alpha: Any, dim: int, h: Any, a: Any, A: Any) -> float:
    """2 (1 + A) A / (2^(d (1 - alpha)) - 1) * [2^d / (a (1 - e^(-h^2/2)))]^(1 - alpha)"""
    alpha, a, A, h = (float(to_fraction(value)) for value in (alpha, a, A, h))
    _check_ranges(a, A, h)
    if not 0 < alpha < 1:
        raise ParameterRangeError(f"alpha must lie in (0, 1), got {alpha}")
    scale = (2.0 ** dim / (a * (1 - math.exp(-h * h / 2)))) ** (1 - alpha)
    return 2 * (1 + A) * A / (2.0 ** (dim * (1 - alpha)) - 1) * scale


def truncated_j_epsilon(eps: Any, K: int, dim: int, A: Any) -> int:
    """Smallest J >= K with 2^(dK) / (2^(dJ) (2^d - 1)) < eps / A"""
    eps, A = to_fraction(eps), to_fraction(A)
    if eps <= 0:
        raise ParameterRangeError(f"eps must be positive, got {eps}")
    level = K
    while Fraction(1 << (dim * K), (1 << (dim * level)) * ((1 << dim) - 1)) >= eps / A:
        level += 1
    return level
