"""
Sparse dyadic rule classes F_w

A weight function w caps the number of nonzero coefficients (leaves of the
canonical tree) a rule may carry at each level. All budgets and tail sums are
computed in exact integer/rational arithmetic.
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from config import config
from dyadic_index import CellIndex
from errors import (DimensionMismatchError, DocumentError, InfeasibleBudgetError,
                    ParameterRangeError, UnsupportedTailError, ValidationError)
from rule_tree import (Internal, Leaf, Node, RuleTree, canonicalize, coefficient_counts,
                       depth, evaluate, leaves)

logger = logging.getLogger(__name__)

KINDS = ('minimal', 'truncated', 'exponential', 'custom')
TAIL_RULES = ('zero', 'geometric')

# Binary digits kept when bounding irrational powers of two by rationals
ROOT_PRECISION_BITS = 64
MAX_EXACT_TAIL_TERMS = 2048
MAX_J_EPSILON = 4096


def to_fraction(value: Any) -> Fraction:
    """Exact rational from an int, Fraction, decimal/ratio string, or float (via its shortest repr)"""
    if isinstance(value, bool):
        raise ParameterRangeError(f"Expected a number, got {value!r}")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise ParameterRangeError(f"Expected a finite number, got {value!r}")
        return Fraction(repr(float(value)))
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as e:
            raise ParameterRangeError(f"Cannot read '{value}' as a rational: {e}")
    raise ParameterRangeError(f"Expected a number, got {type(value).__name__}")


def integer_root(value: int, k: int) -> int:
    """floor(value ** (1/k)) for non-negative integers"""
    if value < 0 or k < 1:
        raise ParameterRangeError(f"integer_root needs value >= 0 and k >= 1, got {value}, {k}")
    if value < 2 or k == 1:
        return value
    x = 1 << -(-value.bit_length() // k)
    while True:
        y = ((k - 1) * x + value // x ** (k - 1)) // k
        if y >= x:
            return x
        x = y


def power_of_two_bounds(exponent: Fraction,
                        bits: int = ROOT_PRECISION_BITS) -> Tuple[Fraction, Fraction]:
    """Rationals lo <= 2^exponent <= hi, equal when the power is rational"""
    if exponent < 0:
        lo, hi = power_of_two_bounds(-exponent, bits)
        return 1 / hi, 1 / lo
    p, q = exponent.numerator, exponent.denominator
    scaled = 1 << (p + q * bits)
    root = integer_root(scaled, q)
    lo = Fraction(root, 1 << bits)
    if root ** q == scaled:
        return lo, lo
    return lo, Fraction(root + 1, 1 << bits)


@lru_cache(maxsize=None)
def _n_alpha(dim: int, alpha: Fraction) -> int:
    # smallest N >= 0 with 2^(d alpha N) >= 2^d - 1, i.e. 2^(d p N) >= (2^d - 1)^q
    p, q = alpha.numerator, alpha.denominator
    target = ((1 << dim) - 1) ** q
    level = 0
    while (1 << (dim * p * level)) < target:
        level += 1
    return level


def n_alpha(dim: int, alpha: Any) -> int:
    """N^(d)(alpha) = ceil(log(2^d - 1) / (d alpha log 2)), computed exactly"""
    alpha = to_fraction(alpha)
    if not 0 < alpha < 1:
        raise ParameterRangeError(f"alpha must lie in (0, 1), got {alpha}")
    if dim < 1:
        raise ParameterRangeError(f"Dimension must be >= 1, got {dim}")
    return _n_alpha(dim, alpha)


@dataclass(frozen=True)
class WeightFunction:
    """Per-level budget w(j) of nonzero coefficients for rules on [0,1]^d"""
    kind: str
    dim: int
    K: Optional[int] = None
    alpha: Optional[Fraction] = None
    table: Tuple[int, ...] = ()
    tail: Optional[str] = None
    ratio: Optional[Fraction] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterRangeError(f"Unknown weight kind '{self.kind}'")
        if isinstance(self.dim, bool) or not isinstance(self.dim, int) or self.dim < 1:
            raise ParameterRangeError(f"Dimension must be a positive integer, got {self.dim!r}")
        if self.kind == 'truncated':
            if isinstance(self.K, bool) or not isinstance(self.K, int) or self.K < 1:
                raise ParameterRangeError(f"Truncation level K must be >= 1, got {self.K!r}")
        elif self.kind == 'exponential':
            if self.alpha is None or not 0 < self.alpha < 1:
                raise ParameterRangeError(f"alpha must lie in (0, 1), got {self.alpha}")
        elif self.kind == 'custom':
            self._validate_custom()

    def _validate_custom(self):
        if not self.table:
            raise ParameterRangeError("Custom weight needs a non-empty table")
        for level, value in enumerate(self.table):
            if value < 0 or value > 1 << (self.dim * level):
                raise ParameterRangeError(
                    f"Budget {value} at level {level} outside [0, 2^(d j)]")
        if self.tail not in (None,) + TAIL_RULES:
            raise ParameterRangeError(f"Unknown tail rule '{self.tail}'")
        if self.tail == 'geometric':
            if self.ratio is None or self.ratio <= 0:
                raise ParameterRangeError(f"Geometric tail needs a positive ratio, got {self.ratio}")
            if self.ratio >= 1 and self.ratio.denominator != 1:
                raise UnsupportedTailError(
                    f"Geometric tail ratio {self.ratio} must be an integer or below 1")
            if self.ratio > 1 << self.dim:
                raise ParameterRangeError(
                    f"Geometric tail ratio {self.ratio} exceeds 2^d and overflows the cell count")

    def budget(self, level: int) -> int:
        """floor(w(j))"""
        if level < 0:
            raise ParameterRangeError(f"Level must be >= 0, got {level}")
        d = self.dim
        if self.kind == 'minimal':
            return 1 if level == 0 else (1 << d) - 1
        if self.kind == 'truncated':
            return 1 << (d * min(level, self.K))
        if self.kind == 'exponential':
            if level <= _n_alpha(d, self.alpha):
                return 1 << (d * level)
            p, q = self.alpha.numerator, self.alpha.denominator
            return integer_root(1 << (d * p * level), q)
        size = len(self.table)
        if level < size:
            return self.table[level]
        if self.tail == 'zero':
            return 0
        if self.tail == 'geometric':
            return math.floor(self.table[-1] * self.ratio ** (level - size + 1))
        raise UnsupportedTailError("Custom weight has no tail rule past its table")

    def __str__(self) -> str:
        if self.kind == 'truncated':
            return f"Truncated(K={self.K}, d={self.dim})"
        if self.kind == 'exponential':
            return f"Exponential(alpha={self.alpha}, d={self.dim})"
        if self.kind == 'custom':
            return f"Custom({list(self.table)}, tail={self.tail}, ratio={self.ratio}, d={self.dim})"
        return f"Minimal(d={self.dim})"


def minimal(dim: int) -> WeightFunction:
    return WeightFunction('minimal', dim)


def truncated(K: int, dim: int) -> WeightFunction:
    return WeightFunction('truncated', dim, K=K)


def exponential(alpha: Any, dim: int) -> WeightFunction:
    return WeightFunction('exponential', dim, alpha=to_fraction(alpha))


def custom(table: Sequence[Any], dim: int, tail: Optional[str] = None,
           ratio: Any = None) -> WeightFunction:
    """Budgets from an explicit table, continued past it by a tail rule

    tail='zero' ends the budgets after the table. tail='geometric' multiplies
    the last entry by `ratio` per level and floors. The tail sum needed by the
    L1-ball criterion is then exact for an integer ratio (a geometric series)
    and for a ratio below 1 (the floored budgets reach 0). Any other ratio
    >= 1 raises UnsupportedTailError: flooring breaks the series and no finite
    prefix decides the sum.
    """
    budgets = tuple(math.floor(to_fraction(value)) for value in table)
    return WeightFunction('custom', dim, table=budgets, tail=tail,
                          ratio=None if ratio is None else to_fraction(ratio))


def parse_weight(spec: Dict[str, Any], dim: int) -> WeightFunction:
    """Weight function from its config form, e.g. {"kind": "truncated", "K": 2}"""
    if not isinstance(spec, dict) or 'kind' not in spec:
        raise DocumentError(f"Weight spec must be an object with a 'kind', got {spec!r}")
    kind = str(spec['kind']).lower()
    dim = spec.get('d', dim)
    if kind == 'minimal':
        return minimal(dim)
    if kind == 'truncated':
        return truncated(spec.get('K'), dim)
    if kind == 'exponential':
        return exponential(spec.get('alpha'), dim)
    if kind == 'custom':
        return custom(spec.get('table', []), dim, spec.get('tail'), spec.get('ratio'))
    raise DocumentError(f"Unknown weight kind '{spec['kind']}'")


def weight_to_dict(w: WeightFunction) -> Dict[str, Any]:
    document: Dict[str, Any] = {"kind": w.kind, "d": w.dim}
    if w.kind == 'truncated':
        document["K"] = w.K
    elif w.kind == 'exponential':
        document["alpha"] = str(w.alpha)
    elif w.kind == 'custom':
        document["table"] = list(w.table)
        if w.tail is not None:
            document["tail"] = w.tail
        if w.ratio is not None:
            document["ratio"] = str(w.ratio)
    return document


# Tail sums

def _exponential_tail_bounds(w: WeightFunction, level: int) -> Tuple[Fraction, Fraction]:
    d = w.dim
    head = _n_alpha(d, w.alpha)
    decay = d * (1 - w.alpha)
    extra = min(MAX_EXACT_TAIL_TERMS, math.ceil(ROOT_PRECISION_BITS / decay))
    last = max(level + 1, head + 1) + extra

    exact = Fraction(0)
    for j in range(level + 1, last + 1):
        exact += Fraction(w.budget(j), 1 << (d * j))

    # Remainder sum_{j > last} floor(2^(d alpha j)) 2^(-d j) lies between the
    # un-floored geometric tail minus sum 2^(-d j) and the geometric tail itself
    ratio_lo, ratio_hi = power_of_two_bounds(-decay)
    start_lo, start_hi = power_of_two_bounds(-decay * (last + 1))
    upper = start_hi / (1 - ratio_hi)
    floor_loss = Fraction(1, 1 << (d * (last + 1))) / (1 - Fraction(1, 1 << d))
    lower = max(Fraction(0), start_lo / (1 - ratio_lo) - floor_loss)
    return exact + lower, exact + upper


def _custom_tail(w: WeightFunction, level: int) -> Fraction:
    d = w.dim
    size = len(w.table)
    total = Fraction(0)
    for j in range(level + 1, size):
        total += Fraction(w.table[j], 1 << (d * j))
    start = max(level + 1, size)
    if w.tail == 'zero':
        return total
    if w.tail is None:
        raise UnsupportedTailError(f"{w} has no closed-form tail")
    if w.ratio.denominator == 1:
        ratio = w.ratio.numerator
        if ratio >= 1 << d:
            raise UnsupportedTailError(f"{w} is not an L1-ball: its tail diverges")
        first = Fraction(w.table[-1] * ratio ** (start - size + 1), 1 << (d * start))
        return total + first / (1 - Fraction(ratio, 1 << d))
    # ratio < 1: budgets reach zero after finitely many levels and stay there
    j = start
    while True:
        term = w.budget(j)
        if term == 0:
            return total
        total += Fraction(term, 1 << (d * j))
        j += 1


def tail_bounds(w: WeightFunction, level: int) -> Tuple[Fraction, Fraction]:
    """Certified (lower, upper) for sum_{j > J} 2^(-d j) floor(w(j)); equal when exact"""
    if level < -1:
        raise ParameterRangeError(f"Tail level must be >= -1, got {level}")
    d = w.dim
    if w.kind == 'minimal':
        value = Fraction(2) if level == -1 else Fraction(1, 1 << (d * level))
        return value, value
    if w.kind == 'truncated':
        if level >= w.K:
            value = Fraction(1 << (d * w.K), (1 << (d * level)) * ((1 << d) - 1))
        else:
            value = (w.K - level) + Fraction(1, (1 << d) - 1)
        return value, value
    if w.kind == 'exponential':
        return _exponential_tail_bounds(w, level)
    value = _custom_tail(w, level)
    return value, value


def tail_sum(w: WeightFunction, level: int) -> Fraction:
    """sum_{j > J} 2^(-d j) floor(w(j)); the certified upper end for the exponential class"""
    return tail_bounds(w, level)[1]


def is_l1_ball(w: WeightFunction) -> bool:
    if w.kind != 'custom':
        return True
    if w.tail == 'zero':
        return True
    if w.tail == 'geometric':
        return w.ratio < 1 << w.dim
    return False


def is_nontrivial(w: WeightFunction) -> bool:
    """True iff F_w holds rules other than the constants: sum_{j >= 1} 2^(-d j) floor(w(j)) >= 1"""
    if w.budget(0) < 1:
        raise ParameterRangeError(f"{w} needs w(0) >= 1")
    if not is_l1_ball(w):
        if w.tail is not None:
            return True
        partial = sum((Fraction(w.table[j], 1 << (w.dim * j)) for j in range(1, len(w.table))),
                      Fraction(0))
        if partial >= 1:
            return True
        raise UnsupportedTailError(f"{w} has no tail rule; the criterion cannot be decided")
    lower, upper = tail_bounds(w, 0)
    if lower >= 1:
        return True
    if upper < 1:
        return False
    raise UnsupportedTailError(f"Tail enclosure [{lower}, {upper}] of {w} straddles 1")


def j_epsilon(w: WeightFunction, eps: Any, A: Any = 1) -> int:
    """Smallest J with tail_sum(w, J) < eps / A, compared in exact rationals"""
    eps = to_fraction(eps)
    A = to_fraction(A)
    if eps <= 0:
        raise ParameterRangeError(f"eps must be positive, got {eps}")
    if A < 1:
        raise ParameterRangeError(f"A must be >= 1, got {A}")
    if not is_l1_ball(w):
        raise ValidationError(f"{w} is not an L1-ball of rules")
    threshold = eps / A
    for level in range(MAX_J_EPSILON + 1):
        if tail_sum(w, level) < threshold:
            return level
    raise ParameterRangeError(f"No level up to {MAX_J_EPSILON} reaches eps={eps}")


# Membership

def member(f: RuleTree, w: WeightFunction, oscillating: Iterable[CellIndex] = (),
           horizon: Optional[int] = None) -> bool:
    """True iff the canonical rule f uses at most floor(w(j)) nonzero coefficients at every level

    Leaves listed in `oscillating` stand for low oscillating blocks: below such a
    leaf the rule keeps 2^d - 1 nonzero coefficients at every deeper level. Those
    levels are checked up to `horizon` levels past the deepest leaf.
    """
    if f.dim != w.dim:
        raise DimensionMismatchError(f"Rule is {f.dim}-dimensional, weight is {w.dim}-dimensional")
    oscillating = list(oscillating)
    f = canonicalize(f)
    leaf_cells = {cell for cell, _ in leaves(f)}
    for cell in oscillating:
        if cell not in leaf_cells:
            raise ValidationError(f"Oscillating block {cell} is not a leaf of the rule")

    counts = coefficient_counts(f)
    last = depth(f)
    if oscillating:
        last += config.OSCILLATION_HORIZON if horizon is None else horizon
    per_block = (1 << f.dim) - 1
    for level in range(last + 1):
        # a block is an internal node at its own level, so its leaf is not a coefficient there
        used = (counts[level] if level < len(counts) else 0) - sum(1 for cell in oscillating if cell.level == level)
        used += per_block * sum(1 for cell in oscillating if cell.level < level)
        if used > w.budget(level):
            return False
    return True


# Sampling

def max_open_nodes(w: WeightFunction, max_depth: int) -> List[int]:
    """F(j): most nodes at level j that can still be closed within budget by max_depth"""
    table = [0] * (max_depth + 1)
    table[max_depth] = w.budget(max_depth)
    arity = 1 << w.dim
    for level in range(max_depth - 1, -1, -1):
        table[level] = w.budget(level) + table[level + 1] // arity
    return table


def _internal_range(w: WeightFunction, capacity: List[int], level: int, open_nodes: int) -> Tuple[int, int]:
    arity = 1 << w.dim
    low = max(0, open_nodes - w.budget(level))
    high = min(open_nodes, capacity[level + 1] // arity)
    return low, high


def _break_ties(nodes: List[Any], rng: np.random.Generator):
    # Flip one leaf wherever 2^d sibling leaves share a sign so no merge can happen
    for node in nodes:
        kids = node['children']
        if all(kid['children'] is None for kid in kids) and len({kid['sign'] for kid in kids}) == 1:
            victim = kids[int(rng.integers(len(kids)))]
            victim['sign'] = -victim['sign']


def _freeze(node: Dict[str, Any]) -> Node:
    if node['children'] is None:
        return Leaf(node['sign'])
    return Internal(tuple(_freeze(kid) for kid in node['children']))


def sample_rule(w: WeightFunction, max_depth: int, seed: int, expand: float = 0.5) -> RuleTree:
    """Random canonical member of F_w with depth <= max_depth

    Open nodes are expanded level by level; `expand` is the probability that an
    open node becomes internal, clipped to what the remaining budget allows.
    """
    if max_depth < 1:
        raise ParameterRangeError(f"max_depth must be >= 1, got {max_depth}")
    if not 0 <= expand <= 1:
        raise ParameterRangeError(f"expand must lie in [0, 1], got {expand}")
    if not is_nontrivial(w):
        raise ValidationError(f"{w} only contains the constant rules")

    rng = np.random.default_rng(seed)
    arity = 1 << w.dim
    capacity = max_open_nodes(w, max_depth)
    root = {'children': None, 'sign': 1}
    frontier = [root]
    internals = []
    for level in range(max_depth + 1):
        if level == max_depth:
            if len(frontier) > w.budget(level):
                raise InfeasibleBudgetError(
                    f"{len(frontier)} open nodes exceed budget {w.budget(level)} at level {level}")
            chosen = 0
        else:
            low, high = _internal_range(w, capacity, level, len(frontier))
            if low > high:
                raise InfeasibleBudgetError(f"No feasible expansion at level {level}")
            chosen = int(np.clip(rng.binomial(len(frontier), expand), low, high))
        expanded = set(rng.choice(len(frontier), size=chosen, replace=False).tolist()) if chosen else set()
        next_frontier = []
        for position, node in enumerate(frontier):
            if position in expanded:
                node['children'] = [{'children': None, 'sign': 1} for _ in range(arity)]
                internals.append(node)
                next_frontier.extend(node['children'])
            else:
                node['sign'] = int(rng.choice((-1, 1)))
        frontier = next_frontier
        if not frontier:
            break

    _break_ties(internals, rng)
    f = canonicalize(RuleTree(w.dim, _freeze(root)))
    logger.debug(f"Sampled rule from {w}: depth {depth(f)}, counts {coefficient_counts(f)}")
    return f


# Nontriviality brute force

def bounded_nontrivial_search(w: WeightFunction, max_depth: int = 6) -> Optional[RuleTree]:
    """A canonical non-constant member of F_w of depth <= max_depth, or None

    Only the per-level count of internal nodes matters for feasibility, so the
    search enumerates level profiles exhaustively. A None answer certifies
    nothing beyond max_depth.
    """
    if max_depth < 1:
        raise ParameterRangeError(f"max_depth must be >= 1, got {max_depth}")
    arity = 1 << w.dim
    failed = set()

    def search(level: int, open_nodes: int) -> Optional[List[int]]:
        if (level, open_nodes) in failed:
            return None
        if open_nodes <= w.budget(level):
            return [0]
        if level < max_depth:
            needed = open_nodes - w.budget(level)
            for internal in range(needed, open_nodes + 1):
                rest = search(level + 1, internal * arity)
                if rest is not None:
                    return [internal] + rest
        failed.add((level, open_nodes))
        return None

    # The root must split for the rule to be non-constant
    profile = search(1, arity)
    if profile is None:
        logger.warning(f"No non-constant member of {w} up to depth {max_depth}")
        return None
    return _profile_rule([1] + profile, w.dim)


def _profile_rule(profile: List[int], dim: int) -> RuleTree:
    arity = 1 << dim
    root = {'children': None, 'sign': 1}
    frontier = [root]
    internals = []
    for internal in profile:
        next_frontier = []
        for position, node in enumerate(frontier):
            if position < internal:
                node['children'] = [{'children': None, 'sign': 1 if i % 2 == 0 else -1}
                                    for i in range(arity)]
                internals.append(node)
                next_frontier.extend(node['children'])
        frontier = next_frontier
    return RuleTree(dim, _freeze(root))


# Shattering witness for the minimal class

@dataclass(frozen=True)
class ShatterWitness:
    points: Tuple[Tuple[Fraction, ...], ...]
    rules: Tuple[RuleTree, ...]
    realized: int
    members: int

    @property
    def all_realized(self) -> bool:
        total = 1 << len(self.points)
        return self.realized == total and self.members == total


def shatter_points(m: int, dim: int) -> List[Tuple[Fraction, ...]]:
    """x_j = ((2^j + 1) / 2^(j+1), 1 / 2^(j+1), ..., 1 / 2^(j+1)) for j = 1..m"""
    return [(Fraction((1 << j) + 1, 1 << (j + 1)),) + (Fraction(1, 1 << (j + 1)),) * (dim - 1)
            for j in range(1, m + 1)]


def chain_cell(level: int, dim: int) -> CellIndex:
    """Cell at the bottom of the witness chain: index (2^(level-1), 0, ..., 0)"""
    return CellIndex(level, (1 << (level - 1),) + (0,) * (dim - 1))


def witness_rule(signs: Sequence[int], dim: int) -> RuleTree:
    """Minimal-class rule with value signs[j-1] at x_j, built along the chain of cells

    Each chain cell at level j >= 1 splits into the next chain cell, the cell
    holding x_j and fillers. The chain ends in a leaf at level m + 1 that stands
    for a low oscillating block.
    """
    arity = 1 << dim
    m = len(signs)

    def chain(level: int) -> Node:
        # node for the chain cell at `level`, level >= 1
        if level == m + 1:
            return Leaf(-signs[m - 1])
        kids: List[Node] = [Leaf(1)] * arity
        kids[0] = chain(level + 1)
        kids[arity - 1] = Leaf(signs[level - 1])
        return Internal(tuple(kids))

    kids = [Leaf(1)] * arity
    kids[1 << (dim - 1)] = chain(1)
    return RuleTree(dim, Internal(tuple(kids)))


def shatter_witness(m: int, dim: int) -> ShatterWitness:
    """Realize every labeling of x_1..x_m with members of the minimal class"""
    if not 1 <= m <= config.MAX_SHATTER_POINTS:
        raise ParameterRangeError(
            f"Exhaustive shattering check supports 1 <= m <= {config.MAX_SHATTER_POINTS}, got {m}")
    points = shatter_points(m, dim)
    w = minimal(dim)
    oscillating = [chain_cell(m + 1, dim)]
    rules = []
    realized = 0
    members = 0
    for pattern in range(1 << m):
        signs = [1 if (pattern >> (m - 1 - j)) & 1 else -1 for j in range(m)]
        f = witness_rule(signs, dim)
        rules.append(f)
        if [evaluate(f, x) for x in points] == signs:
            realized += 1
        if member(f, w, oscillating=oscillating):
            members += 1
    logger.info(f"Shattering check m={m}, d={dim}: {realized}/{1 << m} labelings realized")
    return ShatterWitness(tuple(points), tuple(rules), realized, members)
