"""
Dyadic cells of the unit cube [0,1]^d

A cell at level j is the product of half-open intervals [k_i 2^-j, (k_i+1) 2^-j);
the last interval along each axis is closed at 1 so the level-j cells partition
the closed cube.
"""

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, List, Sequence, Tuple, Union

import numpy as np

from errors import DomainError, NoParentError, ParameterRangeError, DocumentError

Number = Union[int, float, Fraction]


@dataclass(frozen=True, order=True)
class CellIndex:
    """Level j and integer multi-index k of a dyadic cell"""
    level: int
    index: Tuple[int, ...]

    def __post_init__(self):
        if self.level < 0:
            raise ParameterRangeError(f"Cell level must be >= 0, got {self.level}")
        if len(self.index) < 1:
            raise ParameterRangeError("Cell index needs at least one coordinate")
        side = 1 << self.level
        for k in self.index:
            if not 0 <= k < side:
                raise ParameterRangeError(
                    f"Index {self.index} out of range for level {self.level}")

    @property
    def dim(self) -> int:
        return len(self.index)

    def __str__(self) -> str:
        return f"{self.level}:{','.join(str(k) for k in self.index)}"

    @classmethod
    def parse(cls, text: str) -> 'CellIndex':
        """Parse the textual form "j:k1,...,kd" """
        try:
            level_text, index_text = text.strip().split(':')
            index = tuple(int(part) for part in index_text.split(','))
            return cls(int(level_text), index)
        except ValueError as e:
            raise DocumentError(f"Malformed cell index '{text}': {e}")


@dataclass(frozen=True)
class DyadicInterval:
    """One side of a dyadic cell; closed on the right only when hi == 1"""
    lo: Fraction
    hi: Fraction

    @property
    def closed_right(self) -> bool:
        return self.hi == 1

    def contains(self, x: Number) -> bool:
        if self.closed_right:
            return self.lo <= x <= self.hi
        return self.lo <= x < self.hi


def root_cell(dim: int) -> CellIndex:
    if dim < 1:
        raise ParameterRangeError(f"Dimension must be >= 1, got {dim}")
    return CellIndex(0, (0,) * dim)


def cell_interval(cell: CellIndex) -> Tuple[DyadicInterval, ...]:
    """Per-axis intervals making up the cell"""
    width = Fraction(1, 1 << cell.level)
    return tuple(DyadicInterval(k * width, (k + 1) * width) for k in cell.index)


def cell_measure(cell: CellIndex) -> Fraction:
    """Lebesgue measure 2^(-d j)"""
    return Fraction(1, 1 << (cell.dim * cell.level))


def center(cell: CellIndex) -> Tuple[Fraction, ...]:
    denominator = 1 << (cell.level + 1)
    return tuple(Fraction(2 * k + 1, denominator) for k in cell.index)


def locate(x: Sequence[Number], level: int) -> CellIndex:
    """The unique level-j cell containing x"""
    if level < 0:
        raise ParameterRangeError(f"Level must be >= 0, got {level}")
    if len(x) < 1:
        raise ParameterRangeError("Point needs at least one coordinate")
    side = 1 << level
    index = []
    for coordinate in x:
        if not 0 <= coordinate <= 1:
            raise DomainError(f"Coordinate {coordinate} outside [0, 1]")
        # Scaling by a power of two is exact for floats and Fractions alike
        index.append(min(math.floor(coordinate * side), side - 1))
    return CellIndex(level, tuple(index))


def locate_many(points: np.ndarray, level: int) -> np.ndarray:
    """Vectorised locate: integer multi-indices of shape (n, d)"""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ParameterRangeError(f"Expected an (n, d) array, got shape {points.shape}")
    if points.size and (points.min() < 0.0 or points.max() > 1.0 or np.isnan(points).any()):
        raise DomainError("Point coordinates outside [0, 1]")
    side = 1 << level
    return np.minimum(np.floor(points * side).astype(np.int64), side - 1)


def flat_index(indices: np.ndarray, level: int) -> np.ndarray:
    """Row-major position of each multi-index among the level-j cells"""
    indices = np.asarray(indices, dtype=np.int64)
    dim = indices.shape[1]
    return np.ravel_multi_index(indices.T, (1 << level,) * dim)


def parent(cell: CellIndex) -> CellIndex:
    if cell.level == 0:
        raise NoParentError("The root cell has no parent")
    return CellIndex(cell.level - 1, tuple(k >> 1 for k in cell.index))


def children(cell: CellIndex) -> List[CellIndex]:
    """The 2^d children in lexicographic order of their index tuples"""
    axes = [(2 * k, 2 * k + 1) for k in cell.index]
    return [CellIndex(cell.level + 1, index) for index in itertools.product(*axes)]


def child_position(cell: CellIndex) -> int:
    """Position of a cell among its parent's children"""
    position = 0
    for k in cell.index:
        position = (position << 1) | (k & 1)
    return position


def cells_at_level(level: int, dim: int) -> Iterator[CellIndex]:
    """All level-j cells in lexicographic order"""
    if level < 0 or dim < 1:
        raise ParameterRangeError(f"Invalid level {level} or dimension {dim}")
    for index in itertools.product(range(1 << level), repeat=dim):
        yield CellIndex(level, index)


def is_ancestor(ancestor: CellIndex, cell: CellIndex) -> bool:
    """True when ancestor contains cell (a cell is its own ancestor)"""
    if ancestor.dim != cell.dim or ancestor.level > cell.level:
        return False
    shift = cell.level - ancestor.level
    return all((k >> shift) == a for k, a in zip(cell.index, ancestor.index))


def ancestor_path(cell: CellIndex) -> Tuple[Tuple[int, ...], ...]:
    """Index tuples from level 1 down to the cell; sorts cells hierarchically"""
    return tuple(tuple(k >> (cell.level - t) for k in cell.index)
                 for t in range(1, cell.level + 1))
