"""
Classification rules as 2^d-ary dyadic trees

A tree node is either a Leaf carrying a value or an Internal node carrying
exactly 2^d children, ordered like dyadic_index.children. Sign rules carry
values in {-1, +1}; synthetic distributions reuse the same nodes with
(density, eta) leaf values.
"""

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from dyadic_index import (CellIndex, Number, cell_measure, child_position, children, locate,
                          locate_many, root_cell)
from errors import DimensionMismatchError, DocumentError, StructureError


@dataclass(frozen=True)
class Leaf:
    value: Any


@dataclass(frozen=True)
class Internal:
    children: Tuple['Node', ...]


Node = Union[Leaf, Internal]


@dataclass(frozen=True)
class RuleTree:
    """A sign-valued classification rule on [0,1]^d"""
    dim: int
    root: Node

    def __post_init__(self):
        validate_structure(self.root, self.arity, allowed=(-1, 1))

    @property
    def arity(self) -> int:
        return 1 << self.dim

    @classmethod
    def constant(cls, sign: int, dim: int) -> 'RuleTree':
        return cls(dim, Leaf(sign))

    @classmethod
    def from_grid(cls, grid: np.ndarray) -> 'RuleTree':
        """Canonical tree of a full level-J sign table of shape (2^J,)*d"""
        grid = np.asarray(grid)
        return cls(grid.ndim, collapse_grid(grid, convert=int))

    @classmethod
    def from_cell_signs(cls, signs: Mapping[CellIndex, int], dim: int) -> 'RuleTree':
        """Canonical tree of a complete single-level table {cell: sign}"""
        return cls(dim, collapse_grid(cells_to_grid(signs, dim), convert=int))


def validate_structure(node: Node, arity: int, allowed: Optional[Sequence[Any]] = None):
    """Raise StructureError unless every internal node has `arity` children"""
    stack = [node]
    while stack:
        current = stack.pop()
        if isinstance(current, Leaf):
            if allowed is not None and (isinstance(current.value, bool)
                                        or current.value not in allowed):
                raise StructureError(f"Leaf value {current.value!r} not in {tuple(allowed)}")
        elif isinstance(current, Internal):
            if len(current.children) != arity:
                raise StructureError(
                    f"Internal node has {len(current.children)} children, expected {arity}")
            stack.extend(current.children)
        else:
            raise StructureError(f"Unknown node type {type(current).__name__}")


def cells_to_grid(values: Mapping[CellIndex, Any], dim: int) -> np.ndarray:
    """Arrange a complete single-level {cell: value} table as a row-major object array"""
    if not values:
        raise StructureError("Empty cell table")
    levels = {cell.level for cell in values}
    if len(levels) != 1:
        raise StructureError(f"Cell table mixes levels {sorted(levels)}")
    level = levels.pop()
    if len(values) != 1 << (dim * level):
        raise StructureError(
            f"Cell table has {len(values)} entries, level {level} needs {1 << (dim * level)}")
    grid = np.empty((1 << level,) * dim, dtype=object)
    for cell, value in values.items():
        if cell.dim != dim:
            raise DimensionMismatchError(f"Cell {cell} is not {dim}-dimensional")
        grid[cell.index] = value
    return grid


def collapse_grid(grid: np.ndarray, convert: Callable[[Any], Any] = lambda v: v) -> Node:
    """Build the canonical tree of a level-J table by splitting non-uniform blocks"""
    dim = grid.ndim
    side = grid.shape[0]
    if any(extent != side for extent in grid.shape) or side & (side - 1):
        raise StructureError(f"Grid shape {grid.shape} is not (2^J,)*d")

    def build(block: np.ndarray) -> Node:
        first = block.flat[0]
        if block.dtype == object:
            uniform = all(value == first for value in block.flat)
        else:
            uniform = bool(np.all(block == first))
        if uniform:
            return Leaf(convert(first))
        half = block.shape[0] // 2
        slices = [(slice(0, half), slice(half, None))] * dim
        parts = []
        for selection in np.ndindex(*(2,) * dim):
            parts.append(build(block[tuple(slices[axis][bit]
                                           for axis, bit in enumerate(selection))]))
        return Internal(tuple(parts))

    return build(grid)


def collapse(node: Node) -> Node:
    """Merge bottom-up every internal node whose children are equal leaves"""
    if isinstance(node, Leaf):
        return node
    merged = tuple(collapse(child) for child in node.children)
    first = merged[0]
    if isinstance(first, Leaf) and all(isinstance(child, Leaf) and child.value == first.value
                                       for child in merged):
        return Leaf(first.value)
    return Internal(merged)


def node_depth(node: Node) -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + max(node_depth(child) for child in node.children)


def iter_leaves(node: Node, cell: CellIndex) -> Iterator[Tuple[CellIndex, Any]]:
    """Leaves of a subtree with their cells, depth-first in child order"""
    if isinstance(node, Leaf):
        yield cell, node.value
        return
    for child, child_cell in zip(node.children, children(cell)):
        yield from iter_leaves(child, child_cell)


def refine_leaves(roots: Sequence[Node], cell: CellIndex) -> Iterator[Tuple[CellIndex, Tuple[Any, ...]]]:
    """Walk the common refinement of several trees, yielding (cell, leaf values)"""
    if all(isinstance(root, Leaf) for root in roots):
        yield cell, tuple(root.value for root in roots)
        return
    for position, child_cell in enumerate(children(cell)):
        next_roots = [root.children[position] if isinstance(root, Internal) else root
                      for root in roots]
        yield from refine_leaves(next_roots, child_cell)


def zip_trees(roots: Sequence[Node], combine: Callable[..., Any]) -> Node:
    """Tree on the common refinement whose leaf values are combine(*values)"""
    if all(isinstance(root, Leaf) for root in roots):
        return Leaf(combine(*(root.value for root in roots)))
    arity = next(len(root.children) for root in roots if isinstance(root, Internal))
    return Internal(tuple(
        zip_trees([root.children[position] if isinstance(root, Internal) else root
                   for root in roots], combine)
        for position in range(arity)))


# Rule operations

def evaluate(f: RuleTree, x: Sequence[Number]) -> int:
    """f(x): descend from the root to the leaf whose cell contains x"""
    if len(x) != f.dim:
        raise DimensionMismatchError(f"Point has {len(x)} coordinates, rule is {f.dim}-dimensional")
    node = f.root
    level = 0
    while isinstance(node, Internal):
        level += 1
        node = node.children[child_position(locate(x, level))]
    return node.value


def evaluate_many(f: RuleTree, points: np.ndarray) -> np.ndarray:
    """Vectorised evaluate over an (n, d) array; returns int8 signs"""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != f.dim:
        raise DimensionMismatchError(f"Expected an (n, {f.dim}) array, got {points.shape}")
    deepest = node_depth(f.root)
    indices = locate_many(points, deepest)
    result = np.empty(points.shape[0], dtype=np.int8)

    def descend(node: Node, rows: np.ndarray, level: int):
        if rows.size == 0:
            return
        if isinstance(node, Leaf):
            result[rows] = node.value
            return
        bits = (indices[rows] >> (deepest - level - 1)) & 1
        positions = np.zeros(rows.size, dtype=np.int64)
        for axis in range(f.dim):
            positions = (positions << 1) | bits[:, axis]
        for position, child in enumerate(node.children):
            descend(child, rows[positions == position], level + 1)

    descend(f.root, np.arange(points.shape[0]), 0)
    return result


def canonicalize(f: RuleTree) -> RuleTree:
    """The unique minimal tree representing the same function"""
    return RuleTree(f.dim, collapse(f.root))


def depth(f: RuleTree) -> int:
    return node_depth(f.root)


def leaves(f: RuleTree) -> Iterator[Tuple[CellIndex, int]]:
    return iter_leaves(f.root, root_cell(f.dim))


def coefficient_counts(f: RuleTree) -> List[int]:
    """Number of leaves at each depth 0..depth(f); canonicalize first for sparsity counts"""
    counts = [0] * (depth(f) + 1)
    for cell, _ in leaves(f):
        counts[cell.level] += 1
    return counts


def disagreement_measure(f: RuleTree, g: RuleTree) -> Fraction:
    """Lebesgue measure of {f != g}"""
    if f.dim != g.dim:
        raise DimensionMismatchError(f"Rules live in dimensions {f.dim} and {g.dim}")
    total = Fraction(0)
    for cell, (left, right) in refine_leaves([f.root, g.root], root_cell(f.dim)):
        if left != right:
            total += cell_measure(cell)
    return total


def l1_distance(f: RuleTree, g: RuleTree) -> Fraction:
    """||f - g||_1 = 2 * lambda(f != g), exact"""
    return 2 * disagreement_measure(f, g)


def equal(f: RuleTree, g: RuleTree) -> bool:
    """Same function: canonical forms are unique for finite trees"""
    return f.dim == g.dim and collapse(f.root) == collapse(g.root)


def to_grid(f: RuleTree, level: int) -> np.ndarray:
    """Level-J sign table of shape (2^J,)*d; J must reach the deepest leaf"""
    if level < depth(f):
        raise StructureError(f"Level {level} is shallower than the rule depth {depth(f)}")
    grid = np.zeros((1 << level,) * f.dim, dtype=np.int8)
    for cell, sign in leaves(f):
        span = 1 << (level - cell.level)
        grid[tuple(slice(k * span, (k + 1) * span) for k in cell.index)] = sign
    return grid


# Serialisation

def _node_to_document(node: Node) -> Dict[str, Any]:
    if isinstance(node, Leaf):
        return {"v": node.value}
    return {"v": 0, "children": [_node_to_document(child) for child in node.children]}


def to_document(f: RuleTree) -> Dict[str, Any]:
    return {"d": f.dim, "node": _node_to_document(f.root)}


def serialize(f: RuleTree) -> str:
    """Compact JSON: {"d": d, "node": {"v": s} | {"v": 0, "children": [...]}}"""
    return json.dumps(to_document(f), separators=(',', ':'))


def _document_to_node(document: Any, arity: int) -> Node:
    if not isinstance(document, dict) or "v" not in document:
        raise DocumentError(f"Node must be an object with a 'v' field, got {document!r}")
    value = document["v"]
    if isinstance(value, bool) or not isinstance(value, int) or value not in (-1, 0, 1):
        raise StructureError(f"Node value {value!r} not in {{-1, 0, 1}}")
    extra = set(document) - {"v", "children"}
    if extra:
        raise DocumentError(f"Unexpected node fields {sorted(extra)}")
    if value == 0:
        kids = document.get("children")
        if not isinstance(kids, list):
            raise DocumentError("Internal node needs a 'children' list")
        if len(kids) != arity:
            raise StructureError(f"Internal node has {len(kids)} children, expected {arity}")
        return Internal(tuple(_document_to_node(kid, arity) for kid in kids))
    if "children" in document:
        raise StructureError("Leaf node must not carry children")
    return Leaf(value)


def from_document(document: Any) -> RuleTree:
    if not isinstance(document, dict) or set(document) != {"d", "node"}:
        raise DocumentError("Rule document must have exactly the fields 'd' and 'node'")
    dim = document["d"]
    if isinstance(dim, bool) or not isinstance(dim, int) or dim < 1:
        raise DocumentError(f"Dimension must be a positive integer, got {dim!r}")
    return RuleTree(dim, _document_to_node(document["node"], 1 << dim))


def deserialize(text: str) -> RuleTree:
    """Inverse of serialize; rejects malformed documents"""
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise DocumentError(f"Rule document is not valid JSON: {e}")
    return from_document(document)
