"""
Planar sets, their dyadic approximations and boundary covering bounds

Also holds the fat Cantor construction: a closed set with empty interior and
positive measure whose indicator no finite dyadic rule represents.
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from dyadic_index import CellIndex, cell_interval, cell_measure
from errors import DocumentError, ParameterRangeError, ValidationError
from rule_tree import RuleTree, leaves
from sparse_class import to_fraction

logger = logging.getLogger(__name__)

Point = Tuple[Fraction, Fraction]

# Allowance for one float disc/rectangle area. Inputs lie in [0, 1] and each
# strip takes under 40 flops on O(1) terms with at most 5 strips per cell, so the
# rounding error stays below 200 * 2^-53 (about 2.2e-14) per boundary cell.
# Cells fully inside or outside the disc are classified with exact Fractions.
CELL_AREA_ROUNDING = 1e-13


@dataclass(frozen=True)
class PlanarSet:
    """A disc, a simple polygon or a half-plane, restricted to [0,1]^2"""
    kind: str
    center: Optional[Point] = None
    radius: Optional[Fraction] = None
    vertices: Tuple[Point, ...] = ()
    normal: Optional[Point] = None
    offset: Optional[Fraction] = None

    def __post_init__(self):
        if self.kind == 'disc':
            cx, cy = self.center
            r = self.radius
            if r <= 0:
                raise ParameterRangeError(f"Radius must be positive, got {r}")
            if cx - r < 0 or cy - r < 0 or cx + r > 1 or cy + r > 1:
                raise ValidationError("Disc must lie inside [0,1]^2")
        elif self.kind == 'polygon':
            _validate_polygon(self.vertices)
        elif self.kind == 'halfplane':
            if self.normal[0] == 0 and self.normal[1] == 0:
                raise ParameterRangeError("Half-plane normal must be nonzero")
        else:
            raise ParameterRangeError(f"Unknown planar set kind '{self.kind}'")


def disc(cx: Any, cy: Any, r: Any) -> PlanarSet:
    return PlanarSet('disc', center=(to_fraction(cx), to_fraction(cy)), radius=to_fraction(r))


def polygon(vertices: Sequence[Sequence[Any]]) -> PlanarSet:
    return PlanarSet('polygon', vertices=tuple((to_fraction(x), to_fraction(y)) for x, y in vertices))


def halfplane(nx: Any, ny: Any, c: Any) -> PlanarSet:
    """{(x, y): nx x + ny y >= c}"""
    return PlanarSet('halfplane', normal=(to_fraction(nx), to_fraction(ny)), offset=to_fraction(c))


def parse_planar_set(document: Dict[str, Any]) -> PlanarSet:
    if not isinstance(document, dict) or len(document) != 1:
        raise DocumentError(f"Planar set must have exactly one of disc/polygon/halfplane: {document!r}")
    kind, body = next(iter(document.items()))
    try:
        if kind == 'disc':
            return disc(body['cx'], body['cy'], body['r'])
        if kind == 'polygon':
            return polygon(body)
        if kind == 'halfplane':
            return halfplane(body['nx'], body['ny'], body['c'])
    except (KeyError, TypeError, ValueError) as e:
        raise DocumentError(f"Malformed {kind} document: {e}")
    raise DocumentError(f"Unknown planar set kind '{kind}'")


def planar_set_to_document(s: PlanarSet) -> Dict[str, Any]:
    if s.kind == 'disc':
        return {"disc": {"cx": str(s.center[0]), "cy": str(s.center[1]), "r": str(s.radius)}}
    if s.kind == 'polygon':
        return {"polygon": [[str(x), str(y)] for x, y in s.vertices]}
    return {"halfplane": {"nx": str(s.normal[0]), "ny": str(s.normal[1]), "c": str(s.offset)}}


# Polygon helpers (exact)

def _cross(o: Point, a: Point, b: Point) -> Fraction:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _segments_touch(p1: Point, p2: Point, q1: Point, q2: Point) -> bool:
    d1, d2 = _cross(q1, q2, p1), _cross(q1, q2, p2)
    d3, d4 = _cross(p1, p2, q1), _cross(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and 0 not in (d1, d2, d3, d4):
        return True

    def on_segment(a: Point, b: Point, c: Point) -> bool:
        return (min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
                and min(a[1], b[1]) <= c[1] <= max(a[1], b[1]))

    return ((d1 == 0 and on_segment(q1, q2, p1)) or (d2 == 0 and on_segment(q1, q2, p2))
            or (d3 == 0 and on_segment(p1, p2, q1)) or (d4 == 0 and on_segment(p1, p2, q2)))


def _validate_polygon(vertices: Sequence[Point]):
    count = len(vertices)
    if count < 3:
        raise ValidationError(f"Polygon needs at least 3 vertices, got {count}")
    for x, y in vertices:
        if not (0 <= x <= 1 and 0 <= y <= 1):
            raise ValidationError(f"Vertex ({x}, {y}) outside [0,1]^2")
    if shoelace(vertices) == 0:
        raise ValidationError("Polygon has zero area")
    edges = [(vertices[i], vertices[(i + 1) % count]) for i in range(count)]
    for i in range(count):
        for j in range(i + 1, count):
            if j == i + 1 or (i == 0 and j == count - 1):
                continue
            if _segments_touch(*edges[i], *edges[j]):
                raise ValidationError(f"Polygon edges {i} and {j} intersect: polygon is not simple")


def shoelace(vertices: Sequence[Point]) -> Fraction:
    """Signed area"""
    total = Fraction(0)
    for i, (x1, y1) in enumerate(vertices):
        x2, y2 = vertices[(i + 1) % len(vertices)]
        total += x1 * y2 - x2 * y1
    return total / 2


def _clip(points: List[Point], inside, intersect) -> List[Point]:
    """One Sutherland-Hodgman pass against a single edge"""
    result = []
    for i, current in enumerate(points):
        previous = points[i - 1]
        if inside(current):
            if not inside(previous):
                result.append(intersect(previous, current))
            result.append(current)
        elif inside(previous):
            result.append(intersect(previous, current))
    return result


def _clip_halfplane(points: List[Point], normal: Point, offset: Fraction) -> List[Point]:
    nx, ny = normal

    def value(p: Point) -> Fraction:
        return nx * p[0] + ny * p[1]

    def intersect(p: Point, q: Point) -> Point:
        t = (offset - value(p)) / (value(q) - value(p))
        return p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])

    return _clip(points, lambda p: value(p) >= offset, intersect)


def _clip_rectangle(points: List[Point], x0: Fraction, x1: Fraction,
                    y0: Fraction, y1: Fraction) -> List[Point]:
    one, zero = Fraction(1), Fraction(0)
    for normal, offset in (((one, zero), x0), ((-one, zero), -x1),
                           ((zero, one), y0), ((zero, -one), -y1)):
        if not points:
            break
        points = _clip_halfplane(points, normal, offset)
    return points


UNIT_SQUARE = [(Fraction(0), Fraction(0)), (Fraction(1), Fraction(0)),
               (Fraction(1), Fraction(1)), (Fraction(0), Fraction(1))]


def region_polygon(s: PlanarSet) -> List[Point]:
    """Vertices of A ∩ [0,1]^2 for polygons and half-planes"""
    if s.kind == 'polygon':
        return list(s.vertices)
    if s.kind == 'halfplane':
        return _clip_halfplane(list(UNIT_SQUARE), s.normal, s.offset)
    raise ValidationError("A disc has no polygonal region")


# Indicator rules

def indicator(s: PlanarSet, x: Any, y: Any) -> bool:
    x, y = to_fraction(x), to_fraction(y)
    if s.kind == 'disc':
        return (x - s.center[0]) ** 2 + (y - s.center[1]) ** 2 <= s.radius ** 2
    if s.kind == 'halfplane':
        return s.normal[0] * x + s.normal[1] * y >= s.offset
    return bool(_polygon_contains(s.vertices, np.array([float(x)]), np.array([float(y)]))[0])


def _polygon_contains(vertices: Sequence[Point], xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Even-odd crossing test, vectorised over points"""
    inside = np.zeros(xs.shape, dtype=bool)
    count = len(vertices)
    for i in range(count):
        x1, y1 = (float(v) for v in vertices[i])
        x2, y2 = (float(v) for v in vertices[(i + 1) % count])
        straddles = (y1 > ys) != (y2 > ys)
        with np.errstate(divide='ignore', invalid='ignore'):
            crossing = x1 + (ys - y1) * (x2 - x1) / (y2 - y1)
        inside ^= straddles & (xs < crossing)
    return inside


def indicator_grid(s: PlanarSet, level: int) -> np.ndarray:
    """1_A at the centres of all level-J cells, indexed [k1, k2]"""
    side = 1 << level
    centres = (np.arange(side) + 0.5) / side
    xs, ys = np.meshgrid(centres, centres, indexing='ij')
    if s.kind == 'disc':
        cx, cy, r = float(s.center[0]), float(s.center[1]), float(s.radius)
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
    if s.kind == 'halfplane':
        nx, ny, c = float(s.normal[0]), float(s.normal[1]), float(s.offset)
        return nx * xs + ny * ys >= c
    return _polygon_contains(s.vertices, xs, ys)


def dyadic_approx(s: PlanarSet, level: int) -> RuleTree:
    """Canonical depth-J rule taking the value of f_A = 2 1_A - 1 at each cell centre"""
    if level < 0:
        raise ParameterRangeError(f"Level must be >= 0, got {level}")
    return RuleTree.from_grid(np.where(indicator_grid(s, level), 1, -1).astype(np.int8))


# Areas and L1 error

def _antiderivative(t: float, r: float) -> float:
    """Integral of sqrt(r^2 - x^2) from 0 to t"""
    ratio = max(-1.0, min(1.0, t / r))
    return 0.5 * (t * math.sqrt(max(0.0, r * r - t * t)) + r * r * math.asin(ratio))


def disc_rectangle_area(cx: float, cy: float, r: float,
                        x0: float, x1: float, y0: float, y1: float) -> float:
    """Area of the disc ∩ [x0,x1]×[y0,y1], integrated piecewise in x"""
    lo, hi = max(x0, cx - r), min(x1, cx + r)
    if lo >= hi:
        return 0.0
    breaks = {lo, hi}
    for y in (y0, y1):
        dy = y - cy
        if abs(dy) < r:
            half = math.sqrt(r * r - dy * dy)
            for x in (cx - half, cx + half):
                if lo < x < hi:
                    breaks.add(x)
    points = sorted(breaks)
    area = 0.0
    for u, v in zip(points, points[1:]):
        mid = 0.5 * (u + v)
        half = math.sqrt(max(0.0, r * r - (mid - cx) ** 2))
        top_is_arc = cy + half < y1
        bottom_is_arc = cy - half > y0
        top = cy + half if top_is_arc else y1
        bottom = cy - half if bottom_is_arc else y0
        if top <= bottom:
            continue
        arc = _antiderivative(v - cx, r) - _antiderivative(u - cx, r)
        width = v - u
        area += (arc if top_is_arc else y1 * width) + (cy * width if top_is_arc else 0.0)
        area -= (cy * width - arc) if bottom_is_arc else y0 * width
    return area


class ErrorEnclosure(NamedTuple):
    lower: Union[Fraction, float]
    upper: Union[Fraction, float]


def _disc_cell_area(s: PlanarSet, cell: CellIndex) -> Tuple[Union[Fraction, float], bool]:
    """(area of A ∩ cell, exact?)"""
    (x0, x1), (y0, y1) = ((interval.lo, interval.hi) for interval in cell_interval(cell))
    cx, cy = s.center
    r2 = s.radius ** 2
    near = max(x0 - cx, 0, cx - x1) ** 2 + max(y0 - cy, 0, cy - y1) ** 2
    far = max(abs(x0 - cx), abs(x1 - cx)) ** 2 + max(abs(y0 - cy), abs(y1 - cy)) ** 2
    if far <= r2:
        return cell_measure(cell), True
    if near >= r2:
        return Fraction(0), True
    return disc_rectangle_area(float(cx), float(cy), float(s.radius),
                               float(x0), float(x1), float(y0), float(y1)), False


def _polygon_cell_area(region: List[Point], cell: CellIndex) -> Fraction:
    (x0, x1), (y0, y1) = ((interval.lo, interval.hi) for interval in cell_interval(cell))
    xs = [p[0] for p in region]
    ys = [p[1] for p in region]
    if max(xs) <= x0 or min(xs) >= x1 or max(ys) <= y0 or min(ys) >= y1:
        return Fraction(0)
    clipped = _clip_rectangle(region, x0, x1, y0, y1)
    return abs(shoelace(clipped)) if len(clipped) >= 3 else Fraction(0)


def l1_error(s: PlanarSet, f: RuleTree) -> ErrorEnclosure:
    """||f - f_A||_{L1} = 2 lambda(f != f_A): exact for polygons and half-planes, enclosed for discs

    Disc cells lying fully inside or outside are decided exactly; each boundary
    cell widens the enclosure by CELL_AREA_ROUNDING.
    """
    if f.dim != 2:
        raise ValidationError(f"Planar sets need a 2-dimensional rule, got d={f.dim}")
    if s.kind != 'disc':
        region = region_polygon(s)
        total = Fraction(0)
        for cell, sign in leaves(f):
            inside = _polygon_cell_area(region, cell) if len(region) >= 3 else Fraction(0)
            total += cell_measure(cell) - inside if sign == 1 else inside
        return ErrorEnclosure(2 * total, 2 * total)

    exact = Fraction(0)
    rounded = []
    for cell, sign in leaves(f):
        area, is_exact = _disc_cell_area(s, cell)
        if is_exact:
            exact += cell_measure(cell) - area if sign == 1 else area
        else:
            rounded.append(float(cell_measure(cell)) - area if sign == 1 else area)
    approximate = float(exact) + math.fsum(rounded)
    slack = len(rounded) * CELL_AREA_ROUNDING + 4 * math.ulp(max(approximate, 1.0))
    return ErrorEnclosure(2 * max(0.0, approximate - slack), 2 * (approximate + slack))


# Covering numbers and the approximation chain

def boundary_length(s: PlanarSet) -> float:
    if s.kind == 'disc':
        return 2 * math.pi * float(s.radius)
    if s.kind == 'polygon':
        vertices = s.vertices
    else:
        # the part of the line inside the square
        region = region_polygon(s)
        nx, ny = s.normal
        on_line = [p for p in region if nx * p[0] + ny * p[1] == s.offset]
        return max((math.hypot(float(p[0] - q[0]), float(p[1] - q[1]))
                    for p in on_line for q in on_line), default=0.0)
    return math.fsum(math.hypot(float(vertices[i][0] - vertices[i - 1][0]),
                                float(vertices[i][1] - vertices[i - 1][1]))
                     for i in range(len(vertices)))


def boundary_vertices(s: PlanarSet) -> int:
    if s.kind == 'disc':
        return 0
    if s.kind == 'polygon':
        return len(s.vertices)
    return 2


def delta(s: PlanarSet, eps: Any) -> float:
    """Un-rounded covering function: pi r / eps for discs, P / (2 eps) + V otherwise"""
    eps = float(to_fraction(eps))
    if eps <= 0:
        raise ParameterRangeError(f"eps must be positive, got {eps}")
    if s.kind == 'disc':
        return math.pi * float(s.radius) / eps
    return boundary_length(s) / (2 * eps) + boundary_vertices(s)


def covering_bound(s: PlanarSet, eps: Any) -> int:
    """Upper bound on the number of sup-norm eps-balls covering the boundary of s"""
    return max(1, math.ceil(delta(s, eps)))


def epsilon_zero(s: PlanarSet, eps: Any) -> float:
    """Largest eps0 with delta(eps0) eps0^2 <= eps"""
    eps = float(to_fraction(eps))
    if eps <= 0:
        raise ParameterRangeError(f"eps must be positive, got {eps}")
    if s.kind == 'disc':
        return eps / (math.pi * float(s.radius))
    half_length = boundary_length(s) / 2
    vertices = boundary_vertices(s)
    if vertices == 0:
        return eps / half_length
    return (-half_length + math.sqrt(half_length ** 2 + 4 * vertices * eps)) / (2 * vertices)


def circle_level(s: PlanarSet, eps: Any) -> int:
    """J = floor(log2(1 / eps0)), so that 2^-J >= eps0 > 2^-(J+1)"""
    eps0 = epsilon_zero(s, eps)
    level = max(0, math.floor(-math.log2(eps0)))
    while 2.0 ** -(level + 1) >= eps0:
        level += 1
    while level > 0 and 2.0 ** -level < eps0:
        level -= 1
    return level


def circle_level_for_n(n: int) -> int:
    """floor(log(4 n / (pi log n)) / log 2)"""
    if n < 3:
        raise ParameterRangeError(f"n must be >= 3, got {n}")
    return max(0, math.floor(math.log(4 * n / (math.pi * math.log(n))) / math.log(2)))


class CircleChain(NamedTuple):
    eps: float
    eps0: float
    level: int
    covering: int
    intermediate: float
    target: float
    error: ErrorEnclosure

    @property
    def holds(self) -> bool:
        return self.error.upper <= self.intermediate and self.error.upper <= self.target


def circle_chain(s: PlanarSet, eps: Any) -> CircleChain:
    """Approximate f_A at J(eps) and compare the certified error with 9 N(eps0) 4^-J and 36 eps"""
    eps0 = epsilon_zero(s, eps)
    level = circle_level(s, eps)
    covering = covering_bound(s, eps0)
    error = l1_error(s, dyadic_approx(s, level))
    chain = CircleChain(float(to_fraction(eps)), eps0, level, covering,
                        9 * covering * 4.0 ** -level, 36 * float(to_fraction(eps)), error)
    logger.info(f"Approximation chain eps={chain.eps}: eps0={eps0:.6g}, J={level}, "
                f"N={covering}, error <= {float(error.upper):.6g}")
    return chain


def chessboard_rule(level: int, dim: int = 2) -> RuleTree:
    """Alternating signs on the level-J cells; every leaf sits at depth J"""
    parity = np.indices((1 << level,) * dim).sum(axis=0) % 2
    return RuleTree.from_grid(np.where(parity == 0, 1, -1).astype(np.int8))


# Fat Cantor set

def _removal_ratio(step: int) -> Fraction:
    """l_i = 1/2 - 1/(i + 1)^2: each kept piece is l_i times its parent"""
    return Fraction(1, 2) - Fraction(1, (step + 1) ** 2)


def fat_cantor_measure(k: int) -> Fraction:
    """lambda(F_k) = prod_{i=1..k} (1 - 2 / (i + 1)^2)"""
    if k < 0:
        raise ParameterRangeError(f"k must be >= 0, got {k}")
    measure = Fraction(1)
    for step in range(1, k + 1):
        measure *= 2 * _removal_ratio(step)
    return measure


def fat_cantor_intervals(k: int) -> List[Tuple[Fraction, Fraction]]:
    """The 2^k closed intervals of F_k"""
    if k < 0:
        raise ParameterRangeError(f"k must be >= 0, got {k}")
    intervals = [(Fraction(0), Fraction(1))]
    for step in range(1, k + 1):
        ratio = _removal_ratio(step)
        refined = []
        for lo, hi in intervals:
            piece = ratio * (hi - lo)
            refined.extend(((lo, lo + piece), (hi - piece, hi)))
        intervals = refined
    return intervals


def fat_cantor_limit() -> float:
    """lim lambda(F_k) = -sin(pi sqrt 2) / (pi sqrt 2)"""
    x = math.pi * math.sqrt(2)
    return -math.sin(x) / x


def fat_cantor_certified_floor(k0: int = 10) -> float:
    """A positive lower bound on every lambda(F_k)

    For n >= k0 + 2, 1 - 2/n^2 >= exp(-4/n^2) and sum_{n >= k0+2} 1/n^2 <= 1/(k0+1),
    so lambda(F_k) >= lambda(F_k0) exp(-4/(k0+1)) for all k.
    """
    if k0 < 1:
        raise ParameterRangeError(f"k0 must be >= 1, got {k0}")
    return float(fat_cantor_measure(k0)) * math.exp(-4 / (k0 + 1)) * (1 - 1e-12)
