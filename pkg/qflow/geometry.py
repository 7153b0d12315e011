# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

"""Integer-coordinate geometry kernel.

All coordinates are signed integers in database units (1 nm). Areas are kept as
integers (twice the area where a half-unit can appear), distances are reported as
the floor of the real value in nm.
"""

import logging
import math
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from numba import jit
from rtree import index
from shapely.geometry import Polygon as ShapelyPolygon

logger = logging.getLogger(__name__)

COORD_LIMIT = 2**31

# Returned by `min_spacing` when the interiors of the two polygons intersect.
OVERLAP = -1

ENDCAPS = ("flush", "round", "extend")


class Point(NamedTuple):
    x: int
    y: int


class Rect(NamedTuple):
    """Axis-aligned box, closed on all sides."""

    xmin: int
    ymin: int
    xmax: int
    ymax: int

    @property
    def width(self) -> int:
        return self.xmax - self.xmin

    @property
    def height(self) -> int:
        return self.ymax - self.ymin

    @property
    def center(self) -> Tuple[float, float]:
        return ((self.xmin + self.xmax) / 2, (self.ymin + self.ymax) / 2)

    def expand(self, d: int) -> "Rect":
        return Rect(self.xmin - d, self.ymin - d, self.xmax + d, self.ymax + d)

    def intersects(self, other: "Rect") -> bool:
        return (
            self.xmin <= other.xmax
            and other.xmin <= self.xmax
            and self.ymin <= other.ymax
            and other.ymin <= self.ymax
        )

    def contains(self, other: "Rect") -> bool:
        return (
            self.xmin <= other.xmin
            and self.ymin <= other.ymin
            and other.xmax <= self.xmax
            and other.ymax <= self.ymax
        )

    def union(self, other: "Rect") -> "Rect":
        return Rect(
            min(self.xmin, other.xmin),
            min(self.ymin, other.ymin),
            max(self.xmax, other.xmax),
            max(self.ymax, other.ymax),
        )

    def translate(self, dx: int, dy: int) -> "Rect":
        return Rect(self.xmin + dx, self.ymin + dy, self.xmax + dx, self.ymax + dy)

    @classmethod
    def bounding(cls, rects: Iterable["Rect"]) -> Optional["Rect"]:
        out = None
        for r in rects:
            out = r if out is None else out.union(r)
        return out


class Trapezoid(NamedTuple):
    """Horizontal trapezoid, one of the two horizontal edges may have zero length."""

    y_bottom: int
    y_top: int
    x_bottom_left: int
    x_bottom_right: int
    x_top_left: int
    x_top_right: int

    @property
    def area2(self) -> int:
        """Twice the area (always an integer)."""
        return (self.y_top - self.y_bottom) * (
            (self.x_bottom_right - self.x_bottom_left)
            + (self.x_top_right - self.x_top_left)
        )

    @property
    def area(self) -> float:
        return self.area2 / 2

    @property
    def bounds(self) -> Rect:
        return Rect(
            min(self.x_bottom_left, self.x_top_left),
            self.y_bottom,
            max(self.x_bottom_right, self.x_top_right),
            self.y_top,
        )

    def translate(self, dx: int, dy: int) -> "Trapezoid":
        return Trapezoid(
            self.y_bottom + dy,
            self.y_top + dy,
            self.x_bottom_left + dx,
            self.x_bottom_right + dx,
            self.x_top_left + dx,
            self.x_top_right + dx,
        )


class Polygon:
    """Simple polygon stored as an open, counterclockwise ring of integer vertices.

    The constructor normalises the input (drops the closing vertex and repeated
    consecutive vertices, enforces counterclockwise order) but does not reject
    degenerate or self-intersecting rings: use :py:meth:`is_valid` for that, the
    tape-out gate reports such polygons rather than losing them at import.

    Parameters
    ----------
    vertices :
        Sequence of `(x, y)` integer pairs, or a `(n, 2)` array.

    Raises
    ------
    ValueError
        If a coordinate does not fit in a signed 32-bit integer, or fewer than
        three vertices remain after normalisation.

    Examples
    --------
    >>> from qflow.geometry import Polygon
    >>> square = Polygon([(0, 0), (2000, 0), (2000, 2000), (0, 2000)])
    >>> square.area
    4000000.0

    """

    __slots__ = ("_xy", "_area2")

    def __init__(self, vertices: Union[Sequence[Tuple[int, int]], np.ndarray]):
        xy = np.asarray(vertices, dtype=np.int64).reshape(-1, 2)
        if xy.shape[0] and np.abs(xy).max() >= COORD_LIMIT:
            raise ValueError("Polygon coordinates must fit in 32-bit signed integers.")
        if len(xy) > 1 and (xy[0] == xy[-1]).all():
            xy = xy[:-1]
        if len(xy) > 1:
            keep = np.any(xy != np.roll(xy, 1, axis=0), axis=1)
            xy = xy[keep] if keep.any() else xy[:1]
        if len(xy) < 3:
            raise ValueError(f"A polygon needs at least 3 distinct vertices, got {len(xy)}.")
        area2 = _shoelace2(xy)
        if area2 < 0:
            xy = xy[::-1].copy()
            area2 = -area2
        xy = np.ascontiguousarray(xy)
        xy.setflags(write=False)
        self._xy = xy
        self._area2 = int(area2)

    @property
    def vertices(self) -> np.ndarray:
        return self._xy

    @property
    def points(self) -> List[Point]:
        return [Point(int(x), int(y)) for x, y in self._xy]

    @property
    def area2(self) -> int:
        return self._area2

    @property
    def area(self) -> float:
        return self._area2 / 2

    @property
    def bounds(self) -> Rect:
        mn = self._xy.min(axis=0)
        mx = self._xy.max(axis=0)
        return Rect(int(mn[0]), int(mn[1]), int(mx[0]), int(mx[1]))

    @property
    def is_rectilinear(self) -> bool:
        d = np.roll(self._xy, -1, axis=0) - self._xy
        return bool(np.all((d[:, 0] == 0) | (d[:, 1] == 0)))

    def is_simple(self) -> bool:
        return bool(_is_simple(self._xy))

    def is_valid(self) -> bool:
        """Simple ring with nonzero area."""
        return self._area2 > 0 and self.is_simple()

    def translate(self, dx: int, dy: int) -> "Polygon":
        return Polygon(self._xy + np.array([dx, dy], dtype=np.int64))

    def to_shapely(self) -> ShapelyPolygon:
        return ShapelyPolygon(self._xy.tolist())

    def canonical(self) -> Tuple[Tuple[int, int], ...]:
        """Vertex tuple rotated to start at the lowest (x, y) vertex."""
        start = int(np.lexsort((self._xy[:, 1], self._xy[:, 0]))[0])
        ring = np.roll(self._xy, -start, axis=0)
        return tuple((int(x), int(y)) for x, y in ring)

    def __len__(self) -> int:
        return len(self._xy)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polygon):
            return NotImplemented
        return self.canonical() == other.canonical()

    def __hash__(self) -> int:
        return hash(self.canonical())

    def __repr__(self) -> str:
        return f"Polygon({self.canonical()!r})"

    def __getstate__(self):
        return (self._xy.copy(), self._area2)

    def __setstate__(self, state):
        xy, area2 = state
        xy.setflags(write=False)
        self._xy = xy
        self._area2 = area2


def rectangle(x0: int, y0: int, x1: int, y1: int) -> Polygon:
    """Axis-aligned rectangle polygon from two opposite corners."""
    xa, xb = sorted((int(x0), int(x1)))
    ya, yb = sorted((int(y0), int(y1)))
    return Polygon([(xa, ya), (xb, ya), (xb, yb), (xa, yb)])


################
# Numba kernels #
################


@jit(nopython=True)
def _shoelace2(xy: np.ndarray) -> int:
    n = xy.shape[0]
    s = 0
    for i in range(n):
        j = (i + 1) % n
        s += xy[i, 0] * xy[j, 1] - xy[j, 0] * xy[i, 1]
    return s


@jit(nopython=True)
def _orient(ax, ay, bx, by, cx, cy) -> int:
    v = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if v > 0:
        return 1
    if v < 0:
        return -1
    return 0


@jit(nopython=True)
def _on_segment(ax, ay, bx, by, cx, cy) -> bool:
    """c collinear with ab is within the closed segment."""
    return min(ax, bx) <= cx <= max(ax, bx) and min(ay, by) <= cy <= max(ay, by)


@jit(nopython=True)
def _segments_touch(ax, ay, bx, by, cx, cy, dx, dy) -> bool:
    o1 = _orient(ax, ay, bx, by, cx, cy)
    o2 = _orient(ax, ay, bx, by, dx, dy)
    o3 = _orient(cx, cy, dx, dy, ax, ay)
    o4 = _orient(cx, cy, dx, dy, bx, by)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and _on_segment(ax, ay, bx, by, cx, cy):
        return True
    if o2 == 0 and _on_segment(ax, ay, bx, by, dx, dy):
        return True
    if o3 == 0 and _on_segment(cx, cy, dx, dy, ax, ay):
        return True
    if o4 == 0 and _on_segment(cx, cy, dx, dy, bx, by):
        return True
    return False


@jit(nopython=True)
def _point_segment_distance(px, py, ax, ay, bx, by) -> float:
    vx = bx - ax
    vy = by - ay
    wx = px - ax
    wy = py - ay
    c1 = vx * wx + vy * wy
    if c1 <= 0:
        return math.sqrt(float(wx * wx + wy * wy))
    c2 = vx * vx + vy * vy
    if c2 <= c1:
        ux = px - bx
        uy = py - by
        return math.sqrt(float(ux * ux + uy * uy))
    cross = abs(vx * wy - vy * wx)
    return float(cross) / math.sqrt(float(c2))


@jit(nopython=True)
def _segment_distance(ax, ay, bx, by, cx, cy, dx, dy) -> float:
    if _segments_touch(ax, ay, bx, by, cx, cy, dx, dy):
        return 0.0
    d = _point_segment_distance(ax, ay, cx, cy, dx, dy)
    d = min(d, _point_segment_distance(bx, by, cx, cy, dx, dy))
    d = min(d, _point_segment_distance(cx, cy, ax, ay, bx, by))
    d = min(d, _point_segment_distance(dx, dy, ax, ay, bx, by))
    return d


@jit(nopython=True)
def _boundary_distance(a: np.ndarray, b: np.ndarray) -> float:
    na = a.shape[0]
    nb = b.shape[0]
    best = np.inf
    for i in range(na):
        i2 = (i + 1) % na
        for j in range(nb):
            j2 = (j + 1) % nb
            d = _segment_distance(
                a[i, 0], a[i, 1], a[i2, 0], a[i2, 1], b[j, 0], b[j, 1], b[j2, 0], b[j2, 1]
            )
            if d < best:
                best = d
                if best == 0.0:
                    return 0.0
    return best


@jit(nopython=True)
def _point_in_polygon(px, py, xy: np.ndarray) -> int:
    """1 strictly inside, 0 outside, -1 on the boundary."""
    n = xy.shape[0]
    inside = False
    for i in range(n):
        j = (i + 1) % n
        ax = xy[i, 0]
        ay = xy[i, 1]
        bx = xy[j, 0]
        by = xy[j, 1]
        if _orient(ax, ay, bx, by, px, py) == 0 and _on_segment(ax, ay, bx, by, px, py):
            return -1
        if (ay > py) != (by > py):
            # x of the edge at height py, compared without division
            lhs = (px - ax) * (by - ay)
            rhs = (bx - ax) * (py - ay)
            if by > ay:
                if lhs < rhs:
                    inside = not inside
            else:
                if lhs > rhs:
                    inside = not inside
    return 1 if inside else 0


@jit(nopython=True)
def _is_simple(xy: np.ndarray) -> bool:
    n = xy.shape[0]
    if n < 3:
        return False
    for i in range(n):
        i2 = (i + 1) % n
        for j in range(i + 1, n):
            j2 = (j + 1) % n
            if j == i2 or i == j2:
                # adjacent edges may only share their common vertex
                if j == i2:
                    s = i
                    m = i2
                    e = j2
                else:
                    s = j
                    m = j2
                    e = i2
                if _orient(xy[s, 0], xy[s, 1], xy[m, 0], xy[m, 1], xy[e, 0], xy[e, 1]) == 0:
                    # collinear: fine when the path keeps going forward
                    ux = xy[m, 0] - xy[s, 0]
                    uy = xy[m, 1] - xy[s, 1]
                    vx = xy[e, 0] - xy[m, 0]
                    vy = xy[e, 1] - xy[m, 1]
                    if ux * vx + uy * vy < 0:
                        return False
                continue
            if _segments_touch(
                xy[i, 0], xy[i, 1], xy[i2, 0], xy[i2, 1],
                xy[j, 0], xy[j, 1], xy[j2, 0], xy[j2, 1],
            ):
                return False
    return True


@jit(nopython=True)
def _facing_width(xy: np.ndarray) -> float:
    """Minimum separation over pairs of antiparallel edges facing through the interior.

    The ring must be counterclockwise, so the interior lies left of every edge.
    """
    n = xy.shape[0]
    best = np.inf
    for i in range(n):
        i2 = (i + 1) % n
        ax = xy[i, 0]
        ay = xy[i, 1]
        ux = xy[i2, 0] - ax
        uy = xy[i2, 1] - ay
        len2 = ux * ux + uy * uy
        if len2 == 0:
            continue
        ulen = math.sqrt(float(len2))
        for j in range(n):
            if j == i:
                continue
            j2 = (j + 1) % n
            cx = xy[j, 0]
            cy = xy[j, 1]
            vx = xy[j2, 0] - cx
            vy = xy[j2, 1] - cy
            if ux * vy - uy * vx != 0 or ux * vx + uy * vy >= 0:
                continue
            # signed offset of edge j to the left of edge i
            off = ux * (cy - ay) - uy * (cx - ax)
            if off <= 0:
                continue
            t0 = ux * (cx - ax) + uy * (cy - ay)
            t1 = ux * (xy[j2, 0] - ax) + uy * (xy[j2, 1] - ay)
            lo = max(0, min(t0, t1))
            hi = min(len2, max(t0, t1))
            if hi <= lo:
                continue
            d = float(off) / ulen
            if d < best:
                best = d
    return best


@jit(nopython=True)
def _vertex_edge_width(xy: np.ndarray) -> float:
    n = xy.shape[0]
    best = np.inf
    for i in range(n):
        for j in range(n):
            j2 = (j + 1) % n
            if j == i or j2 == i:
                continue
            d = _point_segment_distance(
                xy[i, 0], xy[i, 1], xy[j, 0], xy[j, 1], xy[j2, 0], xy[j2, 1]
            )
            if d < best:
                best = d
    return best


@jit(nopython=True)
def _round_div(num, den):
    """Integer division rounded half up, den > 0."""
    return (2 * num + den) // (2 * den)


@jit(nopython=True)
def _sweep_trapezoids(xy: np.ndarray) -> np.ndarray:
    n = xy.shape[0]
    ys = np.unique(xy[:, 1].copy())
    out = np.zeros((max(1, (ys.shape[0] - 1) * n), 6), dtype=np.int64)
    xa = np.zeros(n, dtype=np.int64)
    xb = np.zeros(n, dtype=np.int64)
    mid = np.zeros(n, dtype=np.float64)
    count = 0
    for k in range(ys.shape[0] - 1):
        y0 = ys[k]
        y1 = ys[k + 1]
        m = 0
        for i in range(n):
            j = (i + 1) % n
            if xy[i, 1] == xy[j, 1]:
                continue
            if xy[i, 1] < xy[j, 1]:
                lx = xy[i, 0]
                ly = xy[i, 1]
                hx = xy[j, 0]
                hy = xy[j, 1]
            else:
                lx = xy[j, 0]
                ly = xy[j, 1]
                hx = xy[i, 0]
                hy = xy[i, 1]
            if ly <= y0 and hy >= y1:
                den = hy - ly
                xa[m] = lx + _round_div((y0 - ly) * (hx - lx), den)
                xb[m] = lx + _round_div((y1 - ly) * (hx - lx), den)
                mid[m] = lx + (0.5 * (y0 + y1) - ly) * (hx - lx) / den
                m += 1
        order = np.argsort(mid[:m])
        for p in range(0, m - 1, 2):
            left = order[p]
            right = order[p + 1]
            if xa[right] - xa[left] + xb[right] - xb[left] <= 0:
                continue
            out[count, 0] = y0
            out[count, 1] = y1
            out[count, 2] = xa[left]
            out[count, 3] = xa[right]
            out[count, 4] = xb[left]
            out[count, 5] = xb[right]
            count += 1
    return out[:count]


##############
# Operations #
##############


def path_to_polygon(
    centerline: Sequence[Tuple[int, int]],
    width: int,
    endcap: str = "flush",
    circle_segments: int = 16,
) -> Polygon:
    """Convert a path centerline into its outline polygon.

    Joins are mitred; a mitre longer than twice the width is replaced by a bevel.

    Parameters
    ----------
    centerline :
        The path vertices, in database units.
    width :
        Path width, in database units.
    endcap :
        `"flush"` (default), `"round"` (half circle polygonised with
        `circle_segments` per full turn) or `"extend"` (half-width extension).
    circle_segments :
        Resolution of round caps. Defaults to `16`.

    Returns
    -------
    polygon :
        The outline. A self-overlapping outline is returned with a warning.

    Raises
    ------
    ValueError
        If width is not positive, fewer than two points are given, a segment has zero
        length or the end-cap style is unknown.

    Examples
    --------
    >>> from qflow.geometry import path_to_polygon
    >>> path_to_polygon([(0, 0), (10000, 0)], 2000).area
    20000000.0

    """
    if width <= 0:
        raise ValueError("Path width must be positive.")
    if endcap not in ENDCAPS:
        raise ValueError(f"Unknown end-cap style {endcap}. Use one of {ENDCAPS}.")
    pts = np.asarray(centerline, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 2:
        raise ValueError("A path needs at least 2 points.")
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    if np.any(seg_len == 0):
        raise ValueError("Path contains a zero-length segment.")
    u = seg / seg_len[:, None]
    normals = np.column_stack([-u[:, 1], u[:, 0]])
    half = width / 2

    pts = pts.copy()
    if endcap == "extend":
        pts[0] = pts[0] - u[0] * half
        pts[-1] = pts[-1] + u[-1] * half

    left: List[np.ndarray] = [pts[0] + normals[0] * half]
    right: List[np.ndarray] = [pts[0] - normals[0] * half]
    for k in range(1, len(pts) - 1):
        n1, n2 = normals[k - 1], normals[k]
        bis = n1 + n2
        norm = np.hypot(*bis)
        cos_half = float(np.dot(bis / norm, n1)) if norm > 1e-12 else 0.0
        if cos_half > 1e-12 and half / cos_half <= 2 * width:
            miter = bis / norm * (half / cos_half)
            left.append(pts[k] + miter)
            right.append(pts[k] - miter)
        else:
            left.extend([pts[k] + n1 * half, pts[k] + n2 * half])
            right.extend([pts[k] - n1 * half, pts[k] - n2 * half])
    left.append(pts[-1] + normals[-1] * half)
    right.append(pts[-1] - normals[-1] * half)

    end_cap: List[np.ndarray] = []
    start_cap: List[np.ndarray] = []
    if endcap == "round":
        steps = max(2, circle_segments // 2)
        for s in range(1, steps):
            phi = np.pi * s / steps
            end_cap.append(
                pts[-1] + half * (normals[-1] * np.cos(phi) + u[-1] * np.sin(phi))
            )
            start_cap.append(
                pts[0] + half * (-normals[0] * np.cos(phi) - u[0] * np.sin(phi))
            )

    ring = left + end_cap + right[::-1] + start_cap
    polygon = Polygon(np.rint(np.array(ring)).astype(np.int64))
    if not polygon.is_simple():
        logger.warning(
            "Path outline starting at (%d, %d) overlaps itself, flagged for review.",
            int(centerline[0][0]),
            int(centerline[0][1]),
        )
    return polygon


def min_spacing(a: Polygon, b: Polygon) -> int:
    """Minimum boundary distance between two polygons.

    Parameters
    ----------
    a, b :
        The polygons.

    Returns
    -------
    distance :
        Floor of the Euclidean distance in nm, `0` when the boundaries touch, or
        :py:data:`OVERLAP` when the interiors intersect.

    Examples
    --------
    >>> from qflow.geometry import min_spacing, rectangle
    >>> min_spacing(rectangle(0, 0, 1000, 1000), rectangle(3000, 0, 4000, 1000))
    2000

    """
    d = _boundary_distance(a.vertices, b.vertices)
    if d > 0:
        va, vb = a.vertices[0], b.vertices[0]
        if _point_in_polygon(va[0], va[1], b.vertices) == 1:
            return OVERLAP
        if _point_in_polygon(vb[0], vb[1], a.vertices) == 1:
            return OVERLAP
        return int(math.floor(d + 1e-9))
    if intersection_area(a, b) > 0:
        return OVERLAP
    return 0


def min_width(p: Polygon) -> int:
    """Minimum interior width of a polygon.

    The width is the smallest separation of two antiparallel edges whose inward
    normals point at each other and whose projections overlap over a positive length.
    This is the true minimal interior width for rectilinear polygons. Polygons without
    any such pair (triangles, for example) fall back to the smallest distance from a
    vertex to a non-adjacent edge.

    """
    d = _facing_width(p.vertices)
    if not np.isfinite(d):
        d = _vertex_edge_width(p.vertices)
    return int(math.floor(d + 1e-9))


def _rectangles(p: Polygon) -> List[Rect]:
    return [Rect(t[2], t[0], t[3], t[1]) for t in decompose_trapezoids(p)]


def intersection_area(a: Polygon, b: Polygon, shift: Tuple[int, int] = (0, 0)) -> int:
    """Area of `a` intersected with `b` translated by `shift`.

    Exact for rectilinear inputs (sum of pairwise rectangle overlaps after
    decomposition). Other inputs are clipped with shapely and rounded to the nearest
    nm².

    """
    dx, dy = int(shift[0]), int(shift[1])
    if not a.bounds.intersects(b.bounds.translate(dx, dy)):
        return 0
    if a.is_rectilinear and b.is_rectilinear:
        ra = _rectangles(a)
        rb = [r.translate(dx, dy) for r in _rectangles(b)]
        total = 0
        for r1 in ra:
            for r2 in rb:
                w = min(r1.xmax, r2.xmax) - max(r1.xmin, r2.xmin)
                h = min(r1.ymax, r2.ymax) - max(r1.ymin, r2.ymin)
                if w > 0 and h > 0:
                    total += w * h
        return total
    moved = b.translate(dx, dy) if (dx or dy) else b
    return int(round(a.to_shapely().intersection(moved.to_shapely()).area))


def decompose_trapezoids(p: Polygon) -> List[Trapezoid]:
    """Fracture a polygon into horizontal trapezoids.

    The polygon is cut by a horizontal line at every distinct vertex `y`. Crossing
    points of slanted edges are rounded to the nearest grid unit, so the area of a
    slab can move by at most half its height per rounded crossing; rectilinear and
    45-degree geometry whose vertices sit on the cut lines is exact. Vertically
    adjacent pieces that continue each other are merged back together.

    Examples
    --------
    >>> from qflow.geometry import decompose_trapezoids, rectangle
    >>> len(decompose_trapezoids(rectangle(0, 0, 5000, 100000)))
    1

    """
    raw = _sweep_trapezoids(p.vertices)
    traps = [Trapezoid(*(int(v) for v in row)) for row in raw]
    return _merge_slabs(traps)


def _merge_slabs(traps: List[Trapezoid]) -> List[Trapezoid]:
    traps = sorted(traps, key=lambda t: (t.y_bottom, t.x_bottom_left))
    open_by_top = {}
    merged: List[Trapezoid] = []
    for t in traps:
        key = (t.y_bottom, t.x_bottom_left, t.x_bottom_right)
        low = open_by_top.pop(key, None)
        if low is not None:
            h_low = low.y_top - low.y_bottom
            h_up = t.y_top - t.y_bottom
            left_ok = (low.x_top_left - low.x_bottom_left) * h_up == (
                t.x_top_left - t.x_bottom_left
            ) * h_low
            right_ok = (low.x_top_right - low.x_bottom_right) * h_up == (
                t.x_top_right - t.x_bottom_right
            ) * h_low
            if left_ok and right_ok:
                merged.remove(low)
                t = Trapezoid(
                    low.y_bottom,
                    t.y_top,
                    low.x_bottom_left,
                    low.x_bottom_right,
                    t.x_top_left,
                    t.x_top_right,
                )
            else:
                open_by_top[key] = low
        merged.append(t)
        open_by_top[(t.y_top, t.x_top_left, t.x_top_right)] = t
    return sorted(merged, key=lambda t: (t.y_bottom, t.x_bottom_left))


class SpatialIndex:
    """R-tree over `(id, Rect)` entries.

    Queries return every id whose stored box intersects the query box (boxes are
    closed, so touching counts), sorted by id.

    """

    def __init__(self, entries: Iterable[Tuple[int, Rect]], fanout: int = 16):
        properties = index.Property()
        properties.leaf_capacity = fanout
        properties.index_capacity = fanout
        properties.near_minimum_overlap_factor = min(32, fanout - 1)
        self.fanout = fanout
        self._rtree = index.Index(properties=properties)
        self._size = 0
        for entry_id, rect in entries:
            self._rtree.insert(int(entry_id), tuple(rect))
            self._size += 1

    def __len__(self) -> int:
        return self._size

    def query(self, rect: Rect) -> List[int]:
        if self._size == 0:
            return []
        return sorted(self._rtree.intersection(tuple(rect)))


def build_index(entries: Iterable[Tuple[int, Rect]], fanout: int = 16) -> SpatialIndex:
    """Build a :py:class:`SpatialIndex` from `(id, Rect)` pairs."""
    return SpatialIndex(entries, fanout=fanout)


def query(spatial_index: SpatialIndex, r: Rect) -> List[int]:
    """Ids whose box intersects `r`, sorted."""
    return spatial_index.query(r)


def linear_scan(entries: Iterable[Tuple[int, Rect]], r: Rect) -> List[int]:
    """Reference implementation of :py:func:`query` without an index."""
    return sorted(int(i) for i, box in entries if Rect(*box).intersects(r))


def point_in_polygon(x: int, y: int, p: Polygon) -> int:
    """`1` strictly inside, `0` outside, `-1` on the boundary."""
    return int(_point_in_polygon(int(x), int(y), p.vertices))


def regular_polygon(
    cx: int, cy: int, radius: int, segments: int, phase: float = 0.0
) -> Polygon:
    """Polygonised circle, vertices rounded to the grid."""
    angles = phase + 2 * np.pi * np.arange(segments) / segments
    xy = np.column_stack([cx + radius * np.cos(angles), cy + radius * np.sin(angles)])
    return Polygon(np.rint(xy).astype(np.int64))


def boundary_distance(a: Polygon, b: Polygon) -> int:
    """Floor of the distance between the two boundaries, ignoring containment."""
    return int(math.floor(_boundary_distance(a.vertices, b.vertices) + 1e-9))
