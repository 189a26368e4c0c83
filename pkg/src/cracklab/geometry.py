"""Domains, crack sets, boundary decompositions, and distances between them.

The computational domain is an axis-aligned rectangle, possibly with
rectangular holes.  Crack sets are finite unions of grid-aligned polylines
(compact, zero area).  The Dirichlet part of the boundary is a list of
segments on the outer or hole boundaries; its complement is the Neumann
part, taken closed (it keeps the junction endpoints).

Distances between crack sets use the Hausdorff metric with the empty-set
conventions dist(x, empty) = diam(domain) and sup over empty = 0, so that
d_H(empty, K) is 0 for K empty and diam(domain) otherwise.  The distance
between two nonempty sets is computed exactly: along each segment the
squared distance to the other set is a piecewise quadratic lower envelope,
whose maximum is attained at segment endpoints, regime breakpoints, or
crossings of two envelope branches, all of which are enumerated in closed
form.

Connectivity of a crack set together with the Neumann arcs is purely
combinatorial: two items touch iff they share a point with exact
coordinate equality (all coordinates are snapped to the target grid).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Rect",
    "Domain",
    "CrackSet",
    "BoundarySpec",
    "ComponentPartition",
    "DomainViolationError",
    "GeometryError",
    "snap",
    "hausdorff_distance",
    "connected_components",
    "neumann_arcs",
    "crack_family",
    "example_geometry",
    "distance_to_segments",
    "EXAMPLE_IDS",
]


class GeometryError(ValueError):
    """Invalid geometric input."""


class DomainViolationError(GeometryError):
    """A set leaves the closed domain."""


def snap(x: float, resolution: int) -> float:
    """Round a coordinate to the grid with ``resolution`` cells per unit."""
    return round(x * resolution) / resolution


def on_grid(x: float, resolution: int, tol: float = 1e-9) -> bool:
    return abs(x * resolution - round(x * resolution)) <= tol


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise GeometryError(f"degenerate rectangle {self}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    def contains_closed(self, x, y) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def contains_open(self, x, y) -> bool:
        return self.x0 < x < self.x1 and self.y0 < y < self.y1

    def strictly_inside(self, other: "Rect") -> bool:
        return (
            other.x0 < self.x0
            and self.x1 < other.x1
            and other.y0 < self.y0
            and self.y1 < other.y1
        )

    def disjoint(self, other: "Rect") -> bool:
        return (
            self.x1 <= other.x0
            or other.x1 <= self.x0
            or self.y1 <= other.y0
            or other.y1 <= self.y0
        )

    def corners(self):
        return (
            (self.x0, self.y0),
            (self.x1, self.y0),
            (self.x1, self.y1),
            (self.x0, self.y1),
        )


@dataclass(frozen=True)
class Domain:
    """Rectangle with optional rectangular holes.

    With no holes the domain is simply connected, which is the standing
    assumption of the stability theory; with holes it is not, and code
    that requires simple connectivity checks ``simply_connected``.
    """

    outer: Rect
    holes: tuple = ()

    def __post_init__(self):
        holes = tuple(self.holes)
        object.__setattr__(self, "holes", holes)
        for h in holes:
            if not h.strictly_inside(self.outer):
                raise GeometryError(f"hole {h} not strictly inside {self.outer}")
        for i in range(len(holes)):
            for j in range(i + 1, len(holes)):
                if not holes[i].disjoint(holes[j]):
                    raise GeometryError("holes overlap")

    @property
    def simply_connected(self) -> bool:
        return len(self.holes) == 0

    @property
    def diameter(self) -> float:
        return math.hypot(self.outer.width, self.outer.height)

    def contains_point_closed(self, x, y) -> bool:
        if not self.outer.contains_closed(x, y):
            return False
        return not any(h.contains_open(x, y) for h in self.holes)

    def boundary_loops(self):
        """All boundary loops (outer first, then holes) as CCW corner lists."""
        return [self.outer.corners()] + [h.corners() for h in self.holes]


def _validate_polyline(poly):
    if len(poly) < 2:
        raise GeometryError("polyline needs at least 2 vertices")
    for (x0, y0), (x1, y1) in zip(poly[:-1], poly[1:]):
        dx, dy = x1 - x0, y1 - y0
        if (dx == 0.0) == (dy == 0.0):
            raise GeometryError(
                f"polyline segment ({x0},{y0})-({x1},{y1}) must be axis-aligned"
                " and have nonzero length"
            )


@dataclass(frozen=True)
class CrackSet:
    """Finite union of axis-aligned polylines (a compact set of zero area)."""

    polylines: tuple = ()

    def __post_init__(self):
        polys = tuple(tuple((float(x), float(y)) for x, y in p) for p in self.polylines)
        object.__setattr__(self, "polylines", polys)
        for p in polys:
            _validate_polyline(p)

    @property
    def is_empty(self) -> bool:
        return len(self.polylines) == 0

    def segments(self):
        """All segments as (x0, y0, x1, y1) tuples, endpoint-sorted."""
        out = []
        for poly in self.polylines:
            for (x0, y0), (x1, y1) in zip(poly[:-1], poly[1:]):
                if (x0, y0) <= (x1, y1):
                    out.append((x0, y0, x1, y1))
                else:
                    out.append((x1, y1, x0, y0))
        return out

    def segment_array(self) -> np.ndarray:
        segs = self.segments()
        return np.array(segs, dtype=float).reshape(len(segs), 4)

    def contains_point(self, x, y) -> bool:
        for sx0, sy0, sx1, sy1 in self.segments():
            if sy0 == sy1:  # horizontal
                if y == sy0 and sx0 <= x <= sx1:
                    return True
            else:
                if x == sx0 and sy0 <= y <= sy1:
                    return True
        return False


EMPTY_CRACK = CrackSet()


@dataclass(frozen=True)
class BoundarySpec:
    """Dirichlet part of the boundary as segments on the domain boundary.

    Each segment must lie on a single side of the outer rectangle or of a
    hole.  The Dirichlet part must be nonempty; the Neumann part is the
    closed complement.
    """

    dirichlet: tuple

    def __post_init__(self):
        segs = tuple(
            (
                (float(a[0]), float(a[1])),
                (float(b[0]), float(b[1])),
            )
            for a, b in self.dirichlet
        )
        object.__setattr__(self, "dirichlet", segs)
        if not segs:
            raise GeometryError("Dirichlet part must be nonempty")
        for (x0, y0), (x1, y1) in segs:
            if (x0 == x1) == (y0 == y1):
                raise GeometryError("Dirichlet segments must be axis-aligned")


# ---------------------------------------------------------------------------
# boundary decomposition
# ---------------------------------------------------------------------------


def _loop_sides(corners):
    """Sides of a CCW corner loop as ((x0,y0),(x1,y1)) in loop order."""
    return [
        (corners[i], corners[(i + 1) % 4])
        for i in range(4)
    ]


def _param_on_side(side, pt):
    """Arclength of ``pt`` along ``side`` or None if not on it."""
    (x0, y0), (x1, y1) = side
    px, py = pt
    if y0 == y1:
        if py != y0:
            return None
        lo, hi = min(x0, x1), max(x0, x1)
        if not (lo <= px <= hi):
            return None
        return abs(px - x0)
    if px != x0:
        return None
    lo, hi = min(y0, y1), max(y0, y1)
    if not (lo <= py <= hi):
        return None
    return abs(py - y0)


def _loop_param(corners, pt):
    """Arclength positions of ``pt`` on the loop (corner points give two)."""
    sides = _loop_sides(corners)
    out = []
    s = 0.0
    for side in sides:
        (x0, y0), (x1, y1) = side
        length = abs(x1 - x0) + abs(y1 - y0)
        t = _param_on_side(side, pt)
        if t is not None:
            out.append(s + t)
        s += length
    return out, s


def neumann_arcs(domain: Domain, boundary: BoundarySpec):
    """Closed complement of the Dirichlet part, one polyline per arc.

    The Neumann part is the boundary minus the relatively open Dirichlet
    arcs, so each returned arc includes its endpoints (shared with the
    closure of the Dirichlet part).
    """
    loops = domain.boundary_loops()
    # assign each dirichlet segment to a loop interval
    loop_intervals = [[] for _ in loops]
    for seg in boundary.dirichlet:
        a, b = seg
        placed = False
        for li, corners in enumerate(loops):
            pa, total = _loop_param(corners, a)
            pb, _ = _loop_param(corners, b)
            if not pa or not pb:
                continue
            # pick the parametrization pair consistent with one side
            best = None
            for sa in pa:
                for sb in pb:
                    d = (sb - sa) % total
                    if d == 0.0:
                        continue
                    length = abs(b[0] - a[0]) + abs(b[1] - a[1])
                    if abs(d - length) < 1e-12 or abs((total - d) - length) < 1e-12:
                        lo = sa if abs(d - length) < 1e-12 else sb
                        best = (lo % total, (lo + length) % total)
                if best:
                    break
            if best is None:
                continue
            loop_intervals[li].append(best)
            placed = True
            break
        if not placed:
            raise GeometryError(f"Dirichlet segment {seg} is not on the boundary")

    arcs = []
    for corners, intervals in zip(loops, loop_intervals):
        _, total = _loop_param(corners, corners[0])
        if not intervals:
            arcs.append(_arc_polyline(corners, 0.0, total, total, full=True))
            continue
        # merge dirichlet intervals on the circle
        events = []
        for lo, hi in intervals:
            if hi <= lo:
                hi += total
            events.append((lo, hi))
        events.sort()
        merged = []
        for lo, hi in events:
            if merged and lo <= merged[-1][1] + 1e-12:
                merged[-1][1] = max(merged[-1][1], hi)
            else:
                merged.append([lo, hi])
        # wraparound merge
        if len(merged) > 1 and merged[0][0] + total <= merged[-1][1] + 1e-12:
            merged[0][0] = merged[-1][0] - total
            merged[0][1] = max(merged[0][1], merged[-1][1] - total)
            merged.pop()
        covered = sum(hi - lo for lo, hi in merged)
        if covered >= total - 1e-12:
            continue  # whole loop Dirichlet
        # complement arcs (closed)
        for i, (lo, hi) in enumerate(merged):
            nxt = merged[(i + 1) % len(merged)][0]
            if i + 1 == len(merged):
                nxt += total
            if nxt - hi > 1e-12:
                arcs.append(_arc_polyline(corners, hi % total, (nxt - hi), total))
    return arcs


def _arc_polyline(corners, start, length, total, full=False):
    """Polyline along the loop from arclength ``start`` spanning ``length``."""
    sides = _loop_sides(corners)
    # cumulative corner positions
    pos = [0.0]
    for (a, b) in sides:
        pos.append(pos[-1] + abs(b[0] - a[0]) + abs(b[1] - a[1]))

    def point_at(s):
        s = s % total
        for i, (a, b) in enumerate(sides):
            if pos[i] <= s <= pos[i + 1]:
                t = s - pos[i]
                dx = (b[0] - a[0])
                dy = (b[1] - a[1])
                L = abs(dx) + abs(dy)
                return (a[0] + dx * t / L, a[1] + dy * t / L)
        return sides[0][0]

    pts = [point_at(start)]
    # walk corners strictly inside (start, start+length)
    s = start
    remaining = length
    while remaining > 1e-12:
        # next corner after s
        cur = s % total
        nxt_corner = None
        for p in pos[1:]:
            if p > cur + 1e-12:
                nxt_corner = p
                break
        if nxt_corner is None:
            nxt_corner = total
        step = min(nxt_corner - cur, remaining)
        s += step
        remaining -= step
        pt = point_at(s)
        if pt != pts[-1]:
            pts.append(pt)
    if full:
        pts[-1] = pts[0]  # close the loop exactly
    return tuple(pts)


# ---------------------------------------------------------------------------
# connectivity
# ---------------------------------------------------------------------------


def _segments_touch(s, t) -> bool:
    """Exact touch test between axis-aligned segments (closed sets)."""
    sx0, sy0, sx1, sy1 = s
    tx0, ty0, tx1, ty1 = t
    s_h = sy0 == sy1
    t_h = ty0 == ty1
    if s_h and t_h:
        return sy0 == ty0 and max(sx0, tx0) <= min(sx1, tx1)
    if not s_h and not t_h:
        return sx0 == tx0 and max(sy0, ty0) <= min(sy1, ty1)
    if s_h:
        h, v = (sx0, sy0, sx1, sy1), (tx0, ty0, tx1, ty1)
    else:
        h, v = (tx0, ty0, tx1, ty1), (sx0, sy0, sx1, sy1)
    hx0, hy, hx1, _ = h
    vx, vy0, _, vy1 = v
    return hx0 <= vx <= hx1 and vy0 <= hy <= vy1


def _polylines_touch(pa, pb) -> bool:
    sa = CrackSet((pa,)).segments()
    sb = CrackSet((pb,)).segments()
    return any(_segments_touch(s, t) for s in sa for t in sb)


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


@dataclass(frozen=True)
class ComponentPartition:
    """Connected components of crack polylines together with Neumann arcs."""

    crack_polylines: tuple
    neumann_polylines: tuple
    crack_component: tuple
    neumann_component: tuple
    n_components: int

    def component_items(self, comp: int):
        """All polylines (crack then Neumann) belonging to one component."""
        items = [
            p
            for p, c in zip(self.crack_polylines, self.crack_component)
            if c == comp
        ]
        items += [
            p
            for p, c in zip(self.neumann_polylines, self.neumann_component)
            if c == comp
        ]
        return items

    def component_of_point(self, x, y):
        """Component ids whose items pass through the given point."""
        hits = set()
        for comp in range(self.n_components):
            for poly in self.component_items(comp):
                if CrackSet((poly,)).contains_point(x, y):
                    hits.add(comp)
                    break
        return sorted(hits)


def connected_components(
    k: CrackSet, boundary: BoundarySpec, domain: Domain
) -> ComponentPartition:
    """Partition of K union the Neumann part into connected components.

    Two items land in the same component iff they are joined by a chain of
    touching polylines; touching means sharing a point exactly.
    """
    arcs = tuple(neumann_arcs(domain, boundary))
    items = list(k.polylines) + list(arcs)
    uf = _UnionFind(len(items))
    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            if _polylines_touch(items[i], items[j]):
                uf.union(i, j)
    roots = {}
    labels = []
    for i in range(len(items)):
        r = uf.find(i)
        if r not in roots:
            roots[r] = len(roots)
        labels.append(roots[r])
    nk = len(k.polylines)
    return ComponentPartition(
        crack_polylines=tuple(k.polylines),
        neumann_polylines=arcs,
        crack_component=tuple(labels[:nk]),
        neumann_component=tuple(labels[nk:]),
        n_components=len(roots),
    )


# ---------------------------------------------------------------------------
# Hausdorff distance
# ---------------------------------------------------------------------------


def distance_to_segments(px, py, segs: np.ndarray):
    """Distance from point(s) to a union of axis-aligned segments.

    ``px, py`` may be scalars or arrays; ``segs`` is (n, 4).
    """
    px = np.asarray(px, dtype=float)[..., None]
    py = np.asarray(py, dtype=float)[..., None]
    x0, y0, x1, y1 = segs[:, 0], segs[:, 1], segs[:, 2], segs[:, 3]
    dx = np.maximum(0.0, np.maximum(x0 - px, px - x1))
    dy = np.maximum(0.0, np.maximum(y0 - py, py - y1))
    d2 = dx * dx + dy * dy
    return np.sqrt(d2.min(axis=-1))


def _pieces_for_segment(b, axis_horizontal, fixed, t0, t1):
    """Piecewise quadratic coefficients of squared distance along a moving point.

    The moving point is (t, fixed) when ``axis_horizontal`` else (fixed, t).
    Returns a list of (lo, hi, (A, B, C)) covering [t0, t1] with
    dist^2(t) = A t^2 + B t + C on each piece.
    """
    x0, y0, x1, y1 = b
    if axis_horizontal:
        # moving coordinate competes with the segment's x-extent iff b is
        # horizontal; a vertical b gives a single quadratic in t
        if y0 == y1:
            u0, u1, d = x0, x1, fixed - y0
            return _three_pieces(u0, u1, d * d, t0, t1)
        dyy = max(0.0, y0 - fixed, fixed - y1)
        c = x0  # vertical segment: x0 == x1
        return [(t0, t1, (1.0, -2.0 * c, c * c + dyy * dyy))]
    else:
        if x0 == x1:
            u0, u1, d = y0, y1, fixed - x0
            return _three_pieces(u0, u1, d * d, t0, t1)
        dxx = max(0.0, x0 - fixed, fixed - x1)
        c = y0
        return [(t0, t1, (1.0, -2.0 * c, c * c + dxx * dxx))]


def _three_pieces(u0, u1, d2, t0, t1):
    pieces = []
    if t0 < u0:
        pieces.append((t0, min(u0, t1), (1.0, -2.0 * u0, u0 * u0 + d2)))
    if t0 < u1 and t1 > u0:
        pieces.append((max(t0, u0), min(t1, u1), (0.0, 0.0, d2)))
    if t1 > u1:
        pieces.append((max(t0, u1), t1, (1.0, -2.0 * u1, u1 * u1 + d2)))
    return [p for p in pieces if p[0] <= p[1]]


def _coef_at(pieces, t):
    for lo, hi, abc in pieces:
        if lo - 1e-14 <= t <= hi + 1e-14:
            return abc
    return pieces[-1][2]


def _directed_hausdorff(A: np.ndarray, B: np.ndarray) -> float:
    best = 0.0
    for a in A:
        x0, y0, x1, y1 = a
        horizontal = y0 == y1
        if horizontal:
            t0, t1, fixed = x0, x1, y0
        else:
            t0, t1, fixed = y0, y1, x0
        piece_lists = [
            _pieces_for_segment(b, horizontal, fixed, t0, t1) for b in B
        ]
        cands = {t0, t1}
        for pieces in piece_lists:
            for lo, hi, _ in pieces:
                cands.add(lo)
                cands.add(hi)
        # pairwise envelope crossings
        nb = len(piece_lists)
        for i in range(nb):
            for j in range(i + 1, nb):
                breaks = sorted(
                    {t0, t1}
                    | {lo for lo, _, _ in piece_lists[i]}
                    | {hi for _, hi, _ in piece_lists[i]}
                    | {lo for lo, _, _ in piece_lists[j]}
                    | {hi for _, hi, _ in piece_lists[j]}
                )
                breaks = [t for t in breaks if t0 <= t <= t1]
                for lo, hi in zip(breaks[:-1], breaks[1:]):
                    if hi - lo <= 0.0:
                        continue
                    mid = 0.5 * (lo + hi)
                    A1, B1, C1 = _coef_at(piece_lists[i], mid)
                    A2, B2, C2 = _coef_at(piece_lists[j], mid)
                    qa, qb, qc = A1 - A2, B1 - B2, C1 - C2
                    if qa == 0.0:
                        if qb != 0.0:
                            r = -qc / qb
                            if lo < r < hi:
                                cands.add(r)
                        continue
                    disc = qb * qb - 4.0 * qa * qc
                    if disc < 0.0:
                        continue
                    sd = math.sqrt(disc)
                    for r in ((-qb - sd) / (2 * qa), (-qb + sd) / (2 * qa)):
                        if lo < r < hi:
                            cands.add(r)
        ts = np.array(sorted(cands))
        if horizontal:
            d = distance_to_segments(ts, np.full_like(ts, fixed), B)
        else:
            d = distance_to_segments(np.full_like(ts, fixed), ts, B)
        best = max(best, float(d.max()))
    return best


def _require_in_domain(k: CrackSet, domain: Domain):
    for x0, y0, x1, y1 in k.segments():
        if not (
            domain.contains_point_closed(x0, y0)
            and domain.contains_point_closed(x1, y1)
        ):
            raise DomainViolationError(
                f"segment ({x0},{y0})-({x1},{y1}) leaves the closed domain"
            )
        for h in domain.holes:
            if y0 == y1:
                crosses = h.y0 < y0 < h.y1 and max(x0, h.x0) < min(x1, h.x1)
            else:
                crosses = h.x0 < x0 < h.x1 and max(y0, h.y0) < min(y1, h.y1)
            if crosses:
                raise DomainViolationError(
                    f"segment ({x0},{y0})-({x1},{y1}) crosses a hole"
                )


def hausdorff_distance(a: CrackSet, b: CrackSet, domain: Domain) -> float:
    """Exact Hausdorff distance between two crack sets in the domain."""
    _require_in_domain(a, domain)
    _require_in_domain(b, domain)
    if a.is_empty and b.is_empty:
        return 0.0
    if a.is_empty or b.is_empty:
        return domain.diameter
    A = a.segment_array()
    B = b.segment_array()
    return max(_directed_hausdorff(A, B), _directed_hausdorff(B, A))


# ---------------------------------------------------------------------------
# example catalog
# ---------------------------------------------------------------------------

EXAMPLE_IDS = ("ex5_1", "ex5_3", "ex5_5", "ex5_7")

_RING_HALF = 1.5  # half-side of the separating loop in the ring example


def crack_family(example: str, h=None, *, a=None, b=None, gap=None, resolution=None):
    """Crack set of a named experiment family.

    ``h=None`` returns the limit set of the family.  Parameters:

    * ``ex5_1``: two staggered horizontal segments at heights +-1/h.
    * ``ex5_3``: slit with a pinched gap; ``a`` is the gap width, ``b``
      the height of the two vertical bars at the gap ends.
    * ``ex5_5``: square loop inside a square ring domain, opened at the
      bottom midpoint by a gap of width ``a`` with vertical bars of
      height ``b`` at the gap ends (a single connected set).
    * ``ex5_7``: three arms meeting at the origin (one vertical, two
      staircases descending at roughly 30 degrees below horizontal),
      retracted from the junction by ``gap``.
    """
    if example not in EXAMPLE_IDS:
        raise GeometryError(f"unknown example id {example!r}")
    if example == "ex5_1":
        if h is None:
            return CrackSet(((( -1.0, 0.0), (1.0, 0.0)),))
        if h < 1:
            raise GeometryError("h must be a positive integer")
        y = 1.0 / h
        if resolution is not None:
            y = snap(y, resolution)
            if y <= 0.0:
                raise GeometryError("1/h snaps to zero at this resolution")
        return CrackSet(
            (
                ((-1.0, y), (0.5, y)),
                ((-0.5, -y), (1.0, -y)),
            )
        )
    if example == "ex5_3":
        if h is None and a is None:
            return CrackSet(((( -1.0, 0.0), (1.0, 0.0)),))
        if a is None or b is None:
            raise GeometryError("ex5_3 needs gap width a and bar height b")
        if resolution is not None:
            a = snap(a, resolution)
            b = snap(b, resolution)
        if not (0.0 < a < 1.0 and 0.0 < b < 1.0):
            raise GeometryError(
                f"degenerate family parameters a={a}, b={b} (need 0 < a, b < 1)"
            )
        ha, hb = a / 2.0, b / 2.0
        return CrackSet(
            (
                ((-1.0, 0.0), (-ha, 0.0)),
                ((ha, 0.0), (1.0, 0.0)),
                ((-ha, -hb), (-ha, hb)),
                ((ha, -hb), (ha, hb)),
            )
        )
    if example == "ex5_5":
        r = _RING_HALF
        loop = ((-r, -r), (-r, r), (r, r), (r, -r), (-r, -r))
        if h is None and a is None:
            return CrackSet((loop,))
        if a is None or b is None:
            raise GeometryError("ex5_5 needs gap width a and bar height b")
        if resolution is not None:
            a = snap(a, resolution)
            b = snap(b, resolution)
        if not (0.0 < a < 2 * r and 0.0 < b < 1.0):
            raise GeometryError(f"degenerate family parameters a={a}, b={b}")
        ha, hb = a / 2.0, b / 2.0
        c_arc = (
            (-ha, -r),
            (-r, -r),
            (-r, r),
            (r, r),
            (r, -r),
            (ha, -r),
        )
        return CrackSet(
            (
                c_arc,
                ((-ha, -r - hb), (-ha, -r + hb)),
                ((ha, -r - hb), (ha, -r + hb)),
            )
        )
    # ex5_7
    if gap is None:
        gap = 0.0 if h is None else 1.0 / (16 * h)
    if resolution is not None:
        gap = snap(gap, resolution)
    if h is not None and gap <= 0.0:
        raise GeometryError("junction gap snaps to zero at this resolution")
    arms = junction_arms(gap)
    return CrackSet(tuple(arms))


def junction_arms(gap: float = 0.0):
    """The three arms of the junction family, retracted by ``gap``.

    Arm order: east staircase, north segment, west staircase (sorted by
    the angle of the initial direction at the junction point).
    """
    if not (0.0 <= gap < 0.125):
        raise GeometryError("junction gap must be in [0, 1/8)")
    north = ((0.0, gap), (0.0, 1.0))
    east = _staircase(+1.0, gap)
    west = _staircase(-1.0, gap)
    return east, north, west


def _staircase(sign: float, gap: float):
    """Staircase from the origin toward x = sign, dropping 4 cells per 7.

    Step pattern (scaled by 1/16): across 2, down 1, across 2, down 1,
    across 2, down 1, across 1, down 1; the net slope 4/7 approximates
    the 30 degree descent of a symmetric three-arm junction.
    """
    s = 1.0 / 16.0
    pts = [(sign * gap, 0.0)]
    x, y = 0.0, 0.0
    pattern = [(2, 0), (0, -1), (2, 0), (0, -1), (2, 0), (0, -1), (1, 0), (0, -1)]
    idx = 0
    while abs(x) < 1.0 - 1e-12:
        dx, dy = pattern[idx % len(pattern)]
        idx += 1
        if dx:
            x_new = x + sign * dx * s
            if abs(x_new) > 1.0:
                x_new = sign * 1.0
            if x_new != x:
                pts.append((x_new, y))
            x = x_new
        else:
            y += dy * s
            pts.append((x, y))
    # drop a leading duplicate when gap == 0
    if len(pts) > 1 and pts[0] == pts[1]:
        pts = pts[1:]
    return tuple(pts)


@dataclass(frozen=True)
class ExampleGeometry:
    """Domain, boundary split, crack set and contact points of one example."""

    example: str
    domain: Domain
    boundary: BoundarySpec
    crack: CrackSet
    contact_points: tuple = ()


def example_geometry(example: str, h=None, *, a=None, b=None, gap=None, resolution=None):
    """Full geometry (domain, boundaries, crack, contacts) of a named example."""
    if example in ("ex5_1", "ex5_3"):
        domain = Domain(Rect(-1.0, -1.0, 1.0, 1.0))
        boundary = BoundarySpec(
            (
                ((-1.0, -1.0), (1.0, -1.0)),
                ((-1.0, 1.0), (1.0, 1.0)),
            )
        )
        contacts = ((0.0, 0.0),) if example == "ex5_3" else ()
    elif example == "ex5_5":
        domain = Domain(Rect(-2.0, -2.0, 2.0, 2.0), (Rect(-1.0, -1.0, 1.0, 1.0),))
        sides = []
        for loop in domain.boundary_loops():
            for i in range(4):
                sides.append((loop[i], loop[(i + 1) % 4]))
        boundary = BoundarySpec(tuple(sides))
        contacts = ((0.0, -_RING_HALF),)
    elif example == "ex5_7":
        domain = Domain(Rect(-1.0, -1.0, 1.0, 1.0))
        loop = domain.outer.corners()
        boundary = BoundarySpec(tuple((loop[i], loop[(i + 1) % 4]) for i in range(4)))
        contacts = ((0.0, 0.0),)
    else:
        raise GeometryError(f"unknown example id {example!r}")
    crack = crack_family(example, h, a=a, b=b, gap=gap, resolution=resolution)
    return ExampleGeometry(example, domain, boundary, crack, contacts)
