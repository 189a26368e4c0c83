"""Crack-conforming triangulated grids with duplicated crack-face DOFs.

Every grid square is split into two triangles along the bottom-left to
top-right diagonal, so crack polylines (which run along grid lines) never
cross an element.  A node interior to a crack carries one degree of
freedom per local side; the number of DOFs at a node equals the number of
connected sectors of the fan of incident live triangles after cutting the
fan at crack edges.  Crack tips interior to the domain therefore keep a
single DOF, while triple junctions carry one DOF per incident subdomain.

Holes are meshed and masked: their cells keep zero area weight and their
interior nodes are dead (pinned, excluded from all energies).

Dirichlet DOFs are the nodes on the closed Dirichlet arcs that do not lie
on the crack.  Taking the closed arcs (junction nodes with the Neumann
part included) makes the discrete pairing sum(area * (R grad v) . grad phi)
vanish exactly for dual fields constant on boundary components, which
keeps the duality-gap bookkeeping free of boundary leakage.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .geometry import BoundarySpec, CrackSet, Domain, GeometryError

__all__ = [
    "GridMesh",
    "ScalarField",
    "GradientField",
    "MeshResolutionError",
    "build_mesh",
    "gradient",
    "lp_distance",
    "dump_field_csv",
    "SIDE_NONE",
    "SIDE_PLUS",
    "SIDE_MINUS",
]


class MeshResolutionError(GeometryError):
    """Crack or boundary data not representable on the requested grid."""


SIDE_NONE = 0
SIDE_PLUS = 1
SIDE_MINUS = 2
_SIDE_JUNCTION_BASE = 3


def side_name(code: int) -> str:
    if code == SIDE_NONE:
        return "none"
    if code == SIDE_PLUS:
        return "plus"
    if code == SIDE_MINUS:
        return "minus"
    return f"junction_{code - _SIDE_JUNCTION_BASE}"


@dataclass
class ScalarField:
    """Nodal values, one per DOF of its mesh."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    def copy(self):
        return ScalarField(self.values.copy())


@dataclass
class GradientField:
    """Per-cell gradient vectors (field units per length)."""

    gx: np.ndarray
    gy: np.ndarray

    def __post_init__(self):
        self.gx = np.asarray(self.gx, dtype=float)
        self.gy = np.asarray(self.gy, dtype=float)
        if self.gx.shape != self.gy.shape:
            raise ValueError("gradient component shapes differ")

    def copy(self):
        return GradientField(self.gx.copy(), self.gy.copy())


@dataclass(frozen=True)
class FacePair:
    """Duplicated DOF pair across a crack at one node."""

    x: float
    y: float
    plus: int
    minus: int
    contact: bool = False


@dataclass(frozen=True)
class Junction:
    """Node carrying three or more DOFs (one per incident subdomain)."""

    x: float
    y: float
    dofs: tuple
    angles: tuple  # mean fan angle of each sector, same order as dofs
    contact: bool = False


# fan slot table around node (i, j): (square offset, triangle kind,
# local vertex of the node in that triangle); CCW starting at east.
_FAN_SLOTS = (
    ((0, 0), 0, 0),    # NE square, lower triangle
    ((0, 0), 1, 0),    # NE upper
    ((-1, 0), 0, 1),   # NW lower
    ((-1, -1), 1, 1),  # SW upper
    ((-1, -1), 0, 2),  # SW lower
    ((0, -1), 1, 2),   # SE upper
)
# edge separating slot k from slot k+1 (cyclic): None = diagonal (never cut),
# ("V", di, dj) = vertical crack edge at (i+di, j+dj), ("H", ...) horizontal.
_FAN_EDGES = (
    None,
    ("V", 0, 0),
    ("H", -1, 0),
    None,
    ("V", 0, -1),
    ("H", 0, 0),
)
_SLOT_MID_ANGLE = np.deg2rad(np.array([22.5, 67.5, 135.0, 202.5, 247.5, 315.0]))


@dataclass
class GridMesh:
    """Immutable triangulated grid; do not mutate fields after build."""

    domain: Domain
    crack: CrackSet
    boundary: BoundarySpec
    resolution: int
    nx: int
    ny: int
    hx: float
    hy: float
    x0: float
    y0: float
    dof_x: np.ndarray
    dof_y: np.ndarray
    dof_node: np.ndarray
    dof_side: np.ndarray
    dof_live: np.ndarray
    cells_dofs: np.ndarray
    cell_kind: np.ndarray
    cell_live: np.ndarray
    area: np.ndarray
    ix0: np.ndarray
    ix1: np.ndarray
    iy0: np.ndarray
    iy1: np.ndarray
    dirichlet_dofs: np.ndarray
    crack_face_pairs: tuple
    junctions: tuple
    node_first_dof: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    # -- basic queries ------------------------------------------------

    @property
    def n_dofs(self) -> int:
        return self.dof_x.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells_dofs.shape[0]

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    def node_id(self, i: int, j: int) -> int:
        return j * (self.nx + 1) + i

    def node_index_of_point(self, x: float, y: float):
        i = round((x - self.x0) / self.hx)
        j = round((y - self.y0) / self.hy)
        if abs(self.x0 + i * self.hx - x) > 1e-9 or abs(self.y0 + j * self.hy - y) > 1e-9:
            raise MeshResolutionError(f"point ({x},{y}) is not a grid node")
        return i, j

    def dofs_at_point(self, x: float, y: float):
        """All DOF ids at a grid node, in CCW sector order."""
        i, j = self.node_index_of_point(x, y)
        node = self.node_id(i, j)
        return np.flatnonzero(self.dof_node == node).tolist()

    def cells_compatible(self, other: "GridMesh") -> bool:
        """Same cell geometry (grid and masking); DOF layout may differ."""
        return (
            self.nx == other.nx
            and self.ny == other.ny
            and self.x0 == other.x0
            and self.y0 == other.y0
            and self.hx == other.hx
            and self.hy == other.hy
            and bool(np.array_equal(self.cell_live, other.cell_live))
        )

    # -- cached structures ---------------------------------------------

    @property
    def gcoef(self) -> np.ndarray:
        """Per-cell P1 gradient coefficients, shape (ncells, 2, 3)."""
        g = self._cache.get("gcoef")
        if g is None:
            nc = self.n_cells
            g = np.zeros((nc, 2, 3))
            lo = self.cell_kind == 0
            up = ~lo
            ihx, ihy = 1.0 / self.hx, 1.0 / self.hy
            g[lo, 0, 0], g[lo, 0, 1] = -ihx, ihx
            g[lo, 1, 1], g[lo, 1, 2] = -ihy, ihy
            g[up, 0, 1], g[up, 0, 2] = ihx, -ihx
            g[up, 1, 0], g[up, 1, 2] = -ihy, ihy
            self._cache["gcoef"] = g
        return g

    @property
    def grad_ops(self):
        """Sparse cell-gradient operators (Gx, Gy), each (ncells, ndofs)."""
        ops = self._cache.get("grad_ops")
        if ops is None:
            nc, nd = self.n_cells, self.n_dofs
            rows = np.repeat(np.arange(nc), 3)
            cols = self.cells_dofs.ravel()
            gx = sp.csr_matrix(
                (self.gcoef[:, 0, :].ravel(), (rows, cols)), shape=(nc, nd)
            )
            gy = sp.csr_matrix(
                (self.gcoef[:, 1, :].ravel(), (rows, cols)), shape=(nc, nd)
            )
            ops = (gx, gy)
            self._cache["grad_ops"] = ops
        return ops

    @property
    def hessian_pattern(self):
        """COO row/col indices of the per-cell 3x3 block assembly."""
        pat = self._cache.get("hessian_pattern")
        if pat is None:
            rows = np.repeat(self.cells_dofs, 3, axis=1).ravel()
            cols = np.tile(self.cells_dofs, (1, 3)).ravel()
            pat = (rows, cols)
            self._cache["hessian_pattern"] = pat
        return pat

    def uncracked(self) -> "GridMesh":
        """Companion mesh of the same grid with no crack (for dual fields)."""
        sib = self._cache.get("uncracked")
        if sib is None:
            if self.crack.is_empty:
                sib = self
            else:
                sib = build_mesh(self.domain, CrackSet(), self.boundary, self.resolution)
            self._cache["uncracked"] = sib
        return sib

    # -- field operations ----------------------------------------------

    def cell_gradients(self, values: np.ndarray):
        return _kernels.cell_gradients(
            values, self.ix0, self.ix1, self.iy0, self.iy1, 1.0 / self.hx, 1.0 / self.hy
        )

    def integral(self, values: np.ndarray) -> float:
        """Integral of the P1 field over the live cells."""
        v = values[self.cells_dofs]
        return float(np.dot(self.area, v.mean(axis=1)))

    @property
    def volume(self) -> float:
        vol = self._cache.get("volume")
        if vol is None:
            vol = float(self.area.sum())
            self._cache["volume"] = vol
        return vol


def gradient(mesh: GridMesh, fld: ScalarField) -> GradientField:
    """Exact per-cell affine gradient; zero on cells inside holes."""
    if fld.values.shape[0] != mesh.n_dofs:
        raise ValueError(
            f"field has {fld.values.shape[0]} values, mesh has {mesh.n_dofs} DOFs"
        )
    gx, gy = mesh.cell_gradients(fld.values)
    dead = ~mesh.cell_live
    if dead.any():
        gx[dead] = 0.0
        gy[dead] = 0.0
    return GradientField(gx, gy)


def lp_distance(mesh: GridMesh, a: GradientField, b: GradientField, p: float) -> float:
    """(sum over cells of area * |a - b|^p)^(1/p)."""
    if a.gx.shape[0] != mesh.n_cells or b.gx.shape[0] != mesh.n_cells:
        raise ValueError("gradient fields do not match the mesh")
    if not (1.0 < p < np.inf):
        raise ValueError(f"p must be in (1, inf), got {p}")
    dx = a.gx - b.gx
    dy = a.gy - b.gy
    return float(np.dot(mesh.area, (dx * dx + dy * dy) ** (0.5 * p)) ** (1.0 / p))


def dump_field_csv(mesh: GridMesh, fld: ScalarField, path):
    """Field dump: one row per DOF with header x,y,dof_id,side,value."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "dof_id", "side", "value"])
        for d in range(mesh.n_dofs):
            w.writerow(
                [
                    repr(float(mesh.dof_x[d])),
                    repr(float(mesh.dof_y[d])),
                    d,
                    side_name(int(mesh.dof_side[d])),
                    repr(float(fld.values[d])),
                ]
            )


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def _lattice_index(x, origin, h, res, what):
    t = (x - origin) / h
    i = round(t)
    if abs(t - i) > 1e-9 * max(1.0, res):
        raise MeshResolutionError(f"{what} coordinate {x} is not on the grid")
    return i


def build_mesh(
    domain: Domain,
    crack: CrackSet,
    boundary: BoundarySpec,
    resolution: int,
    contact_points=(),
) -> GridMesh:
    """Build the conforming mesh at ``resolution`` cells per unit length.

    All crack vertices must lie on grid nodes at this resolution and the
    requested contact points must coincide with grid nodes.
    """
    outer = domain.outer
    nx = round(outer.width * resolution)
    ny = round(outer.height * resolution)
    if abs(nx - outer.width * resolution) > 1e-9 or nx < 1:
        raise MeshResolutionError("outer width is not a whole number of cells")
    if abs(ny - outer.height * resolution) > 1e-9 or ny < 1:
        raise MeshResolutionError("outer height is not a whole number of cells")
    hx = outer.width / nx
    hy = outer.height / ny
    x0, y0 = outer.x0, outer.y0
    nxn, nyn = nx + 1, ny + 1

    def node_idx(x, y, what="crack"):
        return (
            _lattice_index(x, x0, hx, resolution, what),
            _lattice_index(y, y0, hy, resolution, what),
        )

    # crack edges on the lattice
    hcrack = np.zeros((nx, nyn), dtype=bool)   # edge (i,j)-(i+1,j)
    vcrack = np.zeros((nxn, ny), dtype=bool)   # edge (i,j)-(i,j+1)
    for sx0, sy0, sx1, sy1 in crack.segments():
        i0, j0 = node_idx(sx0, sy0)
        i1, j1 = node_idx(sx1, sy1)
        if not (0 <= i0 <= nx and 0 <= i1 <= nx and 0 <= j0 <= ny and 0 <= j1 <= ny):
            raise GeometryError("crack segment outside the domain grid")
        if j0 == j1:
            hcrack[min(i0, i1): max(i0, i1), j0] = True
        else:
            vcrack[i0, min(j0, j1): max(j0, j1)] = True

    # live squares (not inside a hole)
    live_sq = np.ones((nx, ny), dtype=bool)
    for h in domain.holes:
        i0, j0 = node_idx(h.x0, h.y0, "hole")
        i1, j1 = node_idx(h.x1, h.y1, "hole")
        live_sq[i0:i1, j0:j1] = False

    # nodes needing the full fan logic: crack-incident or next to a dead
    # square while having at least one live neighbor square
    crack_node = np.zeros((nxn, nyn), dtype=bool)
    crack_node[:-1, :] |= hcrack
    crack_node[1:, :] |= hcrack
    crack_node[:, :-1] |= vcrack
    crack_node[:, 1:] |= vcrack

    # count live and in-range squares around each node via a padded mask
    pad = np.zeros((nx + 2, ny + 2), dtype=bool)
    pad[1:-1, 1:-1] = live_sq
    live_n = (
        pad[1:, 1:].astype(np.int8)
        + pad[:-1, 1:].astype(np.int8)
        + pad[1:, :-1].astype(np.int8)
        + pad[:-1, :-1].astype(np.int8)
    )
    padt = np.zeros((nx + 2, ny + 2), dtype=bool)
    padt[1:-1, 1:-1] = True
    total_n = (
        padt[1:, 1:].astype(np.int8)
        + padt[:-1, 1:].astype(np.int8)
        + padt[1:, :-1].astype(np.int8)
        + padt[:-1, :-1].astype(np.int8)
    )
    dead_node = live_n == 0
    slow_node = (crack_node | (live_n < total_n)) & ~dead_node

    # DOF allocation: nodes in id order; slow nodes may get several DOFs.
    n_nodes = nxn * nyn
    node_ids = np.arange(n_nodes).reshape(nyn, nxn)  # [j, i]
    node_first_dof = np.full(n_nodes, -1, dtype=np.int64)
    dof_node_l, dof_side_l, dof_live_l = [], [], []
    # sector bookkeeping for slow nodes: node -> list of (slot_list, dof)
    sectors_at = {}

    def fan_slots(i, j):
        """Present fan slots around node (i,j): (slot, cell_id, local_vertex)."""
        out = []
        for slot, ((di, dj), kind, lv) in enumerate(_FAN_SLOTS):
            si, sj = i + di, j + dj
            if 0 <= si < nx and 0 <= sj < ny and live_sq[si, sj]:
                out.append((slot, 2 * (sj * nx + si) + kind, lv))
        return out

    def fan_cut(i, j, slot):
        """True if the edge after ``slot`` (CCW) is a crack edge."""
        e = _FAN_EDGES[slot]
        if e is None:
            return False
        kind, di, dj = e
        if kind == "V":
            ii, jj = i + di, j + dj
            return 0 <= ii < nxn and 0 <= jj < ny and vcrack[ii, jj]
        ii, jj = i + di, j + dj
        return 0 <= ii < nx and 0 <= jj < nyn and hcrack[ii, jj]

    ndof = 0
    slow_list = []
    for j in range(nyn):
        for i in range(nxn):
            nid = node_ids[j, i]
            if dead_node[i, j]:
                node_first_dof[nid] = ndof
                dof_node_l.append(nid)
                dof_side_l.append(SIDE_NONE)
                dof_live_l.append(False)
                ndof += 1
                continue
            if not slow_node[i, j]:
                node_first_dof[nid] = ndof
                dof_node_l.append(nid)
                dof_side_l.append(SIDE_NONE)
                dof_live_l.append(True)
                ndof += 1
                continue
            # fan logic
            present = fan_slots(i, j)
            present_slots = [s for s, _, _ in present]
            present_set = set(present_slots)
            # break after slot s if s or its successor is absent, or the
            # separating edge is a crack edge
            groups = []
            breaks = []
            for s in range(6):
                nxt = (s + 1) % 6
                if s not in present_set or nxt not in present_set or fan_cut(i, j, s):
                    breaks.append(s)
            if not breaks:
                groups = [present_slots]
            else:
                start = (breaks[0] + 1) % 6
                order = [(start + k) % 6 for k in range(6)]
                cur = []
                for s in order:
                    if s in present_set:
                        cur.append(s)
                    if s in breaks or s not in present_set:
                        if cur:
                            groups.append(cur)
                            cur = []
                if cur:
                    groups.append(cur)
            groups = [g for g in groups if g]
            node_first_dof[nid] = ndof
            sect = []
            for g in groups:
                sect.append((g, ndof))
                dof_node_l.append(nid)
                dof_side_l.append(SIDE_NONE)  # provisional, tagged below
                dof_live_l.append(True)
                ndof += 1
            sectors_at[nid] = sect
            slow_list.append((i, j, nid))

    dof_node = np.array(dof_node_l, dtype=np.int64)
    dof_side = np.array(dof_side_l, dtype=np.int16)
    dof_live = np.array(dof_live_l, dtype=bool)

    # side tags for multi-sector nodes
    pairs = []
    junctions = []
    contact_nodes = set()
    for (cx, cy) in contact_points:
        ci = _lattice_index(cx, x0, hx, resolution, "contact point")
        cj = _lattice_index(cy, y0, hy, resolution, "contact point")
        contact_nodes.add(node_ids[cj, ci])
    for i, j, nid in slow_list:
        sect = sectors_at[nid]
        if len(sect) < 2:
            continue
        px = x0 + i * hx
        py = y0 + j * hy
        angs = []
        for g, d in sect:
            vx = np.cos(_SLOT_MID_ANGLE[g]).sum()
            vy = np.sin(_SLOT_MID_ANGLE[g]).sum()
            angs.append(np.arctan2(vy, vx))
        if len(sect) == 2:
            (g0, d0), (g1, d1) = sect
            k0 = (np.sin(_SLOT_MID_ANGLE[g0]).sum(), np.cos(_SLOT_MID_ANGLE[g0]).sum())
            k1 = (np.sin(_SLOT_MID_ANGLE[g1]).sum(), np.cos(_SLOT_MID_ANGLE[g1]).sum())
            if (round(k0[0], 12), round(k0[1], 12)) >= (round(k1[0], 12), round(k1[1], 12)):
                plus, minus = d0, d1
            else:
                plus, minus = d1, d0
            dof_side[plus] = SIDE_PLUS
            dof_side[minus] = SIDE_MINUS
            pairs.append(FacePair(px, py, plus, minus, nid in contact_nodes))
        else:
            dofs = tuple(d for _, d in sect)
            for k, (_, d) in enumerate(sect):
                dof_side[d] = _SIDE_JUNCTION_BASE + k
            junctions.append(
                Junction(px, py, dofs, tuple(float(a) for a in angs), nid in contact_nodes)
            )

    # cells
    n_cells = 2 * nx * ny
    sq_i, sq_j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    sq_flat = (sq_j * nx + sq_i).ravel()
    cell_kind = np.empty(n_cells, dtype=np.uint8)
    cell_kind[0::2] = 0
    cell_kind[1::2] = 1
    # vertex nodes per cell
    cells_nodes = np.empty((n_cells, 3), dtype=np.int64)

    def nid_of(ii, jj):
        return jj * nxn + ii

    lower_idx = 2 * (sq_j.ravel() * nx + sq_i.ravel())
    cells_nodes[lower_idx, 0] = nid_of(sq_i.ravel(), sq_j.ravel())
    cells_nodes[lower_idx, 1] = nid_of(sq_i.ravel() + 1, sq_j.ravel())
    cells_nodes[lower_idx, 2] = nid_of(sq_i.ravel() + 1, sq_j.ravel() + 1)
    upper_idx = lower_idx + 1
    cells_nodes[upper_idx, 0] = nid_of(sq_i.ravel(), sq_j.ravel())
    cells_nodes[upper_idx, 1] = nid_of(sq_i.ravel() + 1, sq_j.ravel() + 1)
    cells_nodes[upper_idx, 2] = nid_of(sq_i.ravel(), sq_j.ravel() + 1)

    cells_dofs = node_first_dof[cells_nodes].astype(np.int64)
    # overwrite entries around slow nodes with sector DOFs
    for i, j, nid in slow_list:
        for g, d in sectors_at[nid]:
            for slot in g:
                (di, dj), kind, lv = _FAN_SLOTS[slot]
                cid = 2 * ((j + dj) * nx + (i + di)) + kind
                cells_dofs[cid, lv] = d

    # cell ids are 2*(sj*nx+si)+kind: flatten with sj outer, si inner
    cell_live = np.repeat(live_sq.T.ravel(), 2)
    area = np.where(cell_live, 0.5 * hx * hy, 0.0)

    # gradient index arrays
    lo = cell_kind == 0
    ix0a = np.where(lo, cells_dofs[:, 0], cells_dofs[:, 2])
    ix1a = cells_dofs[:, 1].copy()
    iy0a = np.where(lo, cells_dofs[:, 1], cells_dofs[:, 0])
    iy1a = cells_dofs[:, 2].copy()

    # DOF coordinates
    dof_i = dof_node % nxn
    dof_j = dof_node // nxn
    dof_x = x0 + dof_i * hx
    dof_y = y0 + dof_j * hy

    # Dirichlet DOFs: nodes on closed Dirichlet segments, off the crack
    dir_set = set()
    for (ax, ay), (bx, by) in boundary.dirichlet:
        ia, ja = node_idx(ax, ay, "boundary")
        ib, jb = node_idx(bx, by, "boundary")
        if ja == jb:
            for ii in range(min(ia, ib), max(ia, ib) + 1):
                dir_set.add((ii, ja))
        else:
            for jj in range(min(ja, jb), max(ja, jb) + 1):
                dir_set.add((ia, jj))
    dir_dofs = []
    for (ii, jj) in sorted(dir_set):
        if crack_node[ii, jj]:
            continue  # the constraint is imposed on the Dirichlet part minus K
        if dead_node[ii, jj]:
            continue
        nid = node_ids[jj, ii]
        dir_dofs.append(int(node_first_dof[nid]))
    dirichlet_dofs = np.array(sorted(dir_dofs), dtype=np.int64)

    mesh = GridMesh(
        domain=domain,
        crack=crack,
        boundary=boundary,
        resolution=resolution,
        nx=nx,
        ny=ny,
        hx=hx,
        hy=hy,
        x0=x0,
        y0=y0,
        dof_x=dof_x,
        dof_y=dof_y,
        dof_node=dof_node,
        dof_side=dof_side,
        dof_live=dof_live,
        cells_dofs=cells_dofs.astype(np.int64),
        cell_kind=cell_kind,
        cell_live=cell_live,
        area=area,
        ix0=ix0a.astype(np.int64),
        ix1=ix1a.astype(np.int64),
        iy0=iy0a.astype(np.int64),
        iy1=iy1a.astype(np.int64),
        dirichlet_dofs=dirichlet_dofs,
        crack_face_pairs=tuple(pairs),
        junctions=tuple(junctions),
        node_first_dof=node_first_dof,
    )
    if dirichlet_dofs.size == 0:
        raise GeometryError("no Dirichlet DOFs: Dirichlet part is empty or on the crack")
    return mesh
