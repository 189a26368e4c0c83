"""Dual maximization over rotated-gradient fields and duality certificates.

The dual problem maximizes  sum_cells area * (-f*(R grad v) + R grad v . grad g)
over fields v on the uncracked companion mesh that are constant on every
connected component of (crack union Neumann part) and have zero mean,
where R is the quarter turn R(y1, y2) = (-y2, y1).  The component
constraints are imposed exactly by DOF aggregation (one unknown per
component), so feasibility of the returned field is structural, not a
solver tolerance.

``conjugate_from_primal`` builds the dual certificate directly from a
solved primal field by integrating the rotated flux cell to cell across
shared edge midpoints along a spanning tree of the cell-adjacency (dual)
graph.  The resulting piecewise-affine potential has cell gradients that
reproduce the flux exactly, so the pointwise Fenchel equality holds per
cell by construction and the duality gap of the pair measures only the
conservation residual of the primal solve.  The integral is
path-independent up to that residual; a larger loop mismatch raises
``FluxNotConservativeError``.  Nodal values (the reported representation
of v) are obtained by averaging the per-cell potentials at each node and
snapping the nodes of every component to the component mean, which keeps
the DOF-wise constancy invariant exact.

On domains with holes the rotated flux may have nonzero circulation
around a hole and no single-valued potential exists; the construction is
refused there and only the constrained maximization is offered.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order

from . import _kernels
from .geometry import ComponentPartition, GeometryError
from .integrand import ConjugateIntegrand, Integrand
from .mesh import GradientField, GridMesh, ScalarField
from .solver import (
    LinearTerm,
    SolveReport,
    cell_energy_gradient,
    minimize_energy,
)

__all__ = [
    "DualField",
    "InvalidDualFieldError",
    "UnsupportedDomainError",
    "FluxNotConservativeError",
    "dual_value",
    "solve_dual",
    "conjugate_from_primal",
    "duality_gap",
    "weak_divergence_pairing",
    "component_node_sets",
]


class InvalidDualFieldError(ValueError):
    """Dual field violates the component-constancy or zero-mean constraints."""


class UnsupportedDomainError(GeometryError):
    """Operation requires a simply connected domain."""


class FluxNotConservativeError(RuntimeError):
    """Loop mismatch of the integrated flux exceeds the solver residual."""


@dataclass
class DualField:
    """Dual field: nodal values on the uncracked mesh plus cell gradients.

    ``grad`` is the authoritative gradient payload used by all integrals.
    For fields produced by ``solve_dual`` it equals the P1 gradient of the
    nodal values; for conjugates built from a primal flux it stores the
    rotated flux itself (exact per cell), while the nodal values remain
    the CSV/report representation.
    """

    v: ScalarField
    grad: GradientField
    component_values: np.ndarray
    partition: ComponentPartition
    meta: dict = field(default_factory=dict)


def component_node_sets(mesh_unc: GridMesh, partition: ComponentPartition):
    """Uncracked-mesh DOF ids on each component of (crack union Neumann part)."""
    sets = []
    for comp in range(partition.n_components):
        nodes = set()
        for poly in partition.component_items(comp):
            for (ax, ay), (bx, by) in zip(poly[:-1], poly[1:]):
                ia, ja = mesh_unc.node_index_of_point(ax, ay)
                ib, jb = mesh_unc.node_index_of_point(bx, by)
                if ja == jb:
                    for ii in range(min(ia, ib), max(ia, ib) + 1):
                        nodes.add(mesh_unc.node_id(ii, ja))
                else:
                    for jj in range(min(ja, jb), max(ja, jb) + 1):
                        nodes.add(mesh_unc.node_id(ia, jj))
        dofs = np.array(
            sorted(int(mesh_unc.node_first_dof[n]) for n in nodes), dtype=np.int64
        )
        sets.append(dofs)
    return sets


def _check_feasible(mesh_unc, partition, dfield, tol_mean=1e-8):
    vals = dfield.v.values
    for comp, dofs in enumerate(component_node_sets(mesh_unc, partition)):
        if dofs.size and np.ptp(vals[dofs]) != 0.0:
            raise InvalidDualFieldError(
                f"dual field is not constant on component {comp}"
            )
    mean = mesh_unc.integral(vals) / mesh_unc.volume
    scale = float(np.abs(vals).max(initial=0.0)) + 1.0
    if abs(mean) > tol_mean * scale:
        raise InvalidDualFieldError(f"dual field mean {mean:.3e} is not zero")


def _pairing_vector(mesh: GridMesh, g: ScalarField) -> np.ndarray:
    """b with b^T v = sum_cells area * (R grad v) . grad g (v uncracked)."""
    gxg, gyg = mesh.cell_gradients(g.values)
    dead = ~mesh.cell_live
    gxg[dead] = 0.0
    gyg[dead] = 0.0
    unc = mesh.uncracked()
    gxo, gyo = unc.grad_ops
    return gxo.T @ (mesh.area * gyg) - gyo.T @ (mesh.area * gxg)


def dual_value(mesh: GridMesh, fstar: Integrand, v: DualField, g: ScalarField) -> float:
    """Value of the dual objective for an admissible dual field.

    ``mesh`` is the cracked mesh carrying g; the dual field lives on its
    uncracked companion (same cells).
    """
    _check_feasible(mesh.uncracked(), v.partition, v)
    gxv, gyv = v.grad.gx, v.grad.gy
    gxg, gyg = mesh.cell_gradients(g.values)
    dens = fstar.with_eps(0.0).density(gxv, gyv)  # |R grad v| = |grad v|
    pair = gxv * gyg - gyv * gxg  # (R grad v) . grad g
    return float(np.dot(mesh.area, pair - dens))


def duality_gap(
    mesh: GridMesh,
    f: Integrand,
    fstar: Integrand,
    u: ScalarField,
    v: DualField,
    g: ScalarField,
) -> float:
    """Integral of f(grad u) + f*(R grad v) - (R grad v).(grad u).

    Nonnegative up to quadrature sign by the Fenchel-Young inequality;
    a value near zero certifies joint optimality of the pair.
    """
    gux, guy = mesh.cell_gradients(u.values)
    dead = ~mesh.cell_live
    gux[dead] = 0.0
    guy[dead] = 0.0
    gvx, gvy = v.grad.gx, v.grad.gy
    fu = f.with_eps(0.0).density(gux, guy)
    fsv = fstar.with_eps(0.0).density(gvx, gvy)
    cross = (-gvy) * gux + gvx * guy
    return float(np.dot(mesh.area, fu + fsv - cross))


def weak_divergence_pairing(mesh: GridMesh, v: DualField, phi: ScalarField) -> float:
    """sum_cells area * (R grad v) . grad phi  (phi on the cracked mesh)."""
    gpx, gpy = mesh.cell_gradients(phi.values)
    return float(np.dot(mesh.area, (-v.grad.gy) * gpx + v.grad.gx * gpy))


# ---------------------------------------------------------------------------
# constrained maximization
# ---------------------------------------------------------------------------


def _aggregation_columns(mesh_unc: GridMesh, partition: ComponentPartition):
    """Columns mapping reduced unknowns to nodal values.

    Unknown layout: one value per component (component 0 pinned to zero as
    the constant gauge), then every live unaggregated DOF.
    """
    n = mesh_unc.n_dofs
    comp_sets = component_node_sets(mesh_unc, partition)
    in_comp = np.full(n, -1, dtype=np.int64)
    for k, dofs in enumerate(comp_sets):
        in_comp[dofs] = k
    rows, cols = [], []
    ncol = 0
    comp_col = {}
    for k in range(len(comp_sets)):
        if k == 0 and len(comp_sets) > 0:
            continue  # gauge: component 0 holds value zero during the solve
        comp_col[k] = ncol
        rows.extend(comp_sets[k].tolist())
        cols.extend([ncol] * comp_sets[k].size)
        ncol += 1
    free = np.flatnonzero((in_comp < 0) & mesh_unc.dof_live)
    if len(comp_sets) == 0 and free.size:
        free = free[1:]  # no components: pin the first live DOF instead
    rows.extend(free.tolist())
    cols.extend(range(ncol, ncol + free.size))
    ncol += free.size
    C = sp.csc_matrix(
        (np.ones(len(rows)), (np.array(rows), np.array(cols))), shape=(n, ncol)
    )
    return C, comp_sets


def solve_dual(
    mesh: GridMesh,
    fstar: Integrand,
    g: ScalarField,
    partition: ComponentPartition,
    tol: float | None = None,
    max_iter: int = 100,
    eps_schedule=None,
):
    """Maximize the dual objective over the component-constrained space.

    Returns (DualField, SolveReport).  The maximization runs as a
    minimization of the negated concave objective with the same
    preconditioned descent as the primal solve; constraints hold exactly
    through DOF aggregation and the zero mean is restored afterwards.
    """
    if tol is None:
        tol = 1e-8 if fstar.p == 2.0 else 1e-6
    unc = mesh.uncracked()
    b = _pairing_vector(mesh, g)
    C, comp_sets = _aggregation_columns(unc, partition)
    z_fix = np.zeros(unc.n_dofs)
    y0 = np.zeros(C.shape[1])
    extras = (LinearTerm(np.arange(unc.n_dofs), -b),)
    z, _, report = minimize_energy(
        unc,
        fstar,
        C,
        z_fix,
        y0,
        extras=extras,
        tol=tol,
        max_iter=max_iter,
        eps_schedule=eps_schedule,
    )
    if not report.converged:
        raise RuntimeError(
            f"dual solve stalled at residual {report.residual:.3e} (tol {tol:g})"
        )
    # restore the zero-mean normalization (the objective ignores constants)
    z = z - unc.integral(z) / unc.volume
    gx, gy = unc.cell_gradients(z)
    dead = ~unc.cell_live
    gx[dead] = 0.0
    gy[dead] = 0.0
    comp_values = np.array(
        [float(z[dofs[0]]) if dofs.size else 0.0 for dofs in comp_sets]
    )
    dfield = DualField(
        v=ScalarField(z),
        grad=GradientField(gx, gy),
        component_values=comp_values,
        partition=partition,
        meta={"route": "solve_dual", "residual": report.residual},
    )
    report.energy = dual_value(mesh, fstar, dfield, g)
    return dfield, report


# ---------------------------------------------------------------------------
# conjugate construction from a solved primal field
# ---------------------------------------------------------------------------


def _cell_adjacency(mesh: GridMesh):
    """Dual-graph edges (cell_a, cell_b, midpoint) not crossing the crack."""
    nx, ny = mesh.nx, mesh.ny
    hx, hy, x0, y0 = mesh.hx, mesh.hy, mesh.x0, mesh.y0
    si, sj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    si = si.ravel()
    sj = sj.ravel()
    sq = sj * nx + si
    live = mesh.cell_live
    # crack edge masks were consumed at build time; rebuild them here
    hcrack = np.zeros((nx, ny + 1), dtype=bool)
    vcrack = np.zeros((nx + 1, ny), dtype=bool)
    for cx0, cy0, cx1, cy1 in mesh.crack.segments():
        i0 = round((cx0 - x0) / hx)
        j0 = round((cy0 - y0) / hy)
        i1 = round((cx1 - x0) / hx)
        j1 = round((cy1 - y0) / hy)
        if j0 == j1:
            hcrack[min(i0, i1): max(i0, i1), j0] = True
        else:
            vcrack[i0, min(j0, j1): max(j0, j1)] = True

    edges_a, edges_b, mx, my = [], [], [], []

    def push(a, b, pmx, pmy, blocked):
        keep = live[a] & live[b] & ~blocked
        edges_a.append(a[keep])
        edges_b.append(b[keep])
        mx.append(pmx[keep])
        my.append(pmy[keep])

    # diagonal: lower and upper triangle of each square
    a = 2 * sq
    push(a, a + 1, x0 + (si + 0.5) * hx, y0 + (sj + 0.5) * hy, np.zeros(sq.size, bool))
    # bottom horizontal edge of square (si, sj) connects its lower triangle
    # with the upper triangle of the square below
    m = sj >= 1
    push(
        2 * sq[m],
        2 * (sq[m] - nx) + 1,
        x0 + (si[m] + 0.5) * hx,
        y0 + sj[m] * hy,
        hcrack[si[m], sj[m]],
    )
    # left vertical edge of square (si, sj) connects its upper triangle
    # with the lower triangle of the square to the left
    m = si >= 1
    push(
        2 * sq[m] + 1,
        2 * (sq[m] - 1),
        x0 + si[m] * hx,
        y0 + (sj[m] + 0.5) * hy,
        vcrack[si[m], sj[m]],
    )
    return (
        np.concatenate(edges_a),
        np.concatenate(edges_b),
        np.concatenate(mx),
        np.concatenate(my),
    )


def conjugate_from_primal(
    mesh: GridMesh,
    f: Integrand,
    u: ScalarField,
    partition: ComponentPartition | None = None,
    residual: float | None = None,
) -> DualField:
    """Dual field whose rotated gradient equals the primal flux exactly.

    The flux sigma = grad_xi f(grad u) of a solved primal field is weakly
    divergence free, so its rotation is a cell gradient field integrable
    to a potential; the integration runs along a spanning tree of the
    cell-adjacency graph.  Requires a simply connected domain.
    """
    if not mesh.domain.simply_connected:
        raise UnsupportedDomainError(
            "conjugate construction needs a simply connected domain "
            "(rotated flux may circulate around holes)"
        )
    if partition is None:
        from .geometry import connected_components

        partition = connected_components(mesh.crack, mesh.boundary, mesh.domain)
    gx, gy = mesh.cell_gradients(u.values)
    sx, sy = f.with_eps(0.0).flux(gx, gy)
    tx, ty = sy, -sx  # target grad v = R^{-1} sigma

    if residual is None:
        r = cell_energy_gradient(mesh, f.with_eps(0.0), u.values)
        fmask = np.ones(mesh.n_dofs, dtype=bool)
        fmask[mesh.dirichlet_dofs] = False
        fmask &= mesh.dof_live
        residual = float(np.abs(r[fmask]).max(initial=0.0))
        res_l1 = float(np.abs(r[fmask]).sum())
    else:
        res_l1 = residual * max(1, mesh.n_dofs)

    ea, eb, mx, my = _cell_adjacency(mesh)
    lo = np.minimum(ea, eb)
    hi = np.maximum(ea, eb)
    ncells = mesh.n_cells
    sym = sp.coo_matrix(
        (np.ones(lo.size), (lo, hi)), shape=(ncells, ncells)
    ).tocsr()
    edge_keys = lo.astype(np.int64) * ncells + hi
    key_order = np.argsort(edge_keys, kind="stable")
    edge_keys_sorted = edge_keys[key_order]
    mx_sorted = mx[key_order]
    my_sorted = my[key_order]

    # integrate cell offsets piece by piece
    c = np.zeros(ncells)
    piece = np.full(ncells, -1, dtype=np.int64)
    live_cells = np.flatnonzero(mesh.cell_live)
    npieces = 0
    for seed in live_cells:
        if piece[seed] >= 0:
            continue
        order, pred = breadth_first_order(sym, seed, directed=False)
        piece[order] = npieces
        cells = order[1:].astype(np.int64)
        if cells.size:
            pars = pred[cells].astype(np.int64)
            key = (
                np.minimum(cells, pars) * ncells + np.maximum(cells, pars)
            )
            k = np.searchsorted(edge_keys_sorted, key)
            pmx = mx_sorted[k]
            pmy = my_sorted[k]
            inc = (tx[pars] - tx[cells]) * pmx + (ty[pars] - ty[cells]) * pmy
            _kernels.tree_accumulate(c, cells, pars, inc)
        npieces += 1

    # loop mismatch on non-tree edges (within pieces)
    wa = c[ea] + tx[ea] * mx + ty[ea] * my
    wb = c[eb] + tx[eb] * mx + ty[eb] * my
    defects = np.abs(wa - wb)
    path_dependence = float(defects.max(initial=0.0))
    scale = 1.0 + float(np.hypot(tx, ty).max(initial=0.0)) * mesh.domain.diameter
    threshold = 10.0 * max(res_l1, 1e-13 * scale)
    if path_dependence > threshold:
        raise FluxNotConservativeError(
            f"loop mismatch {path_dependence:.3e} exceeds 10x conservation "
            f"residual ({res_l1:.3e}); flux is not discretely divergence free"
        )

    # match piece offsets through the component constraints
    unc = mesh.uncracked()
    comp_sets = component_node_sets(unc, partition)
    node_xy = np.stack([unc.dof_x, unc.dof_y], axis=1)
    # incidence: live cells at each node (via the cracked mesh's node ids)
    cells_nodes = mesh.dof_node[mesh.cells_dofs]
    if len(comp_sets) and npieces > 1:
        rows = []
        rhs = []
        ncol = npieces + len(comp_sets)
        node_cells = _node_cell_incidence(mesh, cells_nodes)
        for k, dofs in enumerate(comp_sets):
            for nd in dofs:
                for cell in node_cells.get(int(nd), ()):  # live cells only
                    w_val = (
                        c[cell]
                        + tx[cell] * node_xy[nd, 0]
                        + ty[cell] * node_xy[nd, 1]
                    )
                    row = np.zeros(ncol)
                    row[piece[cell]] = 1.0
                    row[npieces + k] = -1.0
                    rows.append(row)
                    rhs.append(-w_val)
        gauge = np.zeros(ncol)
        gauge[0] = 1.0
        rows.append(gauge)
        rhs.append(0.0)
        sol, *_ = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)
        offsets = sol[:npieces]
        c[mesh.cell_live] += offsets[piece[mesh.cell_live]]

    # nodal averaging on the uncracked mesh
    sums = np.zeros(unc.n_dofs)
    counts = np.zeros(unc.n_dofs)
    live = mesh.cell_live
    for k in range(3):
        nd = cells_nodes[live, k]
        w_val = (
            c[live]
            + tx[live] * node_xy[nd, 0]
            + ty[live] * node_xy[nd, 1]
        )
        np.add.at(sums, nd, w_val)
        np.add.at(counts, nd, 1.0)
    vals = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)

    # snap components to their mean value (exact DOF-wise constancy)
    comp_values = np.zeros(len(comp_sets))
    for k, dofs in enumerate(comp_sets):
        if dofs.size:
            mean = float(vals[dofs].mean())
            vals[dofs] = mean
            comp_values[k] = mean
    # zero mean
    shift = unc.integral(vals) / unc.volume
    vals -= shift
    comp_values -= shift

    dfield = DualField(
        v=ScalarField(vals),
        grad=GradientField(tx.copy(), ty.copy()),
        component_values=comp_values,
        partition=partition,
        meta={
            "route": "conjugate_from_primal",
            "residual": residual,
            "path_dependence": path_dependence,
        },
    )
    return dfield


def _node_cell_incidence(mesh: GridMesh, cells_nodes):
    inc = mesh._cache.get("node_cells")
    if inc is None:
        inc = {}
        live = np.flatnonzero(mesh.cell_live)
        for cell in live:
            for k in range(3):
                inc.setdefault(int(cells_nodes[cell, k]), []).append(int(cell))
        mesh._cache["node_cells"] = inc
    return inc
