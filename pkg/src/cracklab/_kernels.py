"""Hot numeric kernels with numba acceleration and a pure-numpy fallback.

Every kernel exists twice: a vectorized numpy implementation and a fused
numba ``@njit`` loop.  The active path is chosen once at import time:
numba is used when it imports cleanly, unless the environment variable
``CRACKLAB_PURE_NUMPY=1`` forces the numpy path (useful on machines where
JIT compilation is unwanted, and for the benchmark in ``benchmarks/``).

All kernels operate on the flat cell arrays of a grid mesh:

* ``ix0, ix1, iy0, iy1`` - per-cell DOF indices such that the P1 gradient
  of a nodal field ``u`` on cell ``c`` is
  ``gx = (u[ix1] - u[ix0]) * inv_hx``, ``gy = (u[iy1] - u[iy0]) * inv_hy``.
* ``areaw = area * weight`` - quadrature weight times integrand weight.

The energy density is the regularized p-power
``((gx^2 + gy^2 + eps^2)^(p/2) - eps^p) / p``.
"""

from __future__ import annotations

import os

import numpy as np

_FORCE_NUMPY = os.environ.get("CRACKLAB_PURE_NUMPY", "0") == "1"

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

NUMBA_ENABLED = _HAVE_NUMBA and not _FORCE_NUMPY


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def cell_gradients_numpy(u, ix0, ix1, iy0, iy1, inv_hx, inv_hy):
    """Per-cell P1 gradient components of the nodal field ``u``."""
    gx = (u[ix1] - u[ix0]) * inv_hx
    gy = (u[iy1] - u[iy0]) * inv_hy
    return gx, gy


def energy_sum_numpy(u, ix0, ix1, iy0, iy1, inv_hx, inv_hy, areaw, p, eps):
    """Total p-power energy of ``u`` over all cells."""
    gx = (u[ix1] - u[ix0]) * inv_hx
    gy = (u[iy1] - u[iy0]) * inv_hy
    s = gx * gx + gy * gy + eps * eps
    return float(np.dot(areaw, s ** (0.5 * p) - eps**p)) / p


def power_density_numpy(gx, gy, p, eps):
    """Density ((|g|^2+eps^2)^(p/2) - eps^p)/p per cell (unweighted)."""
    s = gx * gx + gy * gy + eps * eps
    return (s ** (0.5 * p) - eps**p) / p


def power_m_numpy(gx, gy, p, eps):
    """Flux factor m = (|g|^2 + eps^2)^((p-2)/2); the flux is m*(gx, gy)."""
    s = gx * gx + gy * gy + eps * eps
    if eps == 0.0:
        # avoid 0**negative for p < 2; the flux m*g tends to 0 anyway
        s = np.where(s > 0.0, s, 1.0)
    return s ** (0.5 * (p - 2.0))


def hessian_weights_numpy(gx, gy, p, eps):
    """Isotropic and rank-one weights of the energy density Hessian.

    H = m * I + ma * g g^T with m = s^((p-2)/2), ma = (p-2) s^((p-4)/2),
    s = |g|^2 + eps^2.  SPD for every p > 1.
    """
    s = gx * gx + gy * gy + eps * eps
    if eps == 0.0:
        s = np.where(s > 0.0, s, 1e-300)
    m = s ** (0.5 * (p - 2.0))
    ma = (p - 2.0) * s ** (0.5 * (p - 4.0))
    return m, ma


def hessian_coo_data_numpy(gcoef, areaw, m, ma, gx, gy, out):
    """Per-cell 3x3 Newton blocks B = areaw * G^T (m I + ma g g^T) G.

    ``gcoef`` has shape (ncells, 2, 3); ``out`` has shape (ncells, 9).
    """
    hg0 = m[:, None] * gcoef[:, 0, :] + (ma * gx)[:, None] * (
        gx[:, None] * gcoef[:, 0, :] + gy[:, None] * gcoef[:, 1, :]
    )
    hg1 = m[:, None] * gcoef[:, 1, :] + (ma * gy)[:, None] * (
        gx[:, None] * gcoef[:, 0, :] + gy[:, None] * gcoef[:, 1, :]
    )
    blocks = np.einsum("ci,cj->cij", gcoef[:, 0, :], hg0) + np.einsum(
        "ci,cj->cij", gcoef[:, 1, :], hg1
    )
    blocks *= areaw[:, None, None]
    out[:] = blocks.reshape(-1, 9)
    return out


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True)
    def cell_gradients_numba(u, ix0, ix1, iy0, iy1, inv_hx, inv_hy):
        n = ix0.shape[0]
        gx = np.empty(n)
        gy = np.empty(n)
        for c in range(n):
            gx[c] = (u[ix1[c]] - u[ix0[c]]) * inv_hx
            gy[c] = (u[iy1[c]] - u[iy0[c]]) * inv_hy
        return gx, gy

    @njit(cache=True)
    def energy_sum_numba(u, ix0, ix1, iy0, iy1, inv_hx, inv_hy, areaw, p, eps):
        total = 0.0
        epp = eps**p
        for c in range(ix0.shape[0]):
            gx = (u[ix1[c]] - u[ix0[c]]) * inv_hx
            gy = (u[iy1[c]] - u[iy0[c]]) * inv_hy
            s = gx * gx + gy * gy + eps * eps
            total += areaw[c] * (s ** (0.5 * p) - epp)
        return total / p

    @njit(cache=True)
    def power_density_numba(gx, gy, p, eps):
        n = gx.shape[0]
        out = np.empty(n)
        epp = eps**p
        for c in range(n):
            s = gx[c] * gx[c] + gy[c] * gy[c] + eps * eps
            out[c] = (s ** (0.5 * p) - epp) / p
        return out

    @njit(cache=True)
    def power_m_numba(gx, gy, p, eps):
        n = gx.shape[0]
        out = np.empty(n)
        for c in range(n):
            s = gx[c] * gx[c] + gy[c] * gy[c] + eps * eps
            if s <= 0.0:
                # flux is m*g = 0 at g = 0 regardless; match the numpy path
                out[c] = 1.0
            else:
                out[c] = s ** (0.5 * (p - 2.0))
        return out

    @njit(cache=True)
    def hessian_weights_numba(gx, gy, p, eps):
        n = gx.shape[0]
        m = np.empty(n)
        ma = np.empty(n)
        for c in range(n):
            s = gx[c] * gx[c] + gy[c] * gy[c] + eps * eps
            if s <= 0.0:
                s = 1e-300
            m[c] = s ** (0.5 * (p - 2.0))
            ma[c] = (p - 2.0) * s ** (0.5 * (p - 4.0))
        return m, ma

    @njit(cache=True)
    def hessian_coo_data_numba(gcoef, areaw, m, ma, gx, gy, out):
        n = gcoef.shape[0]
        for c in range(n):
            aw = areaw[c]
            mc = m[c]
            mac = ma[c]
            gxc = gx[c]
            gyc = gy[c]
            for i in range(3):
                gi0 = gcoef[c, 0, i]
                gi1 = gcoef[c, 1, i]
                for j in range(3):
                    gj0 = gcoef[c, 0, j]
                    gj1 = gcoef[c, 1, j]
                    iso = mc * (gi0 * gj0 + gi1 * gj1)
                    di = gxc * gi0 + gyc * gi1
                    dj = gxc * gj0 + gyc * gj1
                    out[c, 3 * i + j] = aw * (iso + mac * di * dj)
        return out


def tree_accumulate_numpy(c, cells, parents, increments):
    """Sequential prefix accumulation along a spanning tree (BFS order)."""
    for k in range(cells.shape[0]):
        c[cells[k]] = c[parents[k]] + increments[k]
    return c


if _HAVE_NUMBA:

    @njit(cache=True)
    def tree_accumulate_numba(c, cells, parents, increments):
        for k in range(cells.shape[0]):
            c[cells[k]] = c[parents[k]] + increments[k]
        return c


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if NUMBA_ENABLED:
    cell_gradients = cell_gradients_numba
    energy_sum = energy_sum_numba
    power_density = power_density_numba
    power_m = power_m_numba
    hessian_weights = hessian_weights_numba
    hessian_coo_data = hessian_coo_data_numba
    tree_accumulate = tree_accumulate_numba
else:
    cell_gradients = cell_gradients_numpy
    energy_sum = energy_sum_numpy
    power_density = power_density_numpy
    power_m = power_m_numpy
    hessian_weights = hessian_weights_numpy
    hessian_coo_data = hessian_coo_data_numpy
    tree_accumulate = tree_accumulate_numpy
