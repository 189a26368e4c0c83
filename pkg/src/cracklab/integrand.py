"""Convex p-power energy densities and their Legendre conjugates.

The density family is f(x, xi) = w(x) * ((|xi|^2 + eps^2)^(p/2) - eps^p) / p
with exponent p in (1, inf), a positive weight w (constant or per cell),
and an optional regularization eps >= 0 used by the solvers; eps > 0 keeps
the Hessian bounded where |xi|^p degenerates.

The conjugate of the unregularized density is again a member of the
family: f*(x, zeta) = w^(1-q) |zeta|^q / q with 1/p + 1/q = 1, which is
what makes the dual solve reuse the primal machinery unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels

__all__ = [
    "Integrand",
    "ConjugateIntegrand",
    "UnsupportedConjugateError",
    "conjugate",
    "conjugate_exponent",
]


class UnsupportedConjugateError(ValueError):
    """Analytic conjugate is only available for the unregularized family."""


def conjugate_exponent(p: float) -> float:
    return p / (p - 1.0)


@dataclass(frozen=True)
class Integrand:
    """p-power density, optionally cell-weighted and eps-regularized."""

    p: float
    weight: object = 1.0  # scalar or per-cell array
    eps: float = 0.0

    def __post_init__(self):
        if not (1.0 < self.p < np.inf):
            raise ValueError(f"exponent p must be in (1, inf), got {self.p}")
        if self.eps < 0.0:
            raise ValueError("eps must be nonnegative")
        w = self.weight
        if np.ndim(w) == 0:
            if not w > 0.0:
                raise ValueError("weight must be positive")
        else:
            w = np.asarray(w, dtype=float)
            if not (w > 0.0).all():
                raise ValueError("weight must be positive")
            object.__setattr__(self, "weight", w)

    # -- scalar/cell evaluation ----------------------------------------

    @property
    def kind(self) -> str:
        return "p_power" if np.ndim(self.weight) == 0 else "weighted_p_power"

    def weight_at(self, cell) -> float:
        if np.ndim(self.weight) == 0:
            return float(self.weight)
        return float(self.weight[cell])

    def with_eps(self, eps: float) -> "Integrand":
        return Integrand(self.p, self.weight, eps)

    def eval(self, cell, xi) -> float:
        """Density value w * ((|xi|^2 + eps^2)^(p/2) - eps^p) / p."""
        xi = np.asarray(xi, dtype=float)
        s = float(xi[0] ** 2 + xi[1] ** 2) + self.eps**2
        return self.weight_at(cell) * (s ** (0.5 * self.p) - self.eps**self.p) / self.p

    def grad(self, cell, xi) -> np.ndarray:
        """Gradient in xi: w * (|xi|^2 + eps^2)^((p-2)/2) * xi."""
        xi = np.asarray(xi, dtype=float)
        s = float(xi[0] ** 2 + xi[1] ** 2) + self.eps**2
        if s == 0.0:
            if self.p < 2.0:
                raise ValueError("gradient singular at xi = 0 for p < 2, eps = 0")
            return np.zeros(2)
        return self.weight_at(cell) * s ** (0.5 * (self.p - 2.0)) * xi

    # -- vectorized cell arrays (used by the solvers) --------------------

    def _w(self, ncells) -> np.ndarray:
        if np.ndim(self.weight) == 0:
            return np.full(ncells, float(self.weight))
        if self.weight.shape[0] != ncells:
            raise ValueError("per-cell weight length does not match the mesh")
        return self.weight

    def density(self, gx, gy) -> np.ndarray:
        return self._w(gx.shape[0]) * _kernels.power_density(gx, gy, self.p, self.eps)

    def flux(self, gx, gy):
        """Per-cell gradient of the density: (sx, sy) = w m (gx, gy)."""
        m = self._w(gx.shape[0]) * _kernels.power_m(gx, gy, self.p, self.eps)
        return m * gx, m * gy

    def hessian_weights(self, gx, gy):
        m, ma = _kernels.hessian_weights(gx, gy, self.p, self.eps)
        w = self._w(gx.shape[0])
        return w * m, w * ma

    # -- growth constants -------------------------------------------------

    def growth_constants(self):
        """(alpha, beta, gamma) with alpha|xi|^p <= f <= beta|xi|^p + gamma.

        Exact for eps = 0; for eps > 0 the bounds are valid whenever
        p >= 2 (superadditivity of t^(p/2) gives the lower bound).
        """
        wmin = float(np.min(self.weight))
        wmax = float(np.max(self.weight))
        if self.eps == 0.0:
            return wmin / self.p, wmax / self.p, 0.0
        if self.p < 2.0:
            raise ValueError(
                "no positive growth constant alpha exists for p < 2 with eps > 0"
            )
        beta = wmax * 2 ** (0.5 * self.p) / self.p
        gamma = wmax * 2 ** (0.5 * self.p) * self.eps**self.p / self.p
        return wmin / self.p, beta, gamma


@dataclass(frozen=True)
class ConjugateIntegrand(Integrand):
    """Conjugate density f*(x, zeta) = w^(1-q) |zeta|^q / q; p here is q."""

    source_p: float = 2.0

    @property
    def q(self) -> float:
        return self.p


def conjugate(f: Integrand) -> ConjugateIntegrand:
    """Analytic Legendre conjugate of an unregularized p-power density."""
    if f.eps != 0.0:
        raise UnsupportedConjugateError(
            "conjugate is implemented analytically for eps = 0 only"
        )
    q = conjugate_exponent(f.p)
    if np.ndim(f.weight) == 0:
        w = float(f.weight) ** (1.0 - q)
    else:
        w = f.weight ** (1.0 - q)
    return ConjugateIntegrand(p=q, weight=w, eps=0.0, source_p=f.p)
