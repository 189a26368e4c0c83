"""Numerical laboratory for convex variational problems on cracked 2D domains.

Modules
-------
geometry   : domains, crack sets, Hausdorff metric, connectivity, families
mesh       : crack-conforming triangulated grids with duplicated DOFs
integrand  : convex p-power densities and their conjugates
solver     : primal energy minimization (preconditioned descent, Armijo)
dual       : dual maximization, conjugate construction, duality gap
capacity   : Sobolev (1,r)-capacity estimation by energy minimization
gamma      : crack-limit experiments (stability, jump, ring, junction)
cli        : command-line front end
"""

from . import _kernels

__version__ = "0.1.0"

NUMBA_ENABLED = _kernels.NUMBA_ENABLED
