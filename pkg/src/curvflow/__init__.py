"""Numerical laboratory for the prescribed scalar curvature flow on
rotationally symmetric warped-product metrics.

The package is organized around six modules:

- geometry: radial grids, warped-product metric families, curvature,
  the radial Laplace-Beltrami operator, and quadrature;
- energy: the constrained conformal energy, its first and second
  variations, and the normalization functional alpha;
- spectral: the stability (linearized) operator, its eigendecomposition,
  and spectral projections;
- flow: the volume-normalized curvature flow in conformal gauge with
  explicit and semi-implicit steppers;
- reduction: finite-dimensional reduced dynamics near a degenerate
  critical metric (cubic coefficient, power-law ansatz, kernel and
  heat-mode ODE solvers, weighted norms, adapted-symmetry checks);
- rates / runner / cli: decay-rate fitting, Lojasiewicz exponent
  estimation, config-driven experiment runs, and the command line.
"""

from .exceptions import ConfigError, DomainError

__all__ = ["ConfigError", "DomainError", "__version__"]

__version__ = "0.1.0"
