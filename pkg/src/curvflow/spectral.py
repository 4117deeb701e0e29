"""The stability operator, its spectrum, and spectral projections.

At a normalized critical configuration the second variation of the
energy pairs with the Schrodinger-type stability operator

    L v = (n-1) Delta_g v + R_g v,
    D2 E_f[v, w] = -(8/(n-2)) <w, L v>,

so *positive* eigenvalues of L are energy-decreasing (unstable)
directions, negative eigenvalues are stable, and near-zero eigenvalues
span the approximate kernel.  On the round n-sphere the radial sector
has the closed-form spectrum

    lambda_l = (n-1) (n - l (l + n - 1)),        l = 0, 1, 2, ...

with radial (zonal) eigenfunctions sin((l+1) r)/sin r; for n = 3 this
is 6, 0, -10, -24, -42, ... and the kernel field is cos r.

The operator is assembled in similarity-transformed symmetric
tridiagonal form: with D = diag(w_j^{n-1}) the matrix
S = D^{1/2} L D^{-1/2} is symmetric because the flux-form Laplacian is
exactly self-adjoint under the weighted midpoint inner product.
Eigenvectors of S pulled back through D^{-1/2} are exactly orthonormal
under that inner product.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .exceptions import ConfigError, DomainError
from .geometry import FieldSample, _require_same_grid, scalar_curvature

__all__ = [
    "RadialOperator",
    "SpectralDecomposition",
    "assemble",
    "eigendecompose",
    "default_kernel_tol",
    "kernel_dimension",
    "project",
    "eigenfield",
    "coefficients",
]


def default_kernel_tol(grid):
    """50 h^2 (n-1): the scale of the discretization error of a
    continuum zero eigenvalue."""
    return 50.0 * grid.spacing**2 * (grid.dim - 1)


@dataclass(eq=False)
class RadialOperator:
    """Tridiagonal symmetric representation of L = (n-1) Delta + V."""

    metric: "object"
    potential: np.ndarray
    diag: np.ndarray = field(init=False)
    off: np.ndarray = field(init=False)

    def __post_init__(self):
        m = self.metric
        grid = m.grid
        n, h = grid.dim, grid.spacing
        self.potential = np.asarray(self.potential, dtype=float)
        if self.potential.shape != (grid.n_cells,):
            raise DomainError("grid mismatch: potential has wrong length")
        w = m.weights
        c = m.faces
        pad = np.zeros(1)
        cfull = np.concatenate([pad, c, pad])  # c_{j-1/2} at index j
        self.diag = (
            -(n - 1) * (cfull[:-1] + cfull[1:]) / (h * h * w) + self.potential
        )
        self.off = (n - 1) * c / (h * h * np.sqrt(w[:-1] * w[1:]))

    def apply(self, fld):
        """L applied to a field (untransformed action)."""
        m = self.metric
        _require_same_grid(m, fld)
        n, h = m.grid.dim, m.grid.spacing
        u = fld.values
        flux = m.faces * np.diff(u)
        div = np.zeros_like(u)
        div[:-1] += flux
        div[1:] -= flux
        lap = div / (h * h * m.weights)
        return FieldSample(m.grid, (n - 1) * lap + self.potential * u)


def assemble(metric, potential="curvature"):
    """Assemble the stability operator for a metric.

    potential: "curvature" (default, V = R_g), "f" (V = f), or an
    explicit array of node values.
    """
    if isinstance(potential, str):
        if potential == "curvature":
            V = scalar_curvature(metric).values
        elif potential == "f":
            V = metric.f
        else:
            raise ConfigError("unknown potential %r" % (potential,))
    else:
        V = np.asarray(potential, dtype=float)
    return RadialOperator(metric=metric, potential=V)


@dataclass(eq=False)
class SpectralDecomposition:
    """Full radial eigendecomposition, eigenvalues ascending.

    fields[:, i] is the i-th eigenfield, orthonormal under
    <u, v> = omega h sum u v w^{n-1}, sign-fixed so the first node
    value is nonnegative.
    """

    metric: "object"
    eigenvalues: np.ndarray
    fields: np.ndarray
    kernel_tol: float

    @property
    def kernel_indices(self):
        return tuple(np.nonzero(np.abs(self.eigenvalues) <= self.kernel_tol)[0])

    @property
    def up_indices(self):
        """Positive (energy-unstable) eigenvalues."""
        return tuple(np.nonzero(self.eigenvalues > self.kernel_tol)[0])

    @property
    def down_indices(self):
        """Negative (stable) eigenvalues."""
        return tuple(np.nonzero(self.eigenvalues < -self.kernel_tol)[0])

    def classification(self, i):
        lam = self.eigenvalues[i]
        if abs(lam) <= self.kernel_tol:
            return "kernel"
        return "up" if lam > 0 else "down"


def eigendecompose(op, kernel_tol=None):
    """Diagonalize a RadialOperator; returns a SpectralDecomposition."""
    m = op.metric
    grid = m.grid
    if kernel_tol is None:
        kernel_tol = default_kernel_tol(grid)
    evals, vecs = eigh_tridiagonal(op.diag, op.off)
    scale = np.sqrt(m.sphere_area * grid.spacing * m.weights)
    fields = vecs / scale[:, None]
    signs = np.where(fields[0, :] < 0.0, -1.0, 1.0)
    fields = fields * signs[None, :]
    return SpectralDecomposition(
        metric=m, eigenvalues=evals, fields=fields, kernel_tol=float(kernel_tol)
    )


def kernel_dimension(decomp):
    """Number of eigenvalues within kernel_tol of zero."""
    return len(decomp.kernel_indices)


def eigenfield(decomp, i):
    return FieldSample(decomp.metric.grid, decomp.fields[:, i].copy())


def coefficients(decomp, fld):
    """Expansion coefficients <phi_i, u> of a field in the eigenbasis."""
    _require_same_grid(decomp.metric, fld)
    return decomp.fields.T @ (decomp.metric.cell_volumes * fld.values)


def _subspace_indices(decomp, subspace):
    if isinstance(subspace, str):
        if subspace == "kernel":
            return decomp.kernel_indices
        if subspace == "up":
            return decomp.up_indices
        if subspace == "down":
            return decomp.down_indices
        if subspace == "kernel_perp":
            return tuple(
                i
                for i in range(decomp.eigenvalues.size)
                if i not in decomp.kernel_indices
            )
        raise ConfigError("unknown subspace %r" % (subspace,))
    return tuple(int(i) for i in subspace)


def project(decomp, fld, subspace):
    """Orthogonal projection of a field onto a spectral subspace.

    subspace: "kernel", "up", "down", "kernel_perp", or explicit
    eigenvalue indices.
    """
    idx = _subspace_indices(decomp, subspace)
    if not idx:
        return FieldSample(decomp.metric.grid, np.zeros(decomp.metric.grid.n_cells))
    cols = decomp.fields[:, list(idx)]
    coefs = cols.T @ (decomp.metric.cell_volumes * fld.values)
    return FieldSample(decomp.metric.grid, cols @ coefs)
