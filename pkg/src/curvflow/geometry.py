"""Radial grids, warped-product metric families, curvature, and quadrature.

A rotationally symmetric metric on the n-sphere is written in
warped-product form

    g = dr^2 + w(r)^2 g_{S^{n-1}},        r in (0, pi),

with a warping function w that is positive in the interior and closes
smoothly at both poles (w(0) = w(pi) = 0, |w'| = 1 there).  For radial
fields u(r) the basic geometric quantities are

    R_g       = -2(n-1) w''/w + (n-1)(n-2)(1 - (w')^2) / w^2
    Delta_g u = u'' + (n-1)(w'/w) u'   =   (w^{1-n}) (w^{n-1} u')'
    dV        = omega_{n-1} w^{n-1} dr

where omega_{n-1} = 2 pi^{n/2} / Gamma(n/2) is the area of the unit
(n-1)-sphere.  The round metric is w = sin r, with R = n(n-1).

Discretization.  Fields are sampled at cell centers r_j = (j + 1/2) h,
h = pi / n_cells, so the degenerate pole values are never evaluated.
Integration is the midpoint rule in these weights, and the Laplacian is
the conservative flux form

    (Delta u)_j = [c_{j+1/2} (u_{j+1} - u_j) - c_{j-1/2} (u_j - u_{j-1})]
                  / (h^2 w_j^{n-1}),
    c_{j+1/2}   = (w_j w_{j+1})^{(n-1)/2},

with zero flux across both poles (the even-extension Neumann condition
for smooth radial fields).  This form is *exactly* self-adjoint and
negative semi-definite under the midpoint inner product
sum_j u_j v_j w_j^{n-1} h, annihilates constants exactly, and is
second-order accurate; for n = 3 the geometric-mean flux coefficients
additionally reproduce cos r as an exact discrete eigenfunction on the
round sphere.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DomainError

__all__ = [
    "RadialGrid",
    "FieldSample",
    "WarpedMetric",
    "make_grid",
    "sample_metric",
    "metric_from_samples",
    "load_metric_csv",
    "scalar_curvature",
    "laplacian",
    "integrate",
    "inner",
    "l2_norm",
    "sup_norm",
    "conformal_scalar_curvature",
    "sphere_area",
]

MIN_CELLS = 16


def sphere_area(n):
    """Area of the unit (n-1)-sphere, omega_{n-1} = 2 pi^{n/2} / Gamma(n/2)."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Uniform cell-centered grid on (0, pi): nodes r_j = (j + 1/2) h."""

    dim: int
    n_cells: int
    spacing: float
    nodes: np.ndarray

    def same(self, other):
        return self.dim == other.dim and self.n_cells == other.n_cells


def make_grid(dim, n_cells):
    dim = int(dim)
    n_cells = int(n_cells)
    if dim < 3:
        raise DomainError("dimension below 3 unsupported")
    if n_cells < MIN_CELLS:
        raise DomainError(
            f"grid too coarse: need at least {MIN_CELLS} cells, got {n_cells}"
        )
    h = math.pi / n_cells
    nodes = (np.arange(n_cells) + 0.5) * h
    return RadialGrid(dim=dim, n_cells=n_cells, spacing=h, nodes=nodes)


@dataclass(eq=False)
class FieldSample:
    """A radial field sampled at the grid nodes."""

    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_cells,):
            raise DomainError(
                "grid mismatch: field has %d values for a %d-cell grid"
                % (self.values.size, self.grid.n_cells)
            )
        if not np.all(np.isfinite(self.values)):
            raise DomainError("field contains non-finite values")


def _require_same_grid(*objs):
    g0 = objs[0].grid
    for o in objs[1:]:
        if not g0.same(o.grid):
            raise DomainError("grid mismatch: objects live on different grids")
    return g0


@dataclass(eq=False)
class WarpedMetric:
    """Warped-product metric sampled at the grid nodes.

    Stores w, w', w'' together with the deficit 1 - (w')^2 in a
    cancellation-free form supplied by the metric family (for the round
    sphere the deficit array *is* the w^2 array, so the curvature
    formula evaluates to n(n-1) bit-exactly), the conformal weight
    function f > 0, and the quadrature/flux coefficients used by the
    discrete operators.
    """

    grid: RadialGrid
    family: str
    w: np.ndarray
    wp: np.ndarray
    wpp: np.ndarray
    f: np.ndarray
    wp_deficit: np.ndarray
    weights: np.ndarray = field(init=False)      # w^{n-1} at nodes
    faces: np.ndarray = field(init=False)        # (w_j w_{j+1})^{(n-1)/2}
    sphere_area: float = field(init=False)

    def __post_init__(self):
        n = self.grid.dim
        for name in ("w", "wp", "wpp", "f", "wp_deficit"):
            arr = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, arr)
            if arr.shape != (self.grid.n_cells,):
                raise DomainError("grid mismatch: %s has wrong length" % name)
            if not np.all(np.isfinite(arr)):
                raise DomainError("metric sample %s contains non-finite values" % name)
        if np.any(self.w <= 0.0):
            raise DomainError("warping function must be positive at interior nodes")
        if np.any(self.f <= 0.0):
            raise DomainError("f must be positive")
        self.weights = self.w ** (n - 1)
        self.faces = (self.w[:-1] * self.w[1:]) ** ((n - 1) / 2.0)
        self.sphere_area = sphere_area(n)

    @property
    def cell_volumes(self):
        """Midpoint quadrature weights omega_{n-1} w^{n-1} h."""
        return self.sphere_area * self.weights * self.grid.spacing

    def field(self, values):
        return FieldSample(self.grid, values)


def _eps_samples(grid, eps):
    """w = sin r + eps sin^3 r and derivatives, with the deficit
    1 - (w')^2 expanded in product form to avoid pole cancellation:

        w'          = cos r (1 + 3 eps sin^2 r)
        1 - (w')^2  = sin^2 r (1 - 6 eps cos^2 r - 9 eps^2 sin^2 r cos^2 r)
        w''         = -sin r + 3 eps (2 sin r cos^2 r - sin^3 r)
    """
    r = grid.nodes
    s, c = np.sin(r), np.cos(r)
    w = s + eps * s**3
    wp = c * (1.0 + 3.0 * eps * s**2)
    wpp = -s + 3.0 * eps * (2.0 * s * c**2 - s**3)
    deficit = s**2 * (1.0 - 6.0 * eps * c**2 - 9.0 * eps**2 * s**2 * c**2)
    return w, wp, wpp, deficit


def _resolve_f(grid, f_spec, w, wp, wpp, deficit):
    """Turn an f specification into positive node samples."""
    n = grid.dim
    if f_spec is None:
        f_spec = "one"
    if isinstance(f_spec, str):
        if f_spec == "one":
            return np.ones(grid.n_cells)
        if f_spec == "critical":
            # f = R / integral(R dV): the metric is then a normalized
            # critical configuration (R = alpha f with unit f-volume).
            R = _curvature_values(n, w, wp, wpp, deficit)
            if np.any(R <= 0.0):
                raise DomainError(
                    "f must be positive: critical f requires positive curvature"
                )
            total = sphere_area(n) * grid.spacing * np.sum(R * w ** (n - 1))
            return R / total
        raise ConfigError("unknown f specification %r" % (f_spec,))
    if callable(f_spec):
        vals = np.asarray(f_spec(grid.nodes), dtype=float)
    elif np.isscalar(f_spec):
        vals = np.full(grid.n_cells, float(f_spec))
    else:
        vals = np.asarray(f_spec, dtype=float)
    if vals.shape != (grid.n_cells,):
        raise DomainError("grid mismatch: f samples have wrong length")
    if not np.all(np.isfinite(vals)) or np.any(vals <= 0.0):
        raise DomainError("f must be positive")
    return vals


def sample_metric(grid, family="round", f_spec="one"):
    """Sample a metric family on a grid.

    family is a string tag: "round", "eps:<float>" for the perturbed
    warping sin r + eps sin^3 r (requires |eps| < 1/2 so w' stays
    nonzero where needed for positivity of w), or "custom:<path>" for a
    CSV file with columns r, w, wp, wpp matching the grid nodes.
    """
    if family == "round":
        r = grid.nodes
        w = np.sin(r)
        deficit = w * w  # identical array to w^2: round R is then exact
        return WarpedMetric(
            grid=grid, family="round", w=w, wp=np.cos(r), wpp=-w,
            f=_resolve_f(grid, f_spec, w, np.cos(r), -w, deficit),
            wp_deficit=deficit,
        )
    if family.startswith("eps:"):
        try:
            eps = float(family.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError("bad eps tag %r" % family) from exc
        if abs(eps) >= 0.5:
            raise DomainError(
                "perturbation too large: need |eps| < 1/2, got %g" % eps
            )
        w, wp, wpp, deficit = _eps_samples(grid, eps)
        return WarpedMetric(
            grid=grid, family=family, w=w, wp=wp, wpp=wpp,
            f=_resolve_f(grid, f_spec, w, wp, wpp, deficit),
            wp_deficit=deficit,
        )
    if family.startswith("custom:"):
        return load_metric_csv(grid, family.split(":", 1)[1], f_spec=f_spec)
    raise ConfigError("unknown metric family %r" % (family,))


def metric_from_samples(grid, w, wp, wpp, f_spec="one", family="custom",
                        wp_deficit=None):
    """Build a metric from raw node samples (trusted, e.g. file input).

    Without an explicit cancellation-free wp_deficit the deficit is the
    naive 1 - wp^2, which loses accuracy near the poles; curvature
    quality is then limited by the supplied samples.
    """
    w = np.asarray(w, dtype=float)
    wp = np.asarray(wp, dtype=float)
    wpp = np.asarray(wpp, dtype=float)
    if wp_deficit is None:
        wp_deficit = 1.0 - wp * wp
    return WarpedMetric(
        grid=grid, family=family, w=w, wp=wp, wpp=wpp,
        f=_resolve_f(grid, f_spec, w, wp, wpp, wp_deficit),
        wp_deficit=wp_deficit,
    )


def load_metric_csv(grid, path, f_spec="one"):
    """Load a custom metric from a CSV file with columns r, w, wp, wpp."""
    try:
        data = np.genfromtxt(path, delimiter=",", names=True)
    except OSError as exc:
        raise ConfigError("cannot read metric file %s: %s" % (path, exc)) from exc
    for col in ("r", "w", "wp", "wpp"):
        if data.dtype.names is None or col not in data.dtype.names:
            raise ConfigError("metric file %s lacks column %r" % (path, col))
    r = np.atleast_1d(data["r"])
    if r.size != grid.n_cells or not np.allclose(r, grid.nodes, atol=1e-10):
        raise ConfigError(
            "grid mismatch: metric file %s does not sample the grid nodes" % path
        )
    return metric_from_samples(
        grid, np.atleast_1d(data["w"]), np.atleast_1d(data["wp"]),
        np.atleast_1d(data["wpp"]), f_spec=f_spec,
        family="custom:%s" % path,
    )


def _curvature_values(n, w, wp, wpp, deficit):
    return -2.0 * (n - 1) * (wpp / w) + (n - 1) * (n - 2) * (deficit / (w * w))


def scalar_curvature(metric):
    """R = -2(n-1) w''/w + (n-1)(n-2)(1 - (w')^2)/w^2 at the nodes."""
    n = metric.grid.dim
    vals = _curvature_values(n, metric.w, metric.wp, metric.wpp, metric.wp_deficit)
    return FieldSample(metric.grid, vals)


def _laplacian_values(metric, u):
    h = metric.grid.spacing
    flux = metric.faces * np.diff(u)
    div = np.zeros_like(u)
    div[:-1] += flux
    div[1:] -= flux
    return div / (h * h * metric.weights)


def laplacian(metric, fld):
    """Discrete Laplace-Beltrami operator on a radial field (flux form)."""
    _require_same_grid(metric, fld)
    return FieldSample(metric.grid, _laplacian_values(metric, fld.values))


def integrate(metric, fld):
    """Midpoint-rule integral against dV: omega_{n-1} h sum field_j w_j^{n-1}."""
    _require_same_grid(metric, fld)
    return float(
        metric.sphere_area * metric.grid.spacing * np.sum(fld.values * metric.weights)
    )


def inner(metric, a, b):
    """Weighted L^2(dV) inner product of two fields."""
    _require_same_grid(metric, a, b)
    return float(
        metric.sphere_area
        * metric.grid.spacing
        * np.sum(a.values * b.values * metric.weights)
    )


def l2_norm(metric, a):
    return math.sqrt(max(inner(metric, a, a), 0.0))


def sup_norm(a):
    return float(np.max(np.abs(a.values)))


def conformal_scalar_curvature(metric, u):
    """Scalar curvature of u^{4/(n-2)} g, from the conformal identity

        R_conf = u^{-(n+2)/(n-2)} (-c_n Delta u + R u),
        c_n    = 4(n-1)/(n-2),

    evaluated with the discrete Laplacian (so that energy, gradient and
    dissipation agree with it exactly at the discrete level).
    """
    _require_same_grid(metric, u)
    if np.any(u.values <= 0.0):
        raise DomainError("conformal factor must be positive")
    n = metric.grid.dim
    cn = 4.0 * (n - 1) / (n - 2)
    R = _curvature_values(n, metric.w, metric.wp, metric.wpp, metric.wp_deficit)
    lap = _laplacian_values(metric, u.values)
    vals = (-cn * lap + R * u.values) * u.values ** (-(n + 2.0) / (n - 2.0))
    return FieldSample(metric.grid, vals)
