"""The constrained conformal energy and its variations.

For a conformal factor u > 0 on a background warped metric (metric g,
curvature R, weight f > 0) the energy is

    E_f(u)  = N(u) / D(u)^{(n-2)/n}
    N(u)    = int (c_n |grad u|^2 + R u^2) dV,     c_n = 4(n-1)/(n-2)
    D(u)    = int f u^{2n/(n-2)} dV
    alpha(u)= N(u) / D(u)

E_f is invariant under u -> c u, and alpha scales as c^{-4/(n-2)}.
The first variation is

    DE_f(u) = 2 (-c_n Delta u + R u - alpha(u) f u^{(n+2)/(n-2)})
              / D(u)^{(n-2)/n},

which satisfies <DE_f(u), u> = 0; along the flow
u_t = ((n-2)/4)(alpha f - R_conf) u the energy dissipates at the rate

    dE/dt = -((n-2)/2) int (R_conf - alpha f)^2 dV_conf
            / (int f dV_conf)^{(n-2)/n}  <=  0.

At a normalized critical configuration (unit f-volume, R = alpha f) the
second variation is

    D2E_f[v, w] = 2 int (c_n <grad v, grad w> - (4/(n-2)) R v w) dV
                = -(8/(n-2)) <w, (n-1) Delta v + R v>.

All Dirichlet terms are evaluated through the summation-by-parts
pairing -int u Delta v with the discrete flux-form Laplacian, so the
energy, gradient, dissipation and second variation are mutually
consistent *exactly* at the discrete level: the orthogonality
<DE_f(u), u> = 0, the chain-rule identity for the dissipation, and the
second-variation/stability-operator identity all hold to roundoff, not
merely O(h^2).
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError
from .geometry import (
    FieldSample,
    _laplacian_values,
    _require_same_grid,
    scalar_curvature,
)

__all__ = [
    "cn",
    "volume",
    "f_volume",
    "dirichlet",
    "energy",
    "alpha_of",
    "gradient",
    "grad_l2",
    "dissipation",
    "second_variation",
    "EnergyReport",
    "evaluate",
]

NORMALIZATION_TOL = 1e-6


def cn(n):
    """Conformal Laplacian constant 4(n-1)/(n-2)."""
    return 4.0 * (n - 1) / (n - 2)


def _positive_values(metric, u, what="conformal factor"):
    _require_same_grid(metric, u)
    vals = u.values
    if np.any(vals <= 0.0):
        raise DomainError("%s must be positive" % what)
    return vals


def _vol_exponent(n):
    return 2.0 * n / (n - 2.0)


def volume(metric, u):
    """Conformal volume int u^{2n/(n-2)} dV."""
    vals = _positive_values(metric, u)
    return float(np.sum(metric.cell_volumes * vals ** _vol_exponent(metric.grid.dim)))


def f_volume(metric, u):
    """f-weighted conformal volume int f u^{2n/(n-2)} dV."""
    vals = _positive_values(metric, u)
    n = metric.grid.dim
    return float(np.sum(metric.cell_volumes * metric.f * vals ** _vol_exponent(n)))


def dirichlet(metric, a, b):
    """int <grad a, grad b> dV via the face-difference (SBP) form.

    Equals -<a, Delta b> = -<Delta a, b> exactly for the discrete
    flux-form Laplacian.
    """
    _require_same_grid(metric, a, b)
    h = metric.grid.spacing
    return float(
        metric.sphere_area / h * np.sum(metric.faces * np.diff(a.values) * np.diff(b.values))
    )


def _numerator(metric, vals):
    n = metric.grid.dim
    h = metric.grid.spacing
    R = scalar_curvature(metric).values
    dir_term = metric.sphere_area / h * np.sum(metric.faces * np.diff(vals) ** 2)
    return cn(n) * dir_term + float(np.sum(metric.cell_volumes * R * vals**2))


def _denominator(metric, vals):
    n = metric.grid.dim
    return float(np.sum(metric.cell_volumes * metric.f * vals ** _vol_exponent(n)))


def energy(metric, u):
    """E_f(u)."""
    vals = _positive_values(metric, u)
    n = metric.grid.dim
    return _numerator(metric, vals) / _denominator(metric, vals) ** ((n - 2.0) / n)


def alpha_of(metric, u):
    """Normalization functional alpha(u) = N(u)/D(u)."""
    vals = _positive_values(metric, u)
    return _numerator(metric, vals) / _denominator(metric, vals)


def gradient(metric, u):
    """First variation DE_f(u) as a field."""
    vals = _positive_values(metric, u)
    n = metric.grid.dim
    R = scalar_curvature(metric).values
    den = _denominator(metric, vals)
    alpha = _numerator(metric, vals) / den
    lap = _laplacian_values(metric, vals)
    core = (-cn(n) * lap + R * vals
            - alpha * metric.f * vals ** ((n + 2.0) / (n - 2.0)))
    return FieldSample(metric.grid, 2.0 * core / den ** ((n - 2.0) / n))


def grad_l2(metric, u):
    """Weighted L^2 norm of the gradient field."""
    g = gradient(metric, u).values
    return float(np.sqrt(max(np.sum(metric.cell_volumes * g * g), 0.0)))


def dissipation(metric, u):
    """dE/dt along the flow, -((n-2)/2) int (R_conf - alpha f)^2 dV_conf
    / (f-volume)^{(n-2)/n}.  Always <= 0, and zero exactly when the
    gradient vanishes."""
    vals = _positive_values(metric, u)
    n = metric.grid.dim
    R = scalar_curvature(metric).values
    lap = _laplacian_values(metric, vals)
    pv = _vol_exponent(n)
    den = _denominator(metric, vals)
    alpha = _numerator(metric, vals) / den
    # R_conf = u^{-(n+2)/(n-2)} (-c_n Delta u + R u)
    R_conf = (-cn(n) * lap + R * vals) * vals ** (-(n + 2.0) / (n - 2.0))
    mism = (R_conf - alpha * metric.f) ** 2 * vals**pv
    return float(
        -((n - 2.0) / 2.0) * np.sum(metric.cell_volumes * mism) / den ** ((n - 2.0) / n)
    )


def second_variation(metric, v, w):
    """D^2 E_f at a normalized critical configuration, paired with (v, w).

    Requires the background to satisfy the normalization
    int f dV = 1 and R = alpha f (both within 1e-6); alpha is then
    int R dV.
    """
    _require_same_grid(metric, v, w)
    n = metric.grid.dim
    R = scalar_curvature(metric).values
    fvol = float(np.sum(metric.cell_volumes * metric.f))
    alpha = float(np.sum(metric.cell_volumes * R))
    if abs(fvol - 1.0) > NORMALIZATION_TOL or np.max(
        np.abs(R - alpha * metric.f)
    ) > NORMALIZATION_TOL:
        raise DomainError("second variation requires normalized critical metric")
    mixed = float(np.sum(metric.cell_volumes * R * v.values * w.values))
    return 2.0 * (cn(n) * dirichlet(metric, v, w) - (4.0 / (n - 2.0)) * mixed)


@dataclass
class EnergyReport:
    """Snapshot of the variational quantities at one configuration."""

    t: float
    energy: float
    alpha: float
    grad_l2: float
    dissipation: float
    f_volume: float

    def as_dict(self):
        return {
            "t": self.t,
            "energy": self.energy,
            "alpha": self.alpha,
            "grad_l2": self.grad_l2,
            "dissipation": self.dissipation,
            "f_volume": self.f_volume,
        }


def evaluate(metric, u, t=0.0):
    """Bundle energy, alpha, gradient norm, dissipation and f-volume."""
    return EnergyReport(
        t=float(t),
        energy=energy(metric, u),
        alpha=alpha_of(metric, u),
        grad_l2=grad_l2(metric, u),
        dissipation=dissipation(metric, u),
        f_volume=f_volume(metric, u),
    )
