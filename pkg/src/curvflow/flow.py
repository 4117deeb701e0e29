"""Volume-normalized curvature flow in conformal gauge.

With a fixed background metric (curvature R, weight f > 0) the flow
evolves the conformal factor u > 0 by

    u_t = ((n-2)/4) (alpha(u) f - R_conf(u)) u,

where R_conf is the scalar curvature of u^{4/(n-2)} g and alpha(u) is
the normalization functional.  Because alpha is chosen so that
int (alpha f - R_conf) dV_conf = 0 holds exactly for the discrete
quantities, the semi-discrete flow conserves the conformal volume
exactly and dissipates the energy monotonically; the only drift comes
from the time discretization.

Two steppers:

- "imex" (default): the stiff conformal-Laplacian part is taken
  implicitly with coefficients frozen at the step start,

      u_t = (n-1) a(u) Delta u + N(u),     a(u) = u^{-4/(n-2)},
      (I - dt (n-1) diag(a(u_k)) Delta_h) u_{k+1} = u_k + dt N(u_k),

  one tridiagonal solve per step, first order in time, robust at
  dt = O(h^2) and far beyond;
- "rk4": classic explicit four-stage stepping, fourth order, subject
  to the parabolic restriction.  The advisory bound

      dt_max = 0.2 h^2 min(u)^{4/(n-2)} / (4(n-1))

  is exposed as rk4_dt_bound and never silently enforced: exceeding it
  eventually surfaces as a positivity error.
"""

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.linalg import solve_banded

from .exceptions import ConfigError, DomainError
from .geometry import FieldSample, _laplacian_values, _require_same_grid, scalar_curvature
from .energy import cn, _numerator, _denominator, _vol_exponent, evaluate

__all__ = [
    "FlowState",
    "FlowControls",
    "FlowTrace",
    "velocity",
    "rk4_dt_bound",
    "step",
    "run",
    "resolve_dt",
]

TRACE_COLUMNS = (
    "t", "volume", "f_volume", "E", "alpha", "grad_l2", "dist_sup", "dist_l2",
)


@dataclass(eq=False)
class FlowState:
    metric: "object"
    u: FieldSample
    t: float = 0.0

    def __post_init__(self):
        _require_same_grid(self.metric, self.u)
        if np.any(self.u.values <= 0.0):
            raise DomainError("conformal factor must be positive")


def _positivity(vals):
    if np.any(vals <= 0.0) or not np.all(np.isfinite(vals)):
        raise DomainError("positivity lost: reduce dt")


def _velocity_values(metric, uvals):
    _positivity(uvals)
    n = metric.grid.dim
    R = scalar_curvature(metric).values
    lap = _laplacian_values(metric, uvals)
    alpha = _numerator(metric, uvals) / _denominator(metric, uvals)
    R_conf = (-cn(n) * lap + R * uvals) * uvals ** (-(n + 2.0) / (n - 2.0))
    return (n - 2.0) / 4.0 * (alpha * metric.f - R_conf) * uvals


def velocity(state):
    """Right-hand side of the flow at a state."""
    return FieldSample(
        state.metric.grid, _velocity_values(state.metric, state.u.values)
    )


def _rk4_bound(metric, uvals):
    n = metric.grid.dim
    h = metric.grid.spacing
    return 0.2 * h * h * float(np.min(uvals)) ** (4.0 / (n - 2)) / (4.0 * (n - 1))


def rk4_dt_bound(state):
    """Explicit-stability bound 0.2 h^2 min(u)^{4/(n-2)}/(4(n-1)).

    The rk4 stepper refuses dt above this bound rather than silently
    clamping: positivity is only guaranteed below it, and a hard error
    keeps runs deterministic.
    """
    return _rk4_bound(state.metric, state.u.values)


def _step_rk4(metric, uvals, dt):
    bound = _rk4_bound(metric, uvals)
    if dt > bound * (1.0 + 1e-12):
        raise DomainError(
            "rk4 dt %.6g exceeds stability bound %.6g: reduce dt" % (dt, bound)
        )
    k1 = _velocity_values(metric, uvals)
    k2 = _velocity_values(metric, uvals + 0.5 * dt * k1)
    k3 = _velocity_values(metric, uvals + 0.5 * dt * k2)
    k4 = _velocity_values(metric, uvals + dt * k3)
    out = uvals + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    _positivity(out)
    return out


def _step_imex(metric, uvals, dt):
    _positivity(uvals)
    n = metric.grid.dim
    h = metric.grid.spacing
    R = scalar_curvature(metric).values
    a0 = uvals ** (-4.0 / (n - 2))
    alpha = _numerator(metric, uvals) / _denominator(metric, uvals)
    nonstiff = (n - 2.0) / 4.0 * (alpha * metric.f - a0 * R) * uvals
    rhs = uvals + dt * nonstiff

    # banded (I - dt (n-1) diag(a0) Delta_h)
    N = uvals.size
    w = metric.weights
    c = metric.faces
    coef = dt * (n - 1) * a0 / (h * h * w)
    ab = np.zeros((3, N))
    ab[1, :] = 1.0
    ab[1, :-1] += coef[:-1] * c
    ab[1, 1:] += coef[1:] * c
    ab[0, 1:] = -coef[:-1] * c      # superdiagonal A[j, j+1]
    ab[2, :-1] = -coef[1:] * c      # subdiagonal  A[j+1, j]
    try:
        out = solve_banded((1, 1), ab, rhs)
    except Exception as exc:
        raise DomainError("implicit solve failed") from exc
    _positivity(out)
    return out


_STEPPERS = {"rk4": _step_rk4, "imex": _step_imex}


def step(state, dt, scheme="imex"):
    """Advance one time step.

    Raises DomainError when positivity is lost, or (for rk4) when dt
    exceeds the stability bound that guarantees it.
    """
    if scheme not in _STEPPERS:
        raise ConfigError("unknown scheme %r" % (scheme,))
    if not (dt > 0.0) or not math.isfinite(dt):
        raise ConfigError("dt must be a positive finite number")
    out = _STEPPERS[scheme](state.metric, state.u.values, dt)
    return FlowState(state.metric, FieldSample(state.metric.grid, out), state.t + dt)


def resolve_dt(metric, dt_spec):
    """Resolve a dt policy: a float, "h2", or "h2:<mult>" for mult * h^2."""
    h = metric.grid.spacing
    if dt_spec is None:
        dt_spec = "h2"
    if isinstance(dt_spec, str):
        if dt_spec == "h2":
            return h * h
        if dt_spec.startswith("h2:"):
            try:
                return float(dt_spec.split(":", 1)[1]) * h * h
            except ValueError as exc:
                raise ConfigError("bad dt policy %r" % (dt_spec,)) from exc
        raise ConfigError("bad dt policy %r" % (dt_spec,))
    dt = float(dt_spec)
    if not (dt > 0.0) or not math.isfinite(dt):
        raise ConfigError("dt must be a positive finite number")
    return dt


@dataclass(eq=False)
class FlowControls:
    horizon: float
    dt: object = "h2"
    scheme: str = "imex"
    cadence: int = 1
    stop_tol: float = 1e-10
    renormalize: str = "none"
    u_ref: FieldSample = None

    def validate(self):
        if not (self.horizon > 0.0):
            raise ConfigError("horizon must be positive")
        if self.scheme not in _STEPPERS:
            raise ConfigError("unknown scheme %r" % (self.scheme,))
        if int(self.cadence) < 1:
            raise ConfigError("cadence must be a positive integer")
        if self.renormalize not in ("none", "volume", "f_volume"):
            raise ConfigError("unknown renormalize policy %r" % (self.renormalize,))


@dataclass(eq=False)
class FlowTrace:
    """Diagnostics sampled along a run (one row per record point)."""

    columns: tuple
    data: np.ndarray            # shape (n_records, len(columns))
    u_final: FieldSample
    termination: str            # horizon | gradient_tolerance | positivity_lost
    n_steps: int

    @property
    def ok(self):
        return self.termination != "positivity_lost"

    def series(self, name):
        return self.data[:, self.columns.index(name)]


def _record(metric, uvals, t, u_ref_vals):
    u = FieldSample(metric.grid, uvals)
    rep = evaluate(metric, u, t=t)
    diff = uvals - u_ref_vals
    dist_sup = float(np.max(np.abs(diff)))
    dist_l2 = float(np.sqrt(np.sum(metric.cell_volumes * diff * diff)))
    n = metric.grid.dim
    vol = float(np.sum(metric.cell_volumes * uvals ** _vol_exponent(n)))
    return (t, vol, rep.f_volume, rep.energy, rep.alpha, rep.grad_l2,
            dist_sup, dist_l2), rep.grad_l2


def run(metric, u0, controls):
    """Integrate the flow and collect the diagnostic trace.

    Returns a FlowTrace; positivity loss mid-run terminates the run and
    returns the partial trace with termination = "positivity_lost".
    """
    controls.validate()
    dt = resolve_dt(metric, controls.dt)
    _require_same_grid(metric, u0)
    if np.any(u0.values <= 0.0):
        raise DomainError("conformal factor must be positive")
    u_ref = controls.u_ref
    if u_ref is None:
        ref_vals = np.ones(metric.grid.n_cells)
    else:
        _require_same_grid(metric, u_ref)
        ref_vals = u_ref.values
    n = metric.grid.dim
    pvol = _vol_exponent(n)

    if controls.renormalize == "volume":
        target = float(np.sum(metric.cell_volumes * u0.values**pvol))
        weights = metric.cell_volumes
    elif controls.renormalize == "f_volume":
        target = float(np.sum(metric.cell_volumes * metric.f * u0.values**pvol))
        weights = metric.cell_volumes * metric.f
    else:
        target = weights = None

    stepper = _STEPPERS[controls.scheme]
    cadence = int(controls.cadence)
    n_steps = max(1, int(math.ceil(controls.horizon / dt - 1e-12)))

    uvals = u0.values.copy()
    t = 0.0
    rows = []
    row, g = _record(metric, uvals, t, ref_vals)
    rows.append(row)
    termination = "horizon"
    k = 0
    if g <= controls.stop_tol:
        termination = "gradient_tolerance"
    else:
        while k < n_steps:
            try:
                uvals = stepper(metric, uvals, dt)
            except DomainError as exc:
                if "reduce dt" not in str(exc):
                    raise
                termination = "positivity_lost"
                break
            k += 1
            t = k * dt
            if weights is not None:
                now = float(np.sum(weights * uvals**pvol))
                uvals = uvals * (target / now) ** (1.0 / pvol)
            if k % cadence == 0 or k == n_steps:
                row, g = _record(metric, uvals, t, ref_vals)
                rows.append(row)
                if g <= controls.stop_tol:
                    termination = "gradient_tolerance"
                    break

    return FlowTrace(
        columns=TRACE_COLUMNS,
        data=np.array(rows, dtype=float),
        u_final=FieldSample(metric.grid, uvals),
        termination=termination,
        n_steps=k,
    )
