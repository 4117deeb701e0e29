"""Config-driven flow experiments with deterministic on-disk artifacts.

A run is described by a TOML file with sections

    [grid]        dim, n_cells
    [metric]      family ("round", "eps:<float>", "custom:<path>")
    [f]           spec ("one", "critical", or a positive number)
    [u0]          kind ("one", "eigen", "kernel", "random"), amplitude,
                  l (eigen), seed (random), volume_match (default true)
    [integrator]  horizon, scheme, dt, cadence, stop_tol, renormalize
    [output]      dir

and produces three artifacts in the output directory: trace.csv (the
diagnostic trace, one header row plus one row per sample), record.json
(a RunRecord echoing the config, so the run can be reproduced from the
record alone), and fits.json (decay-model fits of the distance and
gradient series plus the gradient-energy exponent).  All floats are
written with 17 significant digits and everything is deterministic
given the config; the only randomness (u0 kind "random") draws from a
generator seeded by the config.

Files are written atomically (temp file, then rename), and nothing is
written until the config has parsed and validated.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass

import numpy as np

try:
    import tomllib as _toml
except ImportError:  # pragma: no cover - python < 3.11
    import tomli as _toml

from . import __version__
from .exceptions import ConfigError, DomainError
from .flow import FlowControls, run as flow_run
from .geometry import l2_norm, make_grid, sample_metric
from .rates import classify_rate, lojasiewicz_estimate
from .reduction import warped_kernel_solve
from .spectral import assemble, eigendecompose, eigenfield

__all__ = [
    "RunRecord",
    "load_config",
    "build_initial_data",
    "run_from_config",
    "write_trace_csv",
    "dumps_17g",
]

_SECTIONS = {
    "grid": {"dim", "n_cells"},
    "metric": {"family"},
    "f": {"spec"},
    "u0": {"kind", "amplitude", "l", "seed", "volume_match"},
    "integrator": {"horizon", "scheme", "dt", "cadence", "stop_tol",
                   "renormalize"},
    "output": {"dir"},
}


@dataclass(eq=False)
class RunRecord:
    """Self-contained description of a completed run."""

    config: dict
    trace_path: str
    termination: str
    n_steps: int
    fits: dict
    theta: object
    theta_log_residual: object
    version: str
    wall_time: float

    @property
    def ok(self):
        return self.termination != "positivity_lost"

    def as_dict(self):
        return {
            "config": self.config,
            "trace_path": self.trace_path,
            "termination": self.termination,
            "n_steps": self.n_steps,
            "fits": self.fits,
            "theta": self.theta,
            "theta_log_residual": self.theta_log_residual,
            "version": self.version,
            "wall_time": self.wall_time,
        }


# ---------------------------------------------------------------------------
# config handling


def load_config(path):
    """Parse a TOML config file into a plain dict."""
    try:
        with open(path, "rb") as fh:
            return _toml.load(fh)
    except OSError as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc)) from exc
    except _toml.TOMLDecodeError as exc:
        raise ConfigError("malformed config %s: %s" % (path, exc)) from exc


def _check_sections(cfg):
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a table of sections")
    for section, table in cfg.items():
        if section not in _SECTIONS:
            raise ConfigError("unknown config section [%s]" % section)
        if not isinstance(table, dict):
            raise ConfigError("[%s] must be a table" % section)
        stray = set(table) - _SECTIONS[section]
        if stray:
            raise ConfigError("unknown key %r in [%s]"
                              % (sorted(stray)[0], section))


def _get(cfg, section, key, default=None, required=False):
    table = cfg.get(section, {})
    if key not in table:
        if required:
            raise ConfigError("missing required key %r in [%s]"
                              % (key, section))
        return default
    return table[key]


def build_initial_data(metric, u0_cfg):
    """Initial conformal factor from a [u0] table.

    kinds: "one" (the background itself), "eigen" (1 + amplitude times
    the zonal stability eigenfield selected by l), "kernel" (1 +
    amplitude times the approximate radial kernel mode), "random" (1 +
    amplitude times a seeded unit-norm random field).  With
    volume_match (the default) the result is rescaled so its conformal
    volume matches the background volume.
    """
    kind = u0_cfg.get("kind", "one")
    amp = u0_cfg.get("amplitude", 0.0)
    try:
        amp = float(amp)
    except (TypeError, ValueError) as exc:
        raise ConfigError("u0 amplitude must be a number") from exc
    grid = metric.grid
    n = grid.dim
    if kind == "one":
        vals = np.ones(grid.n_cells)
    elif kind == "eigen":
        l = u0_cfg.get("l")
        if l is None or int(l) != l or int(l) < 0:
            raise ConfigError("u0 kind 'eigen' needs a nonnegative integer 'l'")
        l = int(l)
        target = (n - 1.0) * (n - l * (l + n - 1.0))
        dec = eigendecompose(assemble(metric))
        idx = int(np.argmin(np.abs(dec.eigenvalues - target)))
        vals = 1.0 + amp * eigenfield(dec, idx).values
    elif kind == "kernel":
        mode = warped_kernel_solve(metric)
        vals = 1.0 + amp * mode.psi.values
    elif kind == "random":
        seed = u0_cfg.get("seed", 0)
        if int(seed) != seed:
            raise ConfigError("u0 seed must be an integer")
        rng = np.random.default_rng(int(seed))
        noise = rng.standard_normal(grid.n_cells)
        noise /= l2_norm(metric, metric.field(noise))
        vals = 1.0 + amp * noise
    else:
        raise ConfigError("unknown u0 kind %r" % (kind,))
    if u0_cfg.get("volume_match", True):
        pvol = 2.0 * n / (n - 2.0)
        target = float(np.sum(metric.cell_volumes))
        have = float(np.sum(metric.cell_volumes * vals ** pvol))
        if not have > 0.0:
            raise DomainError("conformal factor must be positive")
        vals = vals * (target / have) ** (1.0 / pvol)
    return metric.field(vals)


def _controls_from_config(cfg):
    horizon = _get(cfg, "integrator", "horizon", required=True)
    dt = _get(cfg, "integrator", "dt", "h2")
    return FlowControls(
        horizon=float(horizon),
        dt=dt,
        scheme=_get(cfg, "integrator", "scheme", "imex"),
        cadence=int(_get(cfg, "integrator", "cadence", 1)),
        stop_tol=float(_get(cfg, "integrator", "stop_tol", 1e-10)),
        renormalize=_get(cfg, "integrator", "renormalize", "none"),
    )


# ---------------------------------------------------------------------------
# serialization


def _fmt(x):
    if isinstance(x, float):
        if not math.isfinite(x):
            return "null"
        return "%.17g" % x
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return "%d" % int(x)
    if x is None:
        return "null"
    raise TypeError("unserializable value %r" % (x,))


def dumps_17g(obj, indent=0):
    """JSON text with floats at 17 significant digits.

    The stock json module serializes floats with shortest round-trip
    repr; the artifact format pins 17 significant digits instead, so
    this small emitter handles the (dict / list / scalar) payloads the
    runner produces.  Non-finite floats become null.
    """
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = []
        for k, v in obj.items():
            items.append('%s  "%s": %s' % (pad, k, dumps_17g(v, indent + 1)))
        return "{\n" + ",\n".join(items) + "\n%s}" % pad
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        items = ["%s  %s" % (pad, dumps_17g(v, indent + 1)) for v in seq]
        return "[\n" + ",\n".join(items) + "\n%s]" % pad
    if isinstance(obj, str):
        return '"%s"' % obj.replace("\\", "\\\\").replace('"', '\\"')
    if isinstance(obj, (np.floating,)):
        return _fmt(float(obj))
    return _fmt(obj)


def _atomic_write(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_trace_csv(trace, path):
    """Trace as CSV: fixed header order, floats at 17 significant digits."""
    lines = [",".join(trace.columns)]
    for row in trace.data:
        lines.append(",".join("%.17g" % v for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def _fit_summaries(trace):
    t = trace.series("t")
    fits = {}
    for name in ("dist_l2", "dist_sup", "grad_l2"):
        try:
            tag, fit = classify_rate((t, trace.series(name)))
        except DomainError as exc:
            fits[name] = {"error": str(exc)}
            continue
        fits[name] = {
            "tag": tag,
            "model": fit.model,
            "rate": fit.rate,
            "amplitude": fit.amplitude,
            "log_residual": fit.log_residual,
            "window": list(fit.window),
        }
    return fits


def _theta_summary(trace):
    E = trace.series("E")
    try:
        theta, resid = lojasiewicz_estimate(E, trace.series("grad_l2"),
                                            float(E[-1]))
        return float(theta), float(resid), None
    except DomainError as exc:
        return None, None, str(exc)


# ---------------------------------------------------------------------------
# orchestration


def run_from_config(config, outdir=None):
    """Run a flow experiment from a config path or dict.

    Returns (RunRecord, FlowTrace).  Artifacts are written when the
    config's [output] dir (or the outdir override) is set; a run that
    loses positivity still writes its partial trace, with termination
    "positivity_lost" echoed in the record.
    """
    t_wall = time.perf_counter()
    if isinstance(config, (str, os.PathLike)):
        cfg = load_config(config)
    else:
        cfg = config
    _check_sections(cfg)

    dim = _get(cfg, "grid", "dim", required=True)
    n_cells = _get(cfg, "grid", "n_cells", required=True)
    if int(dim) != dim or int(n_cells) != n_cells:
        raise ConfigError("grid dim and n_cells must be integers")
    grid = make_grid(int(dim), int(n_cells))
    family = _get(cfg, "metric", "family", "round")
    f_spec = _get(cfg, "f", "spec", "one")
    metric = sample_metric(grid, family, f_spec=f_spec)
    u0 = build_initial_data(metric, cfg.get("u0", {}))
    controls = _controls_from_config(cfg)
    if outdir is None:
        outdir = _get(cfg, "output", "dir")

    trace = flow_run(metric, u0, controls)
    fits = _fit_summaries(trace)
    theta, theta_resid, theta_err = _theta_summary(trace)
    if theta_err is not None:
        fits["lojasiewicz_error"] = {"error": theta_err}

    trace_path = None
    if outdir is not None:
        os.makedirs(outdir, exist_ok=True)
        trace_path = os.path.join(outdir, "trace.csv")
        write_trace_csv(trace, trace_path)
    record = RunRecord(
        config=cfg,
        trace_path=trace_path,
        termination=trace.termination,
        n_steps=trace.n_steps,
        fits=fits,
        theta=theta,
        theta_log_residual=theta_resid,
        version=__version__,
        wall_time=time.perf_counter() - t_wall,
    )
    if outdir is not None:
        _atomic_write(os.path.join(outdir, "record.json"),
                      dumps_17g(record.as_dict()) + "\n")
        _atomic_write(os.path.join(outdir, "fits.json"),
                      dumps_17g({"fits": fits, "theta": theta,
                                 "theta_log_residual": theta_resid}) + "\n")
    return record, trace
