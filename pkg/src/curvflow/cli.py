"""Command-line front end.

Subcommands:

    flow run      integrate a configured flow, writing trace/record/fits
    spectrum      eigenvalues of the stability operator as CSV
    cubic         radial cubic moment and prefactored cubic coefficient
    ansatz        slow-mode ansatz magnitude trajectory as CSV
    as3           cubic-obstruction report for an eps-family metric (JSON)
    fit           decay-model fit of a trace column (JSON)
    lojasiewicz   gradient-energy exponent from a trace (JSON)
    sweep         run several configs concurrently

Exit codes: 0 success, 1 domain error (including a run that loses
positivity after writing its partial artifacts), 2 config error or
unusable arguments.  All numeric output is deterministic for a given
config; floats print with 17 significant digits.
"""

from __future__ import annotations

import argparse
import math
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .exceptions import ConfigError, DomainError
from .geometry import make_grid, sample_metric
from .rates import classify_rate, fit_exponential, fit_polynomial, \
    lojasiewicz_estimate
from .reduction import AnsatzSpec, ansatz_coefficient, as3_check, \
    cubic_radial_integral, cubic_term, warped_kernel_solve
from .runner import dumps_17g, run_from_config
from .spectral import assemble, eigendecompose

_MEASURES = {"geometric": "geometric", "paper": "paper_radial"}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="curvflow",
        description="numerical laboratory for a conformal curvature flow "
                    "on warped-product metrics")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_flow = sub.add_parser("flow", help="flow integration commands")
    flow_sub = p_flow.add_subparsers(dest="flow_command", required=True)
    p_run = flow_sub.add_parser("run", help="run a configured experiment")
    p_run.add_argument("--config", required=True, help="TOML config path")
    p_run.add_argument("--out", help="override the [output] dir")

    p_spec = sub.add_parser("spectrum",
                            help="stability-operator spectrum as CSV")
    p_spec.add_argument("--dim", type=int, default=3)
    p_spec.add_argument("--cells", type=int, default=128)
    p_spec.add_argument("--metric", default="round")
    p_spec.add_argument("--f", default="one", dest="f_spec")
    p_spec.add_argument("--out", help="output path (default stdout)")

    p_cub = sub.add_parser("cubic",
                           help="cubic moment of the kernel direction")
    p_cub.add_argument("--n", type=int, required=True, help="dimension")
    p_cub.add_argument("--measure", choices=sorted(_MEASURES), required=True)
    p_cub.add_argument("--eps", type=float, default=0.0)
    p_cub.add_argument("--cells", type=int,
                       help="cells (default 2048, or 256 with eps != 0)")

    p_ans = sub.add_parser("ansatz", help="slow-mode magnitude trajectory")
    p_ans.add_argument("--p", type=int, required=True)
    p_ans.add_argument("--Fp", type=float, required=True)
    p_ans.add_argument("--T", type=float, required=True)
    p_ans.add_argument("--emit", choices=["csv"], required=True)
    p_ans.add_argument("--dim", type=int, default=3)
    p_ans.add_argument("--horizon", type=float, default=100.0)
    p_ans.add_argument("--samples", type=int, default=101)
    p_ans.add_argument("--out", help="output path (default stdout)")

    p_as3 = sub.add_parser("as3", help="cubic-obstruction report (JSON)")
    p_as3.add_argument("--eps", type=float, required=True)
    p_as3.add_argument("--cells", type=int, default=256)
    p_as3.add_argument("--threshold", type=float, default=1e-6)
    p_as3.add_argument("--out", help="output path (default stdout)")

    p_fit = sub.add_parser("fit", help="fit a decay model to a trace column")
    p_fit.add_argument("--csv", required=True, help="trace CSV path")
    p_fit.add_argument("--column", default="dist_l2")
    p_fit.add_argument("--model", choices=["auto", "exponential", "polynomial"],
                       default="auto")
    p_fit.add_argument("--tstart", type=float)
    p_fit.add_argument("--tend", type=float)
    p_fit.add_argument("--out", help="output path (default stdout)")

    p_loj = sub.add_parser("lojasiewicz",
                           help="gradient-energy exponent from a trace")
    p_loj.add_argument("--csv", required=True, help="trace CSV path")
    p_loj.add_argument("--einf", type=float,
                       help="limit energy (default: last trace value)")
    p_loj.add_argument("--out", help="output path (default stdout)")

    p_sweep = sub.add_parser("sweep", help="run several configs concurrently")
    p_sweep.add_argument("--configs", nargs="+", required=True)
    p_sweep.add_argument("--jobs", type=int, default=4)
    return parser


def _emit(text, out):
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    with open(out, "w") as fh:
        fh.write(text)


def _read_trace(path):
    try:
        data = np.genfromtxt(path, delimiter=",", names=True)
    except OSError as exc:
        raise ConfigError("cannot read trace %s: %s" % (path, exc)) from exc
    if data.dtype.names is None:
        raise ConfigError("trace %s has no header row" % path)
    return data


def _column(data, name, path):
    if name not in data.dtype.names:
        raise ConfigError("trace %s has no column %r (has: %s)"
                          % (path, name, ", ".join(data.dtype.names)))
    return np.atleast_1d(data[name]).astype(float)


# ---------------------------------------------------------------------------
# handlers


def _cmd_flow_run(args):
    record, trace = run_from_config(args.config, outdir=args.out)
    where = record.trace_path or "(no output dir configured)"
    if not record.ok:
        sys.stderr.write("positivity lost after %d steps; partial trace: %s\n"
                         % (record.n_steps, where))
        return 1
    sys.stdout.write("termination=%s steps=%d trace=%s\n"
                     % (record.termination, record.n_steps, where))
    return 0


def _cmd_spectrum(args):
    metric = sample_metric(make_grid(args.dim, args.cells), args.metric,
                           f_spec=args.f_spec)
    dec = eigendecompose(assemble(metric))
    lines = ["index,eigenvalue,classification"]
    for i, lam in enumerate(dec.eigenvalues):
        lines.append("%d,%.17g,%s" % (i, lam, dec.classification(i)))
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _cmd_cubic(args):
    eps = args.eps
    cells = args.cells if args.cells is not None else (2048 if eps == 0.0
                                                      else 256)
    family = "round" if eps == 0.0 else "eps:%.17g" % eps
    metric = sample_metric(make_grid(args.n, cells), family)
    if eps == 0.0:
        # cos r is the exact kernel direction of the round metric
        v = metric.field(np.cos(metric.grid.nodes))
    else:
        v = warped_kernel_solve(metric).psi
    moment = cubic_radial_integral(metric, v)
    value = cubic_term(metric, v, _MEASURES[args.measure])
    sys.stdout.write("radial_integral = %.17g\n" % moment)
    sys.stdout.write("F3 = %.17g\n" % value)
    return 0


def _cmd_ansatz(args):
    spec = AnsatzSpec(p=args.p, v_hat=np.array([1.0]), Fp_vhat=args.Fp,
                      T=args.T, dim=args.dim)
    if args.samples < 2:
        raise ConfigError("need at least 2 samples")
    times = np.linspace(0.0, args.horizon, args.samples)
    lines = ["t,magnitude"]
    for t in times:
        lines.append("%.17g,%.17g" % (t, ansatz_coefficient(spec, t)))
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _cmd_as3(args):
    report = as3_check(make_grid(3, args.cells), args.eps,
                       threshold=args.threshold)
    payload = {
        "eps": report.eps,
        "cells": args.cells,
        "eigenvalue": report.eigenvalue,
        "operator_eigenvalue": report.operator_eigenvalue,
        "F3_geometric": report.F3_geometric,
        "F3_paper_radial": report.F3_paper_radial,
        "radial_integral": report.radial_integral,
        "curvature_range": report.curvature_range,
        "threshold": report.threshold,
        "verdicts": report.verdicts,
    }
    _emit(dumps_17g(payload) + "\n", args.out)
    return 0


def _cmd_fit(args):
    data = _read_trace(args.csv)
    t = _column(data, "t", args.csv)
    y = _column(data, args.column, args.csv)
    window = None
    if args.tstart is not None or args.tend is not None:
        a = args.tstart if args.tstart is not None else float(t[0])
        b = args.tend if args.tend is not None else float(t[-1])
        window = (a, b)
    if args.model == "auto":
        tag, fit = classify_rate((t, y))
    else:
        fitter = fit_exponential if args.model == "exponential" \
            else fit_polynomial
        fit = fitter((t, y), window)
        tag = fit.model
    payload = {
        "column": args.column,
        "tag": tag,
        "model": fit.model,
        "rate": fit.rate,
        "amplitude": fit.amplitude,
        "log_residual": fit.log_residual,
        "window": list(fit.window),
    }
    _emit(dumps_17g(payload) + "\n", args.out)
    return 0


def _cmd_lojasiewicz(args):
    data = _read_trace(args.csv)
    E = _column(data, "E", args.csv)
    G = _column(data, "grad_l2", args.csv)
    e_inf = args.einf if args.einf is not None else float(E[-1])
    theta, resid = lojasiewicz_estimate(E, G, e_inf)
    payload = {"theta": theta, "log_residual": resid, "e_inf": e_inf}
    _emit(dumps_17g(payload) + "\n", args.out)
    return 0


def _cmd_sweep(args):
    from .runner import load_config, _get  # config preflight

    outdirs = {}
    for path in args.configs:
        cfg = load_config(path)
        outdir = _get(cfg, "output", "dir")
        if outdir is None:
            raise ConfigError("sweep config %s needs an [output] dir" % path)
        if outdir in outdirs:
            raise ConfigError("configs %s and %s share output dir %r"
                              % (outdirs[outdir], path, outdir))
        outdirs[outdir] = path

    def one(path):
        try:
            record, _ = run_from_config(path)
        except ConfigError as exc:
            return 2, "config error: %s" % exc
        except DomainError as exc:
            return 1, "error: %s" % exc
        if not record.ok:
            return 1, "positivity lost after %d steps" % record.n_steps
        return 0, "termination=%s steps=%d" % (record.termination,
                                               record.n_steps)

    jobs = max(1, args.jobs)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(one, args.configs))
    code = 0
    for path, (rc, msg) in zip(args.configs, results):
        sys.stdout.write("%s: %s\n" % (path, msg))
        code = max(code, rc)
    return code


_HANDLERS = {
    "spectrum": _cmd_spectrum,
    "cubic": _cmd_cubic,
    "ansatz": _cmd_ansatz,
    "as3": _cmd_as3,
    "fit": _cmd_fit,
    "lojasiewicz": _cmd_lojasiewicz,
    "sweep": _cmd_sweep,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return int(code) if code is not None else 0
    try:
        if args.command == "flow":
            return _cmd_flow_run(args)
        return _HANDLERS[args.command](args)
    except ConfigError as exc:
        sys.stderr.write("config error: %s\n" % exc)
        return 2
    except DomainError as exc:
        sys.stderr.write("error: %s\n" % exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
