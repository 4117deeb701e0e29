"""Convergence-rate models and the gradient-vs-energy exponent estimate.

Two decay models are fitted to positive diagnostic series: exponential
A e^{-delta t} (log-linear in t) and polynomial A (1+t)^{-beta}
(log-linear in log(1+t)).  classify_rate runs both on the trailing half
of a series and keeps the smaller log-domain residual, declaring a tie
when the residuals are within ten percent of each other.

The Lojasiewicz-type exponent is estimated from the state-space
relation between the gradient norm and the energy gap, not from decay
in time: a least-squares slope s of log ||DE|| against log |E - E_inf|
gives theta = 1 - s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, DomainError

__all__ = [
    "RateFit",
    "fit_exponential",
    "fit_polynomial",
    "classify_rate",
    "lojasiewicz_estimate",
    "default_window",
]

RATE_MODELS = ("exponential", "polynomial")

_MIN_POINTS = 10


@dataclass(eq=False)
class RateFit:
    """Fitted decay model for a positive series.

    rate is delta for exponential decay e^{-delta t} and the exponent
    beta for (1+t)^{-beta}; log_residual is the RMS misfit in the
    fitted log domain; window is the (t_start, t_end) actually used.
    """

    model: str
    rate: float
    amplitude: float
    log_residual: float
    window: tuple

    def predict(self, t):
        t = np.asarray(t, dtype=float)
        if self.model == "exponential":
            return self.amplitude * np.exp(-self.rate * t)
        return self.amplitude * (1.0 + t) ** (-self.rate)


def _series_arrays(series):
    """Accept (times, values) pairs or an (N, 2) array."""
    if isinstance(series, tuple) and len(series) == 2:
        t, y = series
    else:
        arr = np.asarray(series, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ConfigError("series must be (times, values) or an (N, 2) array")
        t, y = arr[:, 0], arr[:, 1]
    t = np.asarray(t, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if t.size != y.size:
        raise ConfigError("times and values must have equal length")
    return t, y


def _windowed(series, window):
    t, y = _series_arrays(series)
    if window is not None:
        a, b = float(window[0]), float(window[1])
        if not b > a:
            raise ConfigError("window must be a nonempty interval")
        keep = (t >= a) & (t <= b)
        t, y = t[keep], y[keep]
    if t.size < _MIN_POINTS:
        raise DomainError("need at least %d points in the window" % _MIN_POINTS)
    if np.any(y <= 0.0):
        raise DomainError("series must be positive")
    return t, y


def _log_fit(x, logy):
    slope, intercept = np.polyfit(x, logy, 1)
    resid = logy - (slope * x + intercept)
    return float(slope), float(intercept), float(
        math.sqrt(float(np.mean(resid * resid))))


def fit_exponential(series, window=None):
    """Least-squares fit of y = amplitude * exp(-rate * t), rate > 0."""
    t, y = _windowed(series, window)
    slope, intercept, rms = _log_fit(t, np.log(y))
    if slope >= 0.0:
        raise DomainError("no decay detected")
    return RateFit(model="exponential", rate=-slope,
                   amplitude=math.exp(intercept), log_residual=rms,
                   window=(float(t[0]), float(t[-1])))


def fit_polynomial(series, window=None):
    """Least-squares fit of y = amplitude * (1+t)^(-rate), rate > 0."""
    t, y = _windowed(series, window)
    slope, intercept, rms = _log_fit(np.log1p(t), np.log(y))
    if slope >= 0.0:
        raise DomainError("no decay detected")
    return RateFit(model="polynomial", rate=-slope,
                   amplitude=math.exp(intercept), log_residual=rms,
                   window=(float(t[0]), float(t[-1])))


def default_window(series):
    """Trailing-half window, clipped above the floating-point floor.

    Values within a decade of the series' roundoff floor (relative to
    its peak) carry no slope information and bias fits, so the window
    ends at the last sample above that floor.
    """
    t, y = _series_arrays(series)
    if t.size < 2:
        raise DomainError("need at least 2 points for a window")
    floor = 1000.0 * np.finfo(float).eps * float(np.max(np.abs(y)))
    above = np.nonzero(y > floor)[0]
    last = int(above[-1]) if above.size else t.size - 1
    # trailing half, but never give the fitters fewer points than they
    # require when the series itself is short
    first = min(t.size // 2, max(last - (_MIN_POINTS - 1), 0))
    start, end = t[first], t[last]
    if not end > start:
        start, end = t[0], t[-1]
    return float(start), float(end)


def classify_rate(series):
    """Fit both decay models on the trailing half; keep the better one.

    Returns (model_tag, RateFit).  The tag is "ambiguous" when both
    fits succeed with log residuals within ten percent of each other
    (the returned fit is still the numerically better of the two).
    """
    window = default_window(series)
    fits = {}
    failures = {}
    for name, fitter in (("exponential", fit_exponential),
                         ("polynomial", fit_polynomial)):
        try:
            fits[name] = fitter(series, window)
        except DomainError as exc:
            failures[name] = str(exc)
    if not fits:
        raise DomainError("no usable rate model: " + "; ".join(
            "%s: %s" % kv for kv in sorted(failures.items())))
    if len(fits) == 1:
        ((name, fit),) = fits.items()
        return name, fit
    fe, fp = fits["exponential"], fits["polynomial"]
    best_name, best = min(fits.items(), key=lambda kv: kv[1].log_residual)
    spread = abs(fe.log_residual - fp.log_residual)
    if spread <= 0.1 * max(fe.log_residual, fp.log_residual):
        return "ambiguous", best
    return best_name, best


def lojasiewicz_estimate(E_series, gradnorm_series, E_inf):
    """Exponent of the gradient inequality |E - E_inf|^(1-theta) <= C ||DE||.

    Regresses log gradient norm on log energy gap, so the estimate is
    invariant under reparameterizations of time.  The energy series
    must be non-increasing (small per-sample tolerance); samples whose
    gap sits at the floating-point floor of E_inf are dropped.

    Returns (theta, log_residual) with theta = 1 - fitted slope.
    """
    E = np.asarray(E_series, dtype=float).ravel()
    G = np.asarray(gradnorm_series, dtype=float).ravel()
    if E.size != G.size:
        raise ConfigError("energy and gradient series must have equal length")
    if E.size and np.any(np.diff(E) > 1e-9 * (1.0 + np.max(np.abs(E)))):
        raise DomainError("energy not monotone: check flow run")
    gap = E - float(E_inf)
    floor = 100.0 * np.finfo(float).eps * max(1.0, abs(float(E_inf)))
    keep = (gap > floor) & (G > 0.0)
    if int(np.sum(keep)) < _MIN_POINTS:
        raise DomainError("need at least %d usable samples above the "
                          "energy floor" % _MIN_POINTS)
    slope, _, rms = _log_fit(np.log(gap[keep]), np.log(G[keep]))
    return 1.0 - slope, rms
