"""Shared least-squares helpers for exponential decays and fixed-frequency
sinusoids, with simple Gaussian confidence intervals from the fit covariance."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit

# Two-sided 95% normal quantile used for all reported confidence intervals.
_Z95 = 1.959963984540054


@dataclass(frozen=True)
class ExpDecayFit:
    """Result of fitting y = amplitude * exp(-x / decay).

    ``unbounded`` flags data with no resolvable decay (non-negative slope of
    log y vs x): decay is reported as inf and the CI is meaningless.
    """

    amplitude: float
    decay: float
    ci_low: float
    ci_high: float
    residual_rms: float
    unbounded: bool = False


def fit_exponential_decay(x, y) -> ExpDecayFit:
    """Fit y = A exp(-x/theta) by nonlinear least squares.

    Seeds from the log-linear regression; requires >= 2 points and strictly
    positive y (a decay constant is undefined otherwise).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("need at least 2 points")
    if np.any(y <= 0):
        raise ValueError("exponential decay fit requires positive values")

    slope, intercept = np.polyfit(x, np.log(y), 1)
    if slope >= 0:
        return ExpDecayFit(float(np.exp(intercept)), math.inf, math.inf, math.inf,
                           residual_rms=float(np.std(y - y.mean())), unbounded=True)

    p0 = (math.exp(intercept), -1.0 / slope)

    def model(t, a, theta):
        return a * np.exp(-t / theta)

    try:
        popt, pcov = curve_fit(model, x, y, p0=p0, maxfev=20000)
    except RuntimeError:
        # fall back to the log-linear estimate with a wide CI
        a, theta = p0
        return ExpDecayFit(a, theta, 0.0, math.inf,
                           residual_rms=float(np.sqrt(np.mean((model(x, a, theta) - y) ** 2))))
    a, theta = float(popt[0]), float(popt[1])
    sigma_theta = float(np.sqrt(pcov[1, 1])) if np.isfinite(pcov[1, 1]) else math.inf
    resid = float(np.sqrt(np.mean((model(x, *popt) - y) ** 2)))
    return ExpDecayFit(a, theta, theta - _Z95 * sigma_theta, theta + _Z95 * sigma_theta, resid)


def fit_line_through_origin(x, y):
    """Least-squares slope of y = m*x and its standard error."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sxx = float(np.dot(x, x))
    if sxx == 0:
        raise ValueError("all abscissae are zero; slope is undefined")
    m = float(np.dot(x, y)) / sxx
    dof = max(x.size - 1, 1)
    sigma2 = float(np.sum((y - m * x) ** 2)) / dof
    return m, math.sqrt(sigma2 / sxx)


def fit_line(x, y):
    """Ordinary least-squares line y = m*x + b; returns m, b, sigma_m."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("need at least 2 points")
    coeffs, cov = np.polyfit(x, y, 1, cov=True) if x.size > 2 else (np.polyfit(x, y, 1), None)
    m, b = float(coeffs[0]), float(coeffs[1])
    if cov is not None and np.isfinite(cov[0, 0]):
        sigma_m = float(np.sqrt(cov[0, 0]))
    else:
        sigma_m = math.inf
    return m, b, sigma_m


def fit_fixed_frequency_sinusoid(t, y, frequency):
    """Amplitude of y(t) ~ a cos(2 pi f t) + b sin(2 pi f t) + c at fixed f.

    Linear least squares, so the fit is exact and phase-invariant.  Returns
    (amplitude, residual_rms).
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    design = np.column_stack([
        np.cos(2 * np.pi * frequency * t),
        np.sin(2 * np.pi * frequency * t),
        np.ones_like(t),
    ])
    coeffs, *_ = np.linalg.lstsq(design, y, rcond=None)
    amplitude = float(np.hypot(coeffs[0], coeffs[1]))
    resid = float(np.sqrt(np.mean((design @ coeffs - y) ** 2)))
    return amplitude, resid
