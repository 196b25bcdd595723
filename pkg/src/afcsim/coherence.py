"""Photon-echo and optical-nutation probes of the ensemble coherence.

Conventions adopted for the decay laws (documented here because the decay
exponents fix the meaning of the extracted times):

* two-pulse echo intensity   I(tau2) = I0 exp(-4 tau2 / T2)
* stimulated echo area       A(tau1, tau2) = A0 exp(-tau1 / T1)
                                             * exp(-4 tau2 / T2(tau1))
* homogeneous linewidth      Gamma_hom = 1 / (pi T2), reported in kHz
* slow spectral diffusion    Gamma_hom(tau1) = Gamma0 + sd_rate * tau1

Simulators are deterministic for a given seed; times in us, rates in kHz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fitting import (fit_exponential_decay, fit_fixed_frequency_sinusoid,
                      fit_line, fit_line_through_origin)
from .waveguide import GaussianMode

# population inversion time * Rabi frequency for a long resonant pulse in an
# optically dense, inhomogeneously broadened ensemble
NUTATION_PRODUCT = 5.1


@dataclass(frozen=True)
class EchoSequence:
    """Pulse sequence timing: two-pulse (TPE) or stimulated (SPE) echo."""

    kind: str
    tau2_us: float
    tau1_us: float = 0.0

    def __post_init__(self):
        if self.kind not in ("TPE", "SPE"):
            raise ValueError("kind must be 'TPE' or 'SPE'")
        if self.tau2_us <= 0:
            raise ValueError("tau2 must be positive")
        if self.tau1_us < 0:
            raise ValueError("tau1 must be non-negative")
        if self.kind == "TPE" and self.tau1_us != 0:
            raise ValueError("a two-pulse echo has no tau1 gap")


@dataclass(frozen=True)
class CoherenceParams:
    """Coherence time, lifetime and slow-dephasing inputs of the ensemble."""

    t2_us: float
    t1_us: float
    sd_rate_khz_per_us: float = 0.0
    gamma0_khz: float | None = None

    def __post_init__(self):
        if self.t2_us <= 0 or self.t1_us <= 0:
            raise ValueError("T2 and T1 must be positive")
        if self.t2_us > 2.0 * self.t1_us:
            raise ValueError("T2 cannot exceed 2 T1")
        if self.sd_rate_khz_per_us < 0:
            raise ValueError("spectral-diffusion rate must be non-negative")
        if self.gamma0_khz is None:
            object.__setattr__(self, "gamma0_khz", gamma_hom(self.t2_us))

    def t2_at(self, tau1_us: float) -> float:
        """Coherence time after a waiting time tau1, in us."""
        gamma = self.gamma0_khz + self.sd_rate_khz_per_us * tau1_us
        return 1e3 / (math.pi * gamma)


def gamma_hom(t2_us: float) -> float:
    """Homogeneous linewidth 1/(pi T2) in kHz for T2 in us."""
    if t2_us <= 0:
        raise ValueError("T2 must be positive")
    return 1e3 / (math.pi * t2_us)


def simulate_tpe(params: CoherenceParams, tau2_us, noise_frac: float = 0.0,
                 seed: int | None = None, i0: float = 1.0) -> np.ndarray:
    """Echo intensities of a two-pulse echo scan over tau2.

    Multiplicative Gaussian noise of fractional size noise_frac is applied
    per point, seeded for reproducibility.
    """
    tau2 = np.asarray(tau2_us, dtype=float)
    if np.any(tau2 < 0):
        raise ValueError("tau2 values must be non-negative")
    intensity = i0 * np.exp(-4.0 * tau2 / params.t2_us)
    if noise_frac > 0:
        rng = np.random.default_rng(seed)
        intensity = intensity * (1.0 + noise_frac * rng.standard_normal(tau2.shape))
        intensity = np.clip(intensity, 1e-300, None)
    return intensity


def fit_tpe_t2(tau2_us, intensities):
    """Recover T2 (us) from a TPE intensity decay; returns (t2, fit)."""
    fit = fit_exponential_decay(tau2_us, intensities)
    scale = 4.0
    if fit.unbounded:
        return math.inf, fit
    return scale * fit.decay, fit


def heterodyne_amplitude(time_us, trace, beat_mhz: float = 10.0):
    """Echo amplitude from a heterodyne beat at a known detuning.

    Fits a fixed-frequency sinusoid by linear least squares and returns
    (amplitude, intensity) with intensity = amplitude^2.  The trace must
    cover at least 3 beat periods.
    """
    t = np.asarray(time_us, dtype=float)
    if (t[-1] - t[0]) * beat_mhz < 3.0:
        raise ValueError("trace must span at least 3 beat periods")
    amplitude, resid = fit_fixed_frequency_sinusoid(t, trace, beat_mhz)
    if not np.isfinite(amplitude):
        raise RuntimeError(f"sinusoid fit failed (residual {resid:.3g})")
    return amplitude, amplitude**2


def simulate_spe(params: CoherenceParams, tau1_us, tau2_us, noise_frac: float = 0.0,
                 seed: int | None = None, a0: float = 1.0) -> np.ndarray:
    """Stimulated-echo area matrix A[tau1, tau2].

    The tau1 decay tracks the excited-state lifetime; the tau2 decay uses
    the (possibly tau1-broadened) coherence time.
    """
    tau1 = np.asarray(tau1_us, dtype=float)
    tau2 = np.asarray(tau2_us, dtype=float)
    if np.any(tau1 < 0) or np.any(tau2 < 0):
        raise ValueError("delay grids must be non-negative")
    t2_of_tau1 = np.array([params.t2_at(t1) for t1 in tau1])
    area = a0 * np.exp(-tau1 / params.t1_us)[:, None] * \
        np.exp(-4.0 * np.outer(1.0 / t2_of_tau1, tau2))
    if noise_frac > 0:
        rng = np.random.default_rng(seed)
        area = area * (1.0 + noise_frac * rng.standard_normal(area.shape))
        area = np.clip(area, 1e-300, None)
    return area


def spe_intercepts_and_t2(area, tau1_us, tau2_us):
    """Per-tau1 exponential fits over tau2.

    Returns (intercepts, t2_us_values): the extrapolated tau2 = 0 areas and
    the coherence time extracted from each row's decay.
    """
    area = np.asarray(area, dtype=float)
    tau2 = np.asarray(tau2_us, dtype=float)
    if area.shape != (len(tau1_us), len(tau2)):
        raise ValueError("area matrix shape must be (len(tau1), len(tau2))")
    intercepts, t2s = [], []
    for row in area:
        fit = fit_exponential_decay(tau2, row)
        intercepts.append(fit.amplitude)
        t2s.append(4.0 * fit.decay if not fit.unbounded else math.inf)
    return np.array(intercepts), np.array(t2s)


def extract_t1(area, tau1_us, tau2_us):
    """Excited-state lifetime from the tau1 decay of the SPE intercepts.

    Each tau1 row is first fit over tau2 and extrapolated to tau2 = 0; the
    intercepts are then fit with exp(-tau1/T1).  Returns (t1_us, (lo, hi))
    or (inf, ...) with the unbounded flag encoded as an infinite lifetime.
    """
    tau1 = np.asarray(tau1_us, dtype=float)
    if tau1.size < 3:
        raise ValueError("need at least 3 tau1 values")
    intercepts, _ = spe_intercepts_and_t2(area, tau1_us, tau2_us)
    fit = fit_exponential_decay(tau1, intercepts)
    if fit.unbounded:
        return math.inf, (math.inf, math.inf)
    return fit.decay, (fit.ci_low, fit.ci_high)


def gamma_hom_vs_tau1(area, tau1_us, tau2_us):
    """Homogeneous linewidth (kHz) for each tau1, from the per-row T2 fits."""
    _, t2s = spe_intercepts_and_t2(area, tau1_us, tau2_us)
    return np.array([gamma_hom(t2) if np.isfinite(t2) else 0.0 for t2 in t2s])


def gamma_hom_slope(area, tau1_us, tau2_us):
    """Linear trend of Gamma_hom(tau1): returns (slope, sigma_slope) in
    kHz/us.  A slope consistent with zero rules out slow spectral diffusion
    on the probed timescale."""
    gammas = gamma_hom_vs_tau1(area, tau1_us, tau2_us)
    slope, _, sigma = fit_line(tau1_us, gammas)
    return slope, sigma


@dataclass(frozen=True)
class RabiCalibration:
    """Linear power calibration Omega_R/2pi = slope * sqrt(P)."""

    slope_mhz_per_sqrt_mw: float
    slope_sigma: float
    points: tuple

    def __post_init__(self):
        if self.slope_mhz_per_sqrt_mw <= 0:
            raise ValueError("calibration slope must be positive")

    def omega_r_mhz(self, power_mw: float) -> float:
        return self.slope_mhz_per_sqrt_mw * math.sqrt(power_mw)


def nutation_rabi(t_pi_us: float) -> float:
    """Rabi angular frequency (Mrad/s = rad/us) from the inversion time."""
    if t_pi_us <= 0:
        raise ValueError("inversion time must be positive")
    return NUTATION_PRODUCT / t_pi_us


def rabi_power_fit(points) -> RabiCalibration:
    """Fit Omega_R/2pi vs sqrt(P) with a line through the origin.

    points: sequence of (power_mw, omega_r_mhz).  A single point determines
    the slope exactly; all-zero powers are rejected.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError("need at least one (power, Omega_R) point")
    power, omega = pts[:, 0], pts[:, 1]
    if np.any(power < 0):
        raise ValueError("powers must be non-negative")
    if np.all(power == 0):
        raise ValueError("at least one nonzero power is required")
    slope, sigma = fit_line_through_origin(np.sqrt(power), omega)
    return RabiCalibration(slope, sigma, tuple(map(tuple, pts)))


def rabi_mode_scaling(slope_ref: float, mode_ref: GaussianMode,
                      mode_new: GaussianMode) -> float:
    """Rescale a Rabi calibration to a different guided-mode area.

    The Rabi frequency at fixed power scales with the field amplitude,
    i.e. with 1/sqrt(mode area), so
    slope_new = slope_ref * sqrt(area_ref / area_new).
    """
    return slope_ref * math.sqrt(mode_ref.area_um2 / mode_new.area_um2)
