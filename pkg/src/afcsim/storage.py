"""Storage and retrieval of weak pulses in a spectral comb.

Propagation uses the linear frequency response of the absorber,
H(nu) = exp(-OD/2 + i phi) with the causal (Kramers-Kronig) phase obtained
from the optical depth by a discrete Hilbert transform.  A discrete sum
over individually detuned atoms provides an independent low-OD oracle for
the collective rephasing: atoms detuned on a lattice of spacing D rephase
at multiples of 1/D.

Time is in microseconds and frequency in MHz throughout, so FFT axes match
without unit factors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import hilbert

from .fitting import ExpDecayFit, fit_exponential_decay
from .spectral import AbsorptionProfile


@dataclass(frozen=True)
class AtomEnsemble:
    """Discrete atoms with detunings (MHz) and emission amplitudes."""

    detunings_mhz: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        det = np.asarray(self.detunings_mhz, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if det.size == 0:
            raise ValueError("ensemble must contain at least one atom")
        if det.shape != w.shape:
            raise ValueError("detunings and weights must have equal length")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        norm = float(np.sum(w**2))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError("weights must satisfy sum |c_k|^2 = 1 within 1e-9")
        object.__setattr__(self, "detunings_mhz", det)
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class FieldTrace:
    """Complex field envelope on a uniform time grid (us)."""

    time_us: np.ndarray
    amplitude: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.time_us, dtype=float)
        a = np.asarray(self.amplitude, dtype=complex)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("time grid must be 1-D with >= 2 points")
        steps = np.diff(t)
        if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9):
            raise ValueError("time grid must be uniform and increasing")
        if a.shape != t.shape:
            raise ValueError("amplitude and time grid must match")
        if not np.all(np.isfinite(a)):
            raise ValueError("amplitude must be finite")
        object.__setattr__(self, "time_us", t)
        object.__setattr__(self, "amplitude", a)

    @property
    def dt_us(self) -> float:
        return float(self.time_us[1] - self.time_us[0])

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.amplitude) ** 2

    def energy(self) -> float:
        return float(np.sum(self.intensity) * self.dt_us)

    def to_csv(self, path):
        np.savetxt(path, np.column_stack([self.time_us, self.amplitude.real, self.amplitude.imag]),
                   delimiter=",", header="time_us,re,im", comments="")

    @classmethod
    def from_csv(cls, path) -> "FieldTrace":
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        return cls(data[:, 0], data[:, 1] + 1j * data[:, 2])


def gaussian_pulse(time_us: np.ndarray, center_us: float, fwhm_ns: float = 200.0,
                   amplitude: float = 1.0) -> FieldTrace:
    """Transform-limited Gaussian input pulse."""
    sigma = fwhm_ns * 1e-3 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    t = np.asarray(time_us, dtype=float)
    env = amplitude * np.exp(-0.5 * ((t - center_us) / sigma) ** 2)
    return FieldTrace(t, env.astype(complex))


@dataclass(frozen=True)
class StorageResult:
    """Outcome of one storage run."""

    output: FieldTrace
    echo_time_us: float
    internal_efficiency: float
    total_efficiency: float

    def __post_init__(self):
        if not 0.0 <= self.internal_efficiency <= 1.0:
            raise ValueError("internal efficiency must lie in [0, 1]")
        if self.total_efficiency > self.internal_efficiency + 1e-12:
            raise ValueError("total efficiency cannot exceed internal efficiency")
        if self.echo_time_us <= 0:
            raise ValueError("echo time must be positive")

    def to_json_dict(self) -> dict:
        return {
            "echo_time_us": self.echo_time_us,
            "internal_efficiency": self.internal_efficiency,
            "total_efficiency": self.total_efficiency,
            "output_time_us": self.output.time_us.tolist(),
            "output_re": self.output.amplitude.real.tolist(),
            "output_im": self.output.amplitude.imag.tolist(),
        }


def echo_from_atoms(ensemble: AtomEnsemble, time_us: np.ndarray) -> np.ndarray:
    """Brute-force collective emission intensity |sum_k c_k e^{-i 2 pi d_k t}|^2.

    Normalized to its t = 0 value (recomputed even if 0 is not on the grid).
    """
    t = np.asarray(time_us, dtype=float)
    phases = np.exp(-2j * np.pi * np.outer(t, ensemble.detunings_mhz))
    field = phases @ ensemble.weights.astype(complex)
    ref = abs(np.sum(ensemble.weights)) ** 2
    return np.abs(field) ** 2 / ref


def atoms_from_profile(profile: AbsorptionProfile, max_atoms: int | None = None) -> AtomEnsemble:
    """Ensemble whose collective emission mirrors a weakly excited profile.

    In the weak-excitation limit the emitted field is the Fourier transform
    of the absorption spectrum, so each grid point becomes an atom with
    amplitude proportional to its OD.  Grid points with zero OD are dropped.
    """
    mask = profile.od > 0
    det = profile.freq_mhz[mask]
    w = profile.od[mask]
    if max_atoms is not None and det.size > max_atoms:
        idx = np.linspace(0, det.size - 1, max_atoms).astype(int)
        det, w = det[idx], w[idx]
    w = w / math.sqrt(float(np.sum(w**2)))
    return AtomEnsemble(det, w)


def atoms_on_lattice(spacing_mhz: float, n_teeth: int, jitter_mhz: float = 0.0,
                     seed: int | None = None) -> AtomEnsemble:
    """Uniform-amplitude atoms on a detuning lattice m * spacing (+ jitter)."""
    rng = np.random.default_rng(seed)
    m = np.arange(n_teeth) - n_teeth // 2
    det = m * spacing_mhz
    if jitter_mhz > 0:
        det = det + rng.normal(0.0, jitter_mhz, size=det.shape)
    w = np.full(det.shape, 1.0 / math.sqrt(det.size))
    return AtomEnsemble(det, w)


def _causal_phase(od_sorted: np.ndarray) -> np.ndarray:
    # minimum-phase companion of the amplitude attenuation OD/2; the +
    # sign puts the response after the pulse for numpy's forward FFT
    return np.imag(hilbert(od_sorted / 2.0))


def propagate_pulse(profile: AbsorptionProfile, pulse: FieldTrace,
                    leakage_tolerance: float = 0.01) -> FieldTrace:
    """Propagate a weak pulse through the absorber's linear response.

    The pulse spectrum is multiplied by exp(-OD/2 + i phi), phi being the
    causal phase from the discrete Hilbert transform of the optical depth.
    Raises if more than leakage_tolerance of the pulse energy lies outside
    the profile's frequency span.
    """
    n = pulse.time_us.size
    dt = pulse.dt_us
    spec = np.fft.fft(pulse.amplitude)
    freq = np.fft.fftfreq(n, dt)

    power = np.abs(spec) ** 2
    inside = (freq >= profile.freq_mhz[0]) & (freq <= profile.freq_mhz[-1])
    leak = float(power[~inside].sum() / power.sum()) if power.sum() > 0 else 0.0
    if leak > leakage_tolerance:
        raise ValueError(
            f"{leak:.1%} of the pulse energy falls outside the profile grid "
            f"(tolerance {leakage_tolerance:.0%})"
        )

    order = np.argsort(freq)
    od = np.interp(freq[order], profile.freq_mhz, profile.od,
                   left=profile.od[0], right=profile.od[-1])
    phi_sorted = _causal_phase(od)
    response = np.empty(n, dtype=complex)
    response[order] = np.exp(-od / 2.0 + 1j * phi_sorted)
    out = np.fft.ifft(spec * response)
    return FieldTrace(pulse.time_us, out)


def locate_echo(pulse: FieldTrace, output: FieldTrace, exclusion_us: float = 0.5):
    """Echo delay of a propagated trace relative to its transmitted pulse.

    The transmitted peak carries the dispersive group delay of the spectral
    structure (pit walls delay it measurably), so the physically meaningful
    echo time is referenced to it, not to the nominal input center.
    Returns (delay_us, transmitted_peak_us, echo_peak_us).
    """
    t = output.time_us
    inten = output.intensity
    direct_idx = int(np.argmax(inten))
    mask = np.abs(t - t[direct_idx]) > exclusion_us
    if not np.any(mask):
        raise ValueError("trace too short to separate an echo from the pulse")
    echo_idx = int(np.argmax(np.where(mask, inten, 0.0)))
    return float(t[echo_idx] - t[direct_idx]), float(t[direct_idx]), float(t[echo_idx])


def window_sum(time_us: np.ndarray, values: np.ndarray, center_us: float,
               window_ns: float) -> float:
    """Sum of samples inside a window centered at center_us."""
    half = window_ns * 1e-3 / 2.0
    mask = np.abs(np.asarray(time_us) - center_us) <= half
    return float(np.sum(np.asarray(values)[mask]))


def internal_efficiency(time_us, output_values, reference_values, tau_us: float,
                        input_time_us: float = 0.0, window_ns: float = 400.0,
                        pit_transmission: float = 0.85) -> float:
    """Storage efficiency from windowed intensity traces or count histograms.

    Both the echo window (centered at tau) and the input window (centered at
    the nominal input time) are window_ns wide.  The input-window content is
    renormalized by the transparency-window transmission before dividing, so
    the result is internal to the storage process.  Works identically for
    classical |E|^2 traces and photon-count histograms on the same grid.
    """
    if not 0.0 < pit_transmission <= 1.0:
        raise ValueError("pit transmission must be in (0, 1]")
    half_us = window_ns * 1e-3 / 2.0
    if abs(tau_us - input_time_us) < 2.0 * half_us:
        raise ValueError("echo and input windows overlap")
    t = np.asarray(time_us, dtype=float)
    if input_time_us - half_us < t[0] or tau_us + half_us > t[-1]:
        raise ValueError("windows must fit inside the trace")
    echo = window_sum(t, output_values, tau_us, window_ns)
    ref = window_sum(t, reference_values, input_time_us, window_ns)
    if ref <= 0:
        raise ValueError("input reference window is empty")
    return echo / (ref / pit_transmission)


def total_efficiency(eta_internal: float, coupling: float = 0.40) -> float:
    """Device efficiency: internal efficiency times waveguide coupling."""
    if not 0.0 <= eta_internal <= 1.0 or not 0.0 <= coupling <= 1.0:
        raise ValueError("efficiencies must lie in [0, 1]")
    return eta_internal * coupling


def store_pulse(profile: AbsorptionProfile, pulse: FieldTrace, tau_us: float,
                input_time_us: float, window_ns: float = 400.0,
                pit_transmission: float = 0.85, coupling: float = 0.40) -> StorageResult:
    """Propagate, window, and book the efficiencies of one storage run."""
    out = propagate_pulse(profile, pulse)
    eta = internal_efficiency(pulse.time_us, out.intensity, pulse.intensity,
                              input_time_us + tau_us, input_time_us=input_time_us,
                              window_ns=window_ns, pit_transmission=pit_transmission)
    eta = min(eta, 1.0)
    return StorageResult(out, tau_us, eta, total_efficiency(eta, coupling))


@dataclass(frozen=True)
class T2StarFit:
    """Effective dephasing time of the storage protocol."""

    eta0: float
    t2star_us: float
    ci_low_us: float
    ci_high_us: float
    unbounded: bool = False


def fit_effective_t2star(points) -> T2StarFit:
    """Fit efficiency vs storage time to eta0 * exp(-4 tau / T2*).

    points is a sequence of (tau_us, efficiency) with positive efficiencies
    at three or more distinct storage times.  Constant efficiencies produce
    an unbounded flag instead of a spurious decay constant.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise ValueError("need at least 3 (tau, efficiency) points")
    tau, eta = pts[:, 0], pts[:, 1]
    if np.unique(tau).size < 3:
        raise ValueError("storage times must be distinct")
    if np.any(eta <= 0):
        raise ValueError("efficiencies must be positive")
    fit: ExpDecayFit = fit_exponential_decay(tau, eta)
    if fit.unbounded:
        return T2StarFit(fit.amplitude, math.inf, math.inf, math.inf, unbounded=True)
    return T2StarFit(fit.amplitude, 4.0 * fit.decay, 4.0 * fit.ci_low, 4.0 * fit.ci_high)
