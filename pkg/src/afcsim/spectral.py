"""Absorption-profile engineering for the rare-earth ensemble.

All profiles live on a uniform frequency grid in MHz with origin at the
center of the inhomogeneous line, holding through-crystal optical depth
(OD).  Transforms never mutate; they return new profiles, so values can be
shared freely across threads.

Spectral shapes with FWHM w use exp(-4 ln2 x^2 / w^2) throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_LN2X4 = 4.0 * math.log(2.0)


@dataclass(frozen=True)
class AbsorptionProfile:
    """Optical depth vs frequency on a uniform grid (MHz)."""

    freq_mhz: np.ndarray
    od: np.ndarray

    def __post_init__(self):
        freq = np.asarray(self.freq_mhz, dtype=float)
        od = np.asarray(self.od, dtype=float)
        if freq.ndim != 1 or freq.size < 2:
            raise ValueError("frequency grid must be 1-D with >= 2 points")
        steps = np.diff(freq)
        if np.any(steps <= 0):
            raise ValueError("frequency grid must be strictly increasing")
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12 * abs(steps[0])):
            raise ValueError("frequency grid must be uniform")
        if od.shape != freq.shape:
            raise ValueError("od and freq_mhz must have the same shape")
        if np.any(od < 0):
            raise ValueError("optical depth must be non-negative")
        object.__setattr__(self, "freq_mhz", freq)
        object.__setattr__(self, "od", od)

    @property
    def step_mhz(self) -> float:
        return float(self.freq_mhz[1] - self.freq_mhz[0])

    def with_od(self, od: np.ndarray) -> "AbsorptionProfile":
        return AbsorptionProfile(self.freq_mhz, od)

    def to_csv(self, path):
        np.savetxt(path, np.column_stack([self.freq_mhz, self.od]),
                   delimiter=",", header="freq_mhz,od", comments="")

    @classmethod
    def from_csv(cls, path) -> "AbsorptionProfile":
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        return cls(data[:, 0], data[:, 1])


def uniform_grid(span_mhz: float, step_mhz: float) -> np.ndarray:
    """Symmetric grid covering +-span/2 at the given resolution."""
    half = span_mhz / 2.0
    n = int(round(span_mhz / step_mhz)) + 1
    return np.linspace(-half, half, n)


# Default working grids: fine enough to resolve comb teeth over a pit,
# coarse-but-wide for the full inhomogeneous line.
def comb_grid() -> np.ndarray:
    return uniform_grid(80.0, 0.01)


def line_grid() -> np.ndarray:
    return uniform_grid(30_000.0, 10.0)


def flat_profile(grid: np.ndarray, od: float = 0.0) -> AbsorptionProfile:
    return AbsorptionProfile(grid, np.full_like(np.asarray(grid, dtype=float), od))


@dataclass(frozen=True)
class PitSpec:
    """Transparency window hole-burned into the line."""

    center_mhz: float = 0.0
    width_mhz: float = 16.0
    residual_od: float = 0.0

    def __post_init__(self):
        if self.width_mhz <= 0:
            raise ValueError("pit width must be positive")
        if self.residual_od < 0:
            raise ValueError("residual OD must be non-negative")


@dataclass(frozen=True)
class CombSpec:
    """Periodic absorption comb written inside a transparency window.

    Teeth are anchored at the lower span edge and spaced by the periodicity,
    giving floor(span/periodicity) + 1 teeth centered on the grid origin.
    """

    periodicity_mhz: float
    tooth_fwhm_mhz: float
    peak_od: float
    background_od: float = 0.0
    span_mhz: float = 16.0
    tooth_shape: str = "gaussian"

    def __post_init__(self):
        if self.periodicity_mhz <= 0:
            raise ValueError("periodicity must be positive")
        if not self.tooth_fwhm_mhz < self.periodicity_mhz:
            raise ValueError("tooth FWHM must be smaller than the periodicity")
        if self.span_mhz < 3 * self.periodicity_mhz:
            raise ValueError("span must cover at least 3 periods")
        if not self.peak_od > self.background_od >= 0:
            raise ValueError("need peak_od > background_od >= 0")
        if self.tooth_shape not in ("gaussian", "square"):
            raise ValueError("tooth_shape must be 'gaussian' or 'square'")

    @property
    def storage_time_us(self) -> float:
        return 1.0 / self.periodicity_mhz

    def tooth_centers(self) -> np.ndarray:
        n_teeth = int(math.floor(self.span_mhz / self.periodicity_mhz)) + 1
        return -self.span_mhz / 2.0 + self.periodicity_mhz * np.arange(n_teeth)


@dataclass(frozen=True)
class HyperfineScheme:
    """Named hyperfine levels with their splittings (MHz).

    The numeric splittings are experiment configuration, not constants of
    this package; they must be supplied by the caller.
    """

    ground_splittings_mhz: dict = field(default_factory=dict)
    excited_splittings_mhz: dict = field(default_factory=dict)
    transition: tuple[str, str] = ("1/2g", "3/2e")

    GROUND_LEVELS = ("1/2g", "3/2g", "5/2g")
    EXCITED_LEVELS = ("1/2e", "3/2e", "5/2e")

    def __post_init__(self):
        for name, value in {**self.ground_splittings_mhz, **self.excited_splittings_mhz}.items():
            if value <= 0:
                raise ValueError(f"splitting {name} must be positive")
        g, e = self.transition
        if g not in self.GROUND_LEVELS or e not in self.EXCITED_LEVELS:
            raise ValueError(f"transition {self.transition} must pair a ground and an excited level")


def inhomogeneous_profile(fwhm_ghz: float, peak_od: float, grid: np.ndarray) -> AbsorptionProfile:
    """Gaussian inhomogeneous line centered at zero detuning."""
    if fwhm_ghz <= 0 or peak_od <= 0:
        raise ValueError("FWHM and peak OD must be positive")
    grid = np.asarray(grid, dtype=float)
    fwhm_mhz = fwhm_ghz * 1e3
    if grid[0] > -fwhm_mhz or grid[-1] < fwhm_mhz:
        raise ValueError("grid must cover +-FWHM of the line")
    od = peak_od * np.exp(-_LN2X4 * (grid / fwhm_mhz) ** 2)
    return AbsorptionProfile(grid, od)


def carve_pit(profile: AbsorptionProfile, pit: PitSpec) -> AbsorptionProfile:
    """Burn a transparency window into the profile.

    Inside the window the OD is pulled to the residual value; the edges are
    raised-cosine ramps occupying 5% of the pit width on each side, entirely
    inside the window, so nothing outside [center - w/2, center + w/2]
    changes.
    """
    half = pit.width_mhz / 2.0
    lo, hi = pit.center_mhz - half, pit.center_mhz + half
    freq = profile.freq_mhz
    if lo < freq[0] or hi > freq[-1]:
        raise ValueError("pit exceeds the profile grid")

    edge = 0.05 * pit.width_mhz
    dist = np.abs(freq - pit.center_mhz)
    window = np.zeros_like(freq)
    window[dist <= half - edge] = 1.0
    ramp = (dist > half - edge) & (dist <= half)
    window[ramp] = 0.5 * (1.0 + np.cos(np.pi * (dist[ramp] - (half - edge)) / edge))
    od = profile.od + (pit.residual_od - profile.od) * window
    return profile.with_od(od)


def _tooth_profile(shape: str, offsets: np.ndarray, fwhm: float) -> np.ndarray:
    if shape == "gaussian":
        return np.exp(-_LN2X4 * (offsets / fwhm) ** 2)
    return (np.abs(offsets) <= fwhm / 2.0).astype(float)


def carve_comb(profile: AbsorptionProfile, comb: CombSpec) -> AbsorptionProfile:
    """Write a periodic comb inside the comb span; outside is untouched."""
    freq = profile.freq_mhz
    half_span = comb.span_mhz / 2.0
    if -half_span < freq[0] or half_span > freq[-1]:
        raise ValueError("comb span exceeds the profile grid")

    teeth = np.zeros_like(freq)
    inside = np.abs(freq) <= half_span
    for center in comb.tooth_centers():
        teeth += _tooth_profile(comb.tooth_shape, freq - center, comb.tooth_fwhm_mhz)
    teeth = np.clip(teeth, 0.0, 1.0)
    od = profile.od.copy()
    od[inside] = comb.background_od + (comb.peak_od - comb.background_od) * teeth[inside]
    return profile.with_od(od)


def transmission(profile: AbsorptionProfile) -> np.ndarray:
    """Intensity transmission spectrum T = exp(-OD), aligned with the grid."""
    return np.exp(-profile.od)


def lorentzian(freq_mhz: np.ndarray, fwhm_mhz: float, center_mhz: float = 0.0) -> np.ndarray:
    """Unit-area Lorentzian line sampled on the grid."""
    hwhm = fwhm_mhz / 2.0
    return (hwhm / math.pi) / ((freq_mhz - center_mhz) ** 2 + hwhm**2)


def filtered_lineshape(lorentzian_fwhm_mhz: float, pit_profile: AbsorptionProfile) -> np.ndarray:
    """Coincidence-rate trace of a Lorentzian photon line scanned across a pit.

    Convolves the unit-area Lorentzian with the pit transmission spectrum on
    the profile grid; the transmission is edge-padded so the open ends of
    the grid do not dent the trace.
    """
    if lorentzian_fwhm_mhz <= 0:
        raise ValueError("Lorentzian FWHM must be positive")
    freq = pit_profile.freq_mhz
    step = pit_profile.step_mhz
    trans = transmission(pit_profile)

    half = (freq[-1] - freq[0]) / 2.0
    kernel_freq = np.arange(-half, half + step / 2, step)
    kernel = lorentzian(kernel_freq, lorentzian_fwhm_mhz)

    pad = kernel_freq.size // 2
    padded = np.concatenate([np.full(pad, trans[0]), trans, np.full(pad, trans[-1])])
    out = np.convolve(padded, kernel, mode="same")[pad:pad + trans.size] * step
    return out


def train_from_spectral_target(freq_mhz: np.ndarray, target: np.ndarray):
    """Inverse-transform a power-spectrum target (on an FFT-ordered
    frequency axis) into a zero-phase complex pulse train.

    Returns (time_us, amplitude); the train duration is 1/step and the main
    pulse sits at time zero.
    """
    n = freq_mhz.size
    step = freq_mhz[1] - freq_mhz[0]
    amp = np.fft.fftshift(np.fft.ifft(np.sqrt(np.clip(target, 0.0, None))))
    time_us = (np.arange(n) - n // 2) / (n * step)
    return time_us, amp


def single_tooth_target(tooth_fwhm_mhz: float, shape: str = "gaussian",
                        step_fraction: float = 0.125, margin: float = 16.0):
    """FFT-ordered frequency axis and target for one isolated tooth."""
    step = tooth_fwhm_mhz * step_fraction
    n = 1 << max(int(math.ceil(math.log2(margin * tooth_fwhm_mhz / step))), 8)
    freq = np.fft.fftfreq(n, d=1.0 / (n * step))
    return freq, _tooth_profile(shape, freq, tooth_fwhm_mhz)


def preparation_pulse_train(comb: CombSpec, max_duration_us: float = 200.0,
                            resolution_fraction: float = 0.125):
    """Time-domain complex pulse train whose power spectrum draws the comb.

    The spectral target is the comb tooth envelope (normalized to unit
    peak); the returned train is the inverse Fourier transform of its
    zero-phase amplitude spectrum.  Resolving teeth of width w requires a
    train of duration 1/(resolution_fraction * w); if that exceeds
    max_duration_us a ValueError is raised.

    Returns (time_us, amplitude) with time centered on the main pulse.
    """
    step = comb.tooth_fwhm_mhz * resolution_fraction
    duration = 1.0 / step
    if duration > max_duration_us:
        raise ValueError(
            f"resolving {comb.tooth_fwhm_mhz} MHz teeth needs a {duration:.0f} us train "
            f"(> {max_duration_us} us limit)"
        )
    # frequency span with margin around the comb, rounded to a power of two
    span = 2.0 * (comb.span_mhz / 2.0 + 4.0 * comb.periodicity_mhz)
    n = 1 << max(int(math.ceil(math.log2(span / step))), 8)
    freq = np.fft.fftfreq(n, d=1.0 / (n * step))

    target = np.zeros(n)
    inside = np.abs(freq) <= comb.span_mhz / 2.0
    for center in comb.tooth_centers():
        target += _tooth_profile(comb.tooth_shape, freq - center, comb.tooth_fwhm_mhz)
    target = np.clip(target, 0.0, 1.0)
    target[~inside] = 0.0
    return train_from_spectral_target(freq, target)


def power_spectrum(time_us: np.ndarray, amplitude: np.ndarray):
    """Power spectrum |FFT|^2 of a complex train, normalized to unit peak.

    Returns (freq_mhz, power) sorted by frequency; inverse of the
    construction in preparation_pulse_train up to normalization.
    """
    n = time_us.size
    dt = time_us[1] - time_us[0]
    spec = np.abs(np.fft.fft(np.fft.ifftshift(amplitude))) ** 2
    freq = np.fft.fftfreq(n, d=dt)
    order = np.argsort(freq)
    power = spec[order]
    peak = power.max()
    return freq[order], power / peak if peak > 0 else power


def comb_spectrum_nrmse(comb: CombSpec, time_us: np.ndarray, amplitude: np.ndarray) -> float:
    """Normalized RMS mismatch between a train's power spectrum and the comb
    envelope, evaluated across the comb span (normalized to the unit peak)."""
    freq, power = power_spectrum(time_us, amplitude)
    inside = np.abs(freq) <= comb.span_mhz / 2.0
    target = np.zeros_like(freq)
    for center in comb.tooth_centers():
        target += _tooth_profile(comb.tooth_shape, freq - center, comb.tooth_fwhm_mhz)
    target = np.clip(target, 0.0, 1.0)
    return float(np.sqrt(np.mean((power[inside] - target[inside]) ** 2)))
