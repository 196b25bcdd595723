"""Monte Carlo photon-pair source with multimode thermal statistics.

Emission model: time is tiled into coherence cells of duration
max(1/(2 pi Gamma_s), 1/(2 pi Gamma_i)).  Each spectral mode carries an
independent Bose-Einstein (geometric) occupation per cell with mean mu/N,
so the cell totals are negative-binomial and the unheralded single-arm
bunching is 1 + 1/N.  Cells anchor the *signal* photon times; each idler is
its signal partner shifted by a signed biphoton delay drawn from the
asymmetric double exponential exp(-t/T_s) (t >= 0) / exp(t/T_i) (t < 0).

Linewidth-to-time convention: T_x = 1/(2 pi Gamma_x).  The experimental
quotes of a 1.8 MHz biphoton linewidth alongside a 121 ns correlation time
do not pin this mapping; the convention here is a documented choice and no
consistency between those two figures is asserted.

Detected-event streams are deterministic per (configuration, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .timetags import (CHANNEL_IDLER, CHANNEL_SIGNAL, CHANNEL_SIGNAL_B,
                       TimeTagStream)

PS_PER_US = 1_000_000
PS_PER_S = 1_000_000_000_000

# event origins carried through the pipeline (not serialized)
ORIGIN_PAIR = 0
ORIGIN_BROADBAND = 1
ORIGIN_DARK = 2


@dataclass(frozen=True)
class CavityFilter:
    """A Fabry-Perot etalon or filter cavity (FWHM and FSR in MHz)."""

    fwhm_mhz: float
    fsr_mhz: float

    def __post_init__(self):
        if self.fwhm_mhz <= 0 or self.fsr_mhz <= 0:
            raise ValueError("filter linewidth and FSR must be positive")


@dataclass(frozen=True)
class BiphotonModel:
    """Spectral and temporal parameters of the cavity-enhanced pair source."""

    gamma_s_mhz: float = 2.5
    gamma_i_mhz: float = 1.4
    biphoton_fwhm_mhz: float = 1.8
    mode_count: int = 8
    fsr_mhz: float = 261.0
    filter_cavity: CavityFilter = field(default_factory=lambda: CavityFilter(80.0, 17_000.0))
    etalon: CavityFilter = field(default_factory=lambda: CavityFilter(4_250.0, 100_000.0))

    def __post_init__(self):
        if min(self.gamma_s_mhz, self.gamma_i_mhz, self.biphoton_fwhm_mhz, self.fsr_mhz) <= 0:
            raise ValueError("linewidths and FSR must be positive")
        if self.mode_count < 1:
            raise ValueError("mode count must be >= 1")

    @property
    def t_signal_ns(self) -> float:
        return 1e3 / (2.0 * math.pi * self.gamma_s_mhz)

    @property
    def t_idler_ns(self) -> float:
        return 1e3 / (2.0 * math.pi * self.gamma_i_mhz)

    def coherence_cell_ps(self) -> int:
        """Thermal coherence cell: the longer of the two photon times."""
        return max(int(round(max(self.t_signal_ns, self.t_idler_ns) * 1e3)), 1)


@dataclass(frozen=True)
class DetectionChain:
    """Transmission and detector properties of the two arms.

    herald_eff_* are the probabilities that the signal photon survives its
    path given a heralding detection: measured after the source's output
    fiber and in front of the waveguide respectively.  det_eff and
    dark_rate_hz are keyed by channel number.
    """

    herald_eff_source: float = 0.25
    herald_eff_waveguide: float = 0.07
    det_eff: dict = field(default_factory=lambda: {
        CHANNEL_IDLER: 0.10, CHANNEL_SIGNAL: 0.50, CHANNEL_SIGNAL_B: 0.50,
    })
    dark_rate_hz: dict = field(default_factory=lambda: {
        CHANNEL_IDLER: 10.0, CHANNEL_SIGNAL: 10.0, CHANNEL_SIGNAL_B: 50.0,
    })

    def __post_init__(self):
        for eff in (self.herald_eff_source, self.herald_eff_waveguide, *self.det_eff.values()):
            if not 0.0 <= eff <= 1.0:
                raise ValueError("efficiencies must lie in [0, 1]")
        if any(rate < 0 for rate in self.dark_rate_hz.values()):
            raise ValueError("dark rates must be non-negative")

    def signal_path_eff(self, where: str) -> float:
        if where == "source":
            return self.herald_eff_source
        if where == "waveguide":
            return self.herald_eff_waveguide
        raise ValueError("signal path must be 'source' or 'waveguide'")


@dataclass(frozen=True)
class GatingConfig:
    """Pump gating triggered by heralds, plus the cryostat duty cycle.

    After each detected herald the pump shuts at t + pump_off_delay and
    reopens once the retrieval window has passed, at
    t + pump_off_delay + storage_time.  The cryostat cycle leaves the light
    coupled for live_window_ms out of every 1/cryostat_hz.
    """

    pump_off_delay_us: float = 1.2
    storage_time_us: float = 1.5
    cryostat_hz: float = 1.4
    live_window_ms: float = 150.0
    duty_cycle: float | None = None

    MIN_PUMP_OFF_US = 1.2
    MIN_STORAGE_US = 1.5
    MAX_LIVE_MS = 300.0

    def __post_init__(self):
        if self.pump_off_delay_us < self.MIN_PUMP_OFF_US:
            raise ValueError(f"pump gate response is >= {self.MIN_PUMP_OFF_US} us")
        if self.storage_time_us < self.MIN_STORAGE_US:
            raise ValueError(f"storage time is limited to >= {self.MIN_STORAGE_US} us")
        if not 0 < self.live_window_ms < self.MAX_LIVE_MS:
            raise ValueError(f"live window must be inside (0, {self.MAX_LIVE_MS}) ms")
        if self.cryostat_hz <= 0:
            raise ValueError("cryostat frequency must be positive")
        if self.duty_cycle is None:
            object.__setattr__(self, "duty_cycle",
                               self.live_window_ms * 1e-3 * self.cryostat_hz)

    @classmethod
    def for_storage_time(cls, tau_us: float, **kwargs) -> "GatingConfig":
        """Gate delay following the tau - t_off = 0.3 us rule above the
        minimum storage time."""
        t_off = max(cls.MIN_PUMP_OFF_US, tau_us - 0.3)
        return cls(pump_off_delay_us=t_off, storage_time_us=tau_us, **kwargs)


@dataclass(frozen=True)
class NoiseRates:
    """Uncorrelated background on the signal arm.

    broadband_signal_hz is the emission-level rate of source-origin
    broadband noise while the pump is on; it rides the signal path, so the
    same transmission and detector efficiencies thin it.  Detector dark
    rates come from the chain.
    """

    broadband_signal_hz: float = 0.0

    def __post_init__(self):
        if self.broadband_signal_hz < 0:
            raise ValueError("noise rates must be non-negative")


@dataclass
class ChannelEvents:
    """One channel's detected events with simulation-internal annotations."""

    channel: int
    times_ps: np.ndarray
    origin: np.ndarray       # ORIGIN_* codes
    heralded_mode: np.ndarray  # True for pair photons in the heralded spectral mode

    def __len__(self):
        return int(self.times_ps.size)

    def stream(self) -> TimeTagStream:
        return _sorted_stream(self.channel, self.times_ps)

    def sorted(self) -> "ChannelEvents":
        order = np.argsort(self.times_ps, kind="stable")
        return ChannelEvents(self.channel, self.times_ps[order],
                             self.origin[order], self.heralded_mode[order])

    def select(self, mask: np.ndarray) -> "ChannelEvents":
        return ChannelEvents(self.channel, self.times_ps[mask],
                             self.origin[mask], self.heralded_mode[mask])


@dataclass
class SourceRun:
    """All detected events of one simulated acquisition."""

    idler: ChannelEvents
    signal: ChannelEvents
    signal_b: ChannelEvents | None
    duration_s: float
    seed: int

    def streams(self) -> dict[int, TimeTagStream]:
        out = {CHANNEL_IDLER: self.idler.stream(), CHANNEL_SIGNAL: self.signal.stream()}
        if self.signal_b is not None:
            out[CHANNEL_SIGNAL_B] = self.signal_b.stream()
        return out


def _sorted_stream(channel: int, times_ps: np.ndarray) -> TimeTagStream:
    ts = np.sort(np.asarray(times_ps, dtype=np.int64))
    for _ in range(64):
        dup = np.flatnonzero(np.diff(ts) <= 0)
        if dup.size == 0:
            break
        ts[dup + 1] = ts[dup] + 1
        ts = np.sort(ts)
    return TimeTagStream(channel, ts)


def _empty_events(channel: int) -> ChannelEvents:
    return ChannelEvents(channel, np.empty(0, np.int64), np.empty(0, np.uint8),
                         np.empty(0, bool))


def _concat_events(channel: int, parts: list[ChannelEvents]) -> ChannelEvents:
    if not parts:
        return _empty_events(channel)
    ev = ChannelEvents(
        channel,
        np.concatenate([p.times_ps for p in parts]),
        np.concatenate([p.origin for p in parts]),
        np.concatenate([p.heralded_mode for p in parts]),
    )
    return ev.sorted()


def sample_pair_delay(model: BiphotonModel, rng: np.random.Generator, size=None):
    """Signed signal-minus-idler delay (ns) from the double exponential.

    Positive delays decay with the signal time constant, negative ones with
    the idler's; the sign branch is chosen with probability proportional to
    each side's area.
    """
    t_s, t_i = model.t_signal_ns, model.t_idler_ns
    scalar = size is None
    n = 1 if scalar else int(size)
    pick_signal = rng.random(n) < t_s / (t_s + t_i)
    mags = np.where(pick_signal,
                    rng.exponential(t_s, n),
                    -rng.exponential(t_i, n))
    return float(mags[0]) if scalar else mags


def pair_delay_mean_ns(model: BiphotonModel) -> float:
    """Analytic mean of the signed delay: (T_s^2 - T_i^2)/(T_s + T_i)."""
    t_s, t_i = model.t_signal_ns, model.t_idler_ns
    return (t_s**2 - t_i**2) / (t_s + t_i)


def pair_delay_var_ns2(model: BiphotonModel) -> float:
    t_s, t_i = model.t_signal_ns, model.t_idler_ns
    second = 2.0 * (t_s**3 + t_i**3) / (t_s + t_i)
    return second - pair_delay_mean_ns(model) ** 2


def _logarithmic_sizes(rng: np.random.Generator, q: float, n: int) -> np.ndarray:
    """Cluster sizes from the logarithmic distribution P(k) ~ q^k / k.

    Exact up to a q^k_max < 1e-15 truncation; valid for the small q used by
    the thermal cells (q = mu_mode / (1 + mu_mode))."""
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    k_max = max(2, int(math.ceil(-15.0 * math.log(10.0) / math.log(q))))
    k = np.arange(1, k_max + 1)
    pk = q**k / k
    cum = np.cumsum(pk / pk.sum())
    return np.searchsorted(cum, rng.random(n), side="left").astype(np.int64) + 1


def _thermal_pair_cells(rng: np.random.Generator, n_cells: int, n_modes: float,
                        mu_mode: float) -> np.ndarray:
    """Cell indices of pair emissions for n_modes thermal modes.

    Per-cell occupation of each mode is geometric with mean mu_mode, so the
    cell totals are negative binomial NB(n_modes, 1/(1+mu_mode)).  That law
    is sampled in O(pairs) as a compound Poisson process: cluster count
    Poisson(n_cells * n_modes * ln(1 + mu_mode)), cluster sizes logarithmic
    with q = mu_mode/(1+mu_mode), clusters landing on uniform cells.
    """
    if mu_mode <= 0 or n_modes <= 0:
        return np.zeros(0, dtype=np.int64)
    lam = n_modes * math.log1p(mu_mode)
    n_clusters = rng.poisson(n_cells * lam)
    if n_clusters == 0:
        return np.zeros(0, dtype=np.int64)
    cells = rng.integers(0, n_cells, size=n_clusters, dtype=np.int64)
    sizes = _logarithmic_sizes(rng, mu_mode / (1.0 + mu_mode), n_clusters)
    return np.repeat(cells, sizes)


def _poisson_times(rng: np.random.Generator, rate_hz: float, duration_s: float) -> np.ndarray:
    n = rng.poisson(rate_hz * duration_s)
    t = rng.integers(0, max(int(round(duration_s * PS_PER_S)), 1), size=n, dtype=np.int64)
    return np.sort(t)


def _live_mask(times_ps: np.ndarray, gating: GatingConfig | None) -> np.ndarray:
    if gating is None:
        return np.ones(times_ps.shape, dtype=bool)
    cycle_ps = int(round(PS_PER_S / gating.cryostat_hz))
    live_ps = int(round(gating.live_window_ms * 1e-3 * PS_PER_S))
    return (times_ps % cycle_ps) < live_ps


def _merge_intervals(starts: np.ndarray, ends: np.ndarray):
    if starts.size == 0:
        return starts, ends
    merged_s, merged_e = [starts[0]], [ends[0]]
    for s, e in zip(starts[1:], ends[1:]):
        if s <= merged_e[-1]:
            merged_e[-1] = max(merged_e[-1], e)
        else:
            merged_s.append(s)
            merged_e.append(e)
    return np.array(merged_s, np.int64), np.array(merged_e, np.int64)


def _in_intervals(times_ps: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    if starts.size == 0 or times_ps.size == 0:
        return np.zeros(times_ps.shape, dtype=bool)
    idx = np.searchsorted(starts, times_ps, side="right") - 1
    valid = idx >= 0
    inside = np.zeros(times_ps.shape, dtype=bool)
    inside[valid] = times_ps[valid] < ends[idx[valid]]
    return inside


def generate_timetags(model: BiphotonModel, chain: DetectionChain, pair_rate_hz: float,
                      duration_s: float, noise: NoiseRates | None = None,
                      gating: GatingConfig | None = None, seed: int = 0,
                      hbt_split: bool = False, signal_path: str = "source",
                      single_mode_heralding: bool = True) -> SourceRun:
    """Simulate one acquisition and return the detected-event record.

    pair_rate_hz is the total pair-emission rate summed over the simulated
    spectral modes.  Heralding picks out one mode when
    single_mode_heralding is set (the filter cavity blocks the rest).  With
    hbt_split the signal photons are routed 50/50 onto two detectors.
    Results are bit-identical for identical arguments and seed.
    """
    if pair_rate_hz < 0 or duration_s <= 0:
        raise ValueError("rates must be >= 0 and duration positive")
    noise = noise or NoiseRates()
    duration_ps = int(round(duration_s * PS_PER_S))
    if duration_ps >= np.iinfo(np.int64).max // 2:
        raise OverflowError("duration exceeds the 64-bit picosecond range")
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    cell_ps = model.coherence_cell_ps()
    n_modes = model.mode_count
    mu_cell = pair_rate_hz * cell_ps / PS_PER_S
    mu_mode = mu_cell / n_modes

    sig_eff = chain.signal_path_eff(signal_path)
    eff_idler = chain.det_eff.get(CHANNEL_IDLER, 0.0)
    eff_sig = chain.det_eff.get(CHANNEL_SIGNAL, 0.0)
    eff_sig_b = chain.det_eff.get(CHANNEL_SIGNAL_B, eff_sig)

    idler_parts, sig_parts, sig_b_parts = [], [], []
    n_cells = int(duration_ps // cell_ps)
    # chunk by expected pair count to bound the working set
    pairs_per_chunk = 4_000_000
    cells_per_chunk = max(min(int(pairs_per_chunk / max(mu_cell, 1e-12)), n_cells), 1) \
        if mu_cell > 0 else n_cells

    for start_cell in range(0, n_cells, max(cells_per_chunk, 1)):
        count = min(cells_per_chunk, n_cells - start_cell)
        # heralded mode separately from the unheralded remainder; only the
        # remainder's total matters
        for lam_modes, is_heralded in ((1.0, True), (float(n_modes - 1), False)):
            cells = _thermal_pair_cells(rng, count, lam_modes, mu_mode)
            total = cells.size
            if total == 0:
                continue
            sig_times = (cells + start_cell) * cell_ps + rng.integers(0, cell_ps, size=total)
            delays_ps = np.round(sample_pair_delay(model, rng, total) * 1e3).astype(np.int64)
            idl_times = sig_times - delays_ps

            # idler arm: filter cavity passes the heralded mode only
            if is_heralded or not single_mode_heralding:
                keep = rng.random(total) < eff_idler
                t = idl_times[keep]
                ok = (t >= 0) & (t < duration_ps)
                idler_parts.append(ChannelEvents(
                    CHANNEL_IDLER, t[ok],
                    np.full(ok.sum(), ORIGIN_PAIR, np.uint8),
                    np.full(ok.sum(), is_heralded, bool)))

            # signal arm: path transmission, then detector(s)
            keep = rng.random(total) < sig_eff
            t = sig_times[keep]
            if hbt_split:
                to_b = rng.random(t.size) < 0.5
                for dest, parts, channel, eff in ((~to_b, sig_parts, CHANNEL_SIGNAL, eff_sig),
                                                  (to_b, sig_b_parts, CHANNEL_SIGNAL_B, eff_sig_b)):
                    tt = t[dest]
                    tt = tt[rng.random(tt.size) < eff]
                    ok = (tt >= 0) & (tt < duration_ps)
                    parts.append(ChannelEvents(
                        channel, tt[ok], np.full(ok.sum(), ORIGIN_PAIR, np.uint8),
                        np.full(ok.sum(), is_heralded, bool)))
            else:
                tt = t[rng.random(t.size) < eff_sig]
                ok = (tt >= 0) & (tt < duration_ps)
                sig_parts.append(ChannelEvents(
                    CHANNEL_SIGNAL, tt[ok],
                    np.full(ok.sum(), ORIGIN_PAIR, np.uint8),
                    np.full(ok.sum(), is_heralded, bool)))

    # source-origin broadband noise on the signal arm, thinned by the same
    # path transmission and detection efficiency as the signal photons
    bb_times = _poisson_times(rng, noise.broadband_signal_hz, duration_s)
    bb_times = bb_times[rng.random(bb_times.size) < sig_eff]
    if hbt_split and bb_times.size:
        to_b = rng.random(bb_times.size) < 0.5
        for mask, parts, channel, eff in ((~to_b, sig_parts, CHANNEL_SIGNAL, eff_sig),
                                          (to_b, sig_b_parts, CHANNEL_SIGNAL_B, eff_sig_b)):
            tt = bb_times[mask]
            tt = tt[rng.random(tt.size) < eff]
            parts.append(ChannelEvents(channel, tt,
                                       np.full(tt.size, ORIGIN_BROADBAND, np.uint8),
                                       np.zeros(tt.size, bool)))
    elif bb_times.size:
        bb_times = bb_times[rng.random(bb_times.size) < eff_sig]
        sig_parts.append(ChannelEvents(CHANNEL_SIGNAL, bb_times,
                                       np.full(bb_times.size, ORIGIN_BROADBAND, np.uint8),
                                       np.zeros(bb_times.size, bool)))

    idler = _concat_events(CHANNEL_IDLER, idler_parts)
    signal = _concat_events(CHANNEL_SIGNAL, sig_parts)
    signal_b = _concat_events(CHANNEL_SIGNAL_B, sig_b_parts) if hbt_split else None

    # cryostat live windows act on everything the source emits
    if gating is not None:
        for ev in filter(None, (idler, signal, signal_b)):
            src = ev.origin != ORIGIN_DARK
            keep = ~src | _live_mask(ev.times_ps, gating)
            _inplace_select(ev, keep)

        # pump gate triggered by detected heralds: source emissions vanish
        # from t_off after each herald until the retrieval window has passed
        heralds = idler.times_ps
        t_off = int(round(gating.pump_off_delay_us * PS_PER_US))
        hold = int(round(gating.storage_time_us * PS_PER_US))
        starts, ends = _merge_intervals(heralds + t_off, heralds + t_off + hold)
        for ev in filter(None, (idler, signal, signal_b)):
            src = ev.origin != ORIGIN_DARK
            gated = _in_intervals(ev.times_ps, starts, ends) & src
            _inplace_select(ev, ~gated)

    # detector dark counts, immune to gating and duty cycle
    for ev, channel in ((idler, CHANNEL_IDLER), (signal, CHANNEL_SIGNAL),
                        (signal_b, CHANNEL_SIGNAL_B)):
        if ev is None:
            continue
        dark = _poisson_times(rng, chain.dark_rate_hz.get(channel, 0.0), duration_s)
        if dark.size:
            merged = _concat_events(channel, [ev, ChannelEvents(
                channel, dark, np.full(dark.size, ORIGIN_DARK, np.uint8),
                np.zeros(dark.size, bool))])
            _inplace_copy(ev, merged)

    return SourceRun(idler, signal, signal_b, duration_s, seed)


def _inplace_select(ev: ChannelEvents, mask: np.ndarray):
    ev.times_ps = ev.times_ps[mask]
    ev.origin = ev.origin[mask]
    ev.heralded_mode = ev.heralded_mode[mask]


def _inplace_copy(ev: ChannelEvents, other: ChannelEvents):
    ev.times_ps = other.times_ps
    ev.origin = other.origin
    ev.heralded_mode = other.heralded_mode


def expected_herald_rate(model: BiphotonModel, chain: DetectionChain, pair_rate_hz: float,
                         gating: GatingConfig | None = None,
                         single_mode_heralding: bool = True) -> float:
    """Bookkeeping estimate of the detected herald rate (dark counts aside).

    Duty factors: the cryostat live window, and the first-order pump-gate
    dead time (each herald blanks the source for the storage time).
    """
    mode_fraction = 1.0 / model.mode_count if single_mode_heralding else 1.0
    base = pair_rate_hz * mode_fraction * chain.det_eff.get(CHANNEL_IDLER, 0.0)
    if gating is None:
        return base
    dead = base * gating.storage_time_us * 1e-6  # heralds arriving while gated
    return base * gating.duty_cycle * max(1.0 - dead, 0.0)


def apply_transmission(events: ChannelEvents, survival: float,
                       rng: np.random.Generator,
                       only_origin: int | None = None) -> ChannelEvents:
    """Bernoulli thinning of a channel, optionally restricted to one origin."""
    if not 0.0 <= survival <= 1.0:
        raise ValueError("survival probability must lie in [0, 1]")
    hit = np.ones(len(events), dtype=bool) if only_origin is None \
        else events.origin == only_origin
    drop = hit & (rng.random(len(events)) >= survival)
    return events.select(~drop)


def apply_memory_response(stream, eta_afc: float, tau_us: float | None = None,
                          seed: int = 0):
    """Echo of a stored stream: survive with the internal efficiency and
    reappear one storage time later; direct transmission is discarded.

    ``stream`` may be a TimeTagStream or a ChannelEvents record; the first
    argument also accepts a StorageResult-like object carrying
    internal_efficiency and echo_time_us in place of (eta_afc, tau).
    """
    if hasattr(eta_afc, "internal_efficiency"):
        response = eta_afc
        eta, tau = response.internal_efficiency, response.echo_time_us
    else:
        eta, tau = float(eta_afc), float(tau_us)
    if not 0.0 <= eta <= 1.0:
        raise ValueError("internal efficiency must lie in [0, 1]")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5F0]))
    shift = int(round(tau * PS_PER_US))

    if isinstance(stream, ChannelEvents):
        keep = rng.random(len(stream)) < eta
        kept = stream.select(keep)
        kept.times_ps = kept.times_ps + shift
        return kept.sorted()
    ts = stream.timestamps_ps
    keep = rng.random(ts.size) < eta
    return _sorted_stream(stream.channel, ts[keep] + shift)
