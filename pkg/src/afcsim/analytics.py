"""Estimators on time-tag streams: coincidence histograms, windowed
second-order correlations, heralded autocorrelation and the Cauchy-Schwarz
parameter.

All correlation estimates carry Poissonian standard errors.  Two estimator
families are used:

* delay-histogram estimators (``g2_cross``, ``afc_g2``): coincidences in a
  window around the cross-correlation peak, normalized by accidentals from
  a reference delay region rescaled to the window width.  Suited to
  cross-correlations whose peak is much narrower than the window.
* count-probability estimator (``unconditional_autocorrelation``): time is
  tiled into windows of the stated width and
  g2 = <n_a n_b> / (<n_a> <n_b>) over aligned windows, which is the
  coincidence-probability definition itself.  This form stays unbiased for
  bunching whose correlation time matches the window, where the
  delay-histogram form would dilute it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .timetags import TimeTagStream

PS_PER_NS = 1000


@dataclass(frozen=True)
class CoincidenceHistogram:
    """Start-stop delay histogram (delays in ns)."""

    bin_width_ns: float
    t_min_ns: float
    t_max_ns: float
    counts: np.ndarray
    n_starts: int
    n_stops: int
    duration_s: float

    @property
    def bin_centers_ns(self) -> np.ndarray:
        n = self.counts.size
        return self.t_min_ns + (np.arange(n) + 0.5) * self.bin_width_ns

    def to_csv(self, path, meta: dict | None = None):
        lines = [f"# {k}={v}" for k, v in (meta or {}).items()]
        body = "\n".join(f"{c:.6f},{int(v)}" for c, v in zip(self.bin_centers_ns, self.counts))
        with open(path, "w") as fh:
            for line in lines:
                fh.write(line + "\n")
            fh.write("bin_center_ns,counts\n")
            fh.write(body + "\n")


@dataclass(frozen=True)
class CorrelationResult:
    """A normalized second-order correlation value with its window context."""

    g2: float
    sigma: float
    window_ns: float
    signal_counts: int
    accidental_estimate: float

    def __post_init__(self):
        if self.g2 < 0 or self.sigma < 0:
            raise ValueError("g2 and sigma must be non-negative")

    @property
    def significance_vs(self) -> float:
        """z-score of the excess over the classical value 1."""
        return (self.g2 - 1.0) / self.sigma if self.sigma > 0 else math.inf

    def to_json_dict(self) -> dict:
        return {
            "g2": self.g2,
            "sigma": self.sigma,
            "window_ns": self.window_ns,
            "signal_counts": self.signal_counts,
            "accidental_estimate": self.accidental_estimate,
        }


@dataclass(frozen=True)
class CSResult:
    """Cauchy-Schwarz parameter R = g_si^2 / (g_ss g_ii) with propagation."""

    r_value: float
    sigma_r: float
    g2_si: tuple
    g2_ss: tuple
    g2_ii: tuple
    assumed_gss_flag: bool = False

    def __post_init__(self):
        if self.r_value < 0:
            raise ValueError("R must be non-negative")

    @property
    def violation_significance(self) -> float:
        return (self.r_value - 1.0) / self.sigma_r if self.sigma_r > 0 else math.inf

    def to_json_dict(self) -> dict:
        return {
            "r_value": self.r_value,
            "sigma_r": self.sigma_r,
            "violation_significance": self.violation_significance,
            "g2_si": list(self.g2_si),
            "g2_ss": list(self.g2_ss),
            "g2_ii": list(self.g2_ii),
            "assumed_gss": self.assumed_gss_flag,
        }


def _check_sorted(stream: TimeTagStream):
    ts = stream.timestamps_ps
    if ts.size > 1 and np.any(np.diff(ts) <= 0):
        raise ValueError("stream must be strictly increasing")


def coincidence_histogram(start: TimeTagStream, stop: TimeTagStream, bin_ns: float,
                          delay_range_ns: tuple[float, float]) -> CoincidenceHistogram:
    """Histogram of stop-minus-start delays inside delay_range_ns.

    Works by a sorted two-pointer sweep (searchsorted per start block), so
    the cost is linear in events plus the number of recorded coincidences.
    """
    _check_sorted(start)
    _check_sorted(stop)
    t_min, t_max = delay_range_ns
    if t_max <= t_min:
        raise ValueError("delay range must be increasing")
    n_bins = int(round((t_max - t_min) / bin_ns))
    if n_bins < 1:
        raise ValueError("delay range shorter than one bin")
    lo_ps = int(round(t_min * PS_PER_NS))
    hi_ps = int(round(t_max * PS_PER_NS))

    starts = start.timestamps_ps
    stops = stop.timestamps_ps
    counts = np.zeros(n_bins, dtype=np.int64)
    if starts.size and stops.size:
        first = np.searchsorted(stops, starts + lo_ps, side="left")
        last = np.searchsorted(stops, starts + hi_ps, side="right")
        n_per_start = last - first
        idx = np.repeat(starts, n_per_start)
        take = _ranges(first, last)
        deltas = stops[take] - idx
        bins = ((deltas - lo_ps) * n_bins) // (hi_ps - lo_ps)
        bins = np.clip(bins, 0, n_bins - 1)
        np.add.at(counts, bins, 1)

    span_ps = max(int(starts[-1]) if starts.size else 0,
                  int(stops[-1]) if stops.size else 0)
    return CoincidenceHistogram(bin_ns, t_min, t_max, counts,
                                int(starts.size), int(stops.size),
                                span_ps / 1e12)


def _ranges(first: np.ndarray, last: np.ndarray) -> np.ndarray:
    """Concatenated arange(first[i], last[i]) without a Python loop."""
    lengths = last - first
    total = int(lengths.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    out = np.ones(total, dtype=np.int64)
    starts_pos = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    nonzero = lengths > 0
    out[starts_pos[nonzero]] = first[nonzero]
    shift = first[nonzero][1:] - (first[nonzero][:-1] + lengths[nonzero][:-1] - 1)
    out[starts_pos[nonzero][1:]] = shift
    return np.cumsum(out)


def _poisson_ratio_sigma(g2: float, n_signal: float, n_accidental: float) -> float:
    if n_signal <= 0 or n_accidental <= 0:
        return math.inf
    return g2 * math.sqrt(1.0 / n_signal + 1.0 / n_accidental)


def g2_cross(hist: CoincidenceHistogram, window_ns: float = 400.0,
             center_ns: float | None = None,
             accidental_region: tuple[float, float] | None = None,
             guard_windows: float = 2.0) -> CorrelationResult:
    """Windowed cross-correlation from a delay histogram.

    The numerator window is centered on the histogram peak (or center_ns).
    Accidentals default to every bin farther than guard_windows window
    widths from the window edges; an explicit accidental_region (ns)
    overrides that.  The accidental count is rescaled to the window width.
    """
    centers = hist.bin_centers_ns
    if center_ns is None:
        center_ns = float(centers[np.argmax(hist.counts)])
    half = window_ns / 2.0
    # take exactly round(window/bin) bins nearest the center so the selected
    # bins integrate window_ns of delay; a naive |delta| <= half mask grabs
    # both half-covered edge bins and dilutes the estimate
    n_win = max(int(round(window_ns / hist.bin_width_ns)), 1)
    if n_win > centers.size:
        raise ValueError("window wider than the histogram range")
    nearest = np.argsort(np.abs(centers - center_ns), kind="stable")[:n_win]
    in_window = np.zeros(centers.size, dtype=bool)
    in_window[nearest] = True

    if accidental_region is None:
        guard = half + guard_windows * window_ns
        acc_mask = np.abs(centers - center_ns) > guard
    else:
        lo, hi = accidental_region
        if hi <= lo:
            raise ValueError("accidental region must be increasing")
        acc_mask = (centers >= lo) & (centers <= hi)
        if np.any(acc_mask & in_window):
            raise ValueError("accidental region overlaps the signal window")
    if not np.any(acc_mask):
        raise ValueError("empty accidental region")

    n_sig = float(hist.counts[in_window].sum())
    n_acc = float(hist.counts[acc_mask].sum())
    scale = in_window.sum() / acc_mask.sum()
    accidental = n_acc * scale
    if accidental <= 0:
        raise ValueError("no accidental coincidences to normalize with")
    g2 = n_sig / accidental
    sigma = _poisson_ratio_sigma(g2, n_sig, n_acc)
    return CorrelationResult(g2, sigma, window_ns, int(n_sig), accidental)


def _occupied_windows(stream: TimeTagStream, window_ps: int, n_windows: int):
    """(window index, count) pairs for the occupied windows only."""
    idx = stream.timestamps_ps // window_ps
    idx = idx[(idx >= 0) & (idx < n_windows)]
    return np.unique(idx, return_counts=True)


def unconditional_autocorrelation(stream_a: TimeTagStream, stream_b: TimeTagStream,
                                  window_ns: float, duration_s: float) -> CorrelationResult:
    """Zero-lag windowed autocorrelation of a beam split onto two detectors.

    Implements the probability definition g2 = p_ab / (p_a p_b) on windows
    of the stated width tiling the acquisition: with per-window counts n_a,
    n_b this is <n_a n_b> / (<n_a><n_b>), evaluated sparsely over occupied
    windows so memory stays proportional to the event count.
    """
    _check_sorted(stream_a)
    _check_sorted(stream_b)
    window_ps = int(round(window_ns * PS_PER_NS))
    n_windows = int(duration_s * 1e12) // window_ps
    if n_windows < 1:
        raise ValueError("acquisition shorter than one window")
    win_a, counts_a = _occupied_windows(stream_a, window_ps, n_windows)
    win_b, counts_b = _occupied_windows(stream_b, window_ps, n_windows)
    total_a, total_b = counts_a.sum(), counts_b.sum()
    if total_a == 0 or total_b == 0:
        raise ValueError("a stream has no counts inside the acquisition")
    _, ia, ib = np.intersect1d(win_a, win_b, assume_unique=True, return_indices=True)
    coincidences = float(np.dot(counts_a[ia], counts_b[ib]))
    baseline = total_a * total_b / n_windows
    g2 = coincidences / baseline
    sigma = _poisson_ratio_sigma(g2, coincidences, min(total_a, total_b))
    return CorrelationResult(float(g2), float(sigma), window_ns,
                             int(coincidences), float(baseline))


def heralded_autocorrelation(idler: TimeTagStream, signal_a: TimeTagStream,
                             signal_b: TimeTagStream, window_ns: float = 400.0,
                             max_separation: int = 10):
    """Heralded signal autocorrelation from triple coincidences.

    Each herald owns a window of window_ns around its timestamp.  A herald
    whose window holds counts on both signal detectors lands in bin 0; a
    herald with a count on one detector only is paired with the nearest
    subsequent herald whose window holds a count on the other detector, and
    lands in the bin of their herald separation.  Bin 0 divided by the mean
    of the separation bins estimates g2_{i:s,s}: for uncorrelated heralded
    detections the separation bins all carry the same per-herald hit
    probability, so the ratio normalizes the same-herald coincidences to
    accidentals.

    Returns (bins, g2, sigma) with bins[k] the count at herald separation k.
    """
    for s in (idler, signal_a, signal_b):
        _check_sorted(s)
    h = idler.timestamps_ps
    if h.size == 0:
        raise ValueError("no heralds")
    half_ps = int(round(window_ns * PS_PER_NS / 2.0))
    bins = np.zeros(max_separation + 1, dtype=np.int64)

    def hits(times):
        lo = np.searchsorted(times, h - half_ps, side="left")
        hi = np.searchsorted(times, h + half_ps, side="right")
        return hi > lo

    hit_a = hits(signal_a.timestamps_ps)
    hit_b = hits(signal_b.timestamps_ps)

    bins[0] = int(np.count_nonzero(hit_a & hit_b))

    # Heralds with a hit on arm a alone pair with the next herald holding a
    # hit on arm b; triggering on one arm only keeps the per-separation hit
    # probability equal to the per-herald probability that normalizes bin 0.
    partner_idx = np.flatnonzero(hit_b)
    triggers = np.flatnonzero(hit_a & ~hit_b)
    if partner_idx.size:
        nxt = np.searchsorted(partner_idx, triggers, side="right")
        valid = nxt < partner_idx.size
        sep = partner_idx[nxt[valid]] - triggers[valid]
        sep = sep[sep <= max_separation]
        np.add.at(bins, sep, 1)

    reference = bins[1:]
    if np.count_nonzero(reference) < 2:
        raise ValueError("fewer than 2 nonzero reference bins; not enough statistics")
    baseline = reference.mean()
    g2 = float(bins[0] / baseline)
    if bins[0] > 0:
        sigma = g2 * math.sqrt(1.0 / bins[0] + 1.0 / reference.sum())
    else:
        sigma = 1.0 / baseline
    return bins, g2, float(sigma)


def cs_parameter(g_si: tuple, g_ss: tuple, g_ii: tuple,
                 assumed_gss: bool = False) -> CSResult:
    """Cauchy-Schwarz parameter with first-order error propagation.

    Each argument is (value, sigma).  Values above R = 1 certify
    nonclassical signal-idler correlations; the violation significance is
    (R - 1)/sigma_R.
    """
    (v_si, s_si), (v_ss, s_ss), (v_ii, s_ii) = g_si, g_ss, g_ii
    if v_ss <= 0 or v_ii <= 0:
        raise ValueError("autocorrelation denominators must be positive")
    r = v_si**2 / (v_ss * v_ii)
    rel = math.sqrt((2.0 * s_si / v_si) ** 2 + (s_ss / v_ss) ** 2 + (s_ii / v_ii) ** 2)
    return CSResult(r, r * rel, g_si, g_ss, g_ii, assumed_gss)


CLASSICAL_GSS_ASSUMED = 2.0  # ideal two-mode-squeezed marginal, used when
                             # the signal autocorrelation is unmeasurable


def classical_bound(g_ss: tuple, g_ii: tuple) -> tuple[float, float]:
    """Classical ceiling sqrt(g_ss g_ii) on the cross-correlation, with
    first-order error."""
    (v_ss, s_ss), (v_ii, s_ii) = g_ss, g_ii
    bound = math.sqrt(v_ss * v_ii)
    sigma = 0.5 * bound * math.sqrt((s_ss / v_ss) ** 2 + (s_ii / v_ii) ** 2)
    return bound, sigma


def afc_g2(idler: TimeTagStream, signal: TimeTagStream, tau_us: float,
           t_p_off_us: float, window_ns: float = 400.0,
           bin_ns: float = 40.0) -> CorrelationResult:
    """Cross-correlation of the retrieved echo against its herald.

    The numerator window (window_ns) is centered at the storage time; the
    accidentals are integrated from the trailing window edge up to the last
    stored noise count at tau + t_p_off and rescaled to the window width.
    """
    if tau_us < 1.5:
        raise ValueError("storage time below the 1.5 us minimum")
    tau_ns = tau_us * 1e3
    half = window_ns / 2.0
    acc_lo = tau_ns + half
    acc_hi = tau_ns + t_p_off_us * 1e3
    if acc_hi - acc_lo < bin_ns:
        raise ValueError("accidental region is shorter than one bin")

    hist = coincidence_histogram(idler, signal, bin_ns,
                                 (tau_ns - 2 * window_ns, acc_hi))
    return g2_cross(hist, window_ns, center_ns=tau_ns,
                    accidental_region=(acc_lo, acc_hi))
