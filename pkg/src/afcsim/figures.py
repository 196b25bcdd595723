"""Figure rendering for the scenario reports.

Every scenario writes its delimited output first; these helpers draw the
matching figure next to it.  The Agg backend keeps rendering headless and
the PNG metadata fixed, so repeated runs of the same seed produce
byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SAVE_KWARGS = dict(dpi=150, metadata={"Software": "afcsim"})


def _save(fig, path):
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def insertion_loss_vs_mode(path, rows):
    """Insertion loss against horizontal mode size, one marker per guide."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for kind, marker, color in (("I", "o", "tab:blue"), ("II", "s", "k")):
        pts = [(r["fwhm_h_um"], r["il_db"]) for r in rows if r["type"] == kind]
        if pts:
            x, y = zip(*pts)
            ax.plot(x, y, marker, color=color, label=f"type {kind}", mfc="none")
    ax.set_xlabel("horizontal mode FWHM (um)")
    ax.set_ylabel("insertion loss (dB)")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def bending_loss(path, radii_mm, data_by_kind, fits_by_kind):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    r_fine = np.linspace(min(radii_mm) * 0.9, max(radii_mm) * 1.05, 200)
    for kind, color in (("I", "tab:blue"), ("II", "k")):
        if kind not in data_by_kind:
            continue
        ax.plot(radii_mm, data_by_kind[kind], "o" if kind == "I" else "s",
                color=color, mfc="none", label=f"type {kind}")
        amp, decay, _ = fits_by_kind[kind]
        ax.plot(r_fine, amp * np.exp(-r_fine / decay), "--", color=color, lw=1)
    ax.set_xlabel("radius of curvature (mm)")
    ax.set_ylabel("bending loss (dB)")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def echo_decays(path, tpe_tau2, tpe_intensity, tpe_fit, tau1, gamma_khz, gamma_ref):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax1.semilogy(tpe_tau2, tpe_intensity, "o", color="tab:orange", mfc="none")
    if tpe_fit is not None:
        t = np.linspace(min(tpe_tau2), max(tpe_tau2), 200)
        ax1.semilogy(t, tpe_fit[0] * np.exp(-4 * t / tpe_fit[1]), "k-", lw=1)
    ax1.set_xlabel("tau2 (us)")
    ax1.set_ylabel("echo intensity (arb.)")
    ax2.plot(tau1, gamma_khz, "s", color="tab:orange", mfc="none")
    ax2.axhline(gamma_ref, color="k", lw=1)
    ax2.set_xlabel("tau1 (us)")
    ax2.set_ylabel("homogeneous linewidth (kHz)")
    for ax in (ax1, ax2):
        ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def rabi_calibration(path, powers_mw, omega_mhz, slope, scaled_reference=None):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    sqrtp = np.sqrt(powers_mw)
    ax.plot(sqrtp, omega_mhz, "o", color="tab:orange", mfc="none", label="measured")
    x = np.linspace(0, sqrtp.max() * 1.05, 100)
    ax.plot(x, slope * x, "--", color="tab:orange", lw=1, label="fit")
    if scaled_reference is not None:
        ax.plot(x, scaled_reference * x, "-", color="tab:green", lw=1,
                label="scaled from reference mode")
    ax.set_xlabel("sqrt(P) (sqrt(mW))")
    ax.set_ylabel("Rabi frequency / 2pi (MHz)")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def coincidence_histogram(path, centers_ns, counts, window_ns=None, center_ns=None,
                          label="coincidences"):
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ax.step(centers_ns, counts, where="mid", color="tab:orange", lw=0.8, label=label)
    if window_ns and center_ns is not None:
        ax.axvspan(center_ns - window_ns / 2, center_ns + window_ns / 2,
                   color="tab:orange", alpha=0.25, lw=0)
    ax.set_xlabel("delay (ns)")
    ax.set_ylabel("counts")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def g2_vs_power(path, powers_mw, source_g2, source_sigma, pit_g2=None, pit_sigma=None):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.errorbar(powers_mw, source_g2, yerr=source_sigma, fmt="o", mfc="none",
                color="tab:orange", label="source")
    if pit_g2 is not None:
        ax.errorbar(powers_mw, pit_g2, yerr=pit_sigma, fmt="o", color="saddlebrown",
                    label="after transparency window")
    ax.set_xlabel("pump power (mW)")
    ax.set_ylabel("signal-idler g2 (400 ns)")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    _save(fig, path)


def storage_histograms(path, pit_centers, pit_counts, afc_centers, afc_counts,
                       tau_us, window_ns):
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.step(pit_centers / 1e3, pit_counts, where="mid", color="gray", lw=0.8,
            label="transparency window")
    ax.step(afc_centers / 1e3, afc_counts, where="mid", color="tab:orange", lw=0.8,
            label="storage run")
    for center in (0.0, tau_us):
        ax.axvspan(center - window_ns / 2e3, center + window_ns / 2e3,
                   color="tab:orange", alpha=0.2, lw=0)
    ax.set_xlabel("delay from herald (us)")
    ax.set_ylabel("counts")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def efficiency_vs_tau(path, tau_us, photon_eta, photon_sigma, classical_eta, fit):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.errorbar(tau_us, photon_eta, yerr=photon_sigma, fmt="o", color="tab:orange",
                label="heralded photons")
    ax.plot(tau_us, classical_eta, "o", mfc="none", color="k", label="classical pulses")
    if fit is not None and np.isfinite(fit.t2star_us):
        t = np.linspace(min(tau_us), max(tau_us), 100)
        ax.plot(t, fit.eta0 * np.exp(-4 * t / fit.t2star_us), "--", color="gray", lw=1)
    ax.set_xlabel("storage time (us)")
    ax.set_ylabel("internal efficiency")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def g2_vs_tau(path, tau_us, g2, sigma, bound, bound_sigma):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.errorbar(tau_us, g2, yerr=sigma, fmt="o", color="tab:orange",
                label="retrieved echo")
    ax.axhline(bound, color="tab:orange", ls="--", lw=1, label="classical bound")
    ax.axhspan(bound - bound_sigma, bound + bound_sigma, color="tab:orange",
               alpha=0.15, lw=0)
    ax.set_yscale("log")
    ax.set_xlabel("storage time (us)")
    ax.set_ylabel("echo-idler g2")
    ax.legend()
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    _save(fig, path)


def absorption_profiles(path, freq_mhz, profiles: dict):
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    colors = {"pit": "tab:orange", "comb": "saddlebrown", "photon": "k"}
    for name, trace in profiles.items():
        ax.plot(freq_mhz, trace, color=colors.get(name, None), lw=0.9, label=name)
    ax.set_xlabel("detuning (MHz)")
    ax.set_ylabel("optical depth / spectrum (arb.)")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
