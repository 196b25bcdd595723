"""Gaussian-beam coupling and waveguide loss budgets.

Mode sizes are FWHM intensity diameters in micrometers.  Fields follow the
convention E(x, y) = exp[-1.39 (x^2/Dh^2 + y^2/Dv^2)] where Dh, Dv are the
FWHM diameters (1.39 ~ 2 ln 2, so |E|^2 falls to one half at x = Dh/2).

The loss budget of a waveguide splits the measured insertion loss IL into
coupling loss CL (focal spot vs. guided mode mismatch), single-interface
Fresnel loss FL, and propagation loss PL per unit length:

    IL = CL + FL + PL * L_c
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit

_FIELD_EXPONENT = 1.39  # ~ 2 ln 2; FWHM convention for the mode fields


class InconsistentBudgetError(ValueError):
    """Loss contributions do not add up within tolerance."""


@dataclass(frozen=True)
class GaussianMode:
    """Elliptical Gaussian mode, FWHM intensity diameters in um."""

    fwhm_h: float
    fwhm_v: float

    def __post_init__(self):
        if self.fwhm_h <= 0 or self.fwhm_v <= 0:
            raise ValueError("mode FWHM diameters must be positive")

    @property
    def area_um2(self) -> float:
        return self.fwhm_h * self.fwhm_v

    @classmethod
    def circular(cls, fwhm: float) -> "GaussianMode":
        return cls(fwhm, fwhm)


@dataclass(frozen=True)
class FocusingSetup:
    """Free-space focusing geometry: wavelength (nm), focal length (mm),
    1/e^2 beam diameter before the lens (mm)."""

    wavelength_nm: float
    focal_length_mm: float
    beam_diameter_1e2_mm: float

    def __post_init__(self):
        if min(self.wavelength_nm, self.focal_length_mm, self.beam_diameter_1e2_mm) <= 0:
            raise ValueError("focusing parameters must be strictly positive")


@dataclass(frozen=True)
class LossBudget:
    """One waveguide's loss decomposition plus its mode geometry.

    track_separation_um is the distance between the damage tracks and is
    set only for stress-guided (type II) waveguides.
    """

    kind: str
    insertion_db: float
    coupling_db: float
    fresnel_db: float
    propagation_db_per_cm: float
    crystal_length_cm: float
    mode: GaussianMode
    track_separation_um: float | None = None

    _BALANCE_TOL_DB = 0.05

    def __post_init__(self):
        if self.insertion_db < 0 or self.coupling_db < 0 or self.fresnel_db < 0:
            raise ValueError("losses must be non-negative")
        residual = self.insertion_db - self.coupling_db - self.fresnel_db
        if residual < -self._BALANCE_TOL_DB:
            raise InconsistentBudgetError(
                f"IL - CL - FL = {residual:.3f} dB is negative beyond tolerance"
            )
        closure = abs(residual - self.propagation_db_per_cm * self.crystal_length_cm)
        if closure > self._BALANCE_TOL_DB:
            raise InconsistentBudgetError(
                f"PL*L_c differs from IL-CL-FL by {closure:.3f} dB (> "
                f"{self._BALANCE_TOL_DB} dB)"
            )


@dataclass(frozen=True)
class BendMeasurement:
    """Excess bending loss of an S-band at a given radius of curvature."""

    radius_mm: float
    excess_loss_db: float
    s_band_length_mm: float = 7.0

    def __post_init__(self):
        if self.radius_mm <= 0:
            raise ValueError("bend radius must be positive")
        if self.excess_loss_db < 0:
            raise ValueError("excess loss must be non-negative")


def focal_spot_fwhm(setup: FocusingSetup) -> float:
    """FWHM focal spot diameter (um) of a collimated Gaussian beam.

    Uses the focusing relation D0_spot = 2.36 * lambda * f / (pi * D0).
    """
    lam_um = setup.wavelength_nm * 1e-3
    f_um = setup.focal_length_mm * 1e3
    d0_um = setup.beam_diameter_1e2_mm * 1e3
    return 2.36 * lam_um * f_um / (math.pi * d0_um)


def overlap_efficiency_axis(d_a: float, d_b: float) -> float:
    """Closed-form 1-D field overlap efficiency, 2*Da*Db/(Da^2 + Db^2)."""
    if d_a <= 0 or d_b <= 0:
        raise ValueError("diameters must be positive")
    return 2.0 * d_a * d_b / (d_a**2 + d_b**2)


def overlap_efficiency(a: GaussianMode, b: GaussianMode, points_per_axis: int = 256) -> float:
    """Power coupling efficiency between two coaxial elliptical Gaussians.

    Evaluates the normalized field superposition integral
    eta = |int Ea Eb|^2 / (int Ea^2 * int Eb^2) on a 2-D grid spanning
    +-3x the largest FWHM per axis.  The separable closed form
    (overlap_efficiency_axis per axis) agrees to better than 1e-6 and is
    used as the test oracle.
    """
    if points_per_axis < 16:
        raise ValueError("points_per_axis too small for a stable quadrature")
    span_x = 3.0 * max(a.fwhm_h, b.fwhm_h)
    span_y = 3.0 * max(a.fwhm_v, b.fwhm_v)
    x = np.linspace(-span_x, span_x, points_per_axis)
    y = np.linspace(-span_y, span_y, points_per_axis)
    xx, yy = np.meshgrid(x, y, indexing="ij")

    def field(mode: GaussianMode):
        return np.exp(-_FIELD_EXPONENT * (xx**2 / mode.fwhm_h**2 + yy**2 / mode.fwhm_v**2))

    ea, eb = field(a), field(b)
    num = np.trapezoid(np.trapezoid(ea * eb, y, axis=1), x) ** 2
    den = np.trapezoid(np.trapezoid(ea**2, y, axis=1), x) * np.trapezoid(
        np.trapezoid(eb**2, y, axis=1), x
    )
    return float(num / den)


def coupling_loss_db(a: GaussianMode, b: GaussianMode) -> float:
    """Coupling loss in dB, CL = -10 log10(eta)."""
    return -10.0 * math.log10(overlap_efficiency(a, b))


def fresnel_loss_db(refractive_index: float) -> float:
    """Single-interface Fresnel loss in dB for a crystal/air interface."""
    if refractive_index <= 0:
        raise ValueError("refractive index must be positive")
    r = ((refractive_index - 1.0) / (refractive_index + 1.0)) ** 2
    return -10.0 * math.log10(1.0 - r)


def propagation_loss(il_db: float, cl_db: float, fl_db: float, length_cm: float,
                     tolerance_db: float = 0.05) -> float:
    """Propagation loss in dB/cm, PL = (IL - CL - FL) / L_c.

    FL enters once: the input facet carries an anti-reflection coating, so
    only the output interface reflects.  A numerator more negative than
    -tolerance_db raises InconsistentBudgetError; small negatives within
    tolerance clip to zero.
    """
    if length_cm <= 0:
        raise ValueError("crystal length must be positive")
    numerator = il_db - cl_db - fl_db
    if numerator < -tolerance_db:
        raise InconsistentBudgetError(
            f"IL - CL - FL = {numerator:.3f} dB is negative beyond {tolerance_db} dB"
        )
    return max(numerator, 0.0) / length_cm


def fit_bending_loss(points: list[BendMeasurement]):
    """Least-squares fit of excess bend loss BL(R) = A * exp(-R / R0).

    Returns (amplitude_db, decay_radius_mm, residual) where residual is the
    RMS misfit in dB.  Requires at least 3 measurements at distinct radii.
    """
    if len(points) < 3:
        raise ValueError("need at least 3 bend measurements")
    radii = np.array([p.radius_mm for p in points], dtype=float)
    losses = np.array([p.excess_loss_db for p in points], dtype=float)
    if len(np.unique(radii)) < len(radii):
        raise ValueError("bend radii must be distinct")

    if np.all(losses == 0):
        return 0.0, math.inf, 0.0

    def model(r, a, r0):
        return a * np.exp(-r / r0)

    # log-linear seed where possible
    pos = losses > 0
    if pos.sum() >= 2:
        slope, intercept = np.polyfit(radii[pos], np.log(losses[pos]), 1)
        p0 = (math.exp(intercept), -1.0 / slope if slope < 0 else radii.max())
    else:
        p0 = (losses.max(), radii.mean())
    popt, _ = curve_fit(model, radii, losses, p0=p0, maxfev=10000)
    amplitude, decay = float(popt[0]), float(popt[1])
    residual = float(np.sqrt(np.mean((model(radii, *popt) - losses) ** 2)))
    return amplitude, decay, residual


# ---------------------------------------------------------------------------
# Loss-budget CSV interchange

BUDGET_CSV_COLUMNS = [
    "type",
    "d_um",
    "fwhm_h_um",
    "fwhm_v_um",
    "il_db",
    "cl_db",
    "fl_db",
    "pl_db_per_cm",
]


def budgets_to_rows(budgets: list[LossBudget]) -> list[dict]:
    rows = []
    for b in budgets:
        rows.append(
            {
                "type": b.kind,
                "d_um": "" if b.track_separation_um is None else f"{b.track_separation_um:g}",
                "fwhm_h_um": f"{b.mode.fwhm_h:g}",
                "fwhm_v_um": f"{b.mode.fwhm_v:g}",
                "il_db": f"{b.insertion_db:g}",
                "cl_db": f"{b.coupling_db:g}",
                "fl_db": f"{b.fresnel_db:g}",
                "pl_db_per_cm": f"{b.propagation_db_per_cm:g}",
            }
        )
    return rows


def write_budget_csv(path, budgets: list[LossBudget], crystal_length_cm: float | None = None):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BUDGET_CSV_COLUMNS)
        writer.writeheader()
        for row in budgets_to_rows(budgets):
            writer.writerow(row)


def read_budget_csv(path, crystal_length_cm: float) -> list[LossBudget]:
    budgets = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(BUDGET_CSV_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"budget CSV missing columns: {sorted(missing)}")
        for row in reader:
            mode = GaussianMode(float(row["fwhm_h_um"]), float(row["fwhm_v_um"]))
            d = row["d_um"].strip()
            budgets.append(
                LossBudget(
                    kind=row["type"],
                    insertion_db=float(row["il_db"]),
                    coupling_db=float(row["cl_db"]),
                    fresnel_db=float(row["fl_db"]),
                    propagation_db_per_cm=float(row["pl_db_per_cm"]),
                    crystal_length_cm=crystal_length_cm,
                    mode=mode,
                    track_separation_um=float(d) if d else None,
                )
            )
    return budgets
