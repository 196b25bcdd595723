"""Scenario configuration: defaults, schema validation and hashing.

The configuration is a single key-value tree (YAML on disk).  Every
physical quantity carries its unit as a key suffix (_mhz, _us, _db, ...).
A user file may override any subset of the defaults; keys that do not
exist in the default tree are rejected, so typos fail loudly.  The config
hash is the SHA-256 of the canonical JSON dump (sorted keys), which makes
it independent of key order in the file.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

import yaml


class SchemaError(ValueError):
    """Configuration does not match the schema."""


# The six waveguides characterized at 633 nm: measured mode sizes and
# insertion losses; coupling/Fresnel/propagation terms are computed.
_WAVEGUIDES = [
    {"type": "I", "d_um": None, "fwhm_h_um": 3.1, "fwhm_v_um": 5.9, "il_db": 1.8},
    {"type": "II", "d_um": 10.0, "fwhm_h_um": 5.0, "fwhm_v_um": 12.1, "il_db": 12.0},
    {"type": "II", "d_um": 12.5, "fwhm_h_um": 6.1, "fwhm_v_um": 12.5, "il_db": 7.0},
    {"type": "II", "d_um": 15.0, "fwhm_h_um": 7.2, "fwhm_v_um": 12.5, "il_db": 4.3},
    {"type": "II", "d_um": 17.5, "fwhm_h_um": 8.6, "fwhm_v_um": 12.0, "il_db": 2.8},
    {"type": "II", "d_um": 20.0, "fwhm_h_um": 9.9, "fwhm_v_um": 12.5, "il_db": 2.4},
]

DEFAULT_CONFIG = {
    "seed": 20180606,
    "out_dir": "afcsim-out",
    "format": "csv",
    "threads": 1,
    "render_figures": True,
    "waveguide": {
        "crystal_length_cm": 0.37,
        "refractive_index": 1.8,
        "focus": {
            "wavelength_nm": 633.0,
            "focal_length_mm": 75.0,
            "beam_diameter_1e2_mm": 6.0,
        },
        "guides": _WAVEGUIDES,
        "bend": {
            "radii_mm": [30.0, 50.0, 90.0],
            "type_i_amplitude_db": 1.2,
            "type_i_decay_radius_mm": 18.0,
            "type_ii_amplitude_db": 4.5,
            "type_ii_decay_radius_mm": 30.0,
            "noise_db": 0.01,
        },
    },
    "ensemble": {
        "inhomogeneous_fwhm_ghz": 9.0,
        "peak_od": 5.0,
        "pit_width_mhz": 16.0,
        "pit_transmission": 0.85,
        "line_grid_span_ghz": 30.0,
        "line_grid_step_mhz": 10.0,
        "comb_grid_span_mhz": 80.0,
        "comb_grid_step_mhz": 0.01,
    },
    "coherence": {
        "t2_us": 57.0,
        "t1_us": 118.0,
        "t1_bulk_us": 103.0,
        "t1_fluorescence_us": 160.0,
        "sd_rate_khz_per_us": 0.0,
        "noise_frac": 0.05,
        "tau2_grid_us": [5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0],
        "tau1_grid_us": [1.0, 20.0, 40.0, 60.0, 90.0, 120.0, 160.0],
        "beat_mhz": 10.0,
        "i0": 1.0,
    },
    "nutation": {
        "powers_mw": [0.1, 0.25, 0.51, 1.0, 1.5, 2.0],
        "slope_mhz_per_sqrt_mw": 1.75,
        "noise_frac": 0.0,
        "reference_mode": {"fwhm_h_um": 7.2, "fwhm_v_um": 12.5},
        "waveguide_mode": {"fwhm_h_um": 4.5, "fwhm_v_um": 7.6},
    },
    "biphoton": {
        "gamma_s_mhz": 2.5,
        "gamma_i_mhz": 1.4,
        "biphoton_fwhm_mhz": 1.8,
        "mode_count": 8,
        "fsr_mhz": 261.0,
        "filter_cavity_fwhm_mhz": 80.0,
        "filter_cavity_fsr_mhz": 17000.0,
        "etalon_fwhm_mhz": 4250.0,
        "etalon_fsr_mhz": 100000.0,
    },
    "detection": {
        "herald_eff_source": 0.25,
        "herald_eff_waveguide": 0.07,
        "det_eff_idler": 0.10,
        "det_eff_signal": 0.50,
        "det_eff_signal_b": 0.50,
        "dark_hz_idler": 10.0,
        "dark_hz_signal": 10.0,
        "dark_hz_signal_b": 50.0,
    },
    "source": {
        "pair_rate_per_mw_hz": 41900.0,
        "broadband_per_mw_hz": 43400.0,
        "pump_power_mw": 2.0,
        "duration_s": 30.0,
        "hbt_split": False,
        "emit_binary": True,
    },
    "analyze": {
        "input_path": "",
        "bin_ns": 10.0,
        "window_ns": 400.0,
        "delay_min_ns": -4000.0,
        "delay_max_ns": 4000.0,
    },
    "gating": {
        "pump_off_delay_us": 1.2,
        "storage_time_us": 1.5,
        "cryostat_hz": 1.4,
        "live_window_ms": 150.0,
    },
    "storage": {
        "tau_grid_us": [1.5, 2.5, 3.5, 4.5, 5.5],
        "eta0": 0.2,
        "t2star_us": 8.0,
        "coupling": 0.40,
        "comb_finesse": 4.0,
        "comb_peak_od": 2.5,
        "comb_background_od": 0.05,
        "pump_power_mw": 1.7,
        "duration_s": 600.0,
        "pit_pass_other_modes": 0.01,
        "pit_pass_broadband": 0.5,
        "stored_noise_fraction": 0.45,
        "input_fwhm_ns": 200.0,
        "trace_dt_ns": 2.0,
    },
}


def _validate(user, defaults, path=""):
    """Merge a user subtree into the defaults, rejecting unknown keys and
    incompatible types."""
    if isinstance(defaults, dict):
        if not isinstance(user, dict):
            raise SchemaError(f"{path or 'config'}: expected a mapping")
        merged = {}
        unknown = set(user) - set(defaults)
        if unknown:
            raise SchemaError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
        for key, default_value in defaults.items():
            if key in user:
                merged[key] = _validate(user[key], default_value, f"{path}.{key}".lstrip("."))
            else:
                merged[key] = copy.deepcopy(default_value)
        return merged
    if isinstance(defaults, list):
        if not isinstance(user, list):
            raise SchemaError(f"{path}: expected a list")
        if defaults and isinstance(defaults[0], dict):
            return [_validate(item, defaults[0], f"{path}[{i}]") for i, item in enumerate(user)]
        return [_coerce_leaf(item, defaults[0] if defaults else 0.0, f"{path}[{i}]")
                for i, item in enumerate(user)]
    return _coerce_leaf(user, defaults, path)


def _coerce_leaf(value, default, path):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise SchemaError(f"{path}: expected a boolean")
        return value
    if isinstance(default, (int, float)) and isinstance(value, (int, float)) \
            and not isinstance(value, bool):
        return type(default)(value) if isinstance(default, float) else value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise SchemaError(f"{path}: expected a string")
        return value
    if type(value) is not type(default):
        raise SchemaError(f"{path}: expected {type(default).__name__}")
    return value


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Load, validate and merge a configuration file over the defaults.

    overrides (already-validated key paths like seed/out_dir) are applied
    last; they come from CLI flags and environment variables.
    """
    user = {}
    if path:
        with open(path) as fh:
            user = yaml.safe_load(fh) or {}
        if not isinstance(user, dict):
            raise SchemaError("config file must contain a mapping at top level")
    merged = _validate(user, DEFAULT_CONFIG)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    return merged


def config_hash(config: dict) -> str:
    """Stable short hash of the canonical JSON form (key order independent)."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def dump_config(config: dict, path):
    with open(path, "w") as fh:
        yaml.safe_dump(config, fh, sort_keys=True)


@dataclass
class RunReport:
    """Machine-readable record of one scenario execution."""

    scenario: str
    config_hash: str
    seed: int
    outputs: list = field(default_factory=list)
    wall_time_s: float = 0.0
    metrics: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "outputs": list(self.outputs),
            "wall_time_s": self.wall_time_s,
            "metrics": self.metrics,
        }
