import math

import numpy as np
import pytest

from afcsim.coherence import (CoherenceParams, EchoSequence, RabiCalibration,
                              extract_t1, fit_tpe_t2, gamma_hom,
                              gamma_hom_slope, gamma_hom_vs_tau1,
                              heterodyne_amplitude, nutation_rabi,
                              rabi_mode_scaling, rabi_power_fit, simulate_spe,
                              simulate_tpe, spe_intercepts_and_t2)
from afcsim.waveguide import GaussianMode

PARAMS = CoherenceParams(t2_us=57.0, t1_us=118.0)
TAU2 = np.array([5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0])
TAU1 = np.array([1.0, 20.0, 40.0, 60.0, 90.0, 120.0])


class TestSequenceTypes:
    def test_tpe_needs_no_tau1(self):
        seq = EchoSequence("TPE", tau2_us=10.0)
        assert seq.tau1_us == 0.0

    def test_tpe_rejects_tau1(self):
        with pytest.raises(ValueError):
            EchoSequence("TPE", tau2_us=10.0, tau1_us=5.0)

    def test_params_bounds(self):
        with pytest.raises(ValueError):
            CoherenceParams(t2_us=300.0, t1_us=118.0)  # T2 > 2 T1
        with pytest.raises(ValueError):
            CoherenceParams(t2_us=-1.0, t1_us=118.0)

    def test_gamma0_defaults_to_t2(self):
        assert PARAMS.gamma0_khz == pytest.approx(gamma_hom(57.0))


class TestTpe:
    def test_one_over_e_point(self):
        # I(T2/4)/I0 = 1/e
        inten = simulate_tpe(PARAMS, [57.0 / 4.0], noise_frac=0.0)
        assert inten[0] == pytest.approx(math.exp(-1.0), rel=1e-12)

    def test_zero_delay(self):
        assert simulate_tpe(PARAMS, [0.0])[0] == pytest.approx(1.0)

    def test_noiseless_fit_recovers_t2_exactly(self):
        inten = simulate_tpe(PARAMS, TAU2, noise_frac=0.0)
        t2, _ = fit_tpe_t2(TAU2, inten)
        assert t2 == pytest.approx(57.0, rel=1e-9)

    def test_deterministic_per_seed(self):
        a = simulate_tpe(PARAMS, TAU2, noise_frac=0.05, seed=11)
        b = simulate_tpe(PARAMS, TAU2, noise_frac=0.05, seed=11)
        c = simulate_tpe(PARAMS, TAU2, noise_frac=0.05, seed=12)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestHeterodyne:
    def test_pure_sinusoid(self):
        t = np.linspace(0, 1.0, 2001)
        trace = 0.5 * np.cos(2 * np.pi * 10.0 * t + 0.7)
        amp, inten = heterodyne_amplitude(t, trace, beat_mhz=10.0)
        assert amp == pytest.approx(0.5, rel=1e-9)
        assert inten == pytest.approx(0.25, rel=1e-9)

    def test_phase_invariance(self):
        t = np.linspace(0, 1.0, 2001)
        amps = [heterodyne_amplitude(t, 0.3 * np.cos(2 * np.pi * 10.0 * t + ph))[0]
                for ph in (0.0, 1.1, 2.9)]
        assert np.ptp(amps) < 1e-9

    def test_noise_study_snr_10(self):
        # amplitude recovered within 5% at SNR 10 across 100 seeds
        t = np.linspace(0, 2.0, 4001)
        clean = 1.0 * np.cos(2 * np.pi * 10.0 * t)
        errors = []
        for seed in range(100):
            rng = np.random.default_rng(seed)
            amp, _ = heterodyne_amplitude(t, clean + 0.1 * rng.standard_normal(t.size))
            errors.append(abs(amp - 1.0))
        assert np.mean(errors) < 0.05
        assert np.max(errors) < 0.05

    def test_zero_signal_consistent_with_zero(self):
        t = np.linspace(0, 2.0, 4001)
        rng = np.random.default_rng(3)
        noise = 0.1 * rng.standard_normal(t.size)
        amp, _ = heterodyne_amplitude(t, noise)
        # expected noise floor ~ sigma * sqrt(2/N)
        assert amp < 5 * 0.1 * math.sqrt(2.0 / t.size)

    def test_too_short_trace(self):
        t = np.linspace(0, 0.2, 101)
        with pytest.raises(ValueError):
            heterodyne_amplitude(t, np.zeros_like(t), beat_mhz=10.0)


class TestSpe:
    def test_zero_delays(self):
        area = simulate_spe(PARAMS, [0.0], [0.0])
        assert area[0, 0] == pytest.approx(1.0)

    def test_t1_one_over_e(self):
        area = simulate_spe(PARAMS, [118.0], [0.0])
        assert area[0, 0] == pytest.approx(math.exp(-1.0), rel=1e-12)

    def test_gamma_constant_without_spectral_diffusion(self):
        area = simulate_spe(PARAMS, TAU1, TAU2)
        gammas = gamma_hom_vs_tau1(area, TAU1, TAU2)
        assert np.allclose(gammas, gamma_hom(57.0), rtol=1e-6)

    def test_spectral_diffusion_visible(self):
        params = CoherenceParams(t2_us=57.0, t1_us=118.0, sd_rate_khz_per_us=0.05)
        area = simulate_spe(params, TAU1, TAU2)
        gammas = gamma_hom_vs_tau1(area, TAU1, TAU2)
        slope, sigma = gamma_hom_slope(area, TAU1, TAU2)
        assert slope == pytest.approx(0.05, rel=1e-3)
        assert gammas[-1] > gammas[0]


class TestExtractT1:
    def test_round_trip_118(self):
        area = simulate_spe(PARAMS, TAU1, TAU2)
        t1, _ = extract_t1(area, TAU1, TAU2)
        assert t1 == pytest.approx(118.0, rel=0.02)

    def test_round_trip_bulk_value(self):
        params = CoherenceParams(t2_us=57.0, t1_us=103.0)
        area = simulate_spe(params, TAU1, TAU2)
        t1, _ = extract_t1(area, TAU1, TAU2)
        assert t1 == pytest.approx(103.0, rel=0.02)

    def test_constant_areas_unbounded(self):
        area = np.ones((len(TAU1), len(TAU2)))
        t1, _ = extract_t1(area, TAU1, TAU2)
        assert math.isinf(t1)

    def test_intercepts_extrapolate_tau2_to_zero(self):
        area = simulate_spe(PARAMS, TAU1, TAU2)
        intercepts, t2s = spe_intercepts_and_t2(area, TAU1, TAU2)
        assert intercepts[0] == pytest.approx(math.exp(-TAU1[0] / 118.0), rel=1e-6)
        assert np.allclose(t2s, 57.0, rtol=1e-6)

    def test_insufficient_grid(self):
        with pytest.raises(ValueError):
            extract_t1(np.ones((2, len(TAU2))), TAU1[:2], TAU2)


class TestGammaHom:
    def test_t2_57(self):
        # frozen: 1e3/(pi*57) = 5.585 kHz
        assert gamma_hom(57.0) == pytest.approx(5.585, abs=0.01)

    def test_higher_power_condition(self):
        assert gamma_hom(31.8) == pytest.approx(10.0, abs=0.02)

    def test_limit(self):
        assert gamma_hom(1e12) == pytest.approx(0.0, abs=1e-9)

    def test_strictly_decreasing_in_t2(self):
        t2s = np.linspace(1.0, 200.0, 50)
        gammas = [gamma_hom(t) for t in t2s]
        assert all(a > b for a, b in zip(gammas, gammas[1:]))


class TestNutation:
    def test_slope_point(self):
        # t_pi at 1 mW for the 1.75 MHz/sqrt(mW) calibration
        omega = nutation_rabi(0.464)
        assert omega == pytest.approx(2 * math.pi * 1.75, rel=1e-3)

    def test_inverse_scaling(self):
        assert nutation_rabi(2.0) == pytest.approx(nutation_rabi(1.0) / 2.0)

    def test_unit_case(self):
        assert nutation_rabi(5.1) == pytest.approx(1.0)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            nutation_rabi(0.0)


class TestRabiPowerFit:
    def test_exact_line(self):
        powers = [0.1, 0.25, 0.51, 1.0, 2.0]
        pts = [(p, 1.75 * math.sqrt(p)) for p in powers]
        cal = rabi_power_fit(pts)
        assert cal.slope_mhz_per_sqrt_mw == pytest.approx(1.75, rel=1e-12)

    def test_single_point(self):
        cal = rabi_power_fit([(1.0, 2.2)])
        assert cal.slope_mhz_per_sqrt_mw == pytest.approx(2.2)

    def test_noise_study(self):
        rng_errors = []
        powers = np.array([0.1, 0.25, 0.51, 1.0, 1.5, 2.0])
        for seed in range(100):
            rng = np.random.default_rng(seed)
            omega = 1.75 * np.sqrt(powers) * (1 + 0.05 * rng.standard_normal(powers.size))
            cal = rabi_power_fit(list(zip(powers, omega)))
            rng_errors.append(abs(cal.slope_mhz_per_sqrt_mw - 1.75) / 1.75)
        assert np.mean(rng_errors) < 0.05
        assert np.max(rng_errors) < 0.15

    def test_reorder_invariance(self):
        pts = [(0.1, 0.55), (1.0, 1.8), (2.0, 2.4)]
        a = rabi_power_fit(pts).slope_mhz_per_sqrt_mw
        b = rabi_power_fit(pts[::-1]).slope_mhz_per_sqrt_mw
        assert a == pytest.approx(b, rel=1e-12)

    def test_all_zero_powers_rejected(self):
        with pytest.raises(ValueError):
            rabi_power_fit([(0.0, 0.0), (0.0, 0.1)])


class TestModeScaling:
    def test_identity(self):
        m = GaussianMode(4.5, 7.6)
        assert rabi_mode_scaling(1.0, m, m) == pytest.approx(1.0)

    def test_type_ii_to_type_i_ratio(self):
        # reference guided mode 7.2 x 12.5 um against the 606 nm-setup
        # type I diameters 4.5 x 7.6 um
        ratio = rabi_mode_scaling(1.0, GaussianMode(7.2, 12.5), GaussianMode(4.5, 7.6))
        assert ratio == pytest.approx(1.6, abs=0.1)

    def test_square_root_area_law(self):
        ref = GaussianMode(4.0, 4.0)
        big = GaussianMode(40.0, 40.0)
        assert rabi_mode_scaling(1.0, ref, big) == pytest.approx(0.1, rel=1e-12)


class TestRoundTripGrid:
    def test_seeded_grid_recovers_within_tolerance(self):
        # noiseless: exact; 5% noise: within 3 sigma over a seeded case grid
        for seed in range(10):
            rng = np.random.default_rng(seed)
            t2 = rng.uniform(30.0, 80.0)
            t1 = rng.uniform(90.0, 160.0)
            params = CoherenceParams(t2_us=t2, t1_us=t1)
            area = simulate_spe(params, TAU1, TAU2, noise_frac=0.05, seed=seed)
            t1_fit, (lo, hi) = extract_t1(area, TAU1, TAU2)
            assert abs(t1_fit - t1) / t1 < 0.25
            inten = simulate_tpe(params, TAU2, noise_frac=0.05, seed=seed)
            t2_fit, _ = fit_tpe_t2(TAU2, inten)
            assert abs(t2_fit - t2) / t2 < 0.15
