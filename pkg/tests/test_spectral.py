import math

import numpy as np
import pytest

from afcsim.fitting import fit_exponential_decay
from afcsim.spectral import (AbsorptionProfile, CombSpec, HyperfineScheme,
                             single_tooth_target, train_from_spectral_target,
                             PitSpec, carve_comb, carve_pit,
                             comb_spectrum_nrmse, comb_grid, filtered_lineshape,
                             flat_profile, inhomogeneous_profile, line_grid,
                             lorentzian, preparation_pulse_train, transmission,
                             uniform_grid)

PIT_TRANSMISSION_OD = -math.log(0.85)  # residual OD giving 85% transmission


class TestProfileType:
    def test_grid_must_be_uniform(self):
        with pytest.raises(ValueError):
            AbsorptionProfile(np.array([0.0, 1.0, 3.0]), np.zeros(3))

    def test_od_nonnegative(self):
        with pytest.raises(ValueError):
            AbsorptionProfile(np.linspace(0, 1, 5), np.array([0, 0, -1, 0, 0.0]))

    def test_csv_round_trip(self, tmp_path):
        prof = flat_profile(uniform_grid(10.0, 0.5), 1.25)
        path = tmp_path / "profile.csv"
        prof.to_csv(path)
        back = AbsorptionProfile.from_csv(path)
        assert np.allclose(back.freq_mhz, prof.freq_mhz)
        assert np.allclose(back.od, prof.od)


class TestInhomogeneousLine:
    def test_center_od(self):
        prof = inhomogeneous_profile(9.0, 5.0, line_grid())
        assert prof.od[np.argmin(np.abs(prof.freq_mhz))] == pytest.approx(5.0)

    def test_half_maximum_at_half_width(self):
        prof = inhomogeneous_profile(9.0, 5.0, line_grid())
        idx = np.argmin(np.abs(prof.freq_mhz - 4500.0))
        assert prof.od[idx] == pytest.approx(2.5, rel=1e-3)

    def test_generate_then_fit_recovers_fwhm(self):
        prof = inhomogeneous_profile(9.0, 1.0, line_grid())
        # moment-free fit: FWHM from the log-parabola coefficient
        mask = prof.od > 0.2
        coeff = np.polyfit(prof.freq_mhz[mask], np.log(prof.od[mask]), 2)[0]
        fwhm = 2.0 * math.sqrt(-math.log(2.0) / coeff)
        assert fwhm == pytest.approx(9000.0, rel=1e-3)

    def test_grid_must_cover_line(self):
        with pytest.raises(ValueError):
            inhomogeneous_profile(9.0, 5.0, uniform_grid(1000.0, 10.0))


class TestPit:
    def _pitted(self, residual=PIT_TRANSMISSION_OD):
        prof = flat_profile(comb_grid(), 5.0)
        return carve_pit(prof, PitSpec(width_mhz=16.0, residual_od=residual))

    def test_center_transmission_85_percent(self):
        pitted = self._pitted()
        t = transmission(pitted)
        assert t[np.argmin(np.abs(pitted.freq_mhz))] == pytest.approx(0.85, abs=1e-9)

    def test_zero_residual_fully_transparent(self):
        pitted = self._pitted(residual=0.0)
        t = transmission(pitted)
        assert t[np.argmin(np.abs(pitted.freq_mhz))] == pytest.approx(1.0)

    def test_untouched_outside(self):
        pitted = self._pitted()
        outside = np.abs(pitted.freq_mhz) >= 16.0
        assert np.allclose(pitted.od[outside], 5.0)

    def test_never_raises_od_outside_support(self):
        prof = flat_profile(comb_grid(), 5.0)
        pitted = carve_pit(prof, PitSpec(width_mhz=16.0, residual_od=0.1))
        assert np.all(pitted.od <= prof.od + 1e-12)

    def test_pit_exceeding_grid(self):
        prof = flat_profile(uniform_grid(10.0, 0.1), 5.0)
        with pytest.raises(ValueError):
            carve_pit(prof, PitSpec(width_mhz=16.0))


class TestComb:
    def _comb(self, **kwargs):
        defaults = dict(periodicity_mhz=0.667, tooth_fwhm_mhz=0.667 / 4,
                        peak_od=2.0, background_od=0.1, span_mhz=16.0)
        defaults.update(kwargs)
        return CombSpec(**defaults)

    def test_tooth_count(self):
        comb = self._comb()
        expected = math.floor(comb.span_mhz / comb.periodicity_mhz) + 1
        assert comb.tooth_centers().size == expected

    def test_minimum_teeth_inside_pit(self):
        # 1.5 us storage comb inside a 16 MHz window
        comb = self._comb(periodicity_mhz=0.667)
        assert comb.tooth_centers().size >= 20

    def test_background_recovered_between_teeth(self):
        comb = self._comb()
        carved = carve_comb(flat_profile(comb_grid(), 0.0), comb)
        centers = comb.tooth_centers()
        mid = (centers[10] + centers[11]) / 2.0
        od_mid = carved.od[np.argmin(np.abs(carved.freq_mhz - mid))]
        # frozen tooth-tail evaluation: two gaussian neighbours at half a
        # period contribute 2*exp(-16 ln 2) = 3.1e-5 of the contrast
        assert abs(od_mid - comb.background_od) < 0.01 * (comb.peak_od - comb.background_od)

    def test_square_teeth(self):
        comb = self._comb(tooth_shape="square")
        carved = carve_comb(flat_profile(comb_grid(), 0.0), comb)
        on_tooth = carved.od[np.argmin(np.abs(carved.freq_mhz - comb.tooth_centers()[12]))]
        assert on_tooth == pytest.approx(comb.peak_od)

    def test_od_unchanged_outside_span(self):
        prof = flat_profile(comb_grid(), 5.0)
        carved = carve_comb(prof, self._comb())
        outside = np.abs(carved.freq_mhz) > 8.0
        assert np.allclose(carved.od[outside], 5.0)

    def test_too_wide_teeth_rejected(self):
        with pytest.raises(ValueError):
            self._comb(tooth_fwhm_mhz=0.7)

    def test_span_requires_three_periods(self):
        with pytest.raises(ValueError):
            self._comb(span_mhz=1.0)


class TestTransmission:
    def test_zero_od(self):
        prof = flat_profile(uniform_grid(4.0, 0.1), 0.0)
        assert np.allclose(transmission(prof), 1.0)

    def test_pit_residual(self):
        prof = flat_profile(uniform_grid(4.0, 0.1), PIT_TRANSMISSION_OD)
        assert transmission(prof)[0] == pytest.approx(0.85)

    def test_od_2p3(self):
        # frozen hand evaluation exp(-2.3) = 0.10026
        prof = flat_profile(uniform_grid(4.0, 0.1), 2.3)
        assert transmission(prof)[0] == pytest.approx(0.1003, abs=2e-4)


class TestFilteredLineshape:
    def test_narrow_pit_recovers_lorentzian(self):
        grid = uniform_grid(240.0, 0.02)
        prof = flat_profile(grid, 12.0)
        pitted = carve_pit(prof, PitSpec(width_mhz=0.1, residual_od=0.0))
        out = filtered_lineshape(1.8, pitted)
        peak = out.max()
        half_width = 0.5 * np.ptp(grid[out >= peak / 2.0])
        assert 2.0 * half_width == pytest.approx(1.8, rel=0.05)

    def test_convolution_broadens(self):
        grid = uniform_grid(240.0, 0.02)
        pitted = carve_pit(flat_profile(grid, 12.0), PitSpec(width_mhz=1.6, residual_od=0.0))
        out = filtered_lineshape(1.8, pitted)
        peak = out.max()
        fwhm = np.ptp(grid[out >= peak / 2.0])
        assert fwhm > 1.8

    def test_peak_aligned_with_pit_center(self):
        grid = uniform_grid(240.0, 0.02)
        pitted = carve_pit(flat_profile(grid, 12.0), PitSpec(center_mhz=3.0, width_mhz=1.6,
                                                             residual_od=0.0))
        out = filtered_lineshape(1.8, pitted)
        assert grid[np.argmax(out)] == pytest.approx(3.0, abs=0.1)

    def test_preserves_area(self):
        grid = uniform_grid(400.0, 0.05)
        pitted = carve_pit(flat_profile(grid, 2.0), PitSpec(width_mhz=1.6, residual_od=0.0))
        out = filtered_lineshape(1.8, pitted)
        area_out = np.trapezoid(out, grid)
        area_expected = np.trapezoid(transmission(pitted), grid)
        assert area_out == pytest.approx(area_expected, rel=0.01)


class TestPreparationTrain:
    def test_single_tooth_single_pulse(self):
        # a lone spectral tooth transforms to one smooth pulse
        freq, target = single_tooth_target(0.5)
        t, amp = train_from_spectral_target(freq, target)
        main = np.abs(amp) ** 2
        main = main / main.max()
        peaks = (main[1:-1] > main[:-2]) & (main[1:-1] > main[2:]) & (main[1:-1] > 0.01)
        assert int(peaks.sum()) == 1
        assert t[1:-1][peaks][0] == pytest.approx(0.0, abs=1e-9)

    def test_pulse_spacing_is_inverse_periodicity(self):
        comb = CombSpec(periodicity_mhz=0.667, tooth_fwhm_mhz=0.667 / 4, peak_od=1.0,
                        background_od=0.0, span_mhz=16.0)
        t, amp = preparation_pulse_train(comb)
        power = np.abs(amp) ** 2
        main = power / power.max()
        peaks = np.flatnonzero((main[1:-1] > main[:-2]) & (main[1:-1] > main[2:]) & (main[1:-1] > 0.2)) + 1
        spacing = np.diff(t[peaks]).mean()
        assert spacing == pytest.approx(1.0 / 0.667, rel=0.01)
        assert spacing == pytest.approx(1.4993, rel=0.01)

    def test_round_trip_spectrum_nrmse(self):
        comb = CombSpec(periodicity_mhz=0.667, tooth_fwhm_mhz=0.667 / 4, peak_od=1.0,
                        background_od=0.0, span_mhz=16.0)
        t, amp = preparation_pulse_train(comb)
        assert comb_spectrum_nrmse(comb, t, amp) < 0.05

    def test_unattainable_resolution(self):
        comb = CombSpec(periodicity_mhz=0.1, tooth_fwhm_mhz=0.001, peak_od=1.0,
                        background_od=0.0, span_mhz=1.0)
        with pytest.raises(ValueError):
            preparation_pulse_train(comb, max_duration_us=100.0)


class TestHyperfineScheme:
    def test_valid_scheme(self):
        scheme = HyperfineScheme(
            ground_splittings_mhz={"1/2g-3/2g": 10.2, "3/2g-5/2g": 17.3},
            excited_splittings_mhz={"1/2e-3/2e": 4.6, "3/2e-5/2e": 4.8},
            transition=("1/2g", "3/2e"),
        )
        assert scheme.transition == ("1/2g", "3/2e")

    def test_rejects_nonpositive_splitting(self):
        with pytest.raises(ValueError):
            HyperfineScheme(ground_splittings_mhz={"a": -1.0})

    def test_rejects_bad_transition(self):
        with pytest.raises(ValueError):
            HyperfineScheme(transition=("1/2g", "3/2g"))


class TestLorentzian:
    def test_unit_area(self):
        grid = uniform_grid(2000.0, 0.05)
        assert np.trapezoid(lorentzian(grid, 1.8), grid) == pytest.approx(1.0, rel=1e-3)
