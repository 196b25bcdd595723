import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afcsim.waveguide import (BendMeasurement, FocusingSetup, GaussianMode,
                              InconsistentBudgetError, LossBudget,
                              coupling_loss_db, fit_bending_loss,
                              focal_spot_fwhm, fresnel_loss_db,
                              overlap_efficiency, overlap_efficiency_axis,
                              propagation_loss, read_budget_csv,
                              write_budget_csv)

# measured characterization table: (type, d_um, fwhm_h, fwhm_v, IL, CL, FL, PL)
TABLE1 = [
    ("I", None, 3.1, 5.9, 1.8, 0.84, 0.37, 1.6),
    ("II", 10.0, 5.0, 12.1, 12.0, 1.09, 0.37, 28.5),
    ("II", 12.5, 6.1, 12.5, 7.0, 1.12, 0.37, 14.9),
    ("II", 15.0, 7.2, 12.5, 4.3, 1.21, 0.37, 7.4),
    ("II", 17.5, 8.6, 12.0, 2.8, 1.31, 0.37, 3.0),
    ("II", 20.0, 9.9, 12.5, 2.4, 1.68, 0.37, 0.9),
]
FOCAL_SPOT_UM = 5.9
CRYSTAL_LENGTH_CM = 0.37


class TestFocalSpot:
    def test_characterization_setup(self):
        # 633 nm through the 75 mm lens at 6 mm beam diameter
        spot = focal_spot_fwhm(FocusingSetup(633.0, 75.0, 6.0))
        assert spot == pytest.approx(5.94, abs=0.01)

    def test_inverse_proportionality_in_beam_diameter(self):
        base = focal_spot_fwhm(FocusingSetup(633.0, 75.0, 6.0))
        wide = focal_spot_fwhm(FocusingSetup(633.0, 75.0, 60.0))
        assert wide == pytest.approx(base / 10.0, rel=1e-12)

    def test_storage_wavelength(self):
        # frozen hand evaluation of 2.36*lam*f/(pi*D0) at 606 nm
        spot = focal_spot_fwhm(FocusingSetup(606.0, 75.0, 6.0))
        assert spot == pytest.approx(5.6904, abs=1e-3)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            FocusingSetup(633.0, 0.0, 6.0)


class TestOverlap:
    def test_identical_modes(self):
        m = GaussianMode(4.0, 7.0)
        assert overlap_efficiency(m, m) == pytest.approx(1.0, abs=1e-9)

    def test_type_i_row(self):
        eta = overlap_efficiency(GaussianMode(3.1, 5.9), GaussianMode.circular(FOCAL_SPOT_UM))
        assert eta == pytest.approx(0.8235, abs=3e-4)
        assert -10 * math.log10(eta) == pytest.approx(0.84, abs=0.005)

    def test_widest_type_ii_row(self):
        # frozen per-axis closed form: 0.879536 * 0.772008 = 0.679008
        eta = overlap_efficiency(GaussianMode(9.9, 12.5), GaussianMode.circular(FOCAL_SPOT_UM))
        assert eta == pytest.approx(0.679008, abs=3e-4)
        assert -10 * math.log10(eta) == pytest.approx(1.68, abs=0.01)

    def test_matches_separable_closed_form(self):
        for _, _, dh, dv, *_ in TABLE1:
            a, b = GaussianMode(dh, dv), GaussianMode.circular(FOCAL_SPOT_UM)
            closed = overlap_efficiency_axis(dh, FOCAL_SPOT_UM) * \
                overlap_efficiency_axis(dv, FOCAL_SPOT_UM)
            assert overlap_efficiency(a, b) == pytest.approx(closed, rel=1e-4)

    @settings(max_examples=40, deadline=None, derandomize=True)
    @given(st.floats(1.0, 20.0), st.floats(1.0, 20.0),
           st.floats(1.0, 20.0), st.floats(1.0, 20.0))
    def test_symmetric_and_bounded(self, ah, av, bh, bv):
        a, b = GaussianMode(ah, av), GaussianMode(bh, bv)
        eta_ab = overlap_efficiency(a, b)
        eta_ba = overlap_efficiency(b, a)
        assert eta_ab == pytest.approx(eta_ba, rel=1e-9)
        assert 0.0 < eta_ab <= 1.0 + 1e-9

    def test_unity_only_for_identical(self):
        eta = overlap_efficiency(GaussianMode(4.0, 4.0), GaussianMode(4.2, 4.0))
        assert eta < 1.0 - 1e-6


class TestFresnel:
    def test_crystal_index(self):
        assert fresnel_loss_db(1.8) == pytest.approx(0.37, abs=0.005)

    def test_index_matched(self):
        assert fresnel_loss_db(1.0) == 0.0

    def test_glass_index(self):
        # frozen: r = 0.04 -> -10 log10(0.96)
        assert fresnel_loss_db(1.5) == pytest.approx(0.17729, abs=1e-4)

    @settings(max_examples=50, deadline=None, derandomize=True)
    @given(st.floats(0.1, 10.0))
    def test_inversion_symmetry(self, n):
        assert fresnel_loss_db(n) == pytest.approx(fresnel_loss_db(1.0 / n), rel=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            fresnel_loss_db(0.0)


class TestPropagationLoss:
    def test_type_i_row(self):
        assert propagation_loss(1.8, 0.84, 0.37, CRYSTAL_LENGTH_CM) == pytest.approx(1.6, abs=0.01)

    def test_narrowest_type_ii_row(self):
        assert propagation_loss(12.0, 1.09, 0.37, CRYSTAL_LENGTH_CM) == pytest.approx(28.5, abs=0.02)

    def test_lossless(self):
        assert propagation_loss(1.21, 0.84, 0.37, CRYSTAL_LENGTH_CM) == 0.0

    def test_inconsistent_budget(self):
        with pytest.raises(InconsistentBudgetError):
            propagation_loss(1.0, 0.84, 0.37, CRYSTAL_LENGTH_CM)


class TestTable1RoundTrip:
    def test_all_rows(self):
        fl = fresnel_loss_db(1.8)
        for kind, d, dh, dv, il, cl_expected, fl_expected, pl_expected in TABLE1:
            cl = coupling_loss_db(GaussianMode(dh, dv), GaussianMode.circular(FOCAL_SPOT_UM))
            assert cl == pytest.approx(cl_expected, abs=0.02), (kind, d)
            assert fl == pytest.approx(fl_expected, abs=0.005)
            pl = propagation_loss(il, cl, fl, CRYSTAL_LENGTH_CM)
            assert pl == pytest.approx(pl_expected, abs=0.1), (kind, d)


class TestBendFit:
    def test_exact_round_trip(self):
        radii = [30.0, 50.0, 90.0]
        points = [BendMeasurement(r, 5.0 * math.exp(-r / 20.0)) for r in radii]
        amp, decay, resid = fit_bending_loss(points)
        assert amp == pytest.approx(5.0, abs=1e-6)
        assert decay == pytest.approx(20.0, abs=1e-6)
        assert resid < 1e-9

    def test_all_zero(self):
        points = [BendMeasurement(r, 0.0) for r in (30.0, 50.0, 90.0)]
        amp, decay, resid = fit_bending_loss(points)
        assert amp == 0.0

    def test_fitted_curve_monotone_decreasing(self):
        points = [BendMeasurement(r, 4.0 * math.exp(-r / 25.0) * (1 + 0.02 * s))
                  for r, s in zip((30.0, 50.0, 90.0), (1, -1, 1))]
        amp, decay, _ = fit_bending_loss(points)
        r = np.linspace(30.0, 90.0, 50)
        curve = amp * np.exp(-r / decay)
        assert np.all(np.diff(curve) < 0)

    def test_degenerate_radii_rejected(self):
        points = [BendMeasurement(30.0, 1.0), BendMeasurement(30.0, 0.9),
                  BendMeasurement(50.0, 0.5)]
        with pytest.raises(ValueError):
            fit_bending_loss(points)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            fit_bending_loss([BendMeasurement(30.0, 1.0), BendMeasurement(50.0, 0.5)])


class TestLossBudgetType:
    def _budget(self, **kwargs):
        defaults = dict(kind="I", insertion_db=1.8, coupling_db=0.84, fresnel_db=0.37,
                        propagation_db_per_cm=1.6, crystal_length_cm=CRYSTAL_LENGTH_CM,
                        mode=GaussianMode(3.1, 5.9))
        defaults.update(kwargs)
        return LossBudget(**defaults)

    def test_valid(self):
        b = self._budget()
        assert b.track_separation_um is None

    def test_balance_enforced(self):
        with pytest.raises(InconsistentBudgetError):
            self._budget(propagation_db_per_cm=3.0)

    def test_il_floor(self):
        with pytest.raises(InconsistentBudgetError):
            self._budget(insertion_db=1.0, propagation_db_per_cm=0.0)

    def test_csv_round_trip(self, tmp_path):
        budgets = []
        fl = fresnel_loss_db(1.8)
        for kind, d, dh, dv, il, *_ in TABLE1:
            mode = GaussianMode(dh, dv)
            cl = coupling_loss_db(mode, GaussianMode.circular(FOCAL_SPOT_UM))
            pl = propagation_loss(il, cl, fl, CRYSTAL_LENGTH_CM)
            budgets.append(LossBudget(kind, il, cl, fl, pl, CRYSTAL_LENGTH_CM, mode, d))
        path = tmp_path / "budget.csv"
        write_budget_csv(path, budgets)
        back = read_budget_csv(path, CRYSTAL_LENGTH_CM)
        assert len(back) == len(budgets)
        for orig, rt in zip(budgets, back):
            assert rt.kind == orig.kind
            assert rt.mode.fwhm_h == pytest.approx(orig.mode.fwhm_h)
            assert rt.insertion_db == pytest.approx(orig.insertion_db, abs=1e-4)
            assert rt.track_separation_um == orig.track_separation_um
