"""Grid and measure construction, density decompositions, CSV round trips."""

import numpy as np
import pytest

from hkbary import (
    DiscreteMeasure,
    GridError,
    MeasureError,
    build_grid,
    density_ratios,
    gaussian_on_grid,
    read_measure_csv,
    scale_measure,
    total_mass,
    write_measure_csv,
)


class TestBuildGrid:
    def test_two_point_grid_hits_endpoints(self):
        g = build_grid(1, (0.0, 1.0), 2)
        assert np.allclose(g.points.ravel(), [0.0, 1.0])

    def test_200_point_unit_interval_grid(self):
        g = build_grid(1, (0.0, 1.0), 200)
        assert g.n_points == 200
        assert g.spacing[0] == pytest.approx(1.0 / 199, rel=1e-14)
        assert np.all(np.diff(g.points.ravel()) > 0)

    def test_2d_lattice(self):
        g = build_grid(2, ((0.0, 1.0), (0.0, 1.0)), 3)
        assert g.n_points == 9
        assert g.shape == (3, 3)
        assert np.allclose(g.points[4], [0.5, 0.5])

    def test_rejects_single_point(self):
        with pytest.raises(GridError):
            build_grid(1, (0.0, 1.0), 1)

    def test_rejects_degenerate_bounds(self):
        with pytest.raises(GridError):
            build_grid(1, (1.0, 1.0), 5)

    def test_rejects_dim_three(self):
        with pytest.raises(GridError):
            build_grid(3, ((0, 1),) * 3, 4)

    def test_uniform_spacing_within_tolerance(self):
        g = build_grid(1, (-2.0, 3.0), 777)
        gaps = np.diff(g.points.ravel())
        assert np.all(np.abs(gaps - g.spacing[0]) <= 1e-12 * g.spacing[0])


class TestMeasureBasics:
    def test_total_mass_zero_measure(self):
        g = build_grid(1, (0, 1), 5)
        assert total_mass(DiscreteMeasure.zero(g)) == 0.0

    def test_total_mass_unit_dirac(self):
        g = build_grid(1, (0, 1), 5)
        assert total_mass(DiscreteMeasure.dirac(g, 0.25)) == 1.0

    def test_gaussian_normalized_total(self):
        g = build_grid(1, (0, 1), 200)
        m = gaussian_on_grid(g, 0.8, 0.08, 2.0)
        assert total_mass(m) == pytest.approx(2.0, rel=1e-12)

    def test_scale_by_zero_gives_zero_measure(self):
        g = build_grid(1, (0, 1), 5)
        m = scale_measure(DiscreteMeasure.dirac(g, 0.5), 0.0)
        assert total_mass(m) == 0.0

    def test_scale_by_one_is_identity(self):
        g = build_grid(1, (0, 1), 5)
        m = DiscreteMeasure.dirac(g, 0.5, 1.7)
        assert np.array_equal(scale_measure(m, 1.0).masses, m.masses)

    def test_scale_dirac_by_three(self):
        g = build_grid(1, (0, 1), 5)
        m = scale_measure(DiscreteMeasure.dirac(g, 0.5), 3.0)
        assert total_mass(m) == pytest.approx(3.0, rel=1e-12)

    def test_scale_rejects_negative(self):
        g = build_grid(1, (0, 1), 5)
        with pytest.raises(MeasureError):
            scale_measure(DiscreteMeasure.dirac(g, 0.5), -1.0)

    def test_scale_then_total_mass_commutes(self):
        g = build_grid(1, (0, 1), 50)
        m = gaussian_on_grid(g, 0.3, 0.1, 1.4)
        for k in (0.0, 0.5, 2.0, 7.3):
            assert total_mass(scale_measure(m, k)) == pytest.approx(
                k * total_mass(m), rel=1e-12, abs=1e-300)

    def test_rejects_negative_masses(self):
        g = build_grid(1, (0, 1), 3)
        with pytest.raises(MeasureError):
            DiscreteMeasure(g, np.array([0.1, -0.2, 0.3]))

    def test_dirac_off_grid_rejected(self):
        g = build_grid(1, (0, 1), 5)  # spacing 0.25, so anything past 1.125 is off-grid
        with pytest.raises(MeasureError):
            DiscreteMeasure.dirac(g, 1.2)


class TestDensityRatios:
    def test_same_measure(self):
        g = build_grid(1, (0, 1), 20)
        m = gaussian_on_grid(g, 0.5, 0.2, 1.0)
        dec = density_ratios(m, m)
        sup = m.support()
        assert np.allclose(dec.sigma[sup], 1.0)
        assert np.allclose(dec.rho[sup], 1.0)
        assert dec.gamma_perp_mass == 0.0
        assert dec.mu_perp_mass == 0.0

    def test_doubled_measure(self):
        g = build_grid(1, (0, 1), 20)
        m = gaussian_on_grid(g, 0.5, 0.2, 1.0)
        dec = density_ratios(scale_measure(m, 2.0), m)
        sup = m.support()
        assert np.allclose(dec.sigma[sup], 2.0)
        assert np.allclose(dec.rho[sup], 0.5)
        assert dec.gamma_perp_mass == 0.0 and dec.mu_perp_mass == 0.0

    def test_disjoint_diracs(self):
        g = build_grid(1, (0, 1), 5)
        a = DiscreteMeasure.dirac(g, 0.0)
        b = DiscreteMeasure.dirac(g, 1.0)
        dec = density_ratios(a, b)
        assert dec.gamma_perp_mass == pytest.approx(1.0)
        assert dec.mu_perp_mass == pytest.approx(1.0)

    def test_reconstruction_identity(self):
        rng = np.random.default_rng(3)
        g = build_grid(1, (0, 1), 40)
        a = DiscreteMeasure(g, np.where(rng.random(40) < 0.4, 0.0, rng.random(40)))
        b = DiscreteMeasure(g, np.where(rng.random(40) < 0.4, 0.0, rng.random(40)))
        dec = density_ratios(a, b)
        perp = np.where(dec.sigma > 0, 0.0, a.masses)
        # reconstruction: marginal = sigma * reference + perp, pointwise
        recon = dec.sigma * b.masses + perp
        assert np.all(np.abs(recon - a.masses) <= 1e-12)

    def test_sigma_rho_inverse_on_common_support(self):
        rng = np.random.default_rng(4)
        g = build_grid(1, (0, 1), 30)
        a = DiscreteMeasure(g, rng.uniform(0.1, 1.0, 30))
        b = DiscreteMeasure(g, rng.uniform(0.1, 1.0, 30))
        dec = density_ratios(a, b)
        assert np.all(np.abs(dec.sigma * dec.rho - 1.0) <= 1e-12)

    def test_grid_mismatch_rejected(self):
        a = DiscreteMeasure.dirac(build_grid(1, (0, 1), 5), 0.5)
        b = DiscreteMeasure.dirac(build_grid(1, (0, 1), 9), 0.5)
        with pytest.raises(GridError):
            density_ratios(a, b)


class TestMeasureCsv:
    def test_round_trip_1d(self, tmp_path):
        g = build_grid(1, (0, 1), 101)
        rng = np.random.default_rng(7)
        masses = np.where(rng.random(101) < 0.8, 0.0, rng.random(101))
        m = DiscreteMeasure(g, masses)
        path = tmp_path / "m.csv"
        write_measure_csv(m, path)
        back = read_measure_csv(path, g)
        assert np.all(np.abs(back.masses - m.masses) <= 1e-12)

    def test_round_trip_2d(self, tmp_path):
        g = build_grid(2, ((0, 1), (0, 1)), 7)
        m = DiscreteMeasure.from_atoms(g, [((0.5, 0.5), 1.5), ((0.0, 1.0), 0.25)])
        path = tmp_path / "m2.csv"
        write_measure_csv(m, path)
        back = read_measure_csv(path, g)
        assert np.all(np.abs(back.masses - m.masses) <= 1e-12)

    def test_snap_beyond_half_spacing_rejected(self, tmp_path):
        g = build_grid(1, (0, 1), 5)  # spacing 0.25
        path = tmp_path / "bad.csv"
        path.write_text("x,mass\n1.2,1.0\n", encoding="utf-8")
        with pytest.raises(MeasureError):
            read_measure_csv(path, g)

    def test_wrong_header_rejected(self, tmp_path):
        g = build_grid(1, (0, 1), 5)
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n0.0,1.0\n", encoding="utf-8")
        with pytest.raises(MeasureError):
            read_measure_csv(path, g)

    def test_duplicate_rows_accumulate(self, tmp_path):
        g = build_grid(1, (0, 1), 5)
        path = tmp_path / "dup.csv"
        path.write_text("x,mass\n0.5,1.0\n0.5,0.5\n", encoding="utf-8")
        m = read_measure_csv(path, g)
        assert total_mass(m) == pytest.approx(1.5)
