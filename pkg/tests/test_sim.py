import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import ndtr

from csobench import CSO, SINGLE
from csobench.sim import (
    FWHM_TO_SIGMA,
    SimConfig,
    _pixel_position,
    add_noise,
    angular_separation,
    clamp_secondary_mag,
    expected_image,
    mag_to_counts,
    magnitude_difference,
    midpoint,
    render_point_source,
    sample_scene,
    simulate_cutout,
    simulate_dataset,
    sky_counts_per_pixel,
)

CFG = SimConfig()


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(fwhm_range=(6.0, 2.0))
    with pytest.raises(ValueError):
        SimConfig(cutout_size=4)
    with pytest.raises(ValueError):
        SimConfig(plate_scale=0.0)
    with pytest.raises(ValueError):
        SimConfig(read_noise=-1.0)
    assert CFG.zp_range == (24.0, 24.75)


class TestPhotometry:
    def test_mag_to_counts(self):
        assert mag_to_counts(20.0, 20.0, 1.0) == pytest.approx(1.0)
        assert mag_to_counts(17.5, 20.0, 1.0) == pytest.approx(10.0)
        # 0.1 * 10**4.8
        assert mag_to_counts(12.0, 24.0, 0.1) == pytest.approx(6309.573444801943, rel=1e-12)
        with pytest.raises(ValueError):
            mag_to_counts(12.0, 24.0, 0.0)

    def test_sky_counts(self):
        assert sky_counts_per_pixel(22.0, 22.0, 1.0, 1.0) == pytest.approx(1.0)
        one = sky_counts_per_pixel(19.0, 24.0, 0.2, 1.0)
        assert sky_counts_per_pixel(19.0, 24.0, 0.2, 2.0) == pytest.approx(4 * one)
        assert sky_counts_per_pixel(18.3, 24.0, 0.1, 1.0) == pytest.approx(19.054607179632484, rel=1e-12)


class TestRender:
    def test_zero_counts_leaves_grid(self):
        g = np.full((24, 24), 3.0)
        render_point_source(g, (12.0, 12.0), 0.0, 3.0)
        assert np.all(g == 3.0)

    def test_flux_conserved_when_contained(self):
        g = np.zeros((24, 24))
        render_point_source(g, (12.3, 11.6), 1234.5, 3.0)
        assert g.sum() == pytest.approx(1234.5, rel=1e-6)

    def test_peak_pixel_matches_quadrature(self):
        # Gaussian with sigma 1.7 px integrated over the central pixel (2-D dblquad).
        g = np.zeros((24, 24))
        render_point_source(g, (12.5, 12.5), 1.0, 1.7 / FWHM_TO_SIGMA)
        assert g[12, 12] == pytest.approx(0.05351449118855006, rel=1e-10)

    @settings(max_examples=50, deadline=None)
    @given(
        x=st.floats(0.0, 1.0),
        y=st.floats(0.0, 1.0),
        fwhm=st.floats(1.0, 3.0),
        counts=st.floats(1.0, 1e6),
    )
    def test_flux_conservation_property(self, x, y, fwhm, counts):
        sigma = fwhm * FWHM_TO_SIGMA
        lo, hi = 6 * sigma, 24 - 6 * sigma
        c = (lo + x * (hi - lo), lo + y * (hi - lo))
        g = np.zeros((24, 24))
        render_point_source(g, c, counts, fwhm)
        assert g.sum() == pytest.approx(counts, rel=1e-6)

    def test_truncated_source_matches_analytic_fraction(self):
        g = np.zeros((24, 24))
        fwhm = 5.0
        s = fwhm * FWHM_TO_SIGMA
        c = (22.0, 1.5)
        render_point_source(g, c, 1000.0, fwhm)
        fx = ndtr((24 - c[0]) / s) - ndtr(-c[0] / s)
        fy = ndtr((24 - c[1]) / s) - ndtr(-c[1] / s)
        assert g.sum() == pytest.approx(1000.0 * fx * fy, rel=1e-10)


class TestNoise:
    def test_zero_in_zero_out(self):
        out = add_noise(np.zeros((24, 24)), 0.0, 1.0, np.random.default_rng(0))
        assert np.all(out == 0)

    def test_moments(self):
        rng = np.random.default_rng(1)
        rn = 5.0
        x = add_noise(np.full(10_000, 1e6), rn, 1.0, rng)
        sigma_mean = math.sqrt((1e6 + rn**2) / x.size)
        assert abs(x.mean() - 1e6) < 3 * sigma_mean
        assert x.var() == pytest.approx(1e6 + rn**2, rel=0.10)

    def test_deterministic(self):
        e = np.full((24, 24), 50.0)
        a = add_noise(e, 5.0, 1.0, np.random.default_rng(9))
        b = add_noise(e, 5.0, 1.0, np.random.default_rng(9))
        assert a.tobytes() == b.tobytes()

    def test_negative_expected_raises(self):
        with pytest.raises(ValueError):
            add_noise(np.array([1.0, -0.5]), 5.0, 1.0, np.random.default_rng(0))

    def test_gain_divides(self):
        e = np.full(100, 400.0)
        a = add_noise(e, 0.0, 1.0, np.random.default_rng(3))
        b = add_noise(e, 0.0, 2.0, np.random.default_rng(3))
        np.testing.assert_array_equal(b, a / 2.0)


class TestGeometry:
    def test_midpoint(self):
        assert midpoint((5.0, -3.0, 5.0, -3.0)) == (5.0, -3.0)
        assert midpoint((10.0, 0.0, 12.0, 2.0)) == (11.0, 1.0)
        # The coordinate mean is taken literally, so it breaks across the RA wrap.
        assert midpoint((359.0, 0.0, 1.0, 0.0)) == (180.0, 0.0)

    def test_separation_zero(self):
        assert angular_separation((123.4, -56.7), (123.4, -56.7)) == 0.0

    def test_separation_flat_sky_345(self):
        p = (40.0, 0.0)
        s = (40.0 + 3.0 / 3600, 4.0 / 3600)
        assert angular_separation(p, s) == pytest.approx(5.0, rel=1e-6)

    def test_separation_foreshortening(self):
        p = (40.0, 60.0)
        s = (40.0 + 10.0 / 3600, 60.0)
        # flat-sky oracle: 10" * cos(60 deg)
        assert angular_separation(p, s) == pytest.approx(5.0, rel=1e-6)

    def test_separation_large_angle(self):
        assert angular_separation((0.0, 0.0), (90.0, 0.0)) == pytest.approx(90 * 3600.0, rel=1e-12)
        assert angular_separation((10.0, 89.0), (190.0, 89.0)) == pytest.approx(2 * 3600.0, rel=1e-9)

    @settings(max_examples=200, deadline=None)
    @given(
        ra=st.floats(0.0, 360.0),
        dec=st.floats(-80.0, 80.0),
        dx=st.floats(-100.0, 100.0),
        dy=st.floats(-100.0, 100.0),
    )
    def test_separation_matches_flat_sky_below_100_arcsec(self, ra, dec, dx, dy):
        if math.hypot(dx, dy) < 1e-3:
            return
        dec2 = dec + dy / 3600
        # Flat-sky oracle at the mean declination.
        s = (ra + dx / 3600 / math.cos(math.radians(dec)), dec2)
        cosd = math.cos(math.radians((dec + dec2) / 2))
        flat = math.hypot((s[0] - ra) * 3600 * cosd, dy)
        assert angular_separation((ra, dec), s) == pytest.approx(flat, rel=1e-6)

    def test_magnitude_difference(self):
        assert magnitude_difference(15.0, 15.0) == 0.0
        assert magnitude_difference(15.0, 13.5) == 1.5
        assert magnitude_difference(12.0, 13.5) == -1.5


class TestSampler:
    def test_single_has_no_secondary(self):
        s = sample_scene(CFG, False, np.random.default_rng(0))
        assert not s.is_cso
        assert s.secondary_mag is None and s.secondary_endpoints is None

    def test_clamp_example(self):
        assert clamp_secondary_mag(14.2, 1.4, 12.0, 15.0) == 15.0
        assert clamp_secondary_mag(12.3, -1.0, 12.0, 15.0) == 12.0
        assert clamp_secondary_mag(13.0, 0.5, 12.0, 15.0) == 13.5

    def test_marginals_within_ranges(self):
        rng = np.random.default_rng(11)
        scenes = [sample_scene(CFG, i % 2 == 1, rng) for i in range(10_000)]
        pm = np.array([s.primary_mag for s in scenes])
        assert pm.min() >= 12 and pm.max() <= 15
        fw = np.array([s.fwhm for s in scenes])
        assert fw.min() >= 2 and fw.max() <= 6
        assert {s.exposure for s in scenes} == {0.1, 0.2, 0.5}
        sky = np.array([s.sky_mag for s in scenes])
        assert sky.min() >= 18.3 and sky.max() <= 20.3
        zp = np.array([s.zero_point for s in scenes])
        assert zp.min() >= 24.0 and zp.max() <= 24.75
        size = np.array([s.size_m for s in scenes])
        assert size.min() >= 0.1 and size.max() <= 10
        alb = np.array([s.albedo for s in scenes])
        assert alb.min() >= 0.05 and alb.max() <= 0.2
        cso = [s for s in scenes if s.is_cso]
        sm = np.array([s.secondary_mag for s in cso])
        assert sm.min() >= 12 and sm.max() <= 15
        off = np.abs(np.array([s.offset_arcsec for s in cso]))
        fwc = np.array([s.fwhm for s in cso])[:, None]
        assert np.all(off >= 0.2 * fwc - 1e-12) and np.all(off <= 1.5 * fwc + 1e-12)
        # both signs occur independently on each axis
        signs = np.sign(np.array([s.offset_arcsec for s in cso]))
        assert {tuple(r) for r in signs} == {(1, 1), (1, -1), (-1, 1), (-1, -1)}

    def test_delta_mag_matches_clamped_density(self):
        # Oracle: with P ~ U[12,15], u ~ U[-1.5,1.5] and S = clamp(P+u),
        # dM = S - P has density (4.5 - 2|d|)/9 on [-1.5, 1.5], and S has
        # point masses of 1/8 at each of 12 and 15.
        rng = np.random.default_rng(5)
        scenes = [sample_scene(CFG, True, rng) for _ in range(100_000)]
        dm = np.array([s.secondary_mag - s.primary_mag for s in scenes])
        sm = np.array([s.secondary_mag for s in scenes])
        edges = np.linspace(-1.5, 1.5, 31)

        def cdf(d):
            a = np.abs(d)
            half = (4.5 * a - a * a) / 9
            return 0.5 + np.sign(d) * half

        expected = np.diff(cdf(edges)) * dm.size
        observed, _ = np.histogram(dm, edges)
        assert stats.chisquare(observed, expected).pvalue > 1e-3
        # The unclamped (triangular) law is clearly rejected.
        tri = np.diff(0.5 + np.sign(edges) * (3 * np.abs(edges) - edges**2 / 2) / 9)
        tri = tri / tri.sum() * dm.size
        assert stats.chisquare(observed, tri).pvalue < 1e-10
        for bound in (12.0, 15.0):
            frac = np.mean(sm == bound)
            assert abs(frac - 0.125) < 4 * math.sqrt(0.125 * 0.875 / sm.size)

    def test_separation_support(self):
        rng = np.random.default_rng(2)
        seps = []
        for _ in range(3000):
            scene = sample_scene(CFG, True, rng)
            seps.append(simulate_cutout(scene, CFG, rng).separation_arcsec)
        seps = np.array(seps)
        assert seps.min() >= 0.2 * math.sqrt(2) * 2.0 * (1 - 1e-9)
        assert seps.max() <= 1.5 * math.sqrt(2) * 6.0 * (1 + 1e-9)

    def test_separation_equals_sampled_offset(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            scene = sample_scene(CFG, True, rng)
            cut = simulate_cutout(scene, CFG, rng)
            assert cut.separation_arcsec == pytest.approx(math.hypot(*scene.offset_arcsec), rel=1e-6)

    def test_primary_is_centered_with_error(self):
        cfg = dataclasses.replace(CFG, centering_error_sigma=0.0, read_noise=0.0)
        scene = sample_scene(cfg, False, np.random.default_rng(8))
        e = expected_image(scene, cfg) - expected_image(scene, cfg).min()
        ys, xs = np.mgrid[0:24, 0:24] + 0.5
        cx, cy = (e * xs).sum() / e.sum(), (e * ys).sum() / e.sum()
        assert cx == pytest.approx(12.0, abs=1e-3) and cy == pytest.approx(12.0, abs=1e-3)


class TestSimulateCutout:
    def test_invisible_secondary_equals_single(self):
        rng = np.random.default_rng(6)
        scene = sample_scene(CFG, True, rng)
        single = dataclasses.replace(scene, is_cso=False, secondary_mag=None, secondary_endpoints=None)
        dark = dataclasses.replace(scene, secondary_mag=math.inf)
        np.testing.assert_array_equal(expected_image(dark, CFG), expected_image(single, CFG))

    def test_expected_sum(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            scene = sample_scene(CFG, True, rng)
            e = expected_image(scene, CFG)
            sky = sky_counts_per_pixel(scene.sky_mag, scene.zero_point, scene.exposure, CFG.plate_scale)
            total = sky * 576
            for mag, ends in ((scene.primary_mag, scene.primary_endpoints), (scene.secondary_mag, scene.secondary_endpoints)):
                c = _pixel_position(scene, ends, CFG)
                s = scene.fwhm * FWHM_TO_SIGMA
                frac = (ndtr((24 - c[0]) / s) - ndtr(-c[0] / s)) * (ndtr((24 - c[1]) / s) - ndtr(-c[1] / s))
                total += mag_to_counts(mag, scene.zero_point, scene.exposure) * frac
            assert e.sum() == pytest.approx(total, rel=1e-10)

    def test_cutout_fields(self):
        rng = np.random.default_rng(1)
        c = simulate_cutout(sample_scene(CFG, True, rng), CFG, rng)
        assert c.pixels.shape == (24, 24) and np.all(np.isfinite(c.pixels))
        assert c.label == CSO and c.separation_arcsec > 0
        assert c.delta_mag == pytest.approx(c.scene.secondary_mag - c.scene.primary_mag)
        s = simulate_cutout(sample_scene(CFG, False, rng), CFG, rng)
        assert s.label == SINGLE and math.isnan(s.separation_arcsec)

    def test_noise_variance_law(self):
        scene = sample_scene(CFG, True, np.random.default_rng(12))
        scene = dataclasses.replace(scene, primary_mag=12.0, secondary_mag=12.5, exposure=0.5)
        e = expected_image(scene, CFG)
        rng = np.random.default_rng(13)
        sims = np.stack([simulate_cutout(scene, CFG, rng).pixels for _ in range(2000)])
        m = e >= 100
        assert m.sum() > 10
        ratio = sims.var(axis=0)[m] / (e[m] + CFG.read_noise**2)
        assert np.all(np.abs(ratio - 1) < 0.10)


class TestDataset:
    def test_deterministic(self):
        a = simulate_dataset(CFG, 5, 5, 42)
        b = simulate_dataset(CFG, 5, 5, 42)
        assert all(x.pixels.tobytes() == y.pixels.tobytes() for x, y in zip(a, b))
        c = simulate_dataset(CFG, 5, 5, 43)
        assert a[0].pixels.tobytes() != c[0].pixels.tobytes()

    def test_full_scale_counts(self):
        cuts = simulate_dataset(CFG, 6977, 4977, 0)
        labels = np.array([c.label for c in cuts])
        assert np.sum(labels == SINGLE) == 6977 and np.sum(labels == CSO) == 4977
