"""Scene sampling and cutout rendering for single satellites and CSO pairs.

Cutouts are rendered directly at 24x24 scale around the (noisy) calculated
position of the tracked primary.  Both satellites are drawn as circular
Gaussian PSFs at the midpoint of their exposure endpoints.
"""

import math
from dataclasses import dataclass, fields

import numpy as np
from scipy.special import ndtr

from . import CSO, SINGLE
from .seeding import derive_seed

ARCSEC_PER_DEG = 3600.0
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


@dataclass(frozen=True)
class SimConfig:
    primary_mag_range: tuple = (12.0, 15.0)
    delta_mag_range: tuple = (-1.5, 1.5)
    fwhm_range: tuple = (2.0, 6.0)  # arcsec
    offset_factor_range: tuple = (0.2, 1.5)
    exposure_choices: tuple = (0.1, 0.2, 0.5)  # s
    sky_mag_range: tuple = (18.3, 20.3)  # mag / arcsec^2
    zp_unif_range: tuple = (0.0, 0.3)
    zp_base: float = 24.0
    size_range: tuple = (0.1, 10.0)  # m, metadata only
    albedo_range: tuple = (0.05, 0.2)  # metadata only
    cutout_size: int = 24
    plate_scale: float = 1.0  # arcsec / pixel
    gain: float = 1.0  # e- / ADU
    read_noise: float = 5.0  # e- RMS
    centering_error_sigma: float = 0.5  # arcsec, per axis
    # Field placement is kept away from the RA wrap and the poles.
    ra_range: tuple = (30.0, 330.0)
    dec_range: tuple = (-60.0, 60.0)
    apparent_rate_range: tuple = (0.0, 30.0)  # arcsec / s, endpoints only
    jitter_deg: float = 0.00139  # metadata only

    def __post_init__(self):
        for f in fields(self):
            if f.name.endswith("_range"):
                lo, hi = getattr(self, f.name)
                if not lo <= hi:
                    raise ValueError(f"{f.name}: lower bound {lo} exceeds upper bound {hi}")
        if not self.exposure_choices or min(self.exposure_choices) <= 0:
            raise ValueError("exposure_choices must be non-empty and positive")
        if self.cutout_size < 8:
            raise ValueError("cutout_size must be >= 8")
        if self.plate_scale <= 0:
            raise ValueError("plate_scale must be positive")
        if self.gain <= 0:
            raise ValueError("gain must be positive")
        if self.read_noise < 0:
            raise ValueError("read_noise must be non-negative")
        if self.centering_error_sigma < 0:
            raise ValueError("centering_error_sigma must be non-negative")
        if self.fwhm_range[0] <= 0:
            raise ValueError("fwhm_range must be positive")

    @property
    def zp_range(self):
        lo, hi = self.zp_unif_range
        return (self.zp_base + lo / 0.4, self.zp_base + hi / 0.4)


@dataclass
class SceneSample:
    is_cso: bool
    primary_mag: float
    fwhm: float
    exposure: float
    sky_mag: float
    zero_point: float
    field_center: tuple  # (RA, DEC) deg of the cutout center
    primary_endpoints: tuple  # (RA_i, DEC_i, RA_f, DEC_f) deg
    size_m: float
    albedo: float
    centering_error: tuple  # arcsec (east, north)
    secondary_mag: float = None
    secondary_endpoints: tuple = None
    offset_arcsec: tuple = None  # sampled secondary offset (east, north)


@dataclass
class Cutout:
    pixels: np.ndarray
    label: int
    scene: SceneSample
    separation_arcsec: float = float("nan")
    delta_mag: float = float("nan")


def clamp_secondary_mag(primary_mag, delta_draw, lo, hi):
    """Secondary magnitude: additive offset, clamped to the primary bounds."""
    return min(max(primary_mag + delta_draw, lo), hi)


def _deproject(center, xi, eta):
    """Inverse gnomonic projection: tangent-plane offsets (arcsec) -> (RA, DEC) deg."""
    ra0, dec0 = math.radians(center[0]), math.radians(center[1])
    xi = math.radians(xi / ARCSEC_PER_DEG)
    eta = math.radians(eta / ARCSEC_PER_DEG)
    rho = math.hypot(xi, eta)
    if rho == 0.0:
        return float(center[0]), float(center[1])
    c = math.atan(rho)
    sin_c, cos_c = math.sin(c), math.cos(c)
    dec = math.asin(cos_c * math.sin(dec0) + eta * sin_c * math.cos(dec0) / rho)
    ra = ra0 + math.atan2(xi * sin_c, rho * math.cos(dec0) * cos_c - eta * math.sin(dec0) * sin_c)
    return math.degrees(ra), math.degrees(dec)


def project(center, point):
    """Gnomonic projection of ``point`` about ``center``; returns (xi, eta) in arcsec."""
    ra0, dec0 = math.radians(center[0]), math.radians(center[1])
    ra, dec = math.radians(point[0]), math.radians(point[1])
    dra = ra - ra0
    cos_c = math.sin(dec0) * math.sin(dec) + math.cos(dec0) * math.cos(dec) * math.cos(dra)
    xi = math.cos(dec) * math.sin(dra) / cos_c
    eta = (math.cos(dec0) * math.sin(dec) - math.sin(dec0) * math.cos(dec) * math.cos(dra)) / cos_c
    return math.degrees(xi) * ARCSEC_PER_DEG, math.degrees(eta) * ARCSEC_PER_DEG


def _endpoints(mid, half_east, half_north):
    """Endpoints symmetric in coordinates about ``mid`` (so the coordinate mean recovers it)."""
    dra = half_east / ARCSEC_PER_DEG / math.cos(math.radians(mid[1]))
    ddec = half_north / ARCSEC_PER_DEG
    return (mid[0] - dra, mid[1] - ddec, mid[0] + dra, mid[1] + ddec)


def sample_scene(config, want_cso, rng):
    """Draw one set of scene parameters.

    The draw order is fixed so that a given generator state always yields the
    same scene; the secondary draws happen only for CSO scenes.
    """
    c = config
    primary_mag = rng.uniform(*c.primary_mag_range)
    fwhm = rng.uniform(*c.fwhm_range)
    exposure = float(c.exposure_choices[rng.integers(len(c.exposure_choices))])
    sky_mag = rng.uniform(*c.sky_mag_range)
    zero_point = c.zp_base + rng.uniform(*c.zp_unif_range) / 0.4
    size_m = rng.uniform(*c.size_range)
    albedo = rng.uniform(*c.albedo_range)
    center = (rng.uniform(*c.ra_range), rng.uniform(*c.dec_range))
    err = tuple(rng.normal(0.0, c.centering_error_sigma, size=2)) if c.centering_error_sigma > 0 else (0.0, 0.0)
    rate = rng.uniform(*c.apparent_rate_range)
    theta = rng.uniform(0.0, 2.0 * math.pi)
    half = 0.5 * rate * exposure
    half_e, half_n = half * math.cos(theta), half * math.sin(theta)

    p_mid = _deproject(center, err[0], err[1])
    scene = SceneSample(
        is_cso=bool(want_cso),
        primary_mag=float(primary_mag),
        fwhm=float(fwhm),
        exposure=exposure,
        sky_mag=float(sky_mag),
        zero_point=float(zero_point),
        field_center=(float(center[0]), float(center[1])),
        primary_endpoints=_endpoints(p_mid, half_e, half_n),
        size_m=float(size_m),
        albedo=float(albedo),
        centering_error=(float(err[0]), float(err[1])),
    )
    if want_cso:
        draw = rng.uniform(*c.delta_mag_range)
        scene.secondary_mag = float(clamp_secondary_mag(primary_mag, draw, *c.primary_mag_range))
        factors = rng.uniform(*c.offset_factor_range, size=2)
        signs = rng.choice((-1.0, 1.0), size=2)
        off = signs * factors * fwhm
        scene.offset_arcsec = (float(off[0]), float(off[1]))
        # Offsets are on-sky (tangent plane at the primary), not raw RA increments.
        s_mid = _deproject(midpoint(scene.primary_endpoints), off[0], off[1])
        scene.secondary_endpoints = _endpoints(s_mid, half_e, half_n)
    return scene


def mag_to_counts(m, zp, t):
    """Expected total counts from magnitude ``m`` over exposure ``t``."""
    if t <= 0:
        raise ValueError("exposure must be positive")
    return t * 10.0 ** (-0.4 * (m - zp))


def sky_counts_per_pixel(m_sky, zp, t, plate_scale):
    if t <= 0 or plate_scale <= 0:
        raise ValueError("exposure and plate_scale must be positive")
    return t * 10.0 ** (-0.4 * (m_sky - zp)) * plate_scale**2


def render_point_source(grid, center, total_counts, fwhm_pixels):
    """Add a pixel-integrated circular Gaussian to ``grid`` in place.

    ``center`` is (x, y) in pixel units with pixel ``[j, i]`` covering
    x in [i, i+1), y in [j, j+1).  Flux falling outside the grid is lost.
    """
    if total_counts < 0:
        raise ValueError("total_counts must be non-negative")
    if fwhm_pixels <= 0:
        raise ValueError("fwhm_pixels must be positive")
    if total_counts == 0:
        return grid
    sigma = fwhm_pixels * FWHM_TO_SIGMA
    ny, nx = grid.shape
    px = np.diff(ndtr((np.arange(nx + 1) - center[0]) / sigma))
    py = np.diff(ndtr((np.arange(ny + 1) - center[1]) / sigma))
    grid += total_counts * np.outer(py, px)
    return grid


def add_noise(expected, read_noise, gain, rng):
    """Poisson shot noise plus Gaussian read noise (e-), converted to ADU."""
    expected = np.asarray(expected, dtype=np.float64)
    if np.any(expected < 0) or not np.all(np.isfinite(expected)):
        raise ValueError("expected counts must be finite and non-negative")
    observed = rng.poisson(expected).astype(np.float64)
    if read_noise > 0:
        observed += rng.normal(0.0, read_noise, size=expected.shape)
    return observed / gain


def midpoint(endpoints):
    """Coordinate-wise mean of (RA_i, DEC_i, RA_f, DEC_f); no RA wrap handling."""
    ra_i, dec_i, ra_f, dec_f = endpoints
    return ((ra_i + ra_f) / 2.0, (dec_i + dec_f) / 2.0)


def angular_separation(p, s):
    """Great-circle distance in arcsec between two (RA, DEC) points in degrees (Vincenty form)."""
    ra1, dec1 = math.radians(p[0]), math.radians(p[1])
    ra2, dec2 = math.radians(s[0]), math.radians(s[1])
    dra = ra2 - ra1
    sd1, cd1 = math.sin(dec1), math.cos(dec1)
    sd2, cd2 = math.sin(dec2), math.cos(dec2)
    num = math.hypot(cd2 * math.sin(dra), cd1 * sd2 - sd1 * cd2 * math.cos(dra))
    den = sd1 * sd2 + cd1 * cd2 * math.cos(dra)
    return math.degrees(math.atan2(num, den)) * ARCSEC_PER_DEG


def magnitude_difference(secondary, primary):
    return secondary - primary


def _pixel_position(scene, endpoints, config):
    xi, eta = project(scene.field_center, midpoint(endpoints))
    half = config.cutout_size / 2.0
    return (half + xi / config.plate_scale, half + eta / config.plate_scale)


def expected_image(scene, config):
    """Noise-free expected counts (e-) for ``scene``: sky plus one or two sources."""
    n = config.cutout_size
    sky = sky_counts_per_pixel(scene.sky_mag, scene.zero_point, scene.exposure, config.plate_scale)
    grid = np.full((n, n), sky, dtype=np.float64)
    fwhm_px = scene.fwhm / config.plate_scale
    render_point_source(
        grid,
        _pixel_position(scene, scene.primary_endpoints, config),
        mag_to_counts(scene.primary_mag, scene.zero_point, scene.exposure),
        fwhm_px,
    )
    if scene.is_cso:
        render_point_source(
            grid,
            _pixel_position(scene, scene.secondary_endpoints, config),
            mag_to_counts(scene.secondary_mag, scene.zero_point, scene.exposure),
            fwhm_px,
        )
    return grid


def simulate_cutout(scene, config, rng):
    pixels = add_noise(expected_image(scene, config), config.read_noise, config.gain, rng)
    cut = Cutout(pixels=pixels, label=CSO if scene.is_cso else SINGLE, scene=scene)
    if scene.is_cso:
        cut.separation_arcsec = angular_separation(
            midpoint(scene.primary_endpoints), midpoint(scene.secondary_endpoints)
        )
        cut.delta_mag = magnitude_difference(scene.secondary_mag, scene.primary_mag)
    return cut


def simulate_dataset(config, n_single, n_cso, seed):
    """Singles first, then CSOs; cutout ``i`` uses its own stream ``cutout/i``."""
    out = []
    for i in range(n_single + n_cso):
        rng = np.random.default_rng(derive_seed(seed, f"cutout/{i}"))
        scene = sample_scene(config, i >= n_single, rng)
        out.append(simulate_cutout(scene, config, rng))
    return out
