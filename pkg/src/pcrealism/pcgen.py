"""Procedural LiDAR-style point clouds and controlled distortions.

Three families of data are produced, one per category of the proxy task:

* Real surrogates: ray-traced street scenes with sensor artifacts
  (range noise, incidence-dependent dropout, quantized azimuth jitter).
* Synthetic: the same kind of ray tracing without any artifacts
  (a street-scene "simulator" and the scattered-primitive GeometricSet).
* Misc: depth ramps over rows or columns, isotropic Gaussian blobs, and
  constant-distance patches in the range image.

Every generator is a pure function of its parameters and seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

REAL, SYNTHETIC, MISC = 0, 1, 2
CATEGORY_NAMES = ("real", "synthetic", "misc")

SENSOR_HEIGHT = 1.73
_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One step of the splitmix64 mixer (Steele et al.), on Python ints."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *indices: int) -> int:
    """Child seed: ``splitmix64(... splitmix64(seed ^ i0) ^ i1 ...)``."""
    x = int(seed) & _MASK64
    for i in indices:
        x = splitmix64(x ^ (int(i) & _MASK64))
    return x


@dataclass(frozen=True)
class ScanPattern:
    """Rotating-LiDAR ray grid. Row 0 is the highest elevation."""

    rows: int = 64
    cols: int = 1024
    elevation_min: float = math.radians(-24.8)
    elevation_max: float = math.radians(2.0)
    azimuth_start: float = 0.0
    azimuth_span: float = 2 * math.pi
    max_range: float = 120.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("rows and cols must be >= 1")
        if not self.elevation_min < self.elevation_max:
            raise ValueError("elevation_min must be < elevation_max")
        if not self.max_range > 0:
            raise ValueError("max_range must be > 0")
        if not 0 < self.azimuth_span <= 2 * math.pi:
            raise ValueError("azimuth_span must be in (0, 2*pi]")

    def elevations(self) -> np.ndarray:
        if self.rows == 1:
            return np.array([0.5 * (self.elevation_min + self.elevation_max)])
        return np.linspace(self.elevation_max, self.elevation_min, self.rows)

    def azimuths(self) -> np.ndarray:
        return self.azimuth_start + self.azimuth_span * np.arange(self.cols) / self.cols

    @property
    def azimuth_step(self) -> float:
        return self.azimuth_span / self.cols

    def directions(self, azimuth_offsets=None) -> np.ndarray:
        """Unit ray directions ``[rows, cols, 3]``."""
        el = self.elevations()[:, None]
        az = np.broadcast_to(self.azimuths()[None, :], (self.rows, self.cols))
        if azimuth_offsets is not None:
            az = az + azimuth_offsets
        return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az),
                         np.broadcast_to(np.sin(el), az.shape)], axis=-1)


HDL64 = ScanPattern()
HDL32_WIDE = ScanPattern(rows=32, elevation_min=math.radians(-30.67),
                         elevation_max=math.radians(10.67))


@dataclass(frozen=True)
class Primitive:
    """``shape`` is "sphere" (size = (radius,)) or "box" (size = half extents)."""

    shape: str
    center: tuple
    size: tuple


@dataclass
class SceneDescription:
    ground_height: float | None = -SENSOR_HEIGHT
    primitives: list = field(default_factory=list)

    def validate(self):
        for p in self.primitives:
            if p.shape not in ("sphere", "box"):
                raise ValueError(f"unknown primitive shape {p.shape!r}")
            if min(p.size) <= 0:
                raise ValueError("primitive sizes must be > 0")
            if self.ground_height is not None:
                top = p.center[2] + (p.size[0] if p.shape == "sphere" else p.size[2])
                if top <= self.ground_height:
                    raise ValueError("primitive lies entirely below the ground plane")


@dataclass
class PointCloud:
    """Points in the sensor frame (metres, sensor at the origin).

    ``rays`` optionally holds the (row, col) of the ray that produced each
    point; ``meta`` carries free-form provenance.
    """

    points: np.ndarray
    dataset: int | None = None
    category: int | None = None
    rays: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)

    def __len__(self):
        return self.points.shape[0]

    def with_points(self, points, rays=..., **meta):
        rays = self.rays if rays is ... else rays
        return PointCloud(points, self.dataset, self.category, rays, {**self.meta, **meta})

    def subset(self, mask):
        rays = None if self.rays is None else self.rays[mask]
        return PointCloud(self.points[mask], self.dataset, self.category, rays, dict(self.meta))


# -- ray tracing ------------------------------------------------------------


def trace_rays(scene: SceneDescription, dirs: np.ndarray, max_range: float):
    """Nearest hit along each unit direction from the origin.

    Returns ``(t, normal)``; ``t`` is ``inf`` where nothing is hit within
    ``max_range``.
    """
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    m = dirs.shape[0]
    t = np.full(m, np.inf)
    normal = np.zeros((m, 3))
    with np.errstate(divide="ignore", invalid="ignore"):
        if scene.ground_height is not None:
            h = scene.ground_height
            tg = h / dirs[:, 2]
            ok = (tg > 0) & np.isfinite(tg)
            t[ok] = tg[ok]
            normal[ok] = (0.0, 0.0, 1.0 if h < 0 else -1.0)
        for p in scene.primitives:
            c = np.asarray(p.center, dtype=np.float64)
            bound = p.size[0] if p.shape == "sphere" else float(np.linalg.norm(p.size))
            # cull with the bounding sphere, then intersect the survivors
            b = dirs @ c
            disc = b * b - (c @ c - bound * bound)
            idx = np.flatnonzero((disc >= 0) & (b + np.sqrt(np.maximum(disc, 0)) > 0))
            if idx.size == 0:
                continue
            d = dirs[idx]
            if p.shape == "sphere":
                r = p.size[0]
                bi = b[idx]
                sq = np.sqrt(disc[idx])
                th = bi - sq
                th = np.where(th > 0, th, bi + sq)
                hit = (th > 0) & (th < t[idx])
                if hit.any():
                    hi_ = idx[hit]
                    t[hi_] = th[hit]
                    normal[hi_] = (th[hit, None] * d[hit] - c) / r
            else:
                half = np.asarray(p.size, dtype=np.float64)
                lo = (c - half) / d
                hi = (c + half) / d
                near = np.minimum(lo, hi)
                far = np.maximum(lo, hi)
                near = np.where(np.isnan(near), -np.inf, near)
                far = np.where(np.isnan(far), np.inf, far)
                axis = near.argmax(axis=1)
                tn = near.max(axis=1)
                tf = far.min(axis=1)
                hit = (tn <= tf) & (tn > 0) & (tn < t[idx])
                if hit.any():
                    hi_ = idx[hit]
                    t[hi_] = tn[hit]
                    nrm = np.zeros((hi_.size, 3))
                    ax = axis[hit]
                    nrm[np.arange(ax.size), ax] = -np.sign(d[hit, ax])
                    normal[hi_] = nrm
    t[t > max_range] = np.inf
    return t, normal


def _trace_pattern(scene, pattern, azimuth_offsets=None):
    dirs = pattern.directions(azimuth_offsets).reshape(-1, 3)
    t, normal = trace_rays(scene, dirs, pattern.max_range)
    hit = np.isfinite(t)
    rows, cols = np.divmod(np.flatnonzero(hit), pattern.cols)
    cos_inc = np.abs(np.einsum("ij,ij->i", dirs[hit], normal[hit]))
    return t[hit, None] * dirs[hit], np.stack([rows, cols], axis=1), cos_inc


def raytrace(scene: SceneDescription, pattern: ScanPattern = HDL64, seed: int = 0) -> PointCloud:
    """One point per ray of ``pattern`` that hits geometry within range.

    Pure geometry: ``seed`` is accepted for interface uniformity and does
    not influence the result.
    """
    scene.validate()
    pts, rays, _ = _trace_pattern(scene, pattern)
    return PointCloud(pts, rays=rays, meta={"empty": len(pts) == 0})


# -- scenes -------------------------------------------------------------------


@dataclass(frozen=True)
class GeometricSetParams:
    n_objects: int = 20
    radius_range: tuple = (0.5, 2.0)
    disc_radius: float = 40.0
    min_distance: float = 4.0
    box_fraction: float = 0.5
    ground_height: float = -SENSOR_HEIGHT
    pattern: ScanPattern = HDL64


def geometric_scene(params: GeometricSetParams, rng) -> SceneDescription:
    prims = []
    lo, hi = params.radius_range
    for _ in range(params.n_objects):
        rad = math.sqrt(rng.uniform(params.min_distance ** 2, params.disc_radius ** 2))
        ang = rng.uniform(0, 2 * math.pi)
        size = rng.uniform(lo, hi)
        x, y = rad * math.cos(ang), rad * math.sin(ang)
        if rng.random() < params.box_fraction:
            prims.append(Primitive("box", (x, y, params.ground_height + size), (size, size, size)))
        else:
            z = params.ground_height + size * rng.uniform(0.2, 1.0)
            prims.append(Primitive("sphere", (x, y, z), (size,)))
    return SceneDescription(params.ground_height, prims)


def gen_geometric_set(params: GeometricSetParams = GeometricSetParams(), seed: int = 0) -> PointCloud:
    """Spheres and cubes scattered on a ground plane, ray traced noise-free."""
    rng = np.random.default_rng(seed)
    pc = raytrace(geometric_scene(params, rng), params.pattern)
    pc.category = SYNTHETIC
    return pc


@dataclass(frozen=True)
class StreetStyle:
    """Scene statistics of a street-like environment."""

    building_density: float = 0.8
    n_cars: float = 8
    n_poles: float = 6
    n_trees: float = 4
    n_clutter: float = 3
    road_half_width: tuple = (4.0, 7.0)
    sensor_height: float = SENSOR_HEIGHT
    # simulator-like asset reuse: fixed block sizes on a regular grid
    regular: bool = False


STREET_STYLES = {
    # synthetic "simulator" town
    "city": StreetStyle(n_trees=0, n_clutter=0, regular=True),
    "urban": StreetStyle(building_density=0.9, n_cars=12, n_poles=8, n_trees=3, n_clutter=5),
    "suburban": StreetStyle(building_density=0.3, n_cars=5, n_poles=4, n_trees=14, n_clutter=10,
                            road_half_width=(3.5, 5.5), sensor_height=1.84),
    # held out from training; stands in for an unseen real dataset
    "rural": StreetStyle(building_density=0.05, n_cars=2, n_poles=2, n_trees=25, n_clutter=12,
                         road_half_width=(3.0, 4.5), sensor_height=1.9),
}


def street_scene(style: StreetStyle, rng) -> SceneDescription:
    g = -style.sensor_height
    prims = []
    w = rng.uniform(*style.road_half_width)
    for side in (-1.0, 1.0):
        x = -70.0
        while x < 70.0:
            length = 12.0 if style.regular else rng.uniform(8, 20)
            if rng.random() < style.building_density:
                if style.regular:
                    setback, depth, height = 2.0, 10.0, 3.0 * rng.integers(2, 5)
                else:
                    setback = rng.uniform(1, 4)
                    depth = rng.uniform(6, 15)
                    height = rng.uniform(4, 15)
                yc = side * (w + 2.0 + setback + depth / 2)
                prims.append(Primitive("box", (x + length / 2, yc, g + height / 2),
                                       (length / 2, depth / 2, height / 2)))
            x += length + (4.0 if style.regular else rng.uniform(0, 6))
    for _ in range(rng.poisson(style.n_cars)):
        x = rng.uniform(5, 45) * rng.choice([-1, 1])
        if style.regular:
            y = w / 2 * rng.choice([-1, 1])
        else:
            y = rng.uniform(1.2, max(w - 1.0, 1.3)) * rng.choice([-1, 1])
        prims.append(Primitive("box", (x, y, g + 0.95), (2.2, 0.9, 0.75)))
    for _ in range(rng.poisson(style.n_poles)):
        x = rng.uniform(-50, 50)
        y = rng.choice([-1, 1]) * (w + rng.uniform(0.5, 1.8))
        prims.append(Primitive("box", (x, y, g + 3.0), (0.1, 0.1, 3.0)))
    for _ in range(rng.poisson(style.n_trees)):
        x = rng.uniform(-55, 55)
        y = rng.choice([-1, 1]) * (w + rng.uniform(1.0, 6.0))
        r = rng.uniform(1.0, 2.5)
        prims.append(Primitive("box", (x, y, g + 1.5), (0.15, 0.15, 1.5)))
        prims.append(Primitive("sphere", (x, y, g + 3.0 + 0.6 * r), (r,)))
    for _ in range(rng.poisson(style.n_clutter)):
        rad = math.sqrt(rng.uniform(16, 1600))
        ang = rng.uniform(0, 2 * math.pi)
        s = rng.uniform(0.3, 1.2)
        if rng.random() < 0.5:
            prims.append(Primitive("box", (rad * math.cos(ang), rad * math.sin(ang), g + s), (s, s, s)))
        else:
            prims.append(Primitive("sphere", (rad * math.cos(ang), rad * math.sin(ang), g + 0.6 * s), (s,)))
    return SceneDescription(g, prims)


def gen_synthetic_city(style: str = "city", pattern: ScanPattern = HDL64, seed: int = 0) -> PointCloud:
    """Artifact-free ray trace of a street scene (simulator surrogate)."""
    rng = np.random.default_rng(seed)
    pc = raytrace(street_scene(STREET_STYLES[style], rng), pattern)
    pc.category = SYNTHETIC
    return pc


# -- real-world surrogates ----------------------------------------------------


@dataclass(frozen=True)
class RealSurrogateParams:
    """Street scene plus sensor artifacts.

    ``dropout`` scales the incidence-dependent drop probability
    ``clamp(0.05 + 0.5 * (1 - cos(incidence)), 0, 0.9)``; ``jitter`` is the
    largest azimuth offset in quanta of 1/8 azimuth step.
    """

    style: str = "urban"
    pattern: ScanPattern = HDL64
    sigma_r: float = 0.02
    dropout: float = 1.0
    jitter: int = 2


REAL_STYLES = {
    "urban": RealSurrogateParams("urban", HDL64),
    "suburban": RealSurrogateParams("suburban", HDL64, dropout=0.25),
    "rural": RealSurrogateParams("rural", HDL64, sigma_r=0.025),
}


def dropout_probability(cos_incidence):
    return np.clip(0.05 + 0.5 * (1.0 - cos_incidence), 0.0, 0.9)


def real_surrogate_scene(params: RealSurrogateParams, seed: int) -> SceneDescription:
    """The scene that :func:`gen_real_surrogate` traces for ``seed``."""
    scene_ss = np.random.SeedSequence(seed).spawn(4)[0]
    return street_scene(STREET_STYLES[params.style], np.random.default_rng(scene_ss))


def gen_real_surrogate(params: RealSurrogateParams = RealSurrogateParams(), seed: int = 0) -> PointCloud:
    """Ray-traced street scene with realistic sensor artifacts."""
    ss_scene, ss_jit, ss_drop, ss_noise = np.random.SeedSequence(seed).spawn(4)
    scene = street_scene(STREET_STYLES[params.style], np.random.default_rng(ss_scene))
    scene.validate()
    pattern = params.pattern
    offsets = None
    if params.jitter:
        k = np.random.default_rng(ss_jit).integers(-params.jitter, params.jitter + 1,
                                                    (pattern.rows, pattern.cols))
        offsets = k * (pattern.azimuth_step / 8)
    pts, rays, cos_inc = _trace_pattern(scene, pattern, offsets)
    if params.dropout > 0:
        u = np.random.default_rng(ss_drop).random(len(pts))
        keep = u >= params.dropout * dropout_probability(cos_inc)
        pts, rays = pts[keep], rays[keep]
    pc = PointCloud(pts, category=REAL, rays=rays, meta={"style": params.style})
    if params.sigma_r > 0:
        eps = np.random.default_rng(ss_noise).normal(0.0, params.sigma_r, len(pts))
        pc.points = displace_along_rays(pc.points, eps)[0]
    return pc


# -- distortions --------------------------------------------------------------


def displace_along_rays(points, deltas):
    """Move each point by ``deltas`` along its own ray from the origin.

    The new range is ``|r + delta|`` so the direction is kept. Points at the
    origin have no direction and are left untouched; their count is the
    second return value.
    """
    points = np.asarray(points, dtype=np.float64)
    deltas = np.broadcast_to(np.asarray(deltas, dtype=np.float64), points.shape[:1])
    r = np.sqrt(np.einsum("ij,ij->i", points, points))
    ok = r > 0
    out = points.copy()
    scale = np.abs(r[ok] + deltas[ok]) / r[ok]
    out[ok] = points[ok] * scale[:, None]
    return out, int((~ok).sum())


def add_range_noise(pc: PointCloud, sigma: float, seed: int = 0) -> PointCloud:
    """Gaussian range noise with std ``sigma`` applied along each ray."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return pc.with_points(pc.points.copy(), skipped_origin=0)
    eps = np.random.default_rng(seed).normal(0.0, sigma, len(pc))
    pts, skipped = displace_along_rays(pc.points, eps)
    return pc.with_points(pts, skipped_origin=skipped)


def azimuth(points) -> np.ndarray:
    """Azimuth in ``[0, 2*pi)``."""
    points = np.asarray(points)
    return np.mod(np.arctan2(points[:, 1], points[:, 0]), 2 * math.pi)


def inject_patch_anomaly(pc: PointCloud, azimuth_interval, sigma: float, seed: int = 0):
    """Range noise restricted to an azimuth sector.

    ``azimuth_interval`` is ``(start, end)`` in radians, half-open, and may
    wrap through 0. Returns the distorted cloud and the membership mask.
    """
    start, end = azimuth_interval
    width = end - start
    if not width > 0:
        raise ValueError("empty azimuth interval")
    if width > 2 * math.pi + 1e-12:
        raise ValueError("azimuth interval wider than a full revolution")
    if width >= 2 * math.pi:
        mask = np.ones(len(pc), dtype=bool)
    else:
        mask = np.mod(azimuth(pc.points) - start, 2 * math.pi) < width
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    eps = np.random.default_rng(seed).normal(0.0, sigma, len(pc)) if sigma > 0 else np.zeros(len(pc))
    pts, skipped = displace_along_rays(pc.points, np.where(mask, eps, 0.0))
    out = pc.with_points(np.where(mask[:, None], pts, pc.points), skipped_origin=skipped)
    return out, mask


# -- misc ---------------------------------------------------------------------


@dataclass(frozen=True)
class MiscParams:
    """Parameters of the Misc generators.

    ``sigma`` fixes the added range noise (kinds 1, 2, 4); otherwise it is
    drawn log-uniformly from ``sigma_range``. ``blob_sigma`` likewise fixes
    the spread of kind 3, else drawn from ``blob_sigma_range``. ``patches``
    optionally fixes the kind-4 patches as ``(row, col, height, width, d)``.
    """

    d_min: float = 2.0
    d_max: float = 50.0
    sigma: float | None = None
    sigma_range: tuple = (0.05, 3.0)
    blob_sigma: float | None = None
    blob_sigma_range: tuple = (1.0, 30.0)
    n_points: int = 16384
    n_patches: tuple = (1, 6)
    patches: tuple | None = None


def _loguniform(rng, lo, hi):
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def ramp_ranges(pattern: ScanPattern, axis: int, d_min: float, d_max: float) -> np.ndarray:
    """Range image with depth increasing linearly over rows (0) or columns (1)."""
    n = pattern.rows if axis == 0 else pattern.cols
    ramp = d_min + (d_max - d_min) * np.arange(n) / max(n - 1, 1)
    shape = (pattern.rows, pattern.cols)
    return np.broadcast_to(ramp[:, None] if axis == 0 else ramp[None, :], shape).copy()


def cloud_from_ranges(ranges, pattern: ScanPattern, mask=None) -> PointCloud:
    dirs = pattern.directions()
    if mask is None:
        mask = np.ones(ranges.shape, dtype=bool)
    rows, cols = np.nonzero(mask)
    pts = ranges[rows, cols, None] * dirs[rows, cols]
    return PointCloud(pts, rays=np.stack([rows, cols], axis=1))


def gen_misc(kind: int, pattern: ScanPattern = HDL64, params: MiscParams = MiscParams(),
             seed: int = 0) -> PointCloud:
    """Degenerate point distributions (kinds 1 to 4)."""
    if kind not in (1, 2, 3, 4):
        raise ValueError(f"misc kind must be 1, 2, 3 or 4, got {kind}")
    rng = np.random.default_rng(seed)
    if kind == 3:
        s = params.blob_sigma if params.blob_sigma is not None else _loguniform(rng, *params.blob_sigma_range)
        pc = PointCloud(rng.normal(0.0, s, (params.n_points, 3)), category=MISC,
                        meta={"misc": 3, "blob_sigma": s})
        return pc
    if pattern is None:
        raise ValueError("misc kinds 1, 2 and 4 need a scan pattern")
    sigma = params.sigma if params.sigma is not None else _loguniform(rng, *params.sigma_range)
    mask = None
    if kind in (1, 2):
        ranges = ramp_ranges(pattern, kind - 1, params.d_min, params.d_max)
    else:
        ranges, mask = _misc4_base(pattern, params, rng)
        patches = params.patches
        if patches is None:
            patches = []
            for _ in range(rng.integers(params.n_patches[0], params.n_patches[1] + 1)):
                h = int(rng.integers(max(pattern.rows // 8, 1), max(pattern.rows // 2, 1) + 1))
                w = int(rng.integers(max(pattern.cols // 16, 1), max(pattern.cols // 4, 1) + 1))
                r0 = int(rng.integers(0, pattern.rows - h + 1))
                c0 = int(rng.integers(0, pattern.cols - w + 1))
                patches.append((r0, c0, h, w, rng.uniform(params.d_min, params.d_max)))
        for r0, c0, h, w, d in patches:
            ranges[r0:r0 + h, c0:c0 + w] = d
            mask[r0:r0 + h, c0:c0 + w] = True
    pc = cloud_from_ranges(ranges, pattern, mask)
    pc.category = MISC
    pc.meta.update(misc=kind, sigma=sigma)
    if sigma > 0:
        eps = rng.normal(0.0, sigma, len(pc))
        pc.points = displace_along_rays(pc.points, eps)[0]
    return pc


def _misc4_base(pattern, params, rng):
    if rng.random() < 0.5:
        ranges = ramp_ranges(pattern, int(rng.integers(0, 2)), params.d_min, params.d_max)
        return ranges, np.ones(ranges.shape, dtype=bool)
    scene = geometric_scene(replace(GeometricSetParams(), pattern=pattern), rng)
    pc = raytrace(scene, pattern)
    ranges = np.zeros((pattern.rows, pattern.cols))
    mask = np.zeros(ranges.shape, dtype=bool)
    ranges[pc.rays[:, 0], pc.rays[:, 1]] = np.linalg.norm(pc.points, axis=1)
    mask[pc.rays[:, 0], pc.rays[:, 1]] = True
    return ranges, mask
