import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from pcrealism import pcgen
from pcrealism.datasets import (DatasetSpec, check_datasets, default_datasets,
                                evaluation_datasets)
from pcrealism.pcgen import (HDL64, MiscParams, Primitive, RealSurrogateParams, ScanPattern,
                             SceneDescription)

SMALL = ScanPattern(rows=16, cols=256)


def test_derive_seed_distinct_and_stable():
    a = pcgen.derive_seed(0, 0, 1, 2)
    assert a == pcgen.derive_seed(0, 0, 1, 2)
    seen = {pcgen.derive_seed(7, s, d, i) for s in range(2) for d in range(7) for i in range(50)}
    assert len(seen) == 700
    # splitmix64 reference value for state 0
    assert pcgen.splitmix64(0) == 0xE220A8397B1DCDAF


def test_scan_pattern_validation():
    with pytest.raises(ValueError):
        ScanPattern(rows=0)
    with pytest.raises(ValueError):
        ScanPattern(elevation_min=0.1, elevation_max=0.0)
    with pytest.raises(ValueError):
        ScanPattern(max_range=0)
    el = HDL64.elevations()
    assert el[0] == pytest.approx(math.radians(2.0)) and el[-1] == pytest.approx(math.radians(-24.8))
    np.testing.assert_allclose(np.linalg.norm(HDL64.directions(), axis=-1), 1.0)


# -- ray tracing -------------------------------------------------------------


def test_single_ray_sphere_hit():
    scene = SceneDescription(None, [Primitive("sphere", (5, 0, 0), (1,))])
    t, normal = pcgen.trace_rays(scene, np.array([[1.0, 0, 0]]), 100)
    assert t[0] == 4.0
    np.testing.assert_array_equal(normal[0], [-1, 0, 0])
    one_ray = ScanPattern(rows=1, cols=1, elevation_min=-0.01, elevation_max=0.01)
    pc = pcgen.raytrace(scene, one_ray)
    np.testing.assert_allclose(pc.points, [[4, 0, 0]], atol=1e-12)


def test_box_hit_and_miss():
    scene = SceneDescription(None, [Primitive("box", (10, 0, 0), (1, 2, 3))])
    dirs = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0]])
    t, normal = pcgen.trace_rays(scene, dirs, 100)
    assert t[0] == 9.0 and np.isinf(t[1]) and np.isinf(t[2])
    np.testing.assert_array_equal(normal[0], [-1, 0, 0])


def test_empty_scene_gives_empty_cloud():
    pc = pcgen.raytrace(SceneDescription(None, []), SMALL)
    assert len(pc) == 0 and pc.meta["empty"]


def test_ground_plane_scan():
    pc = pcgen.raytrace(SceneDescription(-2.0, []), HDL64)
    assert len(pc) > 0
    assert np.max(np.abs(pc.points[:, 2] + 2.0)) < 1e-9
    assert np.max(np.linalg.norm(pc.points, axis=1)) <= HDL64.max_range


def test_scene_validation():
    with pytest.raises(ValueError):
        pcgen.raytrace(SceneDescription(-2.0, [Primitive("cone", (0, 0, 0), (1,))]), SMALL)
    with pytest.raises(ValueError):
        pcgen.raytrace(SceneDescription(-2.0, [Primitive("sphere", (5, 0, -10), (1,))]), SMALL)
    with pytest.raises(ValueError):
        pcgen.raytrace(SceneDescription(-2.0, [Primitive("box", (5, 0, 0), (1, 0, 1))]), SMALL)


def _surface_distance(p, prim):
    c = np.asarray(prim.center)
    if prim.shape == "sphere":
        return abs(np.linalg.norm(p - c) - prim.size[0])
    # distance to the surface of an axis-aligned box
    q = np.abs(p - c) - np.asarray(prim.size)
    outside = np.linalg.norm(np.maximum(q, 0))
    inside = min(q.max(), 0.0)
    return abs(outside + inside)


def test_geometric_set_points_on_surfaces():
    params = pcgen.GeometricSetParams(n_objects=20, radius_range=(0.5, 2.0), pattern=SMALL)
    rng = np.random.default_rng(3)
    scene = pcgen.geometric_scene(params, rng)
    pc = pcgen.gen_geometric_set(params, 3)
    off_ground = pc.points[np.abs(pc.points[:, 2] - params.ground_height) > 1e-9]
    assert len(off_ground) > 0
    for p in off_ground:
        assert min(_surface_distance(p, prim) for prim in scene.primitives) < 1e-6


def test_geometric_set_determinism_and_zero_objects():
    params = replace(pcgen.GeometricSetParams(), pattern=SMALL)
    a = pcgen.gen_geometric_set(params, 11)
    b = pcgen.gen_geometric_set(params, 11)
    assert a.points.tobytes() == b.points.tobytes()
    ground = pcgen.gen_geometric_set(replace(params, n_objects=0), 11)
    assert np.max(np.abs(ground.points[:, 2] - params.ground_height)) < 1e-9


# -- real surrogates ---------------------------------------------------------


def test_real_surrogate_degenerate_equals_raytrace():
    params = RealSurrogateParams("urban", SMALL, sigma_r=0.0, dropout=0.0, jitter=0)
    pc = pcgen.gen_real_surrogate(params, 5)
    plain = pcgen.raytrace(pcgen.real_surrogate_scene(params, 5), SMALL)
    np.testing.assert_array_equal(pc.points, plain.points)


def test_real_surrogate_noise_level():
    params = RealSurrogateParams("urban", HDL64, sigma_r=0.02, dropout=0.0, jitter=0)
    noisy = pcgen.gen_real_surrogate(params, 9)
    clean = pcgen.gen_real_surrogate(replace(params, sigma_r=0.0), 9)
    assert len(noisy) == len(clean) >= 10_000
    resid = np.linalg.norm(noisy.points, axis=1) - np.linalg.norm(clean.points, axis=1)
    assert 0.016 <= resid.std() <= 0.024
    # the direction of every return is unchanged
    u = noisy.points / np.linalg.norm(noisy.points, axis=1, keepdims=True)
    v = clean.points / np.linalg.norm(clean.points, axis=1, keepdims=True)
    assert np.max(np.abs(u - v)) < 1e-9


def test_real_styles_differ():
    a = pcgen.gen_real_surrogate(pcgen.REAL_STYLES["urban"], 1)
    b = pcgen.gen_real_surrogate(pcgen.REAL_STYLES["suburban"], 1)
    assert len(a) != len(b)
    assert a.meta["style"] != b.meta["style"]


def test_dropout_probability_clamp():
    np.testing.assert_allclose(pcgen.dropout_probability(np.array([1.0, 0.0, -1.0])), [0.05, 0.55, 0.9])


def _nn_spacing(points):
    from scipy.spatial import cKDTree

    d, _ = cKDTree(points).query(points, k=2)
    return d[:, 1]


def test_real_vs_synthetic_spacing_statistics():
    # sensor noise roughens surfaces, so nearest-neighbour spacing varies
    # more from return to return in the Real surrogate
    real, synth = [], []
    for i in range(100):
        r = pcgen.gen_real_surrogate(replace(pcgen.REAL_STYLES["urban"], pattern=SMALL), i)
        s = pcgen.gen_synthetic_city("urban", SMALL, i)
        real.append(np.median(np.abs(np.diff(_nn_spacing(r.points)))))
        synth.append(np.median(np.abs(np.diff(_nn_spacing(s.points)))))
    res = stats.mannwhitneyu(real, synth)
    assert res.pvalue < 1e-6


# -- distortions -------------------------------------------------------------


def test_displace_hand_example_and_origin():
    out, skipped = pcgen.displace_along_rays(np.array([[3.0, 4.0, 0.0], [0, 0, 0]]), np.array([1.0, 1.0]))
    np.testing.assert_allclose(out[0], [3.6, 4.8, 0.0], rtol=1e-15)
    np.testing.assert_array_equal(out[1], [0, 0, 0])
    assert skipped == 1


def test_add_range_noise_sigma_zero_and_stats():
    pc = pcgen.gen_synthetic_city("city", SMALL, 2)
    same = pcgen.add_range_noise(pc, 0.0, 1)
    np.testing.assert_array_equal(same.points, pc.points)
    big = pcgen.gen_synthetic_city("city", HDL64, 2)
    noisy = pcgen.add_range_noise(big, 0.03, 4)
    d = np.linalg.norm(noisy.points, axis=1) - np.linalg.norm(big.points, axis=1)
    assert abs(d.mean()) < 3 * 0.03 / math.sqrt(len(d))
    assert abs(d.std() / 0.03 - 1) < 0.05
    assert stats.normaltest(d).pvalue > 1e-3
    with pytest.raises(ValueError):
        pcgen.add_range_noise(pc, -1.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 5.0), st.integers(0, 2**32 - 1))
def test_add_range_noise_keeps_directions(sigma, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(200, 3)) * 20
    noisy = pcgen.add_range_noise(pcgen.PointCloud(pts), sigma, seed)
    u = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    v = noisy.points / np.linalg.norm(noisy.points, axis=1, keepdims=True)
    assert np.max(np.abs(u - v)) < 1e-9


def test_patch_anomaly_cases():
    pc = pcgen.gen_synthetic_city("city", SMALL, 3)
    # a sector with no points in it
    pts = pc.points[pcgen.azimuth(pc.points) > 1.0]
    sub = pcgen.PointCloud(pts)
    out, mask = pcgen.inject_patch_anomaly(sub, (0.2, 0.5), 1.0, 7)
    assert not mask.any()
    np.testing.assert_array_equal(out.points, sub.points)
    # full revolution is plain range noise
    full, mask = pcgen.inject_patch_anomaly(pc, (0.0, 2 * math.pi), 1.0, 7)
    assert mask.all()
    np.testing.assert_array_equal(full.points, pcgen.add_range_noise(pc, 1.0, 7).points)
    # a quarter-pi sector: exactly the masked points move
    out, mask = pcgen.inject_patch_anomaly(pc, (1.0, 1.0 + math.pi / 4), 1.0, 7)
    moved = np.any(out.points != pc.points, axis=1)
    np.testing.assert_array_equal(moved, mask)
    assert 0 < mask.sum() < len(pc)
    with pytest.raises(ValueError):
        pcgen.inject_patch_anomaly(pc, (1.0, 1.0), 1.0)


def test_patch_wraps_through_zero():
    pts = np.array([[1, -0.1, 0], [1, 0.1, 0], [-1, 0.1, 0]], dtype=float)
    _, mask = pcgen.inject_patch_anomaly(pcgen.PointCloud(pts), (-0.5, 0.5), 1.0)
    assert mask.tolist() == [True, True, False]


# -- misc --------------------------------------------------------------------


def test_misc_ramps():
    p = MiscParams(sigma=0.0, d_min=2.0, d_max=50.0)
    pc = pcgen.gen_misc(1, HDL64, p, 0)
    r = np.linalg.norm(pc.points, axis=1).reshape(64, 1024)
    assert r[0, 0] == pytest.approx(2.0, abs=1e-12)
    assert r[-1, 0] == pytest.approx(50.0, abs=1e-12)
    assert np.all(np.diff(r[:, 0]) > 0)
    pc2 = pcgen.gen_misc(2, SMALL, p, 0)
    r2 = np.linalg.norm(pc2.points, axis=1).reshape(16, 256)
    assert np.all(np.diff(r2[0]) > 0)


def test_misc3_spread():
    pc = pcgen.gen_misc(3, None, MiscParams(blob_sigma=1.0, n_points=100_000), 1)
    assert np.all(np.abs(pc.points.std(axis=0) - 1.0) < 0.05)


def test_misc4_full_patch():
    p = MiscParams(sigma=0.0, patches=((0, 0, 16, 256, 10.0),))
    pc = pcgen.gen_misc(4, SMALL, p, 0)
    np.testing.assert_allclose(np.linalg.norm(pc.points, axis=1), 10.0, rtol=1e-12)
    assert len(pc) == 16 * 256


def test_misc_kind_checked():
    with pytest.raises(ValueError):
        pcgen.gen_misc(5)


def test_misc_noise_draw_recorded():
    sig = [pcgen.gen_misc(1, SMALL, MiscParams(), s).meta["sigma"] for s in range(20)]
    assert all(0.05 <= s <= 3.0 for s in sig)
    assert len(set(sig)) == 20


# -- dataset specs -----------------------------------------------------------


def test_default_support_sets():
    specs = check_datasets(default_datasets())
    cats = [s.category for s in specs]
    assert cats.count(pcgen.REAL) == 2 and cats.count(pcgen.SYNTHETIC) == 2 and cats.count(pcgen.MISC) == 3
    assert sorted(s.dataset_id for s in specs) == list(range(7))
    assert all(s.dataset_id >= 100 for s in evaluation_datasets())


def test_dataset_spec_validation():
    with pytest.raises(ValueError, match="'colour'"):
        DatasetSpec(0, "x", 0, "real_surrogate", {"colour": 1})
    with pytest.raises(ValueError):
        DatasetSpec(0, "x", 5, "misc", {})
    specs = default_datasets()
    with pytest.raises(ValueError):
        check_datasets([s for s in specs if s.dataset_id != 1])


def test_generators_are_pure():
    for spec in default_datasets():
        a = spec.generate(123)
        b = spec.generate(123)
        assert a.points.tobytes() == b.points.tobytes()
        assert a.dataset == spec.dataset_id and a.category == spec.category
