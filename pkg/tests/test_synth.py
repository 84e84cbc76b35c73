import hashlib
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hullforge.calib import project_points, project_voxel, validate_rig
from hullforge.matte import bilinear_sample
from hullforge.synth import (
    CAPTURE_CENTER,
    Scene,
    SceneFamilySpec,
    capsule_between,
    generate_dataset,
    humanoid_scene,
    make_camera_ring,
    neighbouring_views,
    occupancy_oracle,
    occupancy_points,
    render_soft_matte,
    sphere,
    _humanoid_family,
)


def test_ring_spacing_45_degrees(ring8):
    az = [math.atan2(c.cop[1] - CAPTURE_CENTER[1], c.cop[0] - CAPTURE_CENTER[0]) for c in ring8]
    steps = np.diff(np.unwrap(az))
    assert np.allclose(steps, math.pi / 4)


def test_neighbouring_pair_spans_45_degrees(ring8):
    a, b = (ring8[i] for i in neighbouring_views(2))
    da = a.cop[:2] - CAPTURE_CENTER[:2]
    db = b.cop[:2] - CAPTURE_CENTER[:2]
    ang = math.degrees(math.acos(da @ db / np.linalg.norm(da) / np.linalg.norm(db)))
    assert ang == pytest.approx(45.0)


@pytest.mark.parametrize("count", [1, 2, 3, 8, 13])
def test_every_camera_aims_at_centre(count):
    rig = make_camera_ring(count)
    assert validate_rig(rig) == []
    for c in rig:
        x, y = project_voxel(c, CAPTURE_CENTER)
        assert (x, y) == pytest.approx(tuple(c.optical_center), abs=1e-9)


def test_ring_rejects_bad_radius():
    with pytest.raises(ValueError):
        make_camera_ring(4, radius=0)


def test_oracle_sphere():
    s = Scene((sphere((0, 0, 0), 1.0),))
    assert occupancy_oracle(s, (0, 0, 0)) == 1
    assert occupancy_oracle(s, (0, 0, 2)) == 0


def test_oracle_capsule_boundary_inside():
    s = Scene((capsule_between((0, 0, 0), (0, 0, 1), 0.25),))
    assert occupancy_oracle(s, (0, 0, 1.25)) == 1
    assert occupancy_oracle(s, (0.25, 0, 0.5)) == 1
    assert occupancy_oracle(s, (0, 0, 1.2501)) == 0


def test_empty_pixel_and_covered_pixel(ring8):
    s = Scene((sphere(CAPTURE_CENTER, 0.8),))
    m = render_soft_matte(s, ring8[0])
    assert m.values[0, 0] == 0.0
    assert m.values[64, 64] == 1.0


def _ss_oracle(calib, centre, radius, col, row, n=64):
    # brute-force footprint sampling with a direct quadratic ray/sphere test
    offs = (np.arange(n) + 0.5) / n - 0.5
    xs, ys = np.meshgrid(col + offs, row + offs)
    d = np.stack([(xs - calib.optical_center[0]) / calib.focal_px, (ys - calib.optical_center[1]) / calib.focal_px, np.ones_like(xs)], -1)
    d = d.reshape(-1, 3) @ calib.rotation
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    oc = calib.cop - centre
    b = d @ oc
    disc = b * b - (oc @ oc - radius**2)
    hit = (disc >= 0) & (-b + np.sqrt(np.maximum(disc, 0)) >= 0)
    return hit.mean()


def test_edge_pixels_match_supersampled_oracle(ring8):
    centre, r = np.asarray(CAPTURE_CENTER), 0.5
    m = render_soft_matte(Scene((sphere(centre, r),)), ring8[1], supersample=4)
    edge = np.argwhere((m.values > 0) & (m.values < 1))
    assert len(edge) > 10
    for row, col in edge[:: max(1, len(edge) // 12)]:
        assert 0 < m.values[row, col] < 1
        assert abs(m.values[row, col] - _ss_oracle(ring8[1], centre, r, col, row)) <= 0.15


@settings(max_examples=8)
@given(st.integers(0, 10_000))
def test_inside_points_land_on_silhouette(seed):
    rng = np.random.default_rng(seed)
    rig = make_camera_ring(4, image_dims=(64, 64), focal_px=60.0)
    scene = humanoid_scene(_humanoid_family(rng), rng)
    pts = CAPTURE_CENTER + rng.uniform(-1.2, 1.2, size=(4000, 3))
    inside = pts[occupancy_points(scene, pts).astype(bool)]
    assert len(inside) > 0
    for cam in rig:
        m = render_soft_matte(scene, cam, supersample=2)
        xy = project_points(cam, inside)
        seen = ~np.isnan(xy[:, 0])
        # closest-pixel footprint test: some neighbour of the projection is lit
        vals = [bilinear_sample(m.values, xy[seen, 0] + dx, xy[seen, 1] + dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)]
        assert np.all(np.max(vals, axis=0) > 0)


def _tree_hash(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_dataset_counts_split_and_determinism(tmp_path):
    rig = make_camera_ring(8, image_dims=(32, 32), focal_px=30.0)
    spec = SceneFamilySpec(families=5, test_families=2, supersample=1)
    man = generate_dataset(spec, 10, rig, tmp_path / "a", seed=3)
    generate_dataset(spec, 10, rig, tmp_path / "b", seed=3)
    assert len(list((tmp_path / "a" / "mattes").glob("*.pgm"))) == 80
    assert _tree_hash(tmp_path / "a") == _tree_hash(tmp_path / "b")
    train = {e["family"] for e in man["frames"] if e["split"] == "train"}
    test = {e["family"] for e in man["frames"] if e["split"] == "test"}
    assert train and test and not train & test
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["seed"] == 3


def test_dataset_rejects_zero_frames(tmp_path):
    with pytest.raises(ValueError):
        generate_dataset(SceneFamilySpec(), 0, make_camera_ring(2), tmp_path)
