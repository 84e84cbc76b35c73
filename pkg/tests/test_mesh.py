import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hullforge.mesh import (
    THRESHOLD_FALLBACK,
    TriangleMesh,
    _triangles_numba,
    _triangles_numpy,
    export_obj,
    load_obj,
    marching_cubes,
    select_threshold,
)
from hullforge.pvh import GridSpec, VoxelGrid, compute_pvh


def sphere_field(n=64, radius=20.0, voxel=1.0, width=1.5):
    """Smooth occupancy equal to 0.5 exactly on the sphere of ``radius`` voxels."""
    c = (n - 1) / 2
    i = np.arange(n) - c
    d = np.sqrt(i[:, None, None] ** 2 + i[None, :, None] ** 2 + i[None, None, :] ** 2)
    occ = 1.0 / (1.0 + np.exp((d - radius) / width))
    return VoxelGrid(GridSpec(np.zeros(3), voxel, (n,) * 3), occ), np.full(3, c * voxel)


def test_sphere_watertight_genus_zero():
    grid, _ = sphere_field()
    m = marching_cubes(grid, 0.5)
    assert m.is_watertight()
    assert m.euler_characteristic() == 2
    assert abs(m.area() / (4 * math.pi * 20.0**2) - 1) <= 0.05


def test_sphere_normals_point_outward():
    grid, _ = sphere_field(n=32, radius=10)
    m = marching_cubes(grid, 0.5)
    assert m.signed_volume() == pytest.approx(4 / 3 * math.pi * 10**3, rel=0.05)


def test_vertices_lie_near_sphere():
    grid, c = sphere_field(n=48, radius=15)
    m = marching_cubes(grid, 0.5)
    r = np.linalg.norm(m.vertices - c, axis=1)
    assert np.abs(r - 15).max() < 0.1


def test_empty_and_full_grids_give_empty_mesh():
    spec = GridSpec(np.zeros(3), 1.0, (8, 8, 8))
    assert marching_cubes(VoxelGrid(spec, np.zeros((8, 8, 8))), 0.5).is_empty
    assert marching_cubes(VoxelGrid(spec, np.ones((8, 8, 8))), 0.5).is_empty


def test_iso_range_checked():
    grid, _ = sphere_field(n=8, radius=2)
    for iso in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            marching_cubes(grid, iso)


@given(st.floats(0.05, 0.95))
def test_linear_ramp_interpolates_exactly(iso):
    n = 9
    x = np.arange(n) / (n - 1)
    occ = np.broadcast_to(x[:, None, None], (n, n, n))
    m = marching_cubes(VoxelGrid(GridSpec(np.zeros(3), 0.5, (n,) * 3), occ), iso)
    want = iso * (n - 1) * 0.5
    assert np.allclose(m.vertices[:, 0], want, atol=1e-5)
    assert m.area() == pytest.approx(((n - 1) * 0.5) ** 2, rel=1e-6)


@pytest.mark.parametrize("voxel", [0.01, 0.25, 3.0])
def test_scale_invariance(voxel):
    base, _ = sphere_field(n=24, radius=7)
    scaled = VoxelGrid(GridSpec(np.zeros(3), voxel, base.dims), base.occupancy)
    a, b = marching_cubes(base, 0.5), marching_cubes(scaled, 0.5)
    assert np.array_equal(a.faces, b.faces)
    assert np.allclose(b.vertices, a.vertices * scaled.voxel_size, rtol=1e-12)


def test_backends_agree(rng):
    occ = rng.random((12, 11, 10))
    f = np.ascontiguousarray(occ)
    assert np.array_equal(_triangles_numba(f, 0.5), _triangles_numpy(f, 0.5))
    grid = VoxelGrid(GridSpec(np.zeros(3), 1.0, occ.shape), occ)
    a = marching_cubes(grid, 0.4, kernel=_triangles_numba)
    b = marching_cubes(grid, 0.4, kernel=_triangles_numpy)
    assert np.array_equal(a.faces, b.faces) and np.array_equal(a.vertices, b.vertices)


def test_obj_round_trip(tmp_path):
    grid, _ = sphere_field(n=16, radius=5)
    m = marching_cubes(grid, 0.5)
    p = tmp_path / "s.obj"
    export_obj(m, p)
    lines = p.read_text().splitlines()
    assert sum(l.startswith("v ") for l in lines) == len(m.vertices)
    assert sum(l.startswith("f ") for l in lines) == len(m.faces)
    back = load_obj(p)
    assert np.array_equal(back.faces, m.faces)
    assert np.allclose(back.vertices, m.vertices, rtol=1e-8)


def test_empty_obj(tmp_path):
    p = tmp_path / "e.obj"
    export_obj(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3))), p)
    assert load_obj(p).is_empty


def test_load_obj_polygon_and_slashes(tmp_path):
    p = tmp_path / "q.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n")
    m = load_obj(p)
    assert m.faces.tolist() == [[0, 1, 2], [0, 2, 3]]
    assert m.area() == pytest.approx(1.0)


def test_face_index_validated():
    with pytest.raises(ValueError):
        TriangleMesh(np.zeros((2, 3)), [[0, 1, 2]])


def otsu_reference(vals, bins=256):
    """Brute-force maximiser of the between-class variance over bin edges."""
    hist, edges = np.histogram(vals, bins=bins, range=(0, 1))
    mids = (edges[:-1] + edges[1:]) / 2
    best, best_t = -1.0, None
    for k in range(1, bins):
        n0, n1 = hist[:k].sum(), hist[k:].sum()
        if n0 == 0 or n1 == 0:
            score = 0.0
        else:
            m0 = (hist[:k] * mids[:k]).sum() / n0
            m1 = (hist[k:] * mids[k:]).sum() / n1
            score = n0 * n1 * (m0 - m1) ** 2
        if score > best:
            best, best_t = score, edges[k]
    return min(max(best_t, 0.2), 0.8)


@pytest.mark.parametrize("seed", range(5))
def test_threshold_matches_brute_force(seed):
    r = np.random.default_rng(seed)
    vals = np.concatenate([r.beta(2, 8, 500), r.beta(8, 2, 300 + 100 * seed)])
    assert select_threshold(vals) == pytest.approx(otsu_reference(vals), abs=1e-12)


def test_threshold_examples():
    bimodal = np.array([0.3] * 50 + [0.7] * 50)
    t = select_threshold(bimodal)
    assert 0.3 < t <= 0.7
    assert select_threshold(np.array([0.05] * 10 + [0.1] * 10)) == 0.2  # clamped up
    assert select_threshold(np.array([0.92] * 10 + [0.99] * 10)) == 0.8  # clamped down
    assert select_threshold(np.full(7, 0.6)) == THRESHOLD_FALLBACK
    # zeros are ignored
    assert select_threshold(np.concatenate([np.zeros(1000), bimodal])) == t
    with pytest.raises(ValueError):
        select_threshold(np.zeros(5))


def test_pvh_sphere_surface_near_true_radius(sphere_case, ring8):
    scene, mattes, spec = sphere_case
    grid = compute_pvh(ring8.cameras, mattes, spec)
    m = marching_cubes(grid, select_threshold(grid))
    assert m.is_watertight()
    c = np.asarray(scene.primitives[0].center)
    r = np.linalg.norm(m.vertices - c, axis=1)
    assert abs(np.median(r) - 0.5) <= spec.voxel_size
