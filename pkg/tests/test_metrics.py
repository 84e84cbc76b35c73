import json
import math

import jsonschema
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hullforge.metrics import (
    EvalReport,
    _march_numba,
    _march_numpy,
    foreground_crop,
    format_table,
    image_scores,
    iou,
    psnr,
    reproject_silhouette,
    ssim,
    validate_report,
    voxel_mse,
)
from hullforge.pvh import GridSpec, VoxelGrid, compute_pvh

unit = st.floats(0, 1, allow_nan=False, width=32)


def ssim_reference(a, b, size=11, sigma=1.5):
    """Window-by-window weighted statistics with a 2-D Gaussian."""
    r = np.arange(size) - (size - 1) / 2
    w = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * sigma**2))
    w /= w.sum()
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for i in range(a.shape[0] - size + 1):
        for j in range(a.shape[1] - size + 1):
            pa, pb = a[i : i + size, j : j + size], b[i : i + size, j : j + size]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va = (w * (pa - ma) ** 2).sum()
            vb = (w * (pb - mb) ** 2).sum()
            cv = (w * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cv + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_ssim_matches_reference(rng):
    a = rng.random((17, 14))
    b = np.clip(a + 0.2 * rng.standard_normal(a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(ssim_reference(a, b), abs=1e-10)


@given(arrays(np.float64, (12, 13), elements=unit))
def test_ssim_identity_is_exactly_one(x):
    assert ssim(x, x) == 1.0


@given(arrays(np.float64, (12, 12), elements=unit), arrays(np.float64, (12, 12), elements=unit))
def test_ssim_symmetric_and_bounded(a, b):
    s = ssim(a, b)
    assert abs(s - ssim(b, a)) < 1e-12
    assert -1 - 1e-9 <= s <= 1 + 1e-9


def test_ssim_checkerboard_inverse_is_negative():
    x = (np.indices((16, 16)).sum(axis=0) % 2).astype(float)
    assert ssim(x, 1 - x) < 0


def test_ssim_rejects_small_images():
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 20)), np.zeros((10, 20)))


def test_psnr_examples():
    a = np.zeros((4, 4))
    assert psnr(a, a) == math.inf
    assert psnr(a, np.full((4, 4), 0.1)) == pytest.approx(20.0)
    assert psnr(a, np.ones((4, 4))) == pytest.approx(0.0)
    assert psnr(a, np.full((4, 4), 0.5), peak=2.0) == pytest.approx(10 * math.log10(16))


def test_psnr_decreases_with_noise(rng):
    x = rng.random((32, 32))
    noise = rng.standard_normal(x.shape)
    scores = [psnr(x, x + s * noise) for s in np.linspace(0.01, 0.5, 10)]
    assert all(b < a for a, b in zip(scores, scores[1:]))


@given(arrays(np.float64, (3, 4, 5), elements=unit), arrays(np.float64, (3, 4, 5), elements=unit))
def test_voxel_mse_properties(a, b):
    assert voxel_mse(a, b) == voxel_mse(b, a)
    assert voxel_mse(a, a) == 0
    assert (voxel_mse(a, b) == 0) == np.array_equal(a, b)


def test_voxel_mse_accepts_grids_and_checks_dims():
    spec = GridSpec(np.zeros(3), 1.0, (2, 2, 2))
    g = VoxelGrid(spec, np.full((2, 2, 2), 0.5))
    assert voxel_mse(g, np.zeros((2, 2, 2))) == 0.25
    with pytest.raises(ValueError, match="dimension"):
        voxel_mse(g, np.zeros((2, 2, 3)))


def test_iou_examples():
    a = np.array([[1, 1, 0, 0]])
    b = np.array([[0, 1, 1, 0]])
    assert iou(a, b) == pytest.approx(1 / 3)
    assert iou(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0


def test_reprojection_of_empty_grid_is_blank(ring8):
    spec = GridSpec(np.zeros(3), 0.1, (8, 8, 8))
    img = reproject_silhouette(VoxelGrid(spec, np.zeros((8, 8, 8))), ring8.cameras[0])
    assert img.shape == (ring8.cameras[0].image_height, ring8.cameras[0].image_width)
    assert not img.any()


@pytest.fixture(scope="module")
def sphere_grid(sphere_case, ring8):
    _, mattes, spec = sphere_case
    return compute_pvh(ring8.cameras, mattes, spec)


def test_sphere_reprojection_matches_matte(sphere_grid, sphere_case, ring8):
    _, mattes, _ = sphere_case
    for k in (0, 3):
        img = reproject_silhouette(sphere_grid, ring8.cameras[k])
        assert iou(img, mattes[k].values) >= 0.95


def test_iso_above_maximum_is_blank(sphere_grid, ring8):
    top = float(sphere_grid.occupancy.max())
    assert reproject_silhouette(sphere_grid, ring8.cameras[0], iso=top).any()
    assert not reproject_silhouette(sphere_grid, ring8.cameras[0], iso=top + 1e-6).any()


def test_march_backends_agree(sphere_grid, ring8):
    cam = ring8.cameras[5]
    a = reproject_silhouette(sphere_grid, cam, kernel=_march_numba)
    b = reproject_silhouette(sphere_grid, cam, kernel=_march_numpy)
    assert np.array_equal(a, b)


def test_foreground_crop_at_least_window():
    img = np.zeros((40, 50))
    img[20, 25] = 1
    rs, cs = foreground_crop(img)
    assert rs.stop - rs.start >= 11 and cs.stop - cs.start >= 11
    assert img[rs, cs].sum() == 1
    assert foreground_crop(np.zeros((5, 6))) == (slice(0, 5), slice(0, 6))


def test_image_scores_keys(rng):
    a = (rng.random((30, 30)) > 0.5).astype(float)
    s = image_scores(a, a)
    assert s["psnr_full"] == math.inf and s["ssim_crop"] == 1.0 and s["iou"] == 1.0


def _report():
    return EvalReport(
        "test",
        ["f0000", "f0001"],
        {"input": [2.0, 4.0], "refined/s16": [1.0, 1.5]},
        images={"input": [{"psnr_full": math.inf, "psnr_crop": 20.0, "ssim_full": 1.0, "ssim_crop": 1.0, "iou": 1.0}]},
        config={"seed": 0},
    )


def test_report_round_trip_and_schema():
    r = _report()
    doc = json.loads(r.to_json())
    validate_report(doc)
    assert doc["summary_mse_e3"]["input"]["mean"] == 3.0
    assert doc["images"]["input"][0]["psnr_full"] == "inf"
    back = EvalReport.from_dict(doc)
    assert back.rows == r.rows and back.frames == r.frames


def test_report_schema_rejects_bad_rows():
    doc = _report().to_dict()
    doc["mse_e3"]["input"] = [1.0]
    with pytest.raises(jsonschema.ValidationError):
        validate_report(doc)
    doc = _report().to_dict()
    doc["format"] = "other"
    with pytest.raises(jsonschema.ValidationError):
        validate_report(doc)


def test_format_table_lists_rows():
    text = format_table([_report()])
    assert "input" in text and "refined/s16" in text and "3.000" in text
