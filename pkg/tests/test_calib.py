import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hullforge.calib import (
    CameraCalibration,
    CameraRig,
    RigFormatError,
    load_rig,
    look_at,
    project_camera_points,
    project_voxel,
    rig_from_dict,
    rig_to_dict,
    save_rig,
    validate_rig,
    world_to_camera,
)


def cam(rotation=None, cop=(0, 0, 0), f=500.0, oc=(320, 240), w=640, h=480, cid="c0"):
    return CameraCalibration(cid, np.eye(3) if rotation is None else rotation, cop, f, oc, w, h)


def yaw(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def test_world_to_camera_identity():
    assert np.allclose(world_to_camera(cam(), [0, 0, 1]), [0, 0, 1])


def test_world_to_camera_translated_cop():
    assert np.allclose(world_to_camera(cam(cop=(0, 0, -2)), [0, 0, 0]), [0, 0, 2])


def test_world_to_camera_rotation_keeps_norm():
    v = world_to_camera(cam(rotation=yaw(math.pi / 2), cop=(1, 0, 0)), [1, 0, 1])
    assert np.linalg.norm(v) == pytest.approx(1.0)


def test_projection_optical_axis_hits_centre():
    assert project_voxel(cam(), [0, 0, 1]) == (320.0, 240.0)


def test_projection_hand_evaluated():
    assert project_voxel(cam(), [0.1, 0, 1]) == pytest.approx((370.0, 240.0))


def test_projection_behind_camera_is_marker():
    assert project_voxel(cam(), [0, 0, -1]) is None


def test_projection_off_image_is_marker():
    assert project_voxel(cam(), [10, 0, 1]) is None


def test_projection_vectorised_nan_marker():
    out = project_camera_points(cam(), np.array([[0, 0, 1], [0, 0, -1.0]]))
    assert np.allclose(out[0], [320, 240])
    assert np.isnan(out[1]).all()


unit = st.floats(-1, 1, allow_nan=False)


@given(unit, unit, unit, st.floats(0.1, 50))
def test_points_on_optical_axis_project_to_centre(a, b, c, t):
    axis = np.array([a, b + 2.5, c])
    eye = np.array([0.3, -0.2, 1.0])
    rot = look_at(eye, eye + axis)
    calib = cam(rotation=rot, cop=eye)
    fwd = rot[2]
    assert project_voxel(calib, eye + t * fwd) == pytest.approx((320.0, 240.0), abs=1e-6)


@given(st.floats(-0.5, 0.5), st.floats(-0.4, 0.4), st.floats(0.5, 20), st.floats(1.01, 10))
def test_projection_scale_invariant_along_rays(x, y, z, k):
    v = np.array([[x * z, y * z, z]])
    a = project_camera_points(cam(), v)
    b = project_camera_points(cam(), k * v)
    assert np.allclose(a, b, atol=1e-9)


def test_valid_ring_has_no_violations(ring8):
    assert validate_rig(ring8) == []


def test_non_orthonormal_rotation_named(ring8):
    bad = cam(rotation=np.diag([1.0, 1.0, 1.1]), cid="bent")
    problems = validate_rig(CameraRig([bad] + list(ring8.cameras[1:])))
    assert len(problems) == 1 and "bent" in problems[0]


def test_duplicate_id(ring8):
    cams = list(ring8.cameras)
    cams[1] = CameraCalibration(
        cams[0].camera_id, cams[1].rotation, cams[1].cop, cams[1].focal_px,
        cams[1].optical_center, cams[1].image_width, cams[1].image_height,
    )
    problems = validate_rig(CameraRig(cams))
    assert len(problems) == 1 and "duplicate id" in problems[0]


def test_reflection_rejected():
    assert validate_rig(CameraRig([cam(rotation=np.diag([1.0, 1.0, -1.0]))]))


def test_rig_round_trip_exact(tmp_path, ring8):
    save_rig(ring8, tmp_path / "rig.json")
    assert load_rig(tmp_path / "rig.json") == ring8


def test_rotation_stored_row_major(ring8):
    doc = rig_to_dict(ring8)
    assert doc["cameras"][0]["rotation"] == [float(v) for v in ring8[0].rotation.ravel()]


def test_missing_field_named(tmp_path, ring8):
    doc = rig_to_dict(ring8)
    del doc["cameras"][3]["focal_px"]
    (tmp_path / "r.json").write_text(json.dumps(doc))
    with pytest.raises(RigFormatError, match=r"camera 3: missing field 'focal_px'"):
        load_rig(tmp_path / "r.json")


def test_wrong_length_named(ring8):
    doc = rig_to_dict(ring8)
    doc["cameras"][2]["cop"] = [0, 0]
    with pytest.raises(RigFormatError, match="camera 2"):
        rig_from_dict(doc)


def test_empty_camera_list_rejected():
    with pytest.raises(RigFormatError, match="no cameras"):
        rig_from_dict({"cameras": []})


def test_missing_rig_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_rig(tmp_path / "nope.json")
