"""Pinhole witness cameras: representation, projection and rig files.

Conventions
-----------
* World points map to camera coordinates as ``v = R @ (p - cop)``; ``v[2] > 0``
  is in front of the camera.
* Image coordinates are y-down with the origin at the top-left pixel centre,
  so pixel ``(row j, col i)`` has its centre at ``(x, y) = (i, j)``.
* A projection is "in view" when depth exceeds ``EPS_Z`` and the image point
  lies in ``[0, W-1] x [0, H-1]``.  Otherwise the projection is ``None``
  (scalar API) or NaN (vectorised API).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EPS_Z = 1e-6
ORTHO_TOL = 1e-6


class RigFormatError(ValueError):
    """Raised when a rig file cannot be parsed into a valid rig."""


@dataclass(frozen=True)
class CameraCalibration:
    camera_id: str
    rotation: np.ndarray
    cop: np.ndarray
    focal_px: float
    optical_center: np.ndarray
    image_width: int
    image_height: int

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        cop = np.array(self.cop, dtype=np.float64).reshape(3)
        oc = np.array(self.optical_center, dtype=np.float64).reshape(2)
        for arr in (rot, cop, oc):
            arr.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "cop", cop)
        object.__setattr__(self, "optical_center", oc)
        object.__setattr__(self, "focal_px", float(self.focal_px))
        object.__setattr__(self, "image_width", int(self.image_width))
        object.__setattr__(self, "image_height", int(self.image_height))

    def __eq__(self, other):
        if not isinstance(other, CameraCalibration):
            return NotImplemented
        return (
            self.camera_id == other.camera_id
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.cop, other.cop)
            and self.focal_px == other.focal_px
            and np.array_equal(self.optical_center, other.optical_center)
            and self.image_width == other.image_width
            and self.image_height == other.image_height
        )

    __hash__ = None

    @property
    def image_shape(self):
        """``(height, width)``, the numpy shape of this camera's images."""
        return (self.image_height, self.image_width)

    def violations(self):
        out = []
        rot = self.rotation
        if not np.all(np.isfinite(rot)) or np.abs(rot.T @ rot - np.eye(3)).max() >= ORTHO_TOL:
            out.append(f"camera {self.camera_id!r}: rotation is not orthonormal")
        elif abs(np.linalg.det(rot) - 1.0) > ORTHO_TOL:
            out.append(f"camera {self.camera_id!r}: rotation determinant is not +1")
        if not np.all(np.isfinite(self.cop)):
            out.append(f"camera {self.camera_id!r}: cop is not finite")
        if not (self.focal_px > 0 and np.isfinite(self.focal_px)):
            out.append(f"camera {self.camera_id!r}: focal_px must be > 0")
        if self.image_width <= 0 or self.image_height <= 0:
            out.append(f"camera {self.camera_id!r}: image dimensions must be positive")
        ox, oy = self.optical_center
        if not (0 <= ox <= self.image_width and 0 <= oy <= self.image_height):
            out.append(f"camera {self.camera_id!r}: optical_center outside image")
        return out


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple
    capture_min: np.ndarray = field(default_factory=lambda: np.array([-1.25, -1.25, 0.0]))
    capture_max: np.ndarray = field(default_factory=lambda: np.array([1.25, 1.25, 2.5]))

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        object.__setattr__(self, "capture_min", np.array(self.capture_min, dtype=np.float64).reshape(3))
        object.__setattr__(self, "capture_max", np.array(self.capture_max, dtype=np.float64).reshape(3))

    def __len__(self):
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)

    def __getitem__(self, idx):
        return self.cameras[idx]

    def __eq__(self, other):
        if not isinstance(other, CameraRig):
            return NotImplemented
        return (
            self.cameras == other.cameras
            and np.array_equal(self.capture_min, other.capture_min)
            and np.array_equal(self.capture_max, other.capture_max)
        )

    __hash__ = None

    @property
    def camera_ids(self):
        return [c.camera_id for c in self.cameras]

    def subset(self, indices):
        """Rig restricted to the cameras at ``indices`` (order preserved)."""
        return CameraRig([self.cameras[i] for i in indices], self.capture_min, self.capture_max)


def world_to_camera(calib, p):
    """Camera-frame coordinates of world point(s) ``p`` (shape ``(3,)`` or ``(N, 3)``)."""
    p = np.asarray(p, dtype=np.float64)
    return (p - calib.cop) @ calib.rotation.T


def project_camera_points(calib, v):
    """Vectorised projection of camera-frame points ``(N, 3)`` to pixels ``(N, 2)``.

    Out-of-view rows are NaN.
    """
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    z = v[:, 2]
    front = z > EPS_Z
    safe_z = np.where(front, z, 1.0)
    x = calib.focal_px * v[:, 0] / safe_z + calib.optical_center[0]
    y = calib.focal_px * v[:, 1] / safe_z + calib.optical_center[1]
    ok = front & (x >= 0) & (x <= calib.image_width - 1) & (y >= 0) & (y <= calib.image_height - 1)
    out = np.stack([x, y], axis=1)
    out[~ok] = np.nan
    return out


def project_points(calib, p):
    """Vectorised world-to-pixel projection; see :func:`project_camera_points`."""
    return project_camera_points(calib, world_to_camera(calib, np.atleast_2d(p)))


def project_voxel(calib, p):
    """Project one world point.  Returns ``(x, y)`` or ``None`` when out of view."""
    xy = project_points(calib, np.asarray(p, dtype=np.float64).reshape(1, 3))[0]
    if np.isnan(xy[0]):
        return None
    return (float(xy[0]), float(xy[1]))


def pixel_rays(calib, xs, ys):
    """Unit world directions through image points ``(xs, ys)``."""
    cam = np.stack(
        [
            (xs - calib.optical_center[0]) / calib.focal_px,
            (ys - calib.optical_center[1]) / calib.focal_px,
            np.ones_like(xs, dtype=np.float64),
        ],
        axis=-1,
    )
    world = cam @ calib.rotation
    return world / np.linalg.norm(world, axis=-1, keepdims=True)


def look_at(eye, target, up=(0.0, 0.0, 1.0)):
    """World-to-camera rotation for a camera at ``eye`` aimed at ``target`` (y-down image)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        raise ValueError("look_at: view direction parallel to up vector")
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd])


def validate_rig(rig):
    """List of human-readable invariant violations; empty when the rig is valid."""
    out = []
    if len(rig.cameras) == 0:
        out.append("rig has no cameras")
    seen = set()
    for cam in rig.cameras:
        out.extend(cam.violations())
        if cam.camera_id in seen:
            out.append(f"camera {cam.camera_id!r}: duplicate id")
        seen.add(cam.camera_id)
    if np.any(rig.capture_max <= rig.capture_min):
        out.append("capture volume is empty")
    return out


def _calib_to_dict(cam):
    return {
        "camera_id": cam.camera_id,
        "rotation": [float(v) for v in cam.rotation.ravel()],
        "cop": [float(v) for v in cam.cop],
        "focal_px": float(cam.focal_px),
        "optical_center": [float(v) for v in cam.optical_center],
        "image_width": int(cam.image_width),
        "image_height": int(cam.image_height),
    }


_FIELDS = {
    "camera_id": None,
    "rotation": 9,
    "cop": 3,
    "focal_px": None,
    "optical_center": 2,
    "image_width": None,
    "image_height": None,
}


def _calib_from_dict(idx, d):
    if not isinstance(d, dict):
        raise RigFormatError(f"camera {idx}: entry is not an object")
    for name, length in _FIELDS.items():
        if name not in d:
            raise RigFormatError(f"camera {idx}: missing field {name!r}")
        if length is not None:
            val = d[name]
            if not isinstance(val, list) or len(val) != length:
                raise RigFormatError(f"camera {idx}: field {name!r} must have {length} numbers")
    try:
        return CameraCalibration(
            camera_id=str(d["camera_id"]),
            rotation=np.array(d["rotation"], dtype=np.float64).reshape(3, 3),
            cop=d["cop"],
            focal_px=float(d["focal_px"]),
            optical_center=d["optical_center"],
            image_width=int(d["image_width"]),
            image_height=int(d["image_height"]),
        )
    except (TypeError, ValueError) as exc:
        raise RigFormatError(f"camera {idx}: malformed value ({exc})") from None


def rig_to_dict(rig):
    return {
        "capture_volume": {
            "min": [float(v) for v in rig.capture_min],
            "max": [float(v) for v in rig.capture_max],
        },
        "cameras": [_calib_to_dict(c) for c in rig.cameras],
    }


def rig_from_dict(doc):
    if not isinstance(doc, dict) or "cameras" not in doc:
        raise RigFormatError("rig document must contain a 'cameras' list")
    cams = [_calib_from_dict(i, d) for i, d in enumerate(doc["cameras"])]
    vol = doc.get("capture_volume", {})
    kwargs = {}
    if "min" in vol:
        kwargs["capture_min"] = vol["min"]
    if "max" in vol:
        kwargs["capture_max"] = vol["max"]
    rig = CameraRig(cams, **kwargs)
    problems = validate_rig(rig)
    if problems:
        raise RigFormatError("; ".join(problems))
    return rig


def save_rig(rig, path):
    # repr-exact floats through json keep the round trip lossless
    Path(path).write_text(json.dumps(rig_to_dict(rig), indent=2) + "\n", encoding="utf-8")


def load_rig(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"rig file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise RigFormatError(f"{path}: not valid JSON ({exc})") from None
    return rig_from_dict(doc)
