"""Synthetic capture studio: camera rings, analytic scenes, soft mattes, datasets.

Scenes are unions of spheres, capsules and oriented boxes.  Mattes are
rendered by exact ray-primitive intersection with ``supersample**2`` rays per
pixel, so the only error in a matte is the supersampling estimate of coverage.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calib import CameraCalibration, CameraRig, look_at, pixel_rays, save_rig, validate_rig
from .matte import SoftMatte, matte_filename, save_matte

CAPTURE_MIN = np.array([-1.25, -1.25, 0.0])
CAPTURE_MAX = np.array([1.25, 1.25, 2.5])
CAPTURE_CENTER = (CAPTURE_MIN + CAPTURE_MAX) / 2

# Closed-set convention: boundary points count as inside.
_INSIDE_TOL = 1e-12


@dataclass(frozen=True)
class ScenePrimitive:
    """One solid.

    ``dims`` is ``(r,)`` for a sphere, ``(r, half_length)`` for a capsule whose
    axis is the local z axis, and ``(hx, hy, hz)`` half-extents for a box.
    ``rotation`` maps local coordinates to world coordinates.
    """

    kind: str
    center: np.ndarray
    dims: tuple
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        if self.kind not in ("sphere", "capsule", "box"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        want = {"sphere": 1, "capsule": 2, "box": 3}[self.kind]
        dims = tuple(float(d) for d in self.dims)
        if len(dims) != want or min(dims) <= 0:
            raise ValueError(f"{self.kind} needs {want} positive dimensions, got {self.dims}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))

    @property
    def bounding_radius(self):
        if self.kind == "sphere":
            return self.dims[0]
        if self.kind == "capsule":
            return self.dims[0] + self.dims[1]
        return float(np.linalg.norm(self.dims))

    def to_dict(self):
        return {
            "kind": self.kind,
            "center": [float(v) for v in self.center],
            "dims": list(self.dims),
            "rotation": [float(v) for v in self.rotation.ravel()],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d["center"], tuple(d["dims"]), np.array(d["rotation"]).reshape(3, 3))


@dataclass(frozen=True)
class Scene:
    primitives: tuple
    frame_index: int = 0

    def __post_init__(self):
        prims = tuple(self.primitives)
        if not prims:
            raise ValueError("scene must contain at least one primitive")
        object.__setattr__(self, "primitives", prims)

    def to_dict(self):
        return {"frame_index": self.frame_index, "primitives": [p.to_dict() for p in self.primitives]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(ScenePrimitive.from_dict(p) for p in d["primitives"]), d.get("frame_index", 0))


def sphere(center, radius):
    return ScenePrimitive("sphere", center, (radius,))


def box(center, half_extents, rotation=None):
    return ScenePrimitive("box", center, tuple(half_extents), np.eye(3) if rotation is None else rotation)


def capsule_between(a, b, radius):
    """Capsule whose segment runs from ``a`` to ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    axis = b - a
    length = np.linalg.norm(axis)
    if length < 1e-9:
        raise ValueError("capsule endpoints coincide")
    return ScenePrimitive("capsule", (a + b) / 2, (radius, length / 2), _frame_from_z(axis / length))


def _frame_from_z(z):
    helper = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = np.cross(helper, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def _rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# --------------------------------------------------------------------------- cameras


def make_camera_ring(
    count,
    radius=4.0,
    height=2.0,
    image_dims=(128, 128),
    focal_px=120.0,
    center=None,
    id_prefix="cam",
):
    """``count`` cameras equally spaced in azimuth, all aimed at ``center``.

    ``image_dims`` is ``(width, height)``.  Camera ``k`` sits at azimuth
    ``2*pi*k/count``; the optical centre is the image centre.
    """
    if count < 1:
        raise ValueError("camera count must be >= 1")
    if radius <= 0:
        raise ValueError("ring radius must be positive")
    center = CAPTURE_CENTER if center is None else np.asarray(center, dtype=np.float64)
    w, h = image_dims
    cams = []
    for k in range(count):
        az = 2 * math.pi * k / count
        eye = np.array([center[0] + radius * math.cos(az), center[1] + radius * math.sin(az), height])
        cams.append(
            CameraCalibration(
                camera_id=f"{id_prefix}{k}",
                rotation=look_at(eye, center),
                cop=eye,
                focal_px=focal_px,
                optical_center=((w - 1) / 2.0, (h - 1) / 2.0),
                image_width=w,
                image_height=h,
            )
        )
    rig = CameraRig(cams, CAPTURE_MIN, CAPTURE_MAX)
    problems = validate_rig(rig)
    if problems:  # pragma: no cover - construction above is valid by design
        raise ValueError("; ".join(problems))
    return rig


def neighbouring_views(count, ring_size=8, start=0):
    """Indices of ``count`` adjacent cameras on a ring, starting at ``start``."""
    return [(start + i) % ring_size for i in range(count)]


# --------------------------------------------------------------------------- oracle


def _to_local(prim, p):
    return (p - prim.center) @ prim.rotation


def _inside_primitive(prim, p):
    q = _to_local(prim, p)
    if prim.kind == "sphere":
        return np.einsum("ij,ij->i", q, q) <= prim.dims[0] ** 2 + _INSIDE_TOL
    if prim.kind == "capsule":
        r, hl = prim.dims
        z = np.clip(q[:, 2], -hl, hl)
        d2 = q[:, 0] ** 2 + q[:, 1] ** 2 + (q[:, 2] - z) ** 2
        return d2 <= r * r + _INSIDE_TOL
    half = np.asarray(prim.dims)
    return np.all(np.abs(q) <= half + _INSIDE_TOL, axis=1)


def occupancy_points(scene, points):
    """Vectorised oracle: ``uint8`` array, 1 where a point lies in the scene."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    hit = np.zeros(len(p), dtype=bool)
    for prim in scene.primitives:
        hit |= _inside_primitive(prim, p)
    return hit.astype(np.uint8)


def occupancy_oracle(scene, p):
    """1 if world point ``p`` is inside the union of the scene's primitives, else 0."""
    return int(occupancy_points(scene, np.asarray(p, dtype=np.float64).reshape(1, 3))[0])


# --------------------------------------------------------------------------- rays


def _ray_hits_sphere(o, d, c, r):
    oc = o - c
    b = d @ oc
    cc = oc @ oc - r * r
    disc = b * b - cc
    return (disc >= 0) & (-b + np.sqrt(np.maximum(disc, 0.0)) >= 0)


def _ray_hits_primitive(prim, o, d):
    """Rays share origin ``o`` (3,), unit directions ``d`` (N, 3)."""
    if prim.kind == "sphere":
        return _ray_hits_sphere(o, d, prim.center, prim.dims[0])
    ol = (o - prim.center) @ prim.rotation
    dl = d @ prim.rotation
    if prim.kind == "capsule":
        r, hl = prim.dims
        axis = prim.rotation[:, 2]
        hit = _ray_hits_sphere(o, d, prim.center + hl * axis, r)
        hit |= _ray_hits_sphere(o, d, prim.center - hl * axis, r)
        a = dl[:, 0] ** 2 + dl[:, 1] ** 2
        b = ol[0] * dl[:, 0] + ol[1] * dl[:, 1]
        c = ol[0] ** 2 + ol[1] ** 2 - r * r
        disc = b * b - a * c
        ok = (a > 1e-18) & (disc >= 0)
        sq = np.sqrt(np.maximum(disc, 0.0))
        safe_a = np.where(a > 1e-18, a, 1.0)
        t0 = (-b - sq) / safe_a
        t1 = (-b + sq) / safe_a
        # slab along the axis
        dz = dl[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            s0 = (-hl - ol[2]) / dz
            s1 = (hl - ol[2]) / dz
        par = np.abs(dz) < 1e-18
        lo = np.where(par, np.where(abs(ol[2]) <= hl, -np.inf, np.inf), np.minimum(s0, s1))
        hi = np.where(par, np.where(abs(ol[2]) <= hl, np.inf, -np.inf), np.maximum(s0, s1))
        enter = np.maximum(np.maximum(t0, lo), 0.0)
        leave = np.minimum(t1, hi)
        hit |= ok & (leave >= enter)
        return hit
    half = np.asarray(prim.dims)
    enter = np.zeros(len(d))
    leave = np.full(len(d), np.inf)
    for ax in range(3):
        dax = dl[:, ax]
        par = np.abs(dax) < 1e-18
        with np.errstate(divide="ignore", invalid="ignore"):
            s0 = (-half[ax] - ol[ax]) / dax
            s1 = (half[ax] - ol[ax]) / dax
        inside_slab = abs(ol[ax]) <= half[ax]
        lo = np.where(par, -np.inf if inside_slab else np.inf, np.minimum(s0, s1))
        hi = np.where(par, np.inf if inside_slab else -np.inf, np.maximum(s0, s1))
        enter = np.maximum(enter, lo)
        leave = np.minimum(leave, hi)
    return leave >= enter


def ray_hits_scene(scene, origin, dirs):
    """Boolean per ray: does the half-line ``origin + t*dir`` (t >= 0) touch the scene."""
    origin = np.asarray(origin, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    hit = np.zeros(len(dirs), dtype=bool)
    for prim in scene.primitives:
        todo = ~hit
        # bounding-sphere cull before the exact test
        cand = todo & _ray_hits_sphere(origin, dirs, prim.center, prim.bounding_radius + 1e-9)
        idx = np.nonzero(cand)[0]
        if idx.size:
            hit[idx] = _ray_hits_primitive(prim, origin, dirs[idx])
    return hit


def render_soft_matte(scene, calib, supersample=4):
    """Per-pixel fraction of ``supersample**2`` footprint rays that hit the scene."""
    if supersample < 1:
        raise ValueError("supersample must be >= 1")
    w, h = calib.image_width, calib.image_height
    offs = (np.arange(supersample) + 0.5) / supersample - 0.5
    cols, rows = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    xs = (cols[:, :, None, None] + offs[None, None, None, :]) * np.ones((1, 1, supersample, 1))
    ys = (rows[:, :, None, None] + offs[None, None, :, None]) * np.ones((1, 1, 1, supersample))
    dirs = pixel_rays(calib, xs.reshape(-1), ys.reshape(-1))
    hits = ray_hits_scene(scene, calib.cop, dirs)
    cover = hits.reshape(h, w, supersample * supersample).sum(axis=2)
    return SoftMatte(cover / float(supersample * supersample))


# --------------------------------------------------------------------------- scene families


@dataclass(frozen=True)
class SceneFamilySpec:
    """Parameters of the scene-family generator used by :func:`generate_dataset`.

    Families are drawn once per dataset; every frame belongs to one family and
    the train/test split is made over families.
    """

    kind: str = "humanoid"  # "humanoid" | "cluster"
    families: int = 12
    test_families: int = 2
    supersample: int = 4
    jitter: float = 0.35  # joint-angle jitter, radians


def _humanoid_family(rng):
    return {
        "height": float(rng.uniform(1.55, 1.95)),
        "girth": float(rng.uniform(0.8, 1.25)),
        "shoulder": float(rng.uniform(0.85, 1.15)),
        "limb": float(rng.uniform(0.9, 1.1)),
        "base_pose": [float(v) for v in rng.uniform(-0.6, 0.6, size=8)],
    }


def _cluster_family(rng):
    return {
        "count": int(rng.integers(3, 7)),
        "spread": float(rng.uniform(0.25, 0.55)),
        "size": float(rng.uniform(0.12, 0.3)),
    }


def humanoid_scene(fam, rng, jitter=0.35, frame_index=0):
    """Capsule humanoid: box torso, sphere head, capsule limbs, jittered joints."""
    s = fam["height"] / 1.75
    g = fam["girth"]
    yaw = rng.uniform(0, 2 * math.pi)
    root = np.array([rng.uniform(-0.35, 0.35), rng.uniform(-0.35, 0.35), 0.0])
    rz = _rot_z(yaw)
    ang = np.asarray(fam["base_pose"]) + rng.uniform(-jitter, jitter, size=8)

    def world(p):
        return root + rz @ np.asarray(p)

    hip_z = 0.92 * s
    torso_h = 0.30 * s
    torso_c = np.array([0.0, 0.0, hip_z + torso_h])
    prims = [box(world(torso_c), (0.17 * s * g * fam["shoulder"], 0.10 * s * g, torso_h), rz)]
    neck = np.array([0.0, 0.0, hip_z + 2 * torso_h])
    prims.append(sphere(world(neck + [0, 0, 0.13 * s]), 0.11 * s * g))
    limb_r = 0.055 * s * g
    ll = fam["limb"] * s
    # arms: shoulder swing (about body y) and elbow bend
    for side, (a_sh, a_el) in ((1, ang[0:2]), (-1, ang[2:4])):
        sh = neck + np.array([side * 0.21 * s * fam["shoulder"], 0.0, -0.04 * s])
        up = np.array([side * math.sin(abs(a_sh) * 0.8), math.sin(a_sh) * 0.5, -math.cos(a_sh)])
        up /= np.linalg.norm(up)
        el = sh + 0.29 * ll * up
        fore = np.array([up[0], up[1] + math.sin(a_el), up[2] + 0.5 * abs(math.sin(a_el))])
        fore /= np.linalg.norm(fore)
        wr = el + 0.27 * ll * fore
        prims.append(capsule_between(world(sh), world(el), limb_r))
        prims.append(capsule_between(world(el), world(wr), 0.85 * limb_r))
    # legs: hip swing (about body x) and knee bend
    for side, (a_hp, a_kn) in ((1, ang[4:6]), (-1, ang[6:8])):
        hp = np.array([side * 0.09 * s * g, 0.0, hip_z])
        th = np.array([0.15 * side * abs(math.sin(a_hp)), math.sin(a_hp), -math.cos(a_hp)])
        th /= np.linalg.norm(th)
        kn = hp + 0.43 * ll * th
        sh_dir = np.array([th[0], th[1] - 0.6 * abs(math.sin(a_kn)), th[2]])
        sh_dir /= np.linalg.norm(sh_dir)
        an = kn + 0.42 * ll * sh_dir
        an[2] = max(an[2], 0.05)
        prims.append(capsule_between(world(hp), world(kn), 1.3 * limb_r))
        prims.append(capsule_between(world(kn), world(an), 1.05 * limb_r))
    return Scene(tuple(prims), frame_index)


def cluster_scene(fam, rng, frame_index=0):
    """Random cluster of spheres, boxes and capsules around the volume centre."""
    prims = []
    c0 = CAPTURE_CENTER + np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.2)])
    for _ in range(fam["count"]):
        c = c0 + rng.normal(scale=fam["spread"], size=3)
        size = fam["size"] * rng.uniform(0.6, 1.4)
        kind = rng.integers(3)
        if kind == 0:
            prims.append(sphere(c, size))
        elif kind == 1:
            prims.append(box(c, size * rng.uniform(0.5, 1.5, size=3), _rot_z(rng.uniform(0, math.pi))))
        else:
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            prims.append(capsule_between(c - d * size * 1.5, c + d * size * 1.5, size * 0.5))
    return Scene(tuple(prims), frame_index)


def make_scene(kind, fam, rng, jitter=0.35, frame_index=0):
    if kind == "humanoid":
        return humanoid_scene(fam, rng, jitter, frame_index)
    if kind == "cluster":
        return cluster_scene(fam, rng, frame_index)
    raise ValueError(f"unknown scene family kind {kind!r}")


def frame_name(index):
    return f"{index:05d}"


def generate_dataset(spec, frames, rig, out_dir, seed=0):
    """Render ``frames`` scenes through every rig camera into ``out_dir``.

    Writes ``rig.json``, one PGM matte per camera per frame and
    ``manifest.json``; returns the manifest dict.  Frame ``i`` belongs to
    family ``i % spec.families``; the last ``spec.test_families`` families form
    the test split.  Output depends only on ``(spec, frames, rig, seed)``.
    """
    if frames < 1:
        raise ValueError("frames must be >= 1")
    if not 0 <= spec.test_families < spec.families:
        raise ValueError("test_families must be in [0, families)")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "mattes").mkdir(exist_ok=True)
    save_rig(rig, out / "rig.json")

    fam_rng = np.random.default_rng([seed, 0])
    make_family = _humanoid_family if spec.kind == "humanoid" else _cluster_family
    families = [make_family(fam_rng) for _ in range(spec.families)]
    test_ids = set(range(spec.families - spec.test_families, spec.families))

    entries = []
    for i in range(frames):
        fam_id = i % spec.families
        rng = np.random.default_rng([seed, 1, i])
        scene = make_scene(spec.kind, families[fam_id], rng, spec.jitter, i)
        name = frame_name(i)
        mattes = {}
        for cam in rig.cameras:
            m = render_soft_matte(scene, cam, spec.supersample)
            rel = f"mattes/{matte_filename(name, cam.camera_id)}"
            save_matte(m, out / rel)
            mattes[cam.camera_id] = rel
        entries.append(
            {
                "frame": name,
                "family": fam_id,
                "split": "test" if fam_id in test_ids else "train",
                "mattes": mattes,
                "scene": scene.to_dict(),
            }
        )
    manifest = {
        "format": "hullforge-dataset/1",
        "seed": int(seed),
        "kind": spec.kind,
        "families": spec.families,
        "test_families": sorted(test_ids),
        "supersample": spec.supersample,
        "rig": "rig.json",
        "camera_ids": rig.camera_ids,
        "frames": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return manifest


def load_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    return json.loads(path.read_text(encoding="utf-8"))
