"""Volumetric and image-space error measures, silhouette reprojection, reports."""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import njit, pick, prange
from .calib import pixel_rays

# Reference means (x 1e-3) of the published two-view evaluation, for annotation only.
REFERENCE_INPUT_MSE_E3 = 24.6
REFERENCE_REFINED_MSE_E3 = 7.71

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

REPORT_FORMAT = "hullforge-eval/1"


def _occ(g):
    return np.asarray(g.occupancy if hasattr(g, "occupancy") else g, dtype=np.float64)


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def voxel_mse(a, b):
    """Mean squared occupancy difference of two grids (or arrays)."""
    a, b = _occ(a), _occ(b)
    _same_shape(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak=1.0):
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian(size, sigma):
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img, g):
    rows = sliding_window_view(img, len(g), axis=0) @ g
    return sliding_window_view(rows, len(g), axis=1) @ g


def ssim_map(a, b, data_range=1.0):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim needs 2-D images with sides >= {SSIM_WINDOW}, got {a.shape}")
    g = _gaussian(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, data_range=1.0):
    """Mean structural similarity over the valid 11x11 Gaussian-window positions."""
    return float(np.mean(ssim_map(a, b, data_range)))


def iou(a, b):
    a = np.asarray(a) > 0.5
    b = np.asarray(b) > 0.5
    _same_shape(a, b)
    union = np.count_nonzero(a | b)
    return 1.0 if union == 0 else np.count_nonzero(a & b) / union


# --------------------------------------------------------------------------- reprojection


def _ray_box(origin, dirs, lo, hi):
    """Entry/exit distances of rays against an axis-aligned box (``t1 < t0`` = miss)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        ta = (lo - origin) * inv
        tb = (hi - origin) * inv
    tmin = np.where(np.isnan(ta), -np.inf, np.minimum(ta, tb))
    tmax = np.where(np.isnan(ta), np.inf, np.maximum(ta, tb))
    t0 = np.maximum(tmin.max(axis=1), 0.0)
    t1 = tmax.min(axis=1)
    return t0, t1


def _march_numpy(occ, origin, voxel, cop, dirs, t0, t1, step, iso):
    dims = np.array(occ.shape)
    hit = np.zeros(len(dirs), dtype=bool)
    n = np.where(t1 >= t0, np.floor((t1 - t0) / step).astype(np.int64) + 1, 0)
    for k in range(int(n.max(initial=0))):
        live = np.flatnonzero((k < n) & ~hit)
        if live.size == 0:
            break
        t = t0[live] + k * step
        u = (cop + t[:, None] * dirs[live] - origin) / voxel
        u = np.clip(u, 0.0, dims - 1.0)
        i0 = np.minimum(np.floor(u).astype(np.int64), np.maximum(dims - 2, 0))
        i1 = np.minimum(i0 + 1, dims - 1)
        fx, fy, fz = (u - i0).T
        x0, y0, z0 = i0.T
        x1, y1, z1 = i1.T
        c00 = occ[x0, y0, z0] * (1 - fx) + occ[x1, y0, z0] * fx
        c10 = occ[x0, y1, z0] * (1 - fx) + occ[x1, y1, z0] * fx
        c01 = occ[x0, y0, z1] * (1 - fx) + occ[x1, y0, z1] * fx
        c11 = occ[x0, y1, z1] * (1 - fx) + occ[x1, y1, z1] * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        v = c0 * (1 - fz) + c1 * fz
        hit[live[v >= iso]] = True
    return hit


@njit(parallel=True, cache=True, nogil=True)
def _march_numba(occ, origin, voxel, cop, dirs, t0, t1, step, iso):
    nx, ny, nz = occ.shape
    hit = np.zeros(dirs.shape[0], dtype=np.bool_)
    for r in prange(dirs.shape[0]):
        if t1[r] < t0[r]:
            continue
        n = int(math.floor((t1[r] - t0[r]) / step)) + 1
        for k in range(n):
            t = t0[r] + k * step
            u = np.empty(3)
            for a in range(3):
                u[a] = (cop[a] + t * dirs[r, a] - origin[a]) / voxel
            ux = min(max(u[0], 0.0), nx - 1.0)
            uy = min(max(u[1], 0.0), ny - 1.0)
            uz = min(max(u[2], 0.0), nz - 1.0)
            x0 = min(int(math.floor(ux)), max(nx - 2, 0))
            y0 = min(int(math.floor(uy)), max(ny - 2, 0))
            z0 = min(int(math.floor(uz)), max(nz - 2, 0))
            x1 = min(x0 + 1, nx - 1)
            y1 = min(y0 + 1, ny - 1)
            z1 = min(z0 + 1, nz - 1)
            fx = ux - x0
            fy = uy - y0
            fz = uz - z0
            c00 = occ[x0, y0, z0] * (1 - fx) + occ[x1, y0, z0] * fx
            c10 = occ[x0, y1, z0] * (1 - fx) + occ[x1, y1, z0] * fx
            c01 = occ[x0, y0, z1] * (1 - fx) + occ[x1, y0, z1] * fx
            c11 = occ[x0, y1, z1] * (1 - fx) + occ[x1, y1, z1] * fx
            c0 = c00 * (1 - fy) + c10 * fy
            c1 = c01 * (1 - fy) + c11 * fy
            if c0 * (1 - fz) + c1 * fz >= iso:
                hit[r] = True
                break
    return hit


def reproject_silhouette(grid, calib, iso=0.5, kernel=None):
    """Binary image: 1 where the pixel-centre ray meets occupancy >= ``iso``.

    Rays are sampled every half voxel inside the lattice of voxel centres,
    with trilinear interpolation between centres.
    """
    occ = np.ascontiguousarray(grid.occupancy, dtype=np.float64)
    origin = np.asarray(grid.origin, dtype=np.float64)
    voxel = float(grid.voxel_size)
    w, h = calib.image_width, calib.image_height
    if occ.max(initial=0.0) < iso:
        return np.zeros((h, w))
    cols, rows = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dirs = np.ascontiguousarray(pixel_rays(calib, cols.reshape(-1), rows.reshape(-1)))
    hi = origin + voxel * (np.array(occ.shape) - 1)
    t0, t1 = _ray_box(calib.cop, dirs, origin, hi)
    kernel = kernel or pick(_march_numba, _march_numpy)
    hit = kernel(occ, origin, voxel, np.asarray(calib.cop, dtype=np.float64), dirs, t0, t1, 0.5 * voxel, float(iso))
    return hit.reshape(h, w).astype(np.float64)


def foreground_crop(*images, pad=4):
    """Slices of the padded bounding box of the union of foreground pixels.

    The box is grown to at least the SSIM window on each side (within the image).
    """
    fg = np.zeros(images[0].shape, dtype=bool)
    for im in images:
        fg |= np.asarray(im) > 0.5
    h, w = fg.shape
    if not fg.any():
        return slice(0, h), slice(0, w)

    def span(mask, n):
        idx = np.flatnonzero(mask)
        lo, hi = max(idx[0] - pad, 0), min(idx[-1] + pad + 1, n)
        short = SSIM_WINDOW - (hi - lo)
        if short > 0:
            lo = max(0, lo - short // 2 - short % 2)
            hi = min(n, lo + SSIM_WINDOW)
            lo = max(0, hi - SSIM_WINDOW)
        return slice(lo, hi)

    return span(fg.any(axis=1), h), span(fg.any(axis=0), w)


def image_scores(pred, truth):
    """PSNR/SSIM/IoU of two silhouettes on the full frame and on a foreground crop."""
    rs, cs = foreground_crop(pred, truth)
    out = {}
    for tag, (p, t) in (("full", (pred, truth)), ("crop", (pred[rs, cs], truth[rs, cs]))):
        out[f"psnr_{tag}"] = psnr(p, t)
        out[f"ssim_{tag}"] = ssim(p, t) if min(p.shape) >= SSIM_WINDOW else None
    out["iou"] = iou(pred, truth)
    return out


# --------------------------------------------------------------------------- reports


def _jsonable(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return _jsonable(v.item())
    return v


def _summary(values):
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return {"mean": None, "std": None}
    return {"mean": float(v.mean()), "std": float(v.std())}


@dataclass
class EvalReport:
    """Per-frame volumetric errors of one sequence (MSE stored x 1e-3).

    ``rows`` maps a row label (``"input"``, ``"refined"``, ``"refined/s8"`` ...)
    to per-frame MSE x 1e-3, aligned with ``frames``.  ``images`` optionally
    holds per-frame reprojection scores for the same rows.
    """

    sequence: str
    frames: list
    rows: dict
    images: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def summary(self):
        return {k: _summary(v) for k, v in self.rows.items()}

    def to_dict(self):
        doc = {
            "format": REPORT_FORMAT,
            "sequence": self.sequence,
            "frames": list(self.frames),
            "mse_e3": {k: [float(x) for x in v] for k, v in self.rows.items()},
            "summary_mse_e3": self.summary(),
            "reference_mse_e3": {"input": REFERENCE_INPUT_MSE_E3, "refined": REFERENCE_REFINED_MSE_E3},
            "image_space_note": "silhouette reprojections (untextured)",
            "images": self.images,
            "config": self.config,
        }
        return _jsonable(doc)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc):
        validate_report(doc)
        return cls(doc["sequence"], doc["frames"], doc["mse_e3"], doc.get("images", {}), doc.get("config", {}))


_NUM_OR_INF = {"anyOf": [{"type": "number"}, {"enum": ["inf"]}, {"type": "null"}]}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["format", "sequence", "frames", "mse_e3", "summary_mse_e3", "reference_mse_e3"],
    "properties": {
        "format": {"const": REPORT_FORMAT},
        "sequence": {"type": "string"},
        "frames": {"type": "array", "items": {"type": "string"}},
        "mse_e3": {
            "type": "object",
            "additionalProperties": {"type": "array", "items": {"type": "number", "minimum": 0}},
        },
        "summary_mse_e3": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["mean", "std"],
                "properties": {"mean": {"type": ["number", "null"]}, "std": {"type": ["number", "null"]}},
            },
        },
        "reference_mse_e3": {"type": "object"},
        "images": {
            "type": "object",
            "additionalProperties": {
                "type": "array",
                "items": {
                    "type": "object",
                    "properties": {
                        "psnr_full": _NUM_OR_INF,
                        "psnr_crop": _NUM_OR_INF,
                        "ssim_full": {"type": ["number", "null"], "maximum": 1},
                        "ssim_crop": {"type": ["number", "null"], "maximum": 1},
                        "iou": {"type": "number", "minimum": 0, "maximum": 1},
                    },
                },
            },
        },
        "config": {"type": "object"},
    },
}


def validate_report(doc):
    """Raise ``jsonschema.ValidationError`` if ``doc`` is not a well-formed report."""
    import jsonschema

    jsonschema.validate(doc, REPORT_SCHEMA)
    n = len(doc["frames"])
    for k, v in doc["mse_e3"].items():
        if len(v) != n:
            raise jsonschema.ValidationError(f"row {k!r} has {len(v)} values for {n} frames")


def format_table(reports):
    """Plain-text table: one row per error row label, one column per sequence (mean MSE x 1e-3)."""
    labels = []
    for r in reports:
        labels += [k for k in r.rows if k not in labels]
    head = ["MSE x1e-3"] + [r.sequence for r in reports] + ["mean"]
    body = []
    for lab in labels:
        vals = [r.summary().get(lab, {}).get("mean") for r in reports]
        known = [v for v in vals if v is not None]
        cells = ["-" if v is None else f"{v:.3f}" for v in vals]
        body.append([lab] + cells + [f"{np.mean(known):.3f}" if known else "-"])
    widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
    fmt = "  ".join(f"{{:<{w}}}" if i == 0 else f"{{:>{w}}}" for i, w in enumerate(widths))
    return "\n".join(fmt.format(*row) for row in [head] + body)
