"""Iso-surface extraction from occupancy grids and OBJ export.

Vertices live on lattice edges and are identified by ``(cell-corner index, axis)``,
so neighbouring cells share them exactly and the welded mesh is closed wherever
the surface is interior to the grid.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._accel import njit, pick
from ._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, TRI_TABLE

THRESHOLD_BINS = 256
THRESHOLD_MIN = 0.2
THRESHOLD_MAX = 0.8
THRESHOLD_FALLBACK = 0.5
MIN_FACE_AREA = 1e-12

# per table edge: offset of its lower corner and the lattice axis it runs along
_EDGE_BASE = np.minimum(CORNER_OFFSETS[EDGE_CORNERS[:, 0]], CORNER_OFFSETS[EDGE_CORNERS[:, 1]])
_EDGE_AXIS = np.argmax(np.abs(CORNER_OFFSETS[EDGE_CORNERS[:, 1]] - CORNER_OFFSETS[EDGE_CORNERS[:, 0]]), axis=1)


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) metres
    faces: np.ndarray  # (F, 3) vertex indices

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def is_empty(self):
        return len(self.faces) == 0

    def face_areas(self):
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def area(self):
        return float(self.face_areas().sum())

    def edges(self):
        """Undirected edges as sorted pairs, one row per (face, side)."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        return np.sort(e, axis=1)

    def edge_face_counts(self):
        _, counts = np.unique(self.edges(), axis=0, return_counts=True)
        return counts

    def is_watertight(self):
        return not self.is_empty and bool(np.all(self.edge_face_counts() == 2))

    def euler_characteristic(self):
        n_edges = len(np.unique(self.edges(), axis=0))
        return len(self.vertices) - n_edges + len(self.faces)

    def signed_volume(self):
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


# --------------------------------------------------------------------------- threshold


def select_threshold(grid):
    """Otsu split of the nonzero occupancies, clamped to ``[0.2, 0.8]``.

    Returns 0.5 when the histogram has fewer than two populated bins.
    """
    occ = np.asarray(grid.occupancy if hasattr(grid, "occupancy") else grid, dtype=np.float64)
    vals = occ[occ > 0]
    if vals.size == 0:
        raise ValueError("empty grid: no nonzero occupancy")
    hist, edges = np.histogram(vals, bins=THRESHOLD_BINS, range=(0.0, 1.0))
    if np.count_nonzero(hist) < 2:
        return THRESHOLD_FALLBACK
    mids = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(hist)[:-1].astype(np.float64)
    w1 = vals.size - w0
    s0 = np.cumsum(hist * mids)[:-1]
    m0 = s0 / np.maximum(w0, 1)
    m1 = (np.sum(hist * mids) - s0) / np.maximum(w1, 1)
    between = w0 * w1 * (m0 - m1) ** 2
    best = int(np.argmax(between))
    return float(np.clip(edges[best + 1], THRESHOLD_MIN, THRESHOLD_MAX))


# --------------------------------------------------------------------------- marching cubes


def _cases_numpy(f, iso):
    below = f < iso
    case = np.zeros(tuple(d - 1 for d in f.shape), dtype=np.int64)
    for i, (ox, oy, oz) in enumerate(CORNER_OFFSETS):
        case |= below[ox : ox + case.shape[0], oy : oy + case.shape[1], oz : oz + case.shape[2]].astype(np.int64) << i
    return case


def _triangles_numpy(f, iso):
    """Edge-id triples for every triangle, in cell (C-order) then table order."""
    ny, nz = f.shape[1], f.shape[2]
    case = _cases_numpy(f, iso)
    cells = np.flatnonzero((case != 0) & (case != 255))
    if cells.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    cx, cy, cz = np.unravel_index(cells, case.shape)
    rows = TRI_TABLE[case.reshape(-1)[cells]]  # (n, 16)
    ci, slot = np.nonzero(rows >= 0)
    e = rows[ci, slot]
    base = _EDGE_BASE[e]
    vx = cx[ci] + base[:, 0]
    vy = cy[ci] + base[:, 1]
    vz = cz[ci] + base[:, 2]
    ids = ((vx * ny + vy) * nz + vz) * 3 + _EDGE_AXIS[e]
    return ids.reshape(-1, 3)


@njit(cache=True, nogil=True)
def _triangles_numba(f, iso):
    nx, ny, nz = f.shape
    tri = TRI_TABLE
    ebase = _EDGE_BASE
    eaxis = _EDGE_AXIS
    corners = CORNER_OFFSETS
    count = 0
    cases = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for x in range(nx - 1):
        for y in range(ny - 1):
            for z in range(nz - 1):
                c = 0
                for i in range(8):
                    if f[x + corners[i, 0], y + corners[i, 1], z + corners[i, 2]] < iso:
                        c |= 1 << i
                cases[x, y, z] = c
                if c != 0 and c != 255:
                    k = 0
                    while k < 16 and tri[c, k] >= 0:
                        k += 1
                    count += k
    out = np.empty(count, dtype=np.int64)
    n = 0
    for x in range(nx - 1):
        for y in range(ny - 1):
            for z in range(nz - 1):
                c = cases[x, y, z]
                if c == 0 or c == 255:
                    continue
                k = 0
                while k < 16 and tri[c, k] >= 0:
                    e = tri[c, k]
                    vx = x + ebase[e, 0]
                    vy = y + ebase[e, 1]
                    vz = z + ebase[e, 2]
                    out[n] = ((vx * ny + vy) * nz + vz) * 3 + eaxis[e]
                    n += 1
                    k += 1
    return out.reshape(-1, 3)


def _edge_vertices(f, iso, edge_ids, origin, voxel):
    """Interpolated world positions for lattice-edge ids."""
    axis = edge_ids % 3
    lin = edge_ids // 3
    p0 = np.stack(np.unravel_index(lin, f.shape), axis=1)
    p1 = p0.copy()
    p1[np.arange(len(p1)), axis] += 1
    a = f[p0[:, 0], p0[:, 1], p0[:, 2]].astype(np.float64)
    b = f[p1[:, 0], p1[:, 1], p1[:, 2]].astype(np.float64)
    t = (iso - a) / (b - a)
    pos = p0.astype(np.float64)
    pos[np.arange(len(pos)), axis] += t
    return origin + voxel * pos


def marching_cubes(grid, iso, kernel=None):
    """Triangle mesh of the ``iso`` level set of ``grid.occupancy``.

    Faces are wound so their normals point toward lower occupancy.  Faces of
    area at most 1e-12 m^2 (from values exactly at ``iso``) are dropped.
    """
    if not 0 < iso < 1:
        raise ValueError(f"iso must lie in (0, 1), got {iso}")
    f = np.ascontiguousarray(grid.occupancy, dtype=np.float64)
    if min(f.shape) < 2:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    kernel = kernel or pick(_triangles_numba, _triangles_numpy)
    tris = kernel(f, float(iso))
    if len(tris) == 0:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    ids, faces = np.unique(tris, return_inverse=True)
    faces = faces.reshape(-1, 3)
    verts = _edge_vertices(f, iso, ids, np.asarray(grid.origin, dtype=np.float64), float(grid.voxel_size))
    mesh = TriangleMesh(verts, faces)
    keep = mesh.face_areas() > MIN_FACE_AREA
    if not keep.all():
        mesh = _compact(verts, faces[keep])
    return mesh


def _compact(verts, faces):
    used, inv = np.unique(faces, return_inverse=True)
    return TriangleMesh(verts[used], inv.reshape(-1, 3))


# --------------------------------------------------------------------------- OBJ


def export_obj(mesh, path):
    lines = ["# hullforge mesh", f"# {len(mesh.vertices)} vertices, {len(mesh.faces)} faces"]
    lines += [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_obj(path):
    """Read ``v``/``f`` records of an OBJ file (``f`` entries may carry ``/vt/vn``)."""
    verts, faces = [], []
    for raw in Path(path).read_text(encoding="ascii").splitlines():
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(t) for t in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(t.split("/")[0]) for t in parts[1:]]
            for k in range(1, len(idx) - 1):
                faces.append([idx[0] - 1, idx[k] - 1, idx[k + 1] - 1])
    return TriangleMesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))
