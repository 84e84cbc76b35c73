"""Dense overlapping sub-volume sampling and reassembly.

Corners along each axis sit at every multiple of ``stride``; when the last
multiple leaves part of the axis uncovered, one extra corner clamped to
``D - size`` is added, so every voxel is covered by at least one candidate.
Candidates whose occupancy sums to exactly zero are dropped.

Reassembly averages overlapping predictions with equal weight.  Entries are
accumulated in lexicographic corner order, in float64, so the result does not
depend on the order of the patch list.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._accel import njit, pick
from .pvh import VoxelGrid


@dataclass(frozen=True)
class PatchSpec:
    size: int = 32
    stride: int = 16

    def __post_init__(self):
        if self.size < 1 or not 1 <= self.stride <= self.size:
            raise ValueError(f"need 1 <= stride <= size, got size={self.size} stride={self.stride}")


@dataclass
class PatchSet:
    spec: PatchSpec
    grid: VoxelGrid  # the source grid; reassembly reuses its lattice
    corners: np.ndarray  # (K, 3) int64
    values: np.ndarray  # (K, n, n, n) float32

    @property
    def grid_dims(self):
        return self.grid.dims

    def __len__(self):
        return len(self.corners)

    def with_values(self, values):
        values = np.asarray(values, dtype=np.float32)
        if values.shape != self.values.shape:
            raise ValueError(f"patch values shape {values.shape} != {self.values.shape}")
        return PatchSet(self.spec, self.grid, self.corners, values)


def axis_corners(dim, size, stride):
    """Corner offsets along one axis of length ``dim``."""
    if dim < size:
        raise ValueError(f"grid extent {dim} is smaller than patch size {size}")
    corners = list(range(0, dim - size + 1, stride))
    if (dim - size) % stride:
        corners.append(dim - size)
    return corners


def candidate_corners(dims, spec):
    ax = [axis_corners(d, spec.size, spec.stride) for d in dims]
    g = np.meshgrid(*ax, indexing="ij")
    return np.stack([a.ravel() for a in g], axis=1).astype(np.int64)


def extract_patches(grid, spec, keep_empty=False):
    """All non-empty ``spec.size**3`` blocks of ``grid`` at the dense corner lattice."""
    corners = candidate_corners(grid.dims, spec)
    n = spec.size
    occ = grid.occupancy
    keep = []
    vals = []
    for c in corners:
        block = occ[c[0] : c[0] + n, c[1] : c[1] + n, c[2] : c[2] + n]
        if keep_empty or block.sum(dtype=np.float64) != 0.0:
            keep.append(c)
            vals.append(block)
    if keep:
        return PatchSet(spec, grid, np.array(keep, dtype=np.int64), np.stack(vals).astype(np.float32))
    return PatchSet(spec, grid, np.zeros((0, 3), dtype=np.int64), np.zeros((0, n, n, n), dtype=np.float32))


def patches_at(grid, spec, corners):
    """Blocks of ``grid`` at given corners, e.g. targets aligned with an input set."""
    corners = np.asarray(corners, dtype=np.int64).reshape(-1, 3)
    n = spec.size
    vals = np.zeros((len(corners), n, n, n), dtype=np.float32)
    for k, c in enumerate(corners):
        vals[k] = grid.occupancy[c[0] : c[0] + n, c[1] : c[1] + n, c[2] : c[2] + n]
    return PatchSet(spec, grid, corners, vals)


def _accumulate_numpy(dims, corners, values, acc, cnt):
    n = values.shape[1]
    for k in range(corners.shape[0]):
        x, y, z = corners[k]
        acc[x : x + n, y : y + n, z : z + n] += values[k]
        cnt[x : x + n, y : y + n, z : z + n] += 1


@njit(cache=True, nogil=True)
def _accumulate_numba(dims, corners, values, acc, cnt):
    n = values.shape[1]
    for k in range(corners.shape[0]):
        x0 = corners[k, 0]
        y0 = corners[k, 1]
        z0 = corners[k, 2]
        for i in range(n):
            for j in range(n):
                for l in range(n):
                    acc[x0 + i, y0 + j, z0 + l] += values[k, i, j, l]
                    cnt[x0 + i, y0 + j, z0 + l] += 1


_accumulate = pick(_accumulate_numba, _accumulate_numpy)


def reassemble(patches, fill=0.0, kernel=None):
    """Blend patch predictions back into a grid on the source lattice."""
    dims = patches.grid_dims
    acc = np.zeros(dims, dtype=np.float64)
    cnt = np.zeros(dims, dtype=np.int64)
    if len(patches):
        order = np.lexsort(patches.corners.T[::-1])
        corners = np.ascontiguousarray(patches.corners[order])
        values = np.ascontiguousarray(patches.values[order], dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise ValueError("patch values must be finite")
        (kernel or _accumulate)(dims, corners, values, acc, cnt)
    out = np.full(dims, float(fill))
    hit = cnt > 0
    out[hit] = acc[hit] / cnt[hit]
    return patches.grid.with_occupancy(np.clip(out, 0.0, 1.0).astype(np.float32))


def patch_count(dim, size, stride):
    """Candidate corners per axis: floor((D-n)/s)+1, plus one if (D-n) % s."""
    return (dim - size) // stride + 1 + (1 if (dim - size) % stride else 0)
