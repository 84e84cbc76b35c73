"""Time the numba and numpy paths of every hot kernel on a 64^3 workload.

Usage: python benchmarks/bench_kernels.py [--resolution 64] [--repeat 5]

Each kernel is called once before timing so numba compilation (or cache
loading) is excluded.  The best of ``--repeat`` runs is reported, together
with a check that both paths produce the same result.
"""

import argparse
import time

import numpy as np

from hullforge import _accel
from hullforge.mesh import _triangles_numba, _triangles_numpy, marching_cubes
from hullforge.metrics import _march_numba, _march_numpy, reproject_silhouette
from hullforge.net import Architecture, backward, forward, init_weights, layers, mse_grad
from hullforge.patch import PatchSpec, _accumulate_numba, _accumulate_numpy, extract_patches, reassemble
from hullforge.pvh import GridSpec, _pvh_numba, _pvh_numpy, compute_pvh
from hullforge.synth import CAPTURE_MAX, CAPTURE_MIN, make_camera_ring, make_scene, _humanoid_family, render_soft_matte


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def same(a, b):
    if isinstance(a, tuple):
        return "; ".join(same(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        return "shape differs"
    if np.array_equal(a, b):
        return "identical"
    return f"max diff {np.abs(a.astype(np.float64) - b).max():.1e}"


def net_step(model, x):
    y, tape = forward(model, x)
    g = backward(model, tape, mse_grad(y, x))
    return y, g["out.w"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--resolution", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(0)
    rig = make_camera_ring(8)
    scene = make_scene("humanoid", _humanoid_family(rng), rng)
    mattes = [render_soft_matte(scene, cam) for cam in rig.cameras]
    spec = GridSpec.covering(CAPTURE_MIN, CAPTURE_MAX, args.resolution)
    grid = compute_pvh(rig.cameras, mattes, spec)
    patches = extract_patches(grid, PatchSpec(32, 8) if args.resolution >= 32 else PatchSpec(args.resolution, 1))
    arch = Architecture(channels=(8, 8, 16, 16, 32))
    model = init_weights(arch, 0)
    batch = patches.values[:8]

    cases = {
        "pvh (8 views)": lambda k: compute_pvh(rig.cameras, mattes, spec, kernel=k).occupancy,
        "patch reassembly": lambda k: reassemble(patches, kernel=k).occupancy,
        "marching cubes": lambda k: marching_cubes(grid, 0.5, kernel=k).faces,
        "silhouette reprojection": lambda k: reproject_silhouette(grid, rig.cameras[3], kernel=k),
    }
    kernels = {
        "pvh (8 views)": (_pvh_numba, _pvh_numpy),
        "patch reassembly": (_accumulate_numba, _accumulate_numpy),
        "marching cubes": (_triangles_numba, _triangles_numpy),
        "silhouette reprojection": (_march_numba, _march_numpy),
    }

    rows = []
    for name, call in cases.items():
        fast, slow = kernels[name]
        t_fast, a = best_of(lambda: call(fast), args.repeat)
        t_slow, b = best_of(lambda: call(slow), args.repeat)
        rows.append((name, t_fast, t_slow, same(a, b)))

    # the net selects its direct convolution through a module flag rather than an argument
    saved = layers.USE_NUMBA
    try:
        layers.USE_NUMBA = True
        t_fast, a = best_of(lambda: net_step(model, batch), args.repeat)
        layers.USE_NUMBA = False
        t_slow, b = best_of(lambda: net_step(model, batch), args.repeat)
    finally:
        layers.USE_NUMBA = saved
    rows.append(("net forward+backward (batch 8)", t_fast, t_slow, same(a, b)))

    print(f"grid {args.resolution}^3, best of {args.repeat}")
    print(f"{'kernel':32s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}  agreement")
    for name, tf, ts, agree in rows:
        print(f"{name:32s} {tf * 1e3:10.2f} {ts * 1e3:10.2f} {ts / tf:7.1f}x  {agree}")


if __name__ == "__main__":
    main()
