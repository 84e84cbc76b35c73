import os
import subprocess
import sys
import textwrap

import numpy as np
import pytest

SCRIPT = textwrap.dedent(
    """
    import sys
    import numpy as np
    from hullforge._accel import backend_name
    from hullforge.mesh import marching_cubes
    from hullforge.metrics import reproject_silhouette
    from hullforge.net import Architecture, forward, init_weights
    from hullforge.patch import PatchSpec, extract_patches, reassemble
    from hullforge.pvh import GridSpec, compute_pvh
    from hullforge.synth import CAPTURE_CENTER, CAPTURE_MAX, CAPTURE_MIN, Scene, make_camera_ring, render_soft_matte, sphere

    rig = make_camera_ring(4, image_dims=(40, 40), focal_px=38.0)
    scene = Scene((sphere(CAPTURE_CENTER, 0.6),))
    mattes = [render_soft_matte(scene, c, 2) for c in rig.cameras]
    grid = compute_pvh(rig.cameras, mattes, GridSpec.covering(CAPTURE_MIN, CAPTURE_MAX, 24))
    rec = reassemble(extract_patches(grid, PatchSpec(8, 4)))
    mesh = marching_cubes(grid, 0.5)
    sil = reproject_silhouette(grid, rig.cameras[1])
    arch = Architecture(patch_size=8, channels=(2, 2), latent_dim=4)
    y, _ = forward(init_weights(arch, 1), rec.occupancy[:8, :8, :8])
    np.savez(sys.argv[1], occ=grid.occupancy, rec=rec.occupancy, verts=mesh.vertices, faces=mesh.faces, sil=sil, y=y)
    print(backend_name())
    """
)


def _run(tmp_path, flag):
    out = tmp_path / f"{flag}.npz"
    env = dict(os.environ, HULLFORGE_NO_NUMBA=flag)
    res = subprocess.run([sys.executable, "-c", SCRIPT, str(out)], env=env, capture_output=True, text=True, check=True)
    return res.stdout.strip(), np.load(out)


@pytest.mark.slow
def test_env_flag_selects_numpy_and_results_agree(tmp_path):
    name_fast, fast = _run(tmp_path, "0")
    name_slow, slow = _run(tmp_path, "1")
    assert (name_fast, name_slow) == ("numba", "numpy")
    for key in ("occ", "rec", "verts", "faces", "sil"):
        assert np.array_equal(fast[key], slow[key]), key
    assert np.allclose(fast["y"], slow["y"], atol=1e-5)
