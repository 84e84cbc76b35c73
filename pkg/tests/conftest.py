import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "hullforge",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("hullforge")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def ring8():
    from hullforge.synth import make_camera_ring

    return make_camera_ring(8)


@pytest.fixture(scope="session")
def sphere_case(ring8):
    """Sphere scene, its eight mattes and the 64^3 lattice over the capture volume."""
    from hullforge.pvh import GridSpec
    from hullforge.synth import CAPTURE_CENTER, CAPTURE_MAX, CAPTURE_MIN, Scene, render_soft_matte, sphere

    scene = Scene((sphere(CAPTURE_CENTER, 0.5),))
    mattes = [render_soft_matte(scene, cam) for cam in ring8.cameras]
    spec = GridSpec.covering(CAPTURE_MIN, CAPTURE_MAX, 64)
    return scene, mattes, spec
