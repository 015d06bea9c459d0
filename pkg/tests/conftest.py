import numpy as np
import pytest
from hypothesis import settings

from dtsforge.phantom import Sphere, PhantomSpec, _paint, _grid_coords
from dtsforge.volume import CtVolume, AIR_HU

# array-heavy property tests trip the default deadline on cold numba caches
settings.register_profile("suite", deadline=None)
settings.load_profile("suite")

WATER_MU = 0.02  # mm^-1 at 0 HU under the linear attenuation model


def water_sphere(radius_mm: float, n: int, pitch_mm: float = 1.0,
                 center=(0.0, 0.0, 0.0)) -> CtVolume:
    """Uniform water sphere (0 HU) in air on an n^3 grid, antialiased edges."""
    spec = PhantomSpec(dims=(n, n, n), spacing=(pitch_mm,) * 3, lungs=(), bed=None)
    x, y, z = _grid_coords(spec)
    values = np.full((n, n, n), AIR_HU, dtype=np.float32)
    _paint(values, Sphere(tuple(center), radius_mm, hu=0.0), spec, x, y, z)
    return CtVolume(values, spec.spacing)


@pytest.fixture(scope="session")
def sphere64():
    return water_sphere(24.0, 64)
