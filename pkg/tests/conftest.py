import numpy as np
import pytest

from punctual import MutationKernel, build_field, builtin_model, find_singularities

M3_1D = 2.0 * np.sqrt(2.0 / np.pi)   # E|h|^3, standard normal on R
SQRT_2_PI = np.sqrt(2.0 / np.pi)


@pytest.fixture(scope="session")
def quad1d_field():
    m = builtin_model("quad1d")
    k = MutationKernel.gaussian_isotropic(1, 1.0)
    gam = find_singularities(m, [[-2.0, 2.0]], 32)
    return build_field(m, k, gam)


@pytest.fixture(scope="session")
def band05_field():
    m = builtin_model("band1d", kappa=0.5)
    k = MutationKernel.gaussian_isotropic(1, 1.0)
    gam = find_singularities(m, [[-2.0, 2.0]], 32)
    return build_field(m, k, gam)


@pytest.fixture(scope="session")
def band2_field():
    m = builtin_model("band1d", kappa=2.0)
    k = MutationKernel.gaussian_isotropic(1, 1.0)
    gam = find_singularities(m, [[-2.0, 2.0]], 32)
    return build_field(m, k, gam)


@pytest.fixture(scope="session")
def radial2d_field():
    m = builtin_model("radial2d")
    k = MutationKernel.gaussian_isotropic(2, 1.0)
    gam = find_singularities(m, [[-1.0, 1.0], [-1.0, 1.0]], 16)
    return build_field(m, k, gam)
