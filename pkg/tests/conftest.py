import numpy as np
import pytest

from ebm_memory import io
from ebm_memory.grid import build_grid
from ebm_memory.memory import MemoryKernel
from ebm_memory.physics import CoalbedoSpec, EmissionSpec, InsolationSpec, MemoryResponseSpec
from ebm_memory.stepper import ModelParams


def sellers_params(n=16, rho0=0.3, f_bound=0.0, kernel=None, q="legendre_p2", a_f=0.68,
                   u_bar=0.7, width=0.5):
    return ModelParams(
        InsolationSpec.build(q, 1.0),
        CoalbedoSpec("sellers_smooth", 0.38, a_f, u_bar=u_bar, smoothness_width=width),
        EmissionSpec.sellers(1.0),
        MemoryResponseSpec(f_bound, 1.0),
        kernel or MemoryKernel.cosine(1.0, 0.5, level=4.0),
        build_grid(n, rho0),
    )


def inverse_params(n=64):
    params = io.load_preset("inverse").build_params()
    return params.replace(grid=build_grid(n, params.grid.rho0))


def inverse_u0(s, x):
    return 0.6 + 0.3 * np.cos(0.5 * np.pi * np.asarray(x)) ** 2 + 0.1 * s


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
