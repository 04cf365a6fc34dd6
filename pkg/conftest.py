import os

import hypothesis
import numpy as np
import pytest

from fokker_planck import FpSolveSpec, solve_stationary
from model import stable_ou, tanh_well
from nonlocal_ops import Grid1D, GridField
from stable import StableParams, stable_density_oracle

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=100, deadline=None)
hypothesis.settings.register_profile("debugger", report_multiple_bugs=False, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "fast"))


@pytest.fixture(scope="session")
def small_grid():
    return Grid1D(16.0, 256)


@pytest.fixture(scope="session")
def solver_spec():
    return FpSolveSpec(dt=2e-3, t_end=1.0, stop_tol=1e-6, max_time=10.0)


@pytest.fixture(scope="session")
def tanh_model():
    return tanh_well(2.0, 1.5, 1.0)


@pytest.fixture(scope="session")
def ou_model():
    return stable_ou(1.0, 1.5, 1.0)


@pytest.fixture(scope="session")
def tanh_stationary(tanh_model, small_grid, solver_spec):
    """Stationary density of the tanh well on the small periodic grid."""
    return solve_stationary(tanh_model, small_grid, solver_spec, enforce_boundary=False)


def stable_ou_oracle(x, alpha=1.5, rate=1.0):
    """Stationary density of the stable OU process: CF exp(-|xi|^alpha / (alpha rate))."""
    scale = (1.0 / (alpha * rate)) ** (1.0 / alpha)
    return stable_density_oracle(StableParams(alpha), np.asarray(x) / scale) / scale


@pytest.fixture(scope="session")
def ou_oracle_file(tmp_path_factory):
    """Oracle density of stable-OU (alpha = 1.5) on the default grid, as a GridField CSV."""
    from storage import write_grid_field

    grid = Grid1D(32.0, 2048)
    path = tmp_path_factory.mktemp("oracle") / "stable_ou_oracle.csv"
    write_grid_field(path, GridField(grid, stable_ou_oracle(grid.x), "density"))
    return path
