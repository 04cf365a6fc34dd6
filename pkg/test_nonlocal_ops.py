import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from errors import AliasingWarning, InvalidParameterError
from model import custom_model, free_model, stable_ou, tanh_well
from nonlocal_ops import (
    Grid1D,
    GridField,
    aliasing_fraction,
    apply_adjoint,
    apply_generator,
    adjoint_matrix,
    fractional_laplacian,
    fractional_laplacian_quadrature,
    heat_kernel_diagnostic,
    spectral_derivative,
)
from stable import make_stream

GRID = Grid1D(16.0, 256)


def smooth_field(seed, grid=GRID, n_bumps=4):
    """Sum of Gaussian bumps with random centres, widths and signs."""
    rng = make_stream(seed)
    centres = rng.uniform(-8.0, 8.0, n_bumps)
    widths = rng.uniform(0.7, 2.0, n_bumps)
    weights = rng.normal(size=n_bumps)
    x = grid.x[:, None]
    return (weights * np.exp(-((x - centres) / widths) ** 2)).sum(axis=1)


def test_grid_validation():
    with pytest.raises(InvalidParameterError):
        Grid1D(16.0, 100)
    with pytest.raises(InvalidParameterError):
        Grid1D(16.0, 32)
    with pytest.raises(InvalidParameterError):
        Grid1D(0.0, 256)


def test_grid_geometry():
    assert GRID.spacing == 0.125
    assert GRID.x[0] == -16.0
    assert GRID.x[-1] == 16.0 - 0.125
    assert GRID.integrate(np.ones(256)) == pytest.approx(32.0)


def test_field_validation():
    with pytest.raises(InvalidParameterError):
        GridField(GRID, np.zeros(10))
    with pytest.raises(InvalidParameterError):
        GridField(GRID, np.zeros(256), kind="velocity")


def test_interpolation_and_off_grid_points():
    f = GridField.sample(GRID, lambda x: 2.0 * x + 1.0)
    np.testing.assert_allclose(f.at(GRID.x[[10, 100, 200]]), f.values[[10, 100, 200]])
    assert f.at([0.0625])[0] == pytest.approx(1.125)
    assert np.isnan(f.at([-17.0, 16.5])).all()


def test_fractional_laplacian_eigenfunction():
    grid = Grid1D(32.0, 2048)
    xi = 3.0 * math.pi / grid.half_width
    f = GridField.sample(grid, lambda x: np.cos(xi * x))
    out = fractional_laplacian(f, 1.5)
    np.testing.assert_allclose(out.values, xi ** 1.5 * f.values, atol=1e-10)


def test_fractional_laplacian_kills_constants():
    out = fractional_laplacian(GridField(GRID, np.full(256, 3.0)), 1.3)
    assert np.max(np.abs(out.values)) < 1e-12


def test_fractional_laplacian_matches_singular_integral():
    grid = Grid1D(32.0, 2048)
    alpha = 1.5
    out = fractional_laplacian(GridField.sample(grid, lambda x: np.exp(-x * x)), alpha)
    for point in (0.0, 0.5, 1.5, 3.0):
        j = int(round((point + grid.half_width) / grid.spacing))
        expected = fractional_laplacian_quadrature(
            lambda y: math.exp(-y * y), point, alpha, curvature=lambda y: (4.0 * y * y - 2.0) * math.exp(-y * y)
        )
        # 1e-6 is out of reach on a periodic grid: images of the whole-line kernel contribute a few 1e-5
        assert out.values[j] == pytest.approx(expected, abs=1e-4)


@given(seed=st.integers(0, 2 ** 32 - 1), shift=st.integers(1, 255), a=st.floats(-3.0, 3.0))
def test_fractional_laplacian_linear_and_shift_equivariant(seed, shift, a):
    u = smooth_field(seed)
    v = smooth_field(seed + 1)
    lap = lambda w: fractional_laplacian(GridField(GRID, w), 1.5).values
    np.testing.assert_allclose(lap(a * u + v), a * lap(u) + lap(v), atol=1e-10)
    np.testing.assert_allclose(lap(np.roll(u, shift)), np.roll(lap(u), shift), atol=1e-10)


def test_spectral_derivative_of_periodic_sine():
    xi = 2.0 * math.pi / GRID.half_width
    np.testing.assert_allclose(spectral_derivative(np.sin(xi * GRID.x), GRID), xi * np.cos(xi * GRID.x), atol=1e-12)


def test_generator_kills_constants():
    out = apply_generator(tanh_well(), GridField(GRID, np.ones(256)))
    assert np.max(np.abs(out.values)) < 1e-12


def test_free_generator_and_adjoint_reduce_to_fractional_laplacian():
    xi = 5.0 * math.pi / GRID.half_width
    f = GridField.sample(GRID, lambda x: np.cos(xi * x))
    expected = -xi ** 1.5 * f.values
    np.testing.assert_allclose(apply_generator(free_model(1.5), f).values, expected, atol=1e-10)
    np.testing.assert_allclose(apply_adjoint(free_model(1.5), f).values, expected, atol=1e-10)


def test_stable_ou_generator_on_cosine():
    grid = Grid1D(8.0 * math.pi, 256)
    u = GridField.sample(grid, np.cos)
    out = apply_generator(stable_ou(1.0, 1.5), u)
    x = grid.x
    np.testing.assert_allclose(out.values, x * np.sin(x) - np.cos(x), atol=1e-9 * (1.0 + np.abs(x)).max())


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_duality_of_generator_and_adjoint(seed):
    model = custom_model("-2*x/sqrt(1+x^2)", "1 + 0.3*tanh(x)^2", alpha=1.4)
    u = GridField(GRID, smooth_field(seed))
    phi = GridField(GRID, smooth_field(seed + 7))
    left = GRID.inner(apply_generator(model, u).values, phi.values)
    right = GRID.inner(u.values, apply_adjoint(model, phi).values)
    scale = np.linalg.norm(apply_generator(model, u).values) * np.linalg.norm(phi.values) * GRID.spacing
    assert abs(left - right) <= 1e-8 * scale


@pytest.mark.parametrize("model", [tanh_well(), stable_ou(), custom_model("-x", "1 + 0.5*tanh(x)^2")])
def test_adjoint_annihilates_mass(model):
    phi = GridField(GRID, smooth_field(3) ** 2)
    image = apply_adjoint(model, phi)
    assert abs(image.mass()) <= 1e-8 * image.l1()


def test_adjoint_matrix_matches_operator():
    model = tanh_well()
    phi = smooth_field(11)
    np.testing.assert_allclose(adjoint_matrix(model, GRID) @ phi, apply_adjoint(model, GridField(GRID, phi)).values,
                               atol=1e-10)


def test_aliasing_warning_for_unresolved_input():
    noise = make_stream(1).standard_normal(256)
    assert aliasing_fraction(noise) > 1e-6
    with pytest.warns(AliasingWarning):
        apply_adjoint(tanh_well(), GridField(GRID, noise))


def test_heat_kernel_band_and_peak_scaling():
    report = heat_kernel_diagnostic(free_model(1.5), 0.05)
    assert report.passes
    assert 0.1 <= report.ratio_min <= report.ratio_max <= 10.0
    assert report.peak_ratio == pytest.approx(2.0 ** (-1.0 / 1.5), rel=0.05)


def test_heat_kernel_with_drift_stays_finite():
    report = heat_kernel_diagnostic(tanh_well(), 0.05, x0=1.0, grid=Grid1D(16.0, 512))
    assert np.isfinite(report.ratio_min) and np.isfinite(report.ratio_max)
    assert report.ratio_max > 0.0


def test_heat_kernel_time_range():
    with pytest.raises(InvalidParameterError):
        heat_kernel_diagnostic(free_model(), 0.5)
