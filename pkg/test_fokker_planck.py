import numpy as np
import pytest

from conftest import stable_ou_oracle
from errors import BoundaryMassError, FloorDominatedError, InvalidParameterError, StabilityError
from fokker_planck import (
    FpSolveSpec,
    agarwal_observable,
    evolve_density,
    evolve_signed,
    gaussian_start,
    perturbation_source,
    regauge,
    solve_conjugate,
    solve_stationary,
    stationary_residual,
)
from model import (
    ConstantField,
    LorentzianField,
    Perturbation,
    StepProfile,
    ZeroField,
    custom_model,
    free_model,
    stable_ou,
    tanh_well,
)
from nonlocal_ops import Grid1D, GridField, apply_adjoint
from simulate import sample_steady_state
from stable import StableParams, stable_density_oracle
from storage import read_grid_field

LORENTZIAN = Perturbation(StepProfile(), LorentzianField(1.0))


def mean_position(p):
    return p.grid.integrate(p.x * p.values)


def mirrored(values):
    """values at -x: the grid maps onto itself under j -> N - j."""
    return np.concatenate([values[:1], values[1:][::-1]])


def test_spec_validation():
    with pytest.raises(InvalidParameterError):
        FpSolveSpec(dt=0.0)
    with pytest.raises(InvalidParameterError):
        FpSolveSpec(method="crank-nicolson")
    with pytest.raises(InvalidParameterError):
        FpSolveSpec(stop_tol=0.0)


def test_initial_density_must_have_unit_mass(small_grid, tanh_model):
    half = GridField(small_grid, 0.5 * gaussian_start(small_grid).values, "density")
    with pytest.raises(InvalidParameterError):
        evolve_density(tanh_model, half, FpSolveSpec(dt=1e-2, t_end=0.1))


def test_evolution_conserves_mass(small_grid, tanh_model):
    series = evolve_density(tanh_model, gaussian_start(small_grid), FpSolveSpec(dt=2e-3, t_end=1.0),
                            save_times=[0.0, 0.5, 1.0])
    np.testing.assert_allclose(series.times, [0.0, 0.5, 1.0])
    for snapshot in series.fields:
        assert snapshot.mass() == pytest.approx(1.0, abs=1e-8)
        assert snapshot.kind == "density"
    assert series.max_mass_error <= 1e-6


def test_integrators_agree_on_short_runs(small_grid, tanh_model):
    start = gaussian_start(small_grid)
    etd = evolve_density(tanh_model, start, FpSolveSpec(dt=1e-3, t_end=0.2)).fields[-1]
    rk = evolve_density(tanh_model, start, FpSolveSpec(dt=1e-3, t_end=0.2, method="explicit-RK")).fields[-1]
    assert small_grid.integrate(np.abs(etd.values - rk.values)) < 1e-4


def test_unstable_explicit_step_is_reported(small_grid, tanh_model):
    start = gaussian_start(small_grid)
    with pytest.raises(StabilityError) as info:
        evolve_signed(tanh_model, start, FpSolveSpec(dt=0.1, t_end=10.0, method="explicit-RK"))
    assert info.value.step is not None


def test_stationary_density_is_normalized_and_converged(tanh_stationary, tanh_model):
    assert tanh_stationary.kind == "density"
    assert tanh_stationary.mass() == pytest.approx(1.0, abs=1e-10)
    assert np.all(tanh_stationary.values >= 0.0)
    assert stationary_residual(tanh_model, tanh_stationary) <= 1e-6
    log = tanh_stationary.meta["solve_log"]
    assert log["model"] == "tanh-well"
    assert log["residual_history"][0]["t"] == 0.0
    assert log["boundary_mass"] == pytest.approx(tanh_stationary.boundary_mass())


def test_stationary_density_is_a_fixed_point(tanh_stationary, tanh_model):
    later = evolve_density(tanh_model, tanh_stationary, FpSolveSpec(dt=2e-3, t_end=1.0)).fields[-1]
    assert tanh_stationary.grid.integrate(np.abs(later.values - tanh_stationary.values)) < 1e-5


def test_stationary_density_is_even(tanh_stationary):
    p = tanh_stationary.values
    np.testing.assert_allclose(p, mirrored(p), atol=1e-10 * p.max())
    assert abs(mean_position(tanh_stationary)) < 1e-10


def test_seam_sampling_zeroes_odd_coefficients(small_grid, tanh_model):
    drift = small_grid.sample_periodic(tanh_model.drift_1d)
    assert drift[0] == 0.0
    np.testing.assert_allclose(drift, -mirrored(drift), atol=1e-15)


@pytest.mark.parametrize("method", ["exponential-splitting", "explicit-RK"])
def test_evolution_commutes_with_reflection(small_grid, tanh_model, method):
    start = GridField(small_grid, np.exp(-0.5 * (small_grid.x / 1.5) ** 2))
    start = start.with_values(start.values / start.mass(), "density")
    spec = FpSolveSpec(dt=1e-3, t_end=0.5, method=method)
    for snapshot in evolve_density(tanh_model, start, spec, save_times=[0.1, 0.5]).fields:
        np.testing.assert_allclose(snapshot.values, mirrored(snapshot.values), atol=1e-10 * snapshot.values.max())
    signed = GridField(small_grid, small_grid.x * start.values)
    for snapshot in evolve_signed(tanh_model, signed, spec, save_times=[0.5]).fields:
        scale = np.abs(snapshot.values).max()
        np.testing.assert_allclose(snapshot.values, -mirrored(snapshot.values), atol=1e-10 * scale)


def test_adjoint_maps_even_fields_to_even_fields(small_grid, tanh_model):
    even = GridField(small_grid, 1.0 / (1.0 + small_grid.x ** 2))
    image = apply_adjoint(tanh_model, even).values
    np.testing.assert_allclose(image, mirrored(image), atol=1e-12 * np.abs(image).max())


def test_stationary_density_stays_put_for_five_time_units(tanh_stationary, tanh_model):
    later = evolve_density(tanh_model, tanh_stationary, FpSolveSpec(dt=2e-3, t_end=5.0), save_times=[1.0, 2.5, 5.0])
    for snapshot in later.fields:
        assert tanh_stationary.grid.integrate(np.abs(snapshot.values - tanh_stationary.values)) < 1e-6


def test_stationary_solution_does_not_depend_on_the_warm_up(small_grid, tanh_model, tanh_stationary):
    cold = solve_stationary(tanh_model, small_grid, FpSolveSpec(dt=2e-3, stop_tol=1e-6, max_time=2e-3),
                            enforce_boundary=False)
    cold_log = cold.meta["solve_log"]
    warm_log = tanh_stationary.meta["solve_log"]
    assert cold_log["warm_up_time"] == pytest.approx(2e-3)
    assert cold_log["negative_mass"] <= 1e-3
    np.testing.assert_allclose(cold.values, tanh_stationary.values, atol=1e-9 * tanh_stationary.values.max())
    # the warm start only shrinks the correction
    assert warm_log["correction_l1"] < cold_log["correction_l1"]
    assert warm_log["warm_up_time"] > cold_log["warm_up_time"]


def test_free_process_on_the_torus_is_uniform(small_grid, solver_spec):
    p = solve_stationary(custom_model("0", "1"), small_grid, solver_spec, enforce_boundary=False)
    np.testing.assert_allclose(p.values, 1.0 / 32.0, atol=1e-10)


def test_free_process_spreads_like_the_stable_law():
    grid = Grid1D(32.0, 2048)
    bump = np.exp(-0.5 * (grid.x / 0.1) ** 2)
    start = GridField(grid, bump / grid.integrate(bump), "density")
    t = 1.0
    p = evolve_density(free_model(1.5), start, FpSolveSpec(dt=1e-2, t_end=t)).fields[-1]
    core = np.abs(grid.x) <= 8.0
    scale = t ** (1.0 / 1.5)
    expected = stable_density_oracle(StableParams(1.5), grid.x[core] / scale) / scale
    # bump width and periodic images of the heavy tails
    assert grid.spacing * np.sum(np.abs(p.values[core] - expected)) < 1e-2
    assert p.at([0.0])[0] == pytest.approx(expected[np.argmin(np.abs(grid.x[core]))], rel=1e-2)


def test_narrow_box_breaches_boundary_mass():
    with pytest.raises(BoundaryMassError):
        solve_stationary(tanh_well(), Grid1D(2.0, 128), FpSolveSpec(dt=2e-3, stop_tol=0.1, max_time=5.0))


def test_positive_force_shifts_mass_right(tanh_stationary, tanh_model):
    before = mean_position(tanh_stationary)
    after = evolve_density(tanh_model, tanh_stationary, FpSolveSpec(dt=2e-3, t_end=0.5), perturbation=LORENTZIAN,
                           epsilon=0.1).fields[-1]
    assert mean_position(after) > before + 5e-3
    assert after.mass() == pytest.approx(1.0, abs=1e-8)


def test_perturbation_source_has_zero_mass(tanh_stationary):
    assert abs(perturbation_source(tanh_stationary, LORENTZIAN).mass()) < 1e-12


def test_conjugate_of_zero_field_vanishes(tanh_stationary, tanh_model):
    solution = solve_conjugate(tanh_model, tanh_stationary, Perturbation(StepProfile(), ZeroField()))
    np.testing.assert_array_equal(solution.v.values, 0.0)
    np.testing.assert_array_equal(solution.U.values, 0.0)


def test_conjugate_solution(tanh_stationary, tanh_model):
    solution = solve_conjugate(tanh_model, tanh_stationary, LORENTZIAN)
    assert solution.residual < 1e-6
    assert solution.gauge == "mass-zero"
    assert abs(solution.v.mass()) < 1e-10
    assert solution.U.kind == "observable"
    # odd forcing of an even density: v is odd
    assert solution.v.at([1.0])[0] == pytest.approx(-solution.v.at([-1.0])[0], abs=1e-2 * np.abs(solution.v.values).max())


def test_regauge_is_idempotent(tanh_stationary, small_grid):
    v = GridField(small_grid, np.exp(-(small_grid.x - 1.0) ** 2))
    once = regauge(v, tanh_stationary)
    twice = regauge(once, tanh_stationary)
    assert abs(once.mass()) < 1e-12
    np.testing.assert_allclose(twice.values, once.values, atol=1e-14)


def test_agarwal_observable_of_gaussian_with_constant_force(small_grid):
    values = np.exp(-0.5 * small_grid.x ** 2)
    p = GridField(small_grid, values / small_grid.integrate(values), "density")
    y = agarwal_observable(p, Perturbation(StepProfile(), ConstantField(0.5)))
    kept = ~y.meta["floored"]
    assert kept.sum() > 0
    np.testing.assert_allclose(y.values[kept], 0.5 * small_grid.x[kept], atol=1e-8)
    assert y.meta["floored_share"] < 1e-3


def test_agarwal_observable_matches_finite_differences(tanh_stationary):
    grid = tanh_stationary.grid
    y = agarwal_observable(tanh_stationary, LORENTZIAN)
    flux = LORENTZIAN.field_1d(grid.x) * tanh_stationary.values
    estimate = -np.gradient(flux, grid.spacing) / tanh_stationary.values
    core = (np.abs(grid.x) <= 6.0) & ~y.meta["floored"]
    np.testing.assert_allclose(y.values[core], estimate[core], atol=2e-2 * np.abs(y.values[core]).max())


def test_floor_dominated_observable_is_rejected(small_grid):
    values = np.exp(-0.5 * small_grid.x ** 2)
    p = GridField(small_grid, values / small_grid.integrate(values), "density")
    with pytest.raises(FloorDominatedError):
        agarwal_observable(p, LORENTZIAN, floor_fraction=0.5)


@pytest.mark.slow
def test_stable_ou_density_matches_oracle(ou_oracle_file):
    oracle = read_grid_field(ou_oracle_file)
    p = solve_stationary(stable_ou(1.0, 1.5), oracle.grid, FpSolveSpec(dt=1e-3))
    assert oracle.grid.integrate(np.abs(p.values - oracle.values)) < 1e-2
    np.testing.assert_allclose(p.at([0.0]), stable_ou_oracle(np.array([0.0])), rtol=2e-2)


@pytest.mark.slow
def test_monte_carlo_histogram_matches_stationary_density():
    grid = Grid1D(32.0, 2048)
    p = solve_stationary(tanh_well(), grid, FpSolveSpec(dt=1e-3), enforce_boundary=False)
    sample = sample_steady_state(tanh_well(), 20.0, 1_000_000, 1.0, 3, n_chains=1000, dt=1e-3,
                                 wrap_half_width=32.0, threads=4)
    # bins of 8 grid cells
    edges = np.append(grid.x[::8], grid.half_width) - 0.5 * grid.spacing
    counts, _ = np.histogram(np.mod(sample.states[:, 0] + 0.5 * grid.spacing + 32.0, 64.0) - 32.0 - 0.5 * grid.spacing,
                             bins=edges)
    width = 8 * grid.spacing
    empirical = counts / (counts.sum() * width)
    binned = p.values.reshape(-1, 8).mean(axis=1)
    assert np.sum(np.abs(empirical - binned)) * width < 2.5e-2
