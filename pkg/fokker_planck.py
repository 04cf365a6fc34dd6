"""Fokker-Planck evolution, stationary density, conjugate variable and the Agarwal observable.

Time stepping is exponential (ETDRK2): the stiff part -k_max (-Delta)^{alpha/2}
is integrated exactly in Fourier space, the remainder (drift transport, the
variable part of the jump rate and the forcing) explicitly. Discrete
stationary states of A* are fixed points of the step.
"""
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy import special

from config import SolverSection, get_logger
from errors import (
    BoundaryMassError,
    CompatibilityError,
    ConvergenceError,
    FloorDominatedError,
    InvalidParameterError,
    SingularSystemError,
    StabilityError,
)
from model import Perturbation, SdeModel
from nonlocal_ops import (
    Grid1D,
    GridField,
    _fractional_multiplier,
    adjoint_matrix,
    adjoint_values,
    operator_coefficients,
    spectral_derivative,
)

logger = get_logger("fokker_planck")

METHODS = ("exponential-splitting", "explicit-RK")
POSITIVITY_FLOOR = 1e-3
MAX_FLOORED_SHARE = 0.05
MASS_DRIFT_PER_TIME = 1e-6
NEGATIVE_MASS_LIMIT = 1e-3
MAX_BOUNDARY_MASS = 5e-3


@dataclass(frozen=True)
class FpSolveSpec:
    dt: float = 1e-3
    t_end: float = 1.0
    method: str = "exponential-splitting"
    stop_tol: float = 1e-8
    max_time: float = 50.0

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidParameterError(f"solver dt must be positive, got {self.dt}")
        if not self.stop_tol > 0:
            raise InvalidParameterError(f"stop_tol must be positive, got {self.stop_tol}")
        if self.method not in METHODS:
            raise InvalidParameterError(f"unknown method {self.method!r}; valid: {list(METHODS)}")

    @classmethod
    def from_section(cls, section: SolverSection, t_end: float = 1.0) -> "FpSolveSpec":
        return cls(dt=section.dt, t_end=t_end, method=section.method, stop_tol=section.stop_tol,
                   max_time=section.max_time)


@dataclass
class DensitySeries:
    times: np.ndarray
    fields: List[GridField]
    min_before_clamp: float = 0.0
    clamp_events: int = 0
    max_mass_error: float = 0.0


@dataclass
class ConjugateSolution:
    v: GridField
    U: GridField
    residual: float
    gauge: str = "mass-zero"
    floored: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    floor: float = 0.0


def _phi2(z: np.ndarray) -> np.ndarray:
    """(e^z - 1 - z) / z^2 with a series near 0."""
    out = np.empty_like(z)
    small = np.abs(z) < 1e-2
    zs = z[small]
    out[small] = 0.5 + zs / 6.0 + zs ** 2 / 24.0 + zs ** 3 / 120.0 + zs ** 4 / 720.0
    zl = z[~small]
    out[~small] = (np.expm1(zl) - zl) / zl ** 2
    return out


class _Stepper:
    """One time step of dp/dt = A* p + eps F(t) (-(K p)')."""

    def __init__(self, model: SdeModel, grid: Grid1D, dt: float, method: str,
                 perturbation: Optional[Perturbation] = None, epsilon: float = 0.0):
        self.grid = grid
        self.dt = dt
        self.method = method
        self.alpha = model.alpha
        self.drift, self.rate = operator_coefficients(model, grid)
        self.rate_ref = float(self.rate.max())
        self.rate_excess = self.rate - self.rate_ref
        self.forcing = None
        if perturbation is not None and epsilon != 0.0:
            self.forcing = (float(epsilon), perturbation.time_profile, grid.sample_periodic(perturbation.field_1d))

        sym = _fractional_multiplier(grid.half_width, grid.n_points, float(self.alpha))
        z = -dt * self.rate_ref * sym
        self.decay = np.exp(z)
        self.phi1 = dt * special.exprel(z)
        self.phi2 = dt * _phi2(z)

    def full_rhs(self, p: np.ndarray, t: float) -> np.ndarray:
        out = adjoint_values(p, self.grid, self.drift, self.rate, self.alpha)
        return out + self._forcing(p, t)

    def _forcing(self, p, t):
        if self.forcing is None:
            return 0.0
        eps, profile, k_field = self.forcing
        return -eps * float(profile(t)) * spectral_derivative(k_field * p, self.grid)

    def _explicit_part(self, p: np.ndarray, t: float) -> np.ndarray:
        """Everything except -rate_ref (-Delta)^{alpha/2} p."""
        out = adjoint_values(p, self.grid, self.drift, self.rate_excess, self.alpha)
        return out + self._forcing(p, t)

    def step(self, p: np.ndarray, t: float) -> np.ndarray:
        n = self.grid.n_points
        if self.method == "explicit-RK":
            dt = self.dt
            k1 = self.full_rhs(p, t)
            k2 = self.full_rhs(p + 0.5 * dt * k1, t + 0.5 * dt)
            k3 = self.full_rhs(p + 0.5 * dt * k2, t + 0.5 * dt)
            k4 = self.full_rhs(p + dt * k3, t + dt)
            return p + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

        p_hat = np.fft.rfft(p)
        n0 = np.fft.rfft(self._explicit_part(p, t))
        a_hat = self.decay * p_hat + self.phi1 * n0
        a = np.fft.irfft(a_hat, n=n)
        n1 = np.fft.rfft(self._explicit_part(a, t + self.dt))
        return np.fft.irfft(a_hat + self.phi2 * (n1 - n0), n=n)


def _step_count(t_end: float, dt: float) -> int:
    return int(round(t_end / dt))


def _save_steps(save_times: Optional[Sequence[float]], t_end: float, dt: float) -> List[int]:
    if save_times is None:
        return [0, _step_count(t_end, dt)]
    return sorted({_step_count(t, dt) for t in save_times})


def _evolve(model, field0: GridField, spec: FpSolveSpec, perturbation, epsilon, save_times, density: bool):
    grid = field0.grid
    stepper = _Stepper(model, grid, spec.dt, spec.method, perturbation, epsilon)
    n_steps = _step_count(spec.t_end, spec.dt)
    save = _save_steps(save_times, spec.t_end, spec.dt)
    scale = max(field0.l1(), 1e-300)

    p = field0.values.copy()
    mass0 = grid.integrate(p)
    kind = "density" if density else "generic"
    fields, times = [], []
    min_before_clamp = float(p.min())
    clamp_events = 0
    max_mass_error = 0.0
    if 0 in save:
        fields.append(GridField(grid, p.copy(), kind))
        times.append(0.0)

    for step in range(1, n_steps + 1):
        t = (step - 1) * spec.dt
        p = stepper.step(p, t)
        if not np.all(np.isfinite(p)):
            raise StabilityError(f"non-finite values at step {step} (t={t + spec.dt:.4g})", step=step,
                                 time=t + spec.dt)
        drift = abs(grid.integrate(p) - mass0) / scale
        max_mass_error = max(max_mass_error, drift)
        if drift > MASS_DRIFT_PER_TIME * spec.dt * step + 1e-12:
            raise StabilityError(
                f"mass drifted by {drift:.3e} by step {step} (t={t + spec.dt:.4g})", step=step, time=t + spec.dt
            )
        if density:
            low = float(p.min())
            if low < 0.0:
                min_before_clamp = min(min_before_clamp, low)
                clamp_events += 1
                p = np.maximum(p, 0.0)
                p *= mass0 / grid.integrate(p)
        if step in save:
            fields.append(GridField(grid, p.copy(), kind))
            times.append(step * spec.dt)

    if density and clamp_events:
        level = logger.warning if min_before_clamp < -1e-6 * float(np.max(p)) else logger.debug
        level(f"clamped negative undershoot in {clamp_events} steps (min {min_before_clamp:.3e})")
    return DensitySeries(np.asarray(times), fields, min_before_clamp, clamp_events, max_mass_error)


def evolve_density(
    model: SdeModel,
    p0: GridField,
    spec: FpSolveSpec,
    perturbation: Optional[Perturbation] = None,
    epsilon: float = 0.0,
    save_times: Optional[Sequence[float]] = None,
) -> DensitySeries:
    """Density snapshots of dp/dt = A* p + eps F(t) L* p; negative undershoot is clamped and renormalized."""
    mass = p0.mass()
    if abs(mass - 1.0) > 1e-6:
        raise InvalidParameterError(f"initial density has mass {mass:.8f}, expected 1")
    return _evolve(model, p0, spec, perturbation, epsilon, save_times, density=True)


def evolve_signed(
    model: SdeModel,
    g0: GridField,
    spec: FpSolveSpec,
    save_times: Optional[Sequence[float]] = None,
) -> DensitySeries:
    """Linear evolution dg/dt = A* g of a signed field (no clamping)."""
    return _evolve(model, g0, spec, None, 0.0, save_times, density=False)


def stationary_residual(model: SdeModel, p: GridField) -> float:
    """||A* p||_1 / ||p||_1."""
    drift, rate = operator_coefficients(model, p.grid)
    image = adjoint_values(p.values, p.grid, drift, rate, model.alpha)
    return p.grid.integrate(np.abs(image)) / max(p.l1(), 1e-300)


def _bordered_solve(matrix: np.ndarray, rhs: np.ndarray, row: np.ndarray, total: float) -> np.ndarray:
    """Solve [[M, 1], [row, 0]] [u; lam] = [rhs; total]; the border replaces the null direction of M."""
    n = matrix.shape[0]
    bordered = np.zeros((n + 1, n + 1))
    bordered[:n, :n] = matrix
    bordered[:n, n] = 1.0
    bordered[n, :n] = row
    rhs_full = np.append(rhs, total)
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            solution = scipy.linalg.solve(bordered, rhs_full)
        except (scipy.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as e:
            raise SingularSystemError(f"constrained system is singular; null space of A* is not one-dimensional ({e})")
    return solution[:n]


def gaussian_start(grid: Grid1D) -> GridField:
    width = grid.half_width / 8.0
    values = np.exp(-0.5 * (grid.x / width) ** 2)
    return GridField(grid, values / grid.integrate(values), "density")


def solve_stationary(
    model: SdeModel,
    grid: Grid1D,
    spec: FpSolveSpec,
    max_boundary_mass: float = MAX_BOUNDARY_MASS,
    enforce_boundary: bool = True,
) -> GridField:
    """Stationary density by evolve-then-deflate.

    A broad Gaussian is evolved until the residual ||A* p||_1 stalls; the warm
    density p_w is then corrected by the mass-zero d solving A*(p_w + d) = 0
    through the bordered system, where the mass row replaces the null direction.
    A corrected density with more than NEGATIVE_MASS_LIMIT of its mass below zero
    is a sign-indefinite null vector and is rejected. The solve log (residual
    history, correction size, boundary mass, clamp statistics) is stored in
    ``meta["solve_log"]``.
    """
    logger.info(f"Stationary solve for {model.name} on [-{grid.half_width}, {grid.half_width}) "
                f"with {grid.n_points} points")
    stepper = _Stepper(model, grid, spec.dt, spec.method)
    p = gaussian_start(grid).values
    check_every = max(1, _step_count(1.0, spec.dt))
    history = [(0.0, stationary_residual(model, GridField(grid, p, "density")))]
    t = 0.0
    step = 0
    while t < spec.max_time:
        p = stepper.step(p, t)
        step += 1
        t = step * spec.dt
        if not np.all(np.isfinite(p)):
            raise StabilityError(f"non-finite values at step {step} of the warm-up evolution", step=step, time=t)
        if step % check_every and t < spec.max_time:
            continue
        p = np.maximum(p, 0.0)
        p /= grid.integrate(p)
        residual = stationary_residual(model, GridField(grid, p, "density"))
        history.append((t, residual))
        logger.debug(f"warm-up t={t:.2f} residual={residual:.3e}")
        if residual <= max(spec.stop_tol, 1e-4) or residual > 0.9 * history[-2][1]:
            break

    matrix = adjoint_matrix(model, grid)
    row = np.full(grid.n_points, grid.spacing)
    correction = _bordered_solve(matrix, -(matrix @ p), row, 0.0)
    solved = p + correction
    min_before_clamp = float(solved.min())
    negative_mass = grid.integrate(np.maximum(-solved, 0.0))
    if negative_mass > NEGATIVE_MASS_LIMIT:
        raise ConvergenceError(
            f"deflated solve is sign-indefinite: {negative_mass:.3e} of the mass is negative "
            f"(warm-up stopped at t={t:.3g} with residual {history[-1][1]:.3e})"
        )
    clamped = int(np.sum(solved < 0.0))
    solved = np.maximum(solved, 0.0)
    solved /= grid.integrate(solved)
    density = GridField(grid, solved, "density")

    residual = stationary_residual(model, density)
    boundary = density.boundary_mass()
    log: Dict[str, Any] = {
        "model": model.name,
        "method": spec.method,
        "dt": spec.dt,
        "warm_up_time": t,
        "residual_history": [{"t": ti, "residual": ri} for ti, ri in history],
        "correction_l1": grid.integrate(np.abs(correction)),
        "residual": residual,
        "boundary_mass": boundary,
        "max_boundary_mass": max_boundary_mass,
        "min_before_clamp": min_before_clamp,
        "negative_mass": negative_mass,
        "clamped_points": clamped,
        "mass": density.mass(),
    }
    density.meta["solve_log"] = log
    if clamped:
        logger.warning(f"stationary solve produced negative values (min {min_before_clamp:.3e}); clamped")
    logger.info(f"Stationary residual {residual:.3e}, correction {log['correction_l1']:.3e}, "
                f"boundary mass {boundary:.3e}")

    if residual > spec.stop_tol:
        raise ConvergenceError(f"stationary residual {residual:.3e} exceeds stop_tol {spec.stop_tol:.1e}")
    if enforce_boundary and boundary > max_boundary_mass:
        raise BoundaryMassError(
            f"boundary mass {boundary:.3e} in |x| >= {0.9 * grid.half_width:g} exceeds {max_boundary_mass:.1e}; "
            f"increase grid.half_width"
        )
    return density


def perturbation_source(p_ss: GridField, perturbation: Perturbation) -> GridField:
    """L* p_ss = -(K p_ss)'."""
    k_field = p_ss.grid.sample_periodic(perturbation.field_1d)
    return GridField(p_ss.grid, -spectral_derivative(k_field * p_ss.values, p_ss.grid), "generic")


def regauge(v: GridField, p_ss: GridField) -> GridField:
    """Project v onto the mass-zero gauge: v - (mass v / mass p_ss) p_ss."""
    return GridField(v.grid, v.values - v.mass() / p_ss.mass() * p_ss.values, v.kind)


def _floored(p_ss: GridField, floor_fraction: float):
    floor = floor_fraction * float(p_ss.values.max())
    mask = p_ss.values < floor
    return np.maximum(p_ss.values, floor), mask, floor


def solve_conjugate(
    model: SdeModel,
    p_ss: GridField,
    perturbation: Perturbation,
    compatibility_tol: float = 1e-8,
    residual_tol: float = 1e-6,
    floor_fraction: float = POSITIVITY_FLOOR,
) -> ConjugateSolution:
    """Mass-zero solution v of A* v = L* p_ss and the conjugate variable U = v / p_ss."""
    grid = p_ss.grid
    source = perturbation_source(p_ss, perturbation)
    compatibility = abs(source.mass())
    if compatibility > compatibility_tol:
        raise CompatibilityError(f"|mass(L* p_ss)| = {compatibility:.3e} exceeds {compatibility_tol:.1e}")

    matrix = adjoint_matrix(model, grid)
    v = _bordered_solve(matrix, source.values, np.full(grid.n_points, grid.spacing), 0.0)
    v_field = GridField(grid, v, "generic")

    image = matrix @ v
    scale = source.l1()
    residual = grid.integrate(np.abs(image - source.values)) / scale if scale > 0 else grid.integrate(np.abs(image))
    if residual > residual_tol:
        raise ConvergenceError(f"conjugate residual {residual:.3e} exceeds {residual_tol:.1e}")

    denominator, mask, floor = _floored(p_ss, floor_fraction)
    if mask.any():
        logger.info(f"conjugate variable: {int(mask.sum())} grid points use the positivity floor {floor:.3e}")
    logger.info(f"Conjugate solve residual {residual:.3e}")
    return ConjugateSolution(
        v=v_field,
        U=GridField(grid, v / denominator, "observable"),
        residual=float(residual),
        floored=mask,
        floor=floor,
    )


def agarwal_observable(
    p_ss: GridField,
    perturbation: Perturbation,
    floor_fraction: float = POSITIVITY_FLOOR,
    max_floored_share: float = MAX_FLOORED_SHARE,
) -> GridField:
    """Y = -(K p_ss)' / p_ss with the positivity floor on the denominator.

    Floored points are listed in ``meta["floored"]``. The floored points may carry
    at most ``max_floored_share`` of the stationary mass.
    """
    source = perturbation_source(p_ss, perturbation)
    denominator, mask, floor = _floored(p_ss, floor_fraction)
    y = source.values / denominator

    share = p_ss.grid.integrate(p_ss.values[mask]) / p_ss.mass()
    if share > max_floored_share:
        raise FloorDominatedError(
            f"{share:.1%} of the stationary mass sits on floored points (limit {max_floored_share:.0%})"
        )
    weighted = abs(p_ss.grid.integrate(y * denominator))
    if weighted > 1e-8 * max(source.l1(), 1.0):
        raise CompatibilityError(f"Agarwal observable has nonzero stationary mean {weighted:.3e}")
    field_y = GridField(p_ss.grid, y, "observable")
    field_y.meta.update({"floored": mask, "floor": floor, "floored_share": share})
    return field_y
