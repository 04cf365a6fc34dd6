"""Response function R_O(t) computed four ways, and their cross-validation.

* direct: common-random-numbers finite differences in the perturbation
  amplitude, extrapolated to zero amplitude and differentiated in time
* agarwal: stationary correlation E[O(X_t) Y(X_0)]
* seifert: time derivative of E[O(X_t) U(X_0)]
* semigroup: quadrature of O against the evolved signed field L* p_ss

Every Monte Carlo estimate is assembled per trajectory, so its standard error
covers the differencing and extrapolation steps exactly.
"""
import math
import time
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import VERSION, ScenarioConfig, get_logger
from errors import InvalidParameterError, LevyFdtError, ReliabilityWarning
from fokker_planck import (
    FpSolveSpec,
    agarwal_observable,
    evolve_signed,
    perturbation_source,
    solve_conjugate,
    solve_stationary,
)
from model import Observable, Perturbation, SdeModel, StepProfile, build_model, build_observables, build_perturbation
from nonlocal_ops import Grid1D, GridField
from simulate import (
    IntegratorSpec,
    batch_means_stderr,
    run_coupled_ensemble,
    run_ensemble,
    sample_steady_state,
)
from stable import derive_seed

logger = get_logger("response")

METHODS = ("direct", "agarwal", "seifert", "semigroup")
MONTE_CARLO_METHODS = ("direct", "agarwal", "seifert")
REPORT_SCHEMA = 1


@dataclass
class ResponseCurve:
    times: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    method: str
    observable_name: str
    perturbation_name: str
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if self.method not in METHODS:
            raise InvalidParameterError(f"unknown response method {self.method!r}")
        if np.any(np.diff(self.times) <= 0):
            raise InvalidParameterError("response times must be strictly increasing")
        if np.any(self.stderr < 0):
            raise InvalidParameterError("response stderr must be nonnegative")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.times, "value": self.values, "stderr": self.stderr, "method": self.method})

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "observable": self.observable_name,
            "perturbation": self.perturbation_name,
            "t": self.times.tolist(),
            "value": self.values.tolist(),
            "stderr": self.stderr.tolist(),
        }


# ----------------------------------------------------------------------------
# Time differentiation
# ----------------------------------------------------------------------------


def smoothed_derivative(values: np.ndarray, dt: float, window: int = 5) -> np.ndarray:
    """d/dt along axis 0 by local quadratic least squares over `window` points.

    Interior points use the centered stencil sum_j j (y[i+j] - y[i-j]) / (dt sum_{|j|<=m} j^2);
    the first and last m points fit y[k] - y[i] over the first or last `window`
    samples. Both forms act on differences, so constants map to exactly 0.
    """
    if window < 3 or window % 2 == 0:
        raise InvalidParameterError(f"smoothing window must be odd and >= 3, got {window}")
    y = np.asarray(values, dtype=float)
    n = y.shape[0]
    if n < window:
        raise InvalidParameterError(f"need at least {window} samples to differentiate, got {n}")
    m = window // 2
    out = np.zeros_like(y)
    norm = dt * 2.0 * sum(j * j for j in range(1, m + 1))
    for j in range(1, m + 1):
        out[m: n - m] += j * (y[m + j: n - m + j] - y[m - j: n - m - j])
    out[m: n - m] /= norm

    edges = [(i, range(0, window)) for i in range(m)] + [(i, range(n - window, n)) for i in range(n - m, n)]
    for i, support in edges:
        offsets = np.array([k - i for k in support if k != i], dtype=float)
        design = np.column_stack([offsets * dt, (offsets * dt) ** 2])
        weights = np.linalg.pinv(design)[0]
        acc = np.zeros_like(y[0])
        for w, k in zip(weights, (k for k in support if k != i)):
            acc = acc + w * (y[k] - y[i])
        out[i] = acc
    return out


def _mean_and_stderr(per_trajectory: np.ndarray, n_batches: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Mean over axis 1 of a (T, N) array; stderr from the sample variance or from batch means."""
    mean = per_trajectory.mean(axis=1)
    if n_batches is None:
        stderr = per_trajectory.std(axis=1, ddof=1) / math.sqrt(per_trajectory.shape[1])
    else:
        stderr = batch_means_stderr(per_trajectory.T, n_batches)
    return mean, stderr


def _stationary_initial(model: SdeModel, n_traj: int, master_seed: int, spec: IntegratorSpec,
                        burn_in: float, thinning: float, n_chains: int, threads: Optional[int]) -> np.ndarray:
    sample = sample_steady_state(model, burn_in, n_traj, thinning, master_seed, n_chains=n_chains, dt=spec.dt,
                                 wrap_half_width=spec.wrap_half_width, threads=threads)
    return sample.states


def extrapolation_weights(epsilons: Sequence[float]) -> np.ndarray:
    """Lagrange weights evaluating the interpolant through (eps_i, f_i) at eps = 0."""
    eps = np.asarray(epsilons, dtype=float)
    weights = np.ones(eps.size)
    for i in range(eps.size):
        for j in range(eps.size):
            if i != j:
                weights[i] *= eps[j] / (eps[j] - eps[i])
    return weights


# ----------------------------------------------------------------------------
# Direct route
# ----------------------------------------------------------------------------


@dataclass
class LinearityReport:
    epsilons: List[float]
    times: np.ndarray
    residuals: np.ndarray  # (n_eps - 1, T): D_a - (eps_a / eps_b) D_b for consecutive amplitudes
    orders: Optional[np.ndarray]
    median_order: Optional[float]
    monotone: bool
    window: Tuple[float, float]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epsilons": list(self.epsilons),
            "t": self.times.tolist(),
            "residuals": self.residuals.tolist(),
            "orders": None if self.orders is None else [None if not np.isfinite(o) else float(o) for o in self.orders],
            "median_order": self.median_order,
            "monotone": self.monotone,
            "order_window": list(self.window),
        }


def linearity_report(times: np.ndarray, epsilons: Sequence[float], raw: np.ndarray,
                     order_window: Tuple[float, float] = (0.0, 3.0)) -> LinearityReport:
    """Residual of the first-order expansion and its empirical order in the amplitude.

    raw[e] is the unnormalized mean response E O(X^{eps_e}_t) - E O(X^0_t). For
    consecutive amplitudes a > b the residual D_a - (a/b) D_b cancels the linear
    term; with three or more amplitudes the order log(|rho_a| / |rho_b|) / log(a / b)
    is reported pointwise.
    """
    eps = list(epsilons)
    residuals = np.array([raw[i] - eps[i] / eps[i + 1] * raw[i + 1] for i in range(len(eps) - 1)])
    orders = None
    median_order = None
    monotone = True
    if len(eps) >= 3:
        with np.errstate(divide="ignore", invalid="ignore"):
            orders = np.log(np.abs(residuals[0]) / np.abs(residuals[1])) / math.log(eps[0] / eps[1])
        inside = (times > order_window[0]) & (times <= order_window[1]) & np.isfinite(orders)
        if inside.any():
            median_order = float(np.median(orders[inside]))
        magnitude = np.array([np.median(np.abs(r[times > 0])) for r in residuals])
        monotone = bool(np.all(np.diff(magnitude) < 0))
        if not monotone:
            message = "amplitude residuals do not shrink with the amplitude; noise dominates the nonlinearity"
            logger.warning(message)
            warnings.warn(message, ReliabilityWarning)
    return LinearityReport(eps, times, residuals, orders, median_order, monotone, tuple(order_window))


def response_direct(
    model: SdeModel,
    perturbation: Perturbation,
    observable: Observable,
    epsilons: Sequence[float],
    n_traj: int,
    spec: IntegratorSpec,
    master_seed: int,
    initial: Optional[np.ndarray] = None,
    window: int = 5,
    burn_in: float = 20.0,
    thinning: float = 1.0,
    n_chains: int = 1000,
    threads: Optional[int] = None,
) -> Tuple[ResponseCurve, LinearityReport]:
    """R(t) from step-perturbed ensembles under common random numbers.

    For each amplitude the per-trajectory difference quotient
    (O(X^eps_t) - O(X^0_t)) / eps is extrapolated to eps = 0 and differentiated in t.
    """
    eps = [float(e) for e in epsilons]
    if not eps or any(e <= 0 for e in eps) or any(a <= b for a, b in zip(eps, eps[1:])):
        raise InvalidParameterError(f"epsilons must be positive and strictly decreasing, got {eps}")
    step = perturbation.with_profile(StepProfile())
    if initial is None:
        initial = _stationary_initial(model, n_traj, derive_seed(master_seed, "direct/initial"), spec,
                                      burn_in, thinning, n_chains, threads)
    coupled = run_coupled_ensemble(model, initial, spec, [observable], n_traj, master_seed, step, eps,
                                   threads=threads)
    obs = coupled.samples[..., 0]  # (1 + n_eps, T, N)
    raw = obs[1:] - obs[0][None]
    quotients = raw / np.asarray(eps)[:, None, None]
    extrapolated = np.tensordot(extrapolation_weights(eps), quotients, axes=1)

    dt_sample = float(spec.save_stride * spec.dt)
    per_trajectory = smoothed_derivative(extrapolated, dt_sample, window)
    mean, stderr = _mean_and_stderr(per_trajectory)
    report = linearity_report(coupled.times, eps, raw.mean(axis=2))
    curve = ResponseCurve(
        coupled.times, mean, stderr, "direct", observable.name, perturbation.name,
        meta={"epsilons": eps, "window": window, "n_traj": int(obs.shape[2]), "n_flagged": coupled.n_flagged,
              "integrated_response": extrapolated.mean(axis=1).tolist(), "warnings": coupled.warnings},
    )
    return curve, report


# ----------------------------------------------------------------------------
# Correlation routes
# ----------------------------------------------------------------------------


def _correlation_samples(model, weight: GridField, observable, n_traj, spec, master_seed, initial, threads,
                         centered: bool = False):
    """Per-trajectory O(X_t) w(X_0); centered subtracts the ensemble mean of w(X_0)."""
    result = run_ensemble(model, initial, spec, [observable], n_traj, master_seed, threads=threads,
                          keep_samples=True)
    w0 = weight.at(result.initial_states[:, 0])
    on_grid = np.isfinite(w0)
    off_grid = int((~on_grid).sum())
    if off_grid:
        logger.warning(f"{off_grid} initial states lie outside the grid and are excluded")
    w0 = w0[on_grid]
    if centered:
        w0 = w0 - w0.mean()
    products = result.samples[:, on_grid, 0] * w0[None, :]
    return result.times, products, off_grid, result


def response_agarwal(
    model: SdeModel,
    y: GridField,
    observable: Observable,
    n_traj: int,
    spec: IntegratorSpec,
    master_seed: int,
    initial: Optional[np.ndarray] = None,
    n_batches: int = 20,
    perturbation_name: str = "",
    burn_in: float = 20.0,
    thinning: float = 1.0,
    n_chains: int = 1000,
    threads: Optional[int] = None,
) -> ResponseCurve:
    """R(t) = E[O(X_t) Y(X_0)] over a stationary ensemble."""
    if initial is None:
        initial = _stationary_initial(model, n_traj, derive_seed(master_seed, "agarwal/initial"), spec,
                                      burn_in, thinning, n_chains, threads)
    times, products, off_grid, result = _correlation_samples(model, y, observable, n_traj, spec, master_seed,
                                                             initial, threads)
    mean, stderr = _mean_and_stderr(products, n_batches)
    return ResponseCurve(times, mean, stderr, "agarwal", observable.name, perturbation_name,
                         meta={"off_grid": off_grid, "n_traj": int(products.shape[1]), "warnings": result.warnings})


def response_seifert(
    model: SdeModel,
    u: GridField,
    observable: Observable,
    n_traj: int,
    spec: IntegratorSpec,
    master_seed: int,
    initial: Optional[np.ndarray] = None,
    window: int = 5,
    n_batches: int = 20,
    perturbation_name: str = "",
    burn_in: float = 20.0,
    thinning: float = 1.0,
    n_chains: int = 1000,
    threads: Optional[int] = None,
) -> ResponseCurve:
    """R(t) = d/dt E[O(X_t) U(X_0)], differentiated per trajectory.

    U(X_0) is centered on its ensemble mean, so U and U + c give the same curve.
    """
    if initial is None:
        initial = _stationary_initial(model, n_traj, derive_seed(master_seed, "seifert/initial"), spec,
                                      burn_in, thinning, n_chains, threads)
    times, products, off_grid, result = _correlation_samples(model, u, observable, n_traj, spec, master_seed,
                                                             initial, threads, centered=True)
    per_trajectory = smoothed_derivative(products, float(spec.save_stride * spec.dt), window)
    mean, stderr = _mean_and_stderr(per_trajectory, n_batches)
    return ResponseCurve(times, mean, stderr, "seifert", observable.name, perturbation_name,
                         meta={"off_grid": off_grid, "window": window, "n_traj": int(products.shape[1]),
                               "correlation": products.mean(axis=1).tolist(), "warnings": result.warnings})


# ----------------------------------------------------------------------------
# Semigroup route
# ----------------------------------------------------------------------------


def response_semigroup(
    model: SdeModel,
    p_ss: GridField,
    perturbation: Perturbation,
    observable: Observable,
    times: np.ndarray,
    spec: FpSolveSpec,
) -> ResponseCurve:
    """R(t) = int O(x) [e^{t A*} L* p_ss](x) dx; the error estimate compares steps dt and dt/2."""
    times = np.asarray(times, dtype=float)
    g0 = perturbation_source(p_ss, perturbation)
    o_grid = observable(p_ss.x)

    def run(dt):
        fine = FpSolveSpec(dt=dt, t_end=float(times[-1]), method=spec.method, stop_tol=spec.stop_tol,
                           max_time=spec.max_time)
        series = evolve_signed(model, g0, fine, save_times=times)
        values = np.array([p_ss.grid.inner(o_grid, f.values) for f in series.fields])
        masses = np.array([f.mass() for f in series.fields])
        return values, masses

    values, masses = run(spec.dt)
    refined, _ = run(spec.dt / 2.0)
    return ResponseCurve(times, values, np.abs(values - refined), "semigroup", observable.name, perturbation.name,
                         meta={"max_abs_mass": float(np.max(np.abs(masses))), "dt": spec.dt})


# ----------------------------------------------------------------------------
# Linear-response prediction for other time profiles
# ----------------------------------------------------------------------------


@dataclass
class PredictionCheck:
    times: np.ndarray
    predicted: np.ndarray
    simulated: np.ndarray
    stderr: np.ndarray
    sup_diff: float
    passes: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t": self.times.tolist(),
            "predicted": self.predicted.tolist(),
            "simulated": self.simulated.tolist(),
            "stderr": self.stderr.tolist(),
            "sup_diff": self.sup_diff,
            "pass": self.passes,
        }


def predict_response(curve: ResponseCurve, profile, times: Optional[np.ndarray] = None) -> np.ndarray:
    """First-order change of E O(X_t) per unit amplitude under F: int_0^t R(t - s) F(s) ds.

    R is interpolated on a fine uniform grid and the convolution uses the trapezoidal rule.
    """
    times = curve.times if times is None else np.asarray(times, dtype=float)
    span = float(curve.times[-1])
    n_fine = max(2001, 40 * len(curve.times))
    fine = np.linspace(0.0, span, n_fine)
    r_fine = np.interp(fine, curve.times, curve.values)
    f_fine = np.asarray(profile(fine), dtype=float) * np.ones_like(fine)
    ds = fine[1] - fine[0]
    out = np.empty(times.size)
    for i, t in enumerate(times):
        k = int(round(t / ds))
        if k == 0:
            out[i] = 0.0
            continue
        integrand = r_fine[k::-1] * f_fine[: k + 1]
        out[i] = ds * (integrand.sum() - 0.5 * (integrand[0] + integrand[-1]))
    return out


def check_prediction(
    model: SdeModel,
    perturbation: Perturbation,
    observable: Observable,
    curve: ResponseCurve,
    epsilon: float,
    n_traj: int,
    spec: IntegratorSpec,
    master_seed: int,
    initial: Optional[np.ndarray] = None,
    sigma: float = 3.0,
    abs_tol: float = 2e-2,
    threads: Optional[int] = None,
) -> PredictionCheck:
    """Compare predict_response with a common-random-numbers simulation under the perturbation's own profile."""
    if initial is None:
        initial = _stationary_initial(model, n_traj, derive_seed(master_seed, "prediction/initial"), spec,
                                      20.0, 1.0, 1000, threads)
    coupled = run_coupled_ensemble(model, initial, spec, [observable], n_traj, master_seed, perturbation,
                                   [epsilon], threads=threads)
    quotient = (coupled.samples[1, :, :, 0] - coupled.samples[0, :, :, 0]) / epsilon
    simulated, stderr = _mean_and_stderr(quotient)
    predicted = predict_response(curve, perturbation.time_profile, coupled.times)
    diff = np.abs(predicted - simulated)
    tol = np.maximum(sigma * np.hypot(stderr, np.interp(coupled.times, curve.times, curve.stderr)), abs_tol)
    return PredictionCheck(coupled.times, predicted, simulated, stderr, float(diff.max()), bool(np.all(diff <= tol)))


# ----------------------------------------------------------------------------
# Four-way verification
# ----------------------------------------------------------------------------


@dataclass
class PairwiseCheck:
    a: str
    b: str
    sup_diff: float
    tol: float
    passes: bool
    t_from: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {"a": self.a, "b": self.b, "t_from": self.t_from, "sup_diff": self.sup_diff, "tol": self.tol,
                "pass": self.passes}


def compare_curves(a: ResponseCurve, b: ResponseCurve, sigma: float, abs_floor: float = 0.0,
                   t_from: float = 0.0) -> PairwiseCheck:
    """Pointwise |a - b| <= max(sigma * combined stderr, abs_floor) for t >= t_from.

    The reported tol is the allowance at the point where |a - b| uses most of it.
    """
    if a.times.shape != b.times.shape or not np.allclose(a.times, b.times):
        raise InvalidParameterError(f"curves {a.method} and {b.method} are on different time grids")
    mask = a.times >= t_from - 1e-12
    diff = np.abs(a.values - b.values)[mask]
    tol = np.maximum(sigma * np.hypot(a.stderr, b.stderr)[mask], abs_floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        usage = np.where(tol > 0, diff / tol, np.where(diff > 0, np.inf, 0.0))
    worst = int(np.argmax(usage))
    return PairwiseCheck(a.method, b.method, float(diff.max()), float(tol[worst]), bool(np.all(diff <= tol)), t_from)


def _pair_rule(a: str, b: str, config: ScenarioConfig) -> float:
    """Absolute floor of the tolerance for a method pair."""
    tolerances = config.tolerances
    if "semigroup" not in (a, b):
        return 0.0
    if "direct" in (a, b):
        return tolerances.direct_pde_abs
    return tolerances.mc_pde_abs


def _pair_start(a: str, b: str, config: ScenarioConfig) -> float:
    """First compared time: the finite-difference routes are cut off before compare_from."""
    if {"direct", "seifert"} & {a, b}:
        return config.response.compare_from
    return 0.0


@dataclass
class VerificationReport:
    data: Dict[str, Any]
    curves: Dict[str, ResponseCurve]

    @property
    def passed(self) -> bool:
        return bool(self.data["passed"])

    def to_dict(self) -> Dict[str, Any]:
        return self.data


def verify_fdt(
    model: SdeModel,
    perturbation: Perturbation,
    observable: Observable,
    config: ScenarioConfig,
    methods: Sequence[str] = METHODS,
    corrupt_agarwal: bool = False,
    threads: Optional[int] = None,
) -> VerificationReport:
    """Run the requested estimators on one scenario and check every pair of curves.

    ``corrupt_agarwal`` flips the sign of Y, a negative control that must fail.
    """
    started = time.perf_counter()
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise InvalidParameterError(f"unknown methods {unknown}; valid: {list(METHODS)}")
    threads = config.ensemble.threads if threads is None else threads
    master = config.ensemble.master_seed
    seeds = {m: derive_seed(master, m) for m in METHODS}
    report_warnings: List[str] = []
    failures: Dict[str, str] = {}
    curves: Dict[str, ResponseCurve] = {}

    if not observable.within_hypotheses:
        report_warnings.append(f"observable {observable.name} is outside the L^p class assumed by the theorems")
    if perturbation.outside_hypotheses:
        report_warnings.append("constant K violates the decay condition |x| K(x) bounded")
    for message in report_warnings:
        logger.warning(message)

    grid = Grid1D.from_section(config.grid)
    periodic = config.grid.periodic_dynamics
    wrap = grid.half_width if periodic else None
    solver = FpSolveSpec.from_section(config.solver, t_end=config.response.t_max)
    mc_spec = IntegratorSpec.sampled_every(config.integrator.dt, config.response.t_max, config.response.dt_sample,
                                           wrap_half_width=wrap)
    n_traj = config.ensemble.n_traj
    window = config.response.smoothing_window
    tolerances = config.tolerances
    initial_kw = dict(burn_in=config.integrator.burn_in, thinning=config.integrator.thinning,
                      n_chains=config.integrator.n_chains, threads=threads)

    solve_log: Dict[str, Any] = {}
    linearity: Optional[LinearityReport] = None
    try:
        p_ss = solve_stationary(model, grid, solver, tolerances.max_boundary_mass)
        solve_log = p_ss.meta.get("solve_log", {})
        y_field = agarwal_observable(p_ss, perturbation) if "agarwal" in methods else None
        conjugate = solve_conjugate(model, p_ss, perturbation, tolerances.compatibility,
                                    tolerances.conjugate_residual) if "seifert" in methods else None
    except LevyFdtError as e:
        failures["prerequisites"] = f"{type(e).__name__}: {e}"
        logger.error(f"prerequisite solve failed: {e}")
        methods = []

    if corrupt_agarwal and "agarwal" in methods:
        y_field = y_field.with_values(-y_field.values)
        report_warnings.append("negative control: Agarwal observable sign-flipped")

    for method in methods:
        logger.info(f"Response method {method}")
        try:
            if method == "semigroup":
                curves[method] = response_semigroup(model, p_ss, perturbation, observable, mc_spec.times, solver)
            elif method == "direct":
                curves[method], linearity = response_direct(
                    model, perturbation, observable, config.perturbation.epsilons, n_traj, mc_spec, seeds[method],
                    window=window, **initial_kw)
            elif method == "agarwal":
                curves[method] = response_agarwal(
                    model, y_field, observable, n_traj, mc_spec, seeds[method], n_batches=config.response.n_batches,
                    perturbation_name=perturbation.name, **initial_kw)
            elif method == "seifert":
                curves[method] = response_seifert(
                    model, conjugate.U, observable, n_traj, mc_spec, seeds[method], window=window,
                    n_batches=config.response.n_batches, perturbation_name=perturbation.name, **initial_kw)
            report_warnings.extend(curves[method].meta.get("warnings", []))
        except LevyFdtError as e:
            failures[method] = f"{type(e).__name__}: {e}"
            logger.error(f"method {method} failed: {e}")

    checks: List[PairwiseCheck] = []
    for a, b in combinations([m for m in METHODS if m in curves], 2):
        checks.append(compare_curves(curves[a], curves[b], tolerances.mc_sigma, _pair_rule(a, b, config),
                                     _pair_start(a, b, config)))

    prediction = None
    if config.perturbation.profile == "impulse" and "semigroup" in curves and not failures:
        eps = config.perturbation.epsilons[-1]
        try:
            prediction = check_prediction(model, perturbation, observable, curves["semigroup"], eps, n_traj, mc_spec,
                                          derive_seed(master, "prediction"), sigma=tolerances.mc_sigma,
                                          abs_tol=tolerances.mc_pde_abs, threads=threads)
        except LevyFdtError as e:
            failures["prediction"] = f"{type(e).__name__}: {e}"

    passed = not failures and all(c.passes for c in checks) and (prediction is None or prediction.passes)
    data = {
        "schema": REPORT_SCHEMA,
        "version": VERSION,
        "scenario": {
            "model": model.name,
            "observable": observable.name,
            "perturbation": perturbation.name,
            "config": config.model_dump(mode="json"),
            "config_sha256": config.config_hash(),
        },
        "seeds": {"master": master, **{m: seeds[m] for m in METHODS}},
        "curves": {m: c.to_dict() for m, c in curves.items()},
        "pairwise_checks": [c.to_dict() for c in checks],
        "linearity": None if linearity is None else linearity.to_dict(),
        "prediction": None if prediction is None else prediction.to_dict(),
        "stationary_solve": solve_log,
        "failures": failures,
        "warnings": report_warnings,
        "runtime_seconds": time.perf_counter() - started,
        "passed": passed,
    }
    logger.info(f"Verification {'passed' if passed else 'FAILED'} ({len(checks)} pairwise checks)")
    return VerificationReport(data, curves)


def verify_scenario(config: ScenarioConfig, corrupt_agarwal: bool = False) -> VerificationReport:
    """verify_fdt on the model, perturbation and first observable named in the config."""
    model = build_model(config.model)
    perturbation = build_perturbation(config.perturbation)
    observable = build_observables(config.observables)[0]
    return verify_fdt(model, perturbation, observable, config, corrupt_agarwal=corrupt_agarwal)
