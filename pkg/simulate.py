"""Euler integration of the (perturbed) SDE with exact stable increments, ensembles and steady-state sampling.

Trajectory i of an ensemble draws its noise from stream (master_seed, i, channel).
Ensembles are cut into fixed-size blocks of trajectories; blocks run in a
process pool when more than one worker is requested, and are reassembled in
trajectory order, so results do not depend on the worker count.
"""
import math
import warnings
from dataclasses import dataclass, field
from multiprocessing import Pool
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from config import Config, get_logger
from errors import EnsembleDivergenceError, InvalidParameterError, ReliabilityWarning
from model import Observable, Perturbation, SdeModel
from stable import make_stream, stable_from_uniforms, to_open_interval

logger = get_logger("simulate")

ENSEMBLE_CHANNEL = 0
STEADY_STATE_CHANNEL = 1
FLAGGED_WARN = 0.01
FLAGGED_FAIL = 0.10

# time steps of uniforms drawn per trajectory at once
_CHUNK_STEPS = 256


@dataclass(frozen=True)
class IntegratorSpec:
    dt: float
    t_max: float
    save_stride: int = 1
    scheme: str = "euler-exact-stable"
    # states are folded onto [-w, w) after every step when set
    wrap_half_width: Optional[float] = None

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidParameterError(f"dt must be positive, got {self.dt}")
        if not self.t_max >= self.dt * (1.0 - 1e-9):
            raise InvalidParameterError(f"t_max ({self.t_max}) must be at least dt ({self.dt})")
        if int(self.save_stride) != self.save_stride or self.save_stride < 1:
            raise InvalidParameterError(f"save_stride must be a positive integer, got {self.save_stride}")
        if self.scheme != "euler-exact-stable":
            raise InvalidParameterError(f"unknown scheme {self.scheme!r}")
        if self.wrap_half_width is not None and not self.wrap_half_width > 0:
            raise InvalidParameterError("wrap_half_width must be positive")

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.t_max / self.dt + 1e-9))

    @property
    def n_saved(self) -> int:
        return self.n_steps // self.save_stride + 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_saved) * self.save_stride * self.dt

    @classmethod
    def sampled_every(cls, dt: float, t_max: float, dt_sample: float, wrap_half_width: Optional[float] = None):
        """Spec recording every dt_sample time units (rounded to whole steps)."""
        stride = max(1, int(round(dt_sample / dt)))
        return cls(dt=dt, t_max=t_max, save_stride=stride, wrap_half_width=wrap_half_width)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_saved, dim)
    flagged: bool = False

    def to_frame(self, path_index: int = 0) -> pd.DataFrame:
        frame = pd.DataFrame({"path": path_index, "t": self.times})
        columns = ["x"] if self.states.shape[1] == 1 else [f"x{k + 1}" for k in range(self.states.shape[1])]
        for k, name in enumerate(columns):
            frame[name] = self.states[:, k]
        return frame


@dataclass
class EnsembleResult:
    times: np.ndarray
    observable_names: List[str]
    observable_mean: np.ndarray  # (n_saved, n_obs)
    stderr: np.ndarray
    n_traj: int
    n_flagged: int
    seed: int
    model_name: str
    warnings: List[str] = field(default_factory=list)
    samples: Optional[np.ndarray] = None  # (n_saved, n_traj, n_obs)
    initial_states: Optional[np.ndarray] = None  # (n_traj, dim)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"t": self.times})
        for q, name in enumerate(self.observable_names):
            frame[f"O_{name}_mean"] = self.observable_mean[:, q]
        for q, name in enumerate(self.observable_names):
            frame[f"O_{name}_stderr"] = self.stderr[:, q]
        return frame


@dataclass
class CoupledEnsemble:
    """Per-trajectory observable samples of several perturbation amplitudes driven by common noise."""

    times: np.ndarray
    epsilons: np.ndarray  # amplitude of each variant; 0.0 is the unperturbed baseline
    samples: np.ndarray  # (n_variants, n_saved, n_traj, n_obs)
    initial_states: np.ndarray
    n_flagged: int
    warnings: List[str] = field(default_factory=list)


@dataclass
class SteadyStateSample:
    states: np.ndarray  # (n_samples, dim)
    n_chains: int
    burn_in: float
    thinning: float
    n_flagged: int


@dataclass(frozen=True)
class _BlockTask:
    model: SdeModel
    spec: IntegratorSpec
    perturbation: Optional[Perturbation]
    epsilons: Tuple[float, ...]
    observables: Tuple[Observable, ...]
    initial: np.ndarray
    start: int
    master_seed: int
    channel: int
    keep_states: bool


def _run_block(task: _BlockTask):
    """Advance one block of trajectories; every variant consumes the same increments."""
    model, spec = task.model, task.spec
    m, n = task.initial.shape
    variants = len(task.epsilons)
    streams = [make_stream(task.master_seed, task.start + i, task.channel) for i in range(m)]
    width = model.stable.uniforms_per_sample
    scale = spec.dt ** (1.0 / model.alpha)
    eps_col = np.repeat(np.asarray(task.epsilons, dtype=float), m)[:, None]
    forced = task.perturbation is not None and any(e != 0.0 for e in task.epsilons)
    isotropic = getattr(model.diffusion, "isotropic", False)
    wrap = spec.wrap_half_width

    x = np.repeat(task.initial[None, :, :], variants, axis=0).reshape(variants * m, n)
    values = np.empty((variants, spec.n_saved, m, len(task.observables)))
    states = np.empty((spec.n_saved, m, n)) if task.keep_states else None
    flagged = np.zeros(m, dtype=bool)

    def record(j):
        for q, obs in enumerate(task.observables):
            values[:, j, :, q] = obs(x).reshape(variants, m)
        if states is not None:
            states[j] = x[:m]

    record(0)
    step = 0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        while step < spec.n_steps:
            chunk = min(_CHUNK_STEPS, spec.n_steps - step)
            u = np.stack([s.random((chunk, width)) for s in streams], axis=1)
            jumps = scale * stable_from_uniforms(to_open_interval(u), model.stable)
            for c in range(chunk):
                velocity = model.drift(x)
                if forced:
                    velocity = velocity + eps_col * task.perturbation.force(step * spec.dt, x)
                increment = np.tile(jumps[c], (variants, 1))
                if isotropic:
                    noise = model.diffusion.scalar(x)[:, None] * increment
                else:
                    noise = np.einsum("mij,mj->mi", model.diffusion(x), increment)
                x = x + velocity * spec.dt + noise
                if wrap is not None:
                    x = np.mod(x + wrap, 2.0 * wrap) - wrap
                bad = ~np.all(np.isfinite(x.reshape(variants, m, n)), axis=(0, 2))
                if bad.any():
                    flagged |= bad
                    x.reshape(variants, m, n)[:, bad] = 0.0
                step += 1
                if step % spec.save_stride == 0:
                    record(step // spec.save_stride)
    return values, states, flagged


def _run_blocks(tasks: List[_BlockTask], threads: int):
    if threads > 1 and len(tasks) > 1:
        with Pool(processes=min(threads, len(tasks))) as pool:
            return pool.map(_run_block, tasks)
    return [_run_block(task) for task in tasks]


def _resolve_initial(initial, n_traj: int, dim: int) -> np.ndarray:
    """(n_traj, dim) initial states from a point or from a state sample."""
    arr = np.asarray(initial, dtype=float)
    if arr.ndim == 0 or (arr.ndim == 1 and arr.size == dim and (dim > 1 or n_traj > 1)):
        return np.broadcast_to(arr.reshape(1, dim), (n_traj, dim)).copy()
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[1] != dim:
        raise InvalidParameterError(f"initial states have dimension {arr.shape[1]}, model has {dim}")
    if arr.shape[0] < n_traj:
        raise InvalidParameterError(f"{arr.shape[0]} initial states supplied for {n_traj} trajectories")
    return np.ascontiguousarray(arr[:n_traj])


def _simulate(
    model: SdeModel,
    initial: np.ndarray,
    spec: IntegratorSpec,
    observables: Sequence[Observable],
    master_seed: int,
    perturbation: Optional[Perturbation] = None,
    epsilons: Sequence[float] = (0.0,),
    channel: int = ENSEMBLE_CHANNEL,
    threads: Optional[int] = None,
    keep_states: bool = False,
    block_size: Optional[int] = None,
):
    threads = Config.THREADS if threads is None else int(threads)
    block_size = Config.BLOCK_SIZE if block_size is None else int(block_size)
    tasks = [
        _BlockTask(
            model=model,
            spec=spec,
            perturbation=perturbation,
            epsilons=tuple(float(e) for e in epsilons),
            observables=tuple(observables),
            initial=initial[start: start + block_size],
            start=start,
            master_seed=int(master_seed),
            channel=channel,
            keep_states=keep_states,
        )
        for start in range(0, initial.shape[0], block_size)
    ]
    outcomes = _run_blocks(tasks, threads)
    values = np.concatenate([o[0] for o in outcomes], axis=2)
    states = np.concatenate([o[1] for o in outcomes], axis=1) if keep_states else None
    flagged = np.concatenate([o[2] for o in outcomes])
    return values, states, flagged


def _flag_policy(n_flagged: int, n_total: int, warn_at: float, fail_at: float, context: str) -> List[str]:
    fraction = n_flagged / n_total
    if fraction > fail_at:
        raise EnsembleDivergenceError(
            f"{context}: {n_flagged} of {n_total} trajectories diverged ({fraction:.1%} > {fail_at:.0%})"
        )
    if fraction > warn_at:
        message = f"{context}: {n_flagged} of {n_total} trajectories diverged ({fraction:.2%}); excluded"
        logger.warning(message)
        warnings.warn(message, ReliabilityWarning)
        return [message]
    if n_flagged:
        logger.info(f"{context}: {n_flagged} diverged trajectories excluded")
    return []


def integrate_path(
    model: SdeModel,
    x0,
    spec: IntegratorSpec,
    stream: np.random.Generator,
    perturbation: Optional[Perturbation] = None,
    epsilon: float = 0.0,
) -> Trajectory:
    """Single Euler path; a non-finite state ends the path and flags it."""
    x = np.asarray(x0, dtype=float).reshape(1, model.dim)
    width = model.stable.uniforms_per_sample
    scale = spec.dt ** (1.0 / model.alpha)
    states = np.full((spec.n_saved, model.dim), np.nan)
    states[0] = x[0]
    forced = perturbation is not None and epsilon != 0.0
    step = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while step < spec.n_steps:
            chunk = min(_CHUNK_STEPS, spec.n_steps - step)
            jumps = scale * stable_from_uniforms(to_open_interval(stream.random((chunk, width))), model.stable)
            for c in range(chunk):
                velocity = model.drift(x)
                if forced:
                    velocity = velocity + epsilon * perturbation.force(step * spec.dt, x)
                sigma = model.diffusion(x)[0]
                x = x + velocity * spec.dt + (sigma @ jumps[c])[None, :]
                if spec.wrap_half_width is not None:
                    x = np.mod(x + spec.wrap_half_width, 2.0 * spec.wrap_half_width) - spec.wrap_half_width
                step += 1
                if not np.all(np.isfinite(x)):
                    logger.warning(f"path left the finite range at step {step}; trajectory flagged")
                    return Trajectory(spec.times, states, flagged=True)
                if step % spec.save_stride == 0:
                    states[step // spec.save_stride] = x[0]
    return Trajectory(spec.times, states)


def sample_paths(model: SdeModel, initial, spec: IntegratorSpec, n_paths: int, master_seed: int) -> List[Trajectory]:
    """Full state paths of the first n_paths trajectories of the ensemble with the same seed."""
    if n_paths < 1:
        raise InvalidParameterError(f"n_paths must be positive, got {n_paths}")
    start = _resolve_initial(initial, n_paths, model.dim)
    logger.info(f"Recording {n_paths} paths of {model.name} to t={spec.t_max}")
    return [integrate_path(model, start[i], spec, make_stream(master_seed, i, ENSEMBLE_CHANNEL))
            for i in range(n_paths)]


def run_ensemble(
    model: SdeModel,
    initial,
    spec: IntegratorSpec,
    observables: Sequence[Observable],
    n_traj: int,
    master_seed: int,
    perturbation: Optional[Perturbation] = None,
    epsilon: float = 1.0,
    threads: Optional[int] = None,
    keep_samples: bool = False,
    flagged_warn: float = FLAGGED_WARN,
    flagged_fail: float = FLAGGED_FAIL,
) -> EnsembleResult:
    """Per-time mean and standard error of each observable over non-diverged trajectories."""
    if n_traj < 2:
        raise InvalidParameterError(f"an ensemble needs at least two trajectories, got {n_traj}")
    start = _resolve_initial(initial, n_traj, model.dim)
    epsilons = (epsilon if perturbation is not None else 0.0,)
    logger.info(f"Running {n_traj} trajectories of {model.name} to t={spec.t_max} (dt={spec.dt})")
    values, _, flagged = _simulate(model, start, spec, observables, master_seed, perturbation, epsilons,
                                   threads=threads)
    messages = _flag_policy(int(flagged.sum()), n_traj, flagged_warn, flagged_fail, "ensemble")

    kept = values[0][:, ~flagged, :]
    n_kept = kept.shape[1]
    mean = kept.mean(axis=1)
    stderr = kept.std(axis=1, ddof=1) / math.sqrt(n_kept)
    return EnsembleResult(
        times=spec.times,
        observable_names=[o.name for o in observables],
        observable_mean=mean,
        stderr=stderr,
        n_traj=n_kept,
        n_flagged=int(flagged.sum()),
        seed=int(master_seed),
        model_name=model.name,
        warnings=messages,
        samples=kept if keep_samples else None,
        initial_states=start[~flagged] if keep_samples else None,
    )


def run_coupled_ensemble(
    model: SdeModel,
    initial,
    spec: IntegratorSpec,
    observables: Sequence[Observable],
    n_traj: int,
    master_seed: int,
    perturbation: Perturbation,
    epsilons: Sequence[float],
    threads: Optional[int] = None,
    flagged_warn: float = FLAGGED_WARN,
    flagged_fail: float = FLAGGED_FAIL,
) -> CoupledEnsemble:
    """Unperturbed baseline and every amplitude in epsilons under common random numbers."""
    if n_traj < 2:
        raise InvalidParameterError(f"an ensemble needs at least two trajectories, got {n_traj}")
    start = _resolve_initial(initial, n_traj, model.dim)
    amplitudes = (0.0,) + tuple(float(e) for e in epsilons)
    logger.info(f"Running {n_traj} coupled trajectories for amplitudes {list(amplitudes)}")
    values, _, flagged = _simulate(model, start, spec, observables, master_seed, perturbation, amplitudes,
                                   threads=threads)
    messages = _flag_policy(int(flagged.sum()), n_traj, flagged_warn, flagged_fail, "coupled ensemble")
    return CoupledEnsemble(
        times=spec.times,
        epsilons=np.asarray(amplitudes),
        samples=values[:, :, ~flagged, :],
        initial_states=start[~flagged],
        n_flagged=int(flagged.sum()),
        warnings=messages,
    )


def sample_steady_state(
    model: SdeModel,
    burn_in: float,
    n_samples: int,
    thinning: float,
    master_seed: int,
    n_chains: int = 1000,
    dt: float = 1e-3,
    wrap_half_width: Optional[float] = None,
    threads: Optional[int] = None,
    x0=0.0,
    flagged_warn: float = FLAGGED_WARN,
    flagged_fail: float = FLAGGED_FAIL,
) -> SteadyStateSample:
    """States retained every `thinning` time units after `burn_in` from independent chains."""
    if not burn_in > 0:
        raise InvalidParameterError(f"burn_in must be positive, got {burn_in}")
    if not thinning > 0:
        raise InvalidParameterError(f"thinning must be positive, got {thinning}")
    n_chains = max(1, min(int(n_chains), int(n_samples)))
    per_chain = int(math.ceil(n_samples / n_chains))
    stride = max(1, int(round(thinning / dt)))
    first = int(math.ceil(burn_in / (stride * dt) - 1e-9))
    spec = IntegratorSpec(dt=dt, t_max=(first + per_chain - 1) * stride * dt, save_stride=stride,
                          wrap_half_width=wrap_half_width)

    start = _resolve_initial(x0, n_chains, model.dim)
    logger.info(f"Sampling steady state of {model.name}: {n_chains} chains, burn-in {burn_in}, {per_chain} per chain")
    _, states, flagged = _simulate(model, start, spec, [], master_seed, channel=STEADY_STATE_CHANNEL,
                                   threads=threads, keep_states=True)
    _flag_policy(int(flagged.sum()), n_chains, flagged_warn, flagged_fail, "steady-state chains")

    retained = states[first: first + per_chain][:, ~flagged, :]
    # sample-major: the j-th retained state of every chain before the (j+1)-th
    flat = retained.reshape(-1, model.dim)[:n_samples]
    return SteadyStateSample(
        states=flat,
        n_chains=n_chains,
        burn_in=first * stride * dt,
        thinning=stride * dt,
        n_flagged=int(flagged.sum()),
    )


def batch_means_stderr(samples: np.ndarray, n_batches: int = 20) -> np.ndarray:
    """Standard error of the mean along axis 0 from contiguous batch means."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    n_batches = max(2, min(int(n_batches), n))
    size = n // n_batches
    trimmed = samples[: size * n_batches]
    means = trimmed.reshape((n_batches, size) + samples.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / math.sqrt(n_batches)


@dataclass
class MomentDiagnostic:
    fitted_bound: float
    late_slope: float
    late_slope_stderr: float
    bounded: bool

    def to_dict(self) -> Dict[str, float]:
        return {
            "fitted_bound": self.fitted_bound,
            "late_slope": self.late_slope,
            "late_slope_stderr": self.late_slope_stderr,
            "bounded": self.bounded,
        }


def moment_diagnostic(result: EnsembleResult, observable_name: str = "moment") -> MomentDiagnostic:
    """sup_t E O(X_t) - E O(X_0), and the least-squares slope over the second half of the window."""
    q = result.observable_names.index(observable_name)
    mean = result.observable_mean[:, q]
    half = len(result.times) // 2
    fit = stats.linregress(result.times[half:], mean[half:])
    slope_stderr = float(fit.stderr)
    return MomentDiagnostic(
        fitted_bound=float(mean.max() - mean[0]),
        late_slope=float(fit.slope),
        late_slope_stderr=slope_stderr,
        bounded=bool(fit.slope < 2.0 * slope_stderr),
    )
