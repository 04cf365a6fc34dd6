"""SDE models dX = b(X) dt + sigma(X) dL, perturbations F(t)K(x), observables and the assumption audit.

Field callables work on batches: a drift maps states of shape (m, n) to (m, n),
a diffusion maps them to (m, n, n) matrices. Every built-in field is a small
class so models can be pickled to worker processes.
"""
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import integrate

from config import ModelSection, PerturbationSection, get_logger
from errors import AssumptionViolationError, ConfigError, InvalidParameterError, UnsupportedDimensionError
from expressions import CompiledExpression
from stable import StableParams, levy_measure_constant, levy_moment_integrals

logger = get_logger("model")


def as_states(x, dim: int = 1) -> np.ndarray:
    """Coerce x to a (m, dim) float array."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1) if dim == 1 else np.full((1, dim), float(x))
    elif x.ndim == 1:
        x = x[:, None] if dim == 1 else x[None, :]
    return x


# ----------------------------------------------------------------------------
# Drift fields
# ----------------------------------------------------------------------------


class LinearDrift:
    """b(x) = -rate * x."""

    def __init__(self, rate: float):
        self.rate = float(rate)

    def __call__(self, x):
        return -self.rate * x


class TanhWellDrift:
    """b(x) = -strength * x / sqrt(1 + |x|^2); bounded, radially inward."""

    def __init__(self, strength: float):
        self.strength = float(strength)

    def __call__(self, x):
        norm2 = np.sum(x * x, axis=-1, keepdims=True)
        return -self.strength * x / np.sqrt(1.0 + norm2)


class ZeroDrift:
    def __call__(self, x):
        return np.zeros_like(x)


class ExpressionDrift:
    def __init__(self, components: Sequence[CompiledExpression]):
        self.components = list(components)

    def __call__(self, x):
        return np.stack([f(x) for f in self.components], axis=-1)


class ScaledDrift:
    def __init__(self, base, factor: float):
        self.base = base
        self.factor = float(factor)

    def __call__(self, x):
        return self.factor * self.base(x)


# ----------------------------------------------------------------------------
# Diffusion fields
# ----------------------------------------------------------------------------


class IsotropicDiffusion:
    """sigma(x) = s * I with constant s."""

    isotropic = True

    def __init__(self, scale: float = 1.0):
        self.scale = float(scale)

    def scalar(self, x):
        return np.full(x.shape[0], self.scale)

    def __call__(self, x):
        n = x.shape[-1]
        return self.scale * np.broadcast_to(np.eye(n), (x.shape[0], n, n)).copy()


class ExpressionDiffusion:
    """sigma(x) = s(x) * I with s given by an expression."""

    isotropic = True

    def __init__(self, expression: CompiledExpression):
        self.expression = expression

    def scalar(self, x):
        return self.expression(x)

    def __call__(self, x):
        n = x.shape[-1]
        return self.expression(x)[:, None, None] * np.eye(n)


class MatrixDiffusion:
    """Constant matrix sigma."""

    isotropic = False

    def __init__(self, matrix):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))

    def __call__(self, x):
        n = self.matrix.shape[0]
        return np.broadcast_to(self.matrix, (x.shape[0], n, n)).copy()


@dataclass(frozen=True)
class SdeModel:
    name: str
    drift: Callable
    diffusion: Any
    stable: StableParams

    @property
    def dim(self) -> int:
        return self.stable.dim

    @property
    def alpha(self) -> float:
        return self.stable.alpha

    def drift_1d(self, x) -> np.ndarray:
        self._require_1d()
        return self.drift(as_states(x))[:, 0]

    def sigma_1d(self, x) -> np.ndarray:
        self._require_1d()
        x = as_states(x)
        if getattr(self.diffusion, "isotropic", False):
            return np.asarray(self.diffusion.scalar(x), dtype=float)
        return self.diffusion(x)[:, 0, 0]

    def jump_rate_1d(self, x) -> np.ndarray:
        """k(x) = |sigma(x)|^alpha, the jump intensity of the 1D generator."""
        return np.abs(self.sigma_1d(x)) ** self.alpha

    def scaled(self, factor: float) -> "SdeModel":
        return replace(self, drift=ScaledDrift(self.drift, factor), name=f"{self.name}*{factor:g}")

    def _require_1d(self):
        if self.dim != 1:
            raise UnsupportedDimensionError(f"model {self.name} has dimension {self.dim}; 1D required")


def stable_ou(rate: float = 1.0, alpha: float = 1.5, sigma: float = 1.0, dim: int = 1) -> SdeModel:
    return SdeModel("stable-ou", LinearDrift(rate), IsotropicDiffusion(sigma), StableParams(alpha, dim))


def tanh_well(strength: float = 2.0, alpha: float = 1.5, sigma: float = 1.0, dim: int = 1) -> SdeModel:
    return SdeModel("tanh-well", TanhWellDrift(strength), IsotropicDiffusion(sigma), StableParams(alpha, dim))


def free_model(alpha: float = 1.5, sigma: float = 1.0, dim: int = 1) -> SdeModel:
    """b = 0: the scaled stable process itself."""
    return SdeModel("free", ZeroDrift(), IsotropicDiffusion(sigma), StableParams(alpha, dim))


def custom_model(
    drift: Union[str, Sequence[str]],
    diffusion: Optional[str] = None,
    alpha: float = 1.5,
    constants: Optional[Dict[str, float]] = None,
) -> SdeModel:
    components = [drift] if isinstance(drift, str) else list(drift)
    dim = len(components)
    drift_field = ExpressionDrift([CompiledExpression(c, dim, constants) for c in components])
    if diffusion is None:
        diffusion_field = IsotropicDiffusion(1.0)
    else:
        diffusion_field = ExpressionDiffusion(CompiledExpression(diffusion, dim, constants))
    return SdeModel("custom", drift_field, diffusion_field, StableParams(alpha, dim))


def build_model(section: ModelSection) -> SdeModel:
    if section.name == "stable-ou":
        return stable_ou(section.rate, section.alpha, section.scale)
    if section.name == "tanh-well":
        return tanh_well(section.strength, section.alpha, section.scale)
    if section.name == "custom":
        return custom_model(section.drift, section.diffusion, section.alpha, section.constants)
    raise ConfigError(f"unknown model {section.name!r}")


# ----------------------------------------------------------------------------
# Perturbations F(t) K(x)
# ----------------------------------------------------------------------------


class StepProfile:
    """F(t) = 1 for t >= 0."""

    name = "step"

    def __call__(self, t):
        return np.where(np.asarray(t) >= 0.0, 1.0, 0.0)


class ImpulseProfile:
    """Mollified unit impulse: smooth bump of unit integral supported on [center - width, center + width]."""

    name = "impulse"

    def __init__(self, center: float = 0.5, width: float = 0.05):
        if not width > 0:
            raise InvalidParameterError(f"impulse width must be positive, got {width}")
        self.center = float(center)
        self.width = float(width)
        self._norm = integrate.quad(_mollifier, -1.0, 1.0)[0] * self.width

    def __call__(self, t):
        u = (np.asarray(t, dtype=float) - self.center) / self.width
        return np.vectorize(_mollifier, otypes=[float])(u) / self._norm


def _mollifier(u: float) -> float:
    return math.exp(-1.0 / (1.0 - u * u)) if abs(u) < 1.0 else 0.0


class ConstantField:
    """K(x) = c."""

    name = "constant"

    def __init__(self, c: float = 1.0):
        self.c = float(c)

    def __call__(self, x):
        return np.full_like(x, self.c)

    def divergence(self, x):
        return np.zeros(x.shape[0])


class LorentzianField:
    """K(x) = c / (1 + |x|^2) in every coordinate."""

    name = "lorentzian"

    def __init__(self, c: float = 1.0):
        self.c = float(c)

    def __call__(self, x):
        return np.broadcast_to(self.c / (1.0 + np.sum(x * x, axis=-1, keepdims=True)), x.shape).copy()

    def divergence(self, x):
        norm2 = np.sum(x * x, axis=-1)
        return -2.0 * self.c * np.sum(x, axis=-1) / (1.0 + norm2) ** 2


class ZeroField:
    name = "zero"

    def __call__(self, x):
        return np.zeros_like(x)

    def divergence(self, x):
        return np.zeros(x.shape[0])


class NegatedField:
    def __init__(self, base):
        self.base = base
        self.name = f"-{getattr(base, 'name', 'field')}"

    def __call__(self, x):
        return -self.base(x)

    def divergence(self, x):
        return -divergence_of(self.base, x)


def divergence_of(space_field, x) -> np.ndarray:
    """div K at states x: the field's own divergence if it has one, else central differences with h = 1e-5 (1 + |x|)."""
    if hasattr(space_field, "divergence"):
        return np.asarray(space_field.divergence(x), dtype=float)
    m, n = x.shape
    h = 1e-5 * (1.0 + np.linalg.norm(x, axis=-1))
    total = np.zeros(m)
    for i in range(n):
        shift = np.zeros_like(x)
        shift[:, i] = h
        total += (space_field(x + shift)[:, i] - space_field(x - shift)[:, i]) / (2.0 * h)
    return total


@dataclass(frozen=True)
class Perturbation:
    time_profile: Callable
    space_field: Callable

    @property
    def name(self) -> str:
        return f"{getattr(self.space_field, 'name', 'field')}/{getattr(self.time_profile, 'name', 'profile')}"

    def force(self, t: float, x: np.ndarray) -> np.ndarray:
        return float(self.time_profile(t)) * self.space_field(x)

    def divergence(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return divergence_of(self.space_field, x if x.ndim == 2 else as_states(x))

    def field_1d(self, x) -> np.ndarray:
        return self.space_field(as_states(x))[:, 0]

    def divergence_1d(self, x) -> np.ndarray:
        return divergence_of(self.space_field, as_states(x))

    def negated(self) -> "Perturbation":
        return replace(self, space_field=NegatedField(self.space_field))

    def with_profile(self, profile) -> "Perturbation":
        return replace(self, time_profile=profile)

    @property
    def outside_hypotheses(self) -> bool:
        """Constant K is not decaying, so |x| K(x) is unbounded."""
        return isinstance(self.space_field, ConstantField) and self.space_field.c != 0.0


def build_perturbation(section: PerturbationSection) -> Perturbation:
    fields = {"lorentzian": LorentzianField, "constant": ConstantField}
    space_field = ZeroField() if section.field == "zero" else fields[section.field](section.field_scale)
    if section.profile == "step":
        profile = StepProfile()
    else:
        profile = ImpulseProfile(section.impulse_center, section.impulse_width)
    return Perturbation(profile, space_field)


# ----------------------------------------------------------------------------
# Observables (functions of the first coordinate)
# ----------------------------------------------------------------------------


def _bump(x):
    return 0.5 * (np.tanh(4.0 * (x + 1.0)) - np.tanh(4.0 * (x - 1.0)))


def _bump_gradient(x):
    return 2.0 * (np.cosh(4.0 * (x + 1.0)) ** -2 - np.cosh(4.0 * (x - 1.0)) ** -2)


_BUILTIN_OBSERVABLES = {
    "tanh": (np.tanh, lambda x: np.cosh(x) ** -2, True),
    "x": (lambda x: x, np.ones_like, False),
    "rational": (lambda x: x / (1.0 + x * x), lambda x: (1.0 - x * x) / (1.0 + x * x) ** 2, True),
    "bump": (_bump, _bump_gradient, True),
    "one": (np.ones_like, np.zeros_like, True),
    "moment": (lambda x: np.sqrt(1.0 + x * x), lambda x: x / np.sqrt(1.0 + x * x), False),
}


class Observable:
    """Scalar observable O(x) of the first coordinate, with its derivative.

    Built-ins are referenced by name so instances pickle cleanly.
    """

    def __init__(self, name: str, fn: Optional[Callable] = None, gradient: Optional[Callable] = None,
                 within_hypotheses: bool = True):
        if fn is None:
            if name not in _BUILTIN_OBSERVABLES:
                raise ConfigError(f"unknown observable {name!r}; valid: {sorted(_BUILTIN_OBSERVABLES)}")
            within_hypotheses = _BUILTIN_OBSERVABLES[name][2]
        self.name = name
        self._fn = fn
        self._gradient = gradient
        self.within_hypotheses = within_hypotheses

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[:, 0]
        fn = self._fn if self._fn is not None else _BUILTIN_OBSERVABLES[self.name][0]
        return np.asarray(fn(x), dtype=float)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._gradient is not None:
            return np.asarray(self._gradient(x), dtype=float)
        if self._fn is None:
            return np.asarray(_BUILTIN_OBSERVABLES[self.name][1](x), dtype=float)
        h = 1e-5 * (1.0 + np.abs(x))
        return (self(x + h) - self(x - h)) / (2.0 * h)

    def __getstate__(self):
        return {"name": self.name, "fn": self._fn, "gradient": self._gradient,
                "within_hypotheses": self.within_hypotheses}

    def __setstate__(self, state):
        self.__init__(state["name"], state["fn"], state["gradient"], state["within_hypotheses"])

    def __repr__(self):
        return f"Observable({self.name!r})"


def build_observables(names: Sequence[str]) -> List[Observable]:
    return [Observable(name) for name in names]


# ----------------------------------------------------------------------------
# Assumption audit
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeSpec:
    half_width: float = 50.0
    n_samples: int = 4096
    inner_radius: float = 1.0
    holder_exponent: float = 0.75
    lyapunov_points: int = 64

    def __post_init__(self):
        if not (self.half_width > self.inner_radius > 0.0):
            raise InvalidParameterError("probe box must contain the annulus inner_radius <= |x| <= half_width")
        if self.n_samples < 2:
            raise InvalidParameterError("probe needs at least two samples")


@dataclass
class AssumptionAudit:
    holder_exponent: float
    holder_drift: float
    holder_diffusion: float
    ellipticity_lambda: float
    sup_drift: float
    sup_diffusion: float
    k1: float
    k1_near_origin: float
    levy_small_moment: float
    levy_large_moment: float
    c1: float
    dissipativity_margin: float
    verdict: str
    lyapunov_sup: Optional[float]
    probe: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _annulus_points(probe: ProbeSpec, dim: int, stream: np.random.Generator) -> np.ndarray:
    n = probe.n_samples
    if dim == 1:
        directions = np.where(stream.random(n) < 0.5, -1.0, 1.0)[:, None]
    else:
        directions = stream.standard_normal((n, dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = stream.uniform(probe.inner_radius, probe.half_width, n)
    points = radii[:, None] * directions
    # the infimum of a radially decaying inward drift sits on the inner sphere
    edge = np.concatenate([probe.inner_radius * directions, probe.half_width * directions[: max(1, n // 16)]])
    if dim == 1:
        edge = np.concatenate([edge, [[probe.inner_radius], [-probe.inner_radius]]])
    return np.concatenate([points, edge])


def _inward_rate(model: SdeModel, x: np.ndarray) -> np.ndarray:
    """-<x, b(x)> / |x|."""
    return -np.sum(x * model.drift(x), axis=1) / np.linalg.norm(x, axis=1)


def lyapunov_drift(model: SdeModel, x) -> np.ndarray:
    """A V for V(x) = sqrt(1 + x^2) in one dimension: drift transport plus the jump integral."""
    model._require_1d()
    x = np.asarray(x, dtype=float).ravel()
    alpha = model.alpha
    c = levy_measure_constant(alpha)
    scale = np.abs(model.sigma_1d(x))

    def v(z):
        return math.sqrt(1.0 + z * z)

    out = np.empty(x.size)
    for i, (xi, si) in enumerate(zip(x, scale)):
        transport = model.drift_1d([xi])[0] * xi / v(xi)
        if si == 0.0:
            out[i] = transport
            continue

        curvature = (1.0 + xi * xi) ** -1.5

        def second_difference(y):
            if si * y < 1e-3:
                return (si * y) ** 2 * curvature * y ** (-1.0 - alpha)
            return (v(xi + si * y) + v(xi - si * y) - 2.0 * v(xi)) * y ** (-1.0 - alpha)

        near = integrate.quad(second_difference, 0.0, 1.0, limit=200)[0]
        far = integrate.quad(second_difference, 1.0, np.inf, limit=200)[0]
        out[i] = transport + c * (near + far)
    return out


def audit_assumptions(model: SdeModel, probe: ProbeSpec, stream: np.random.Generator) -> AssumptionAudit:
    """Sampled estimates of the Holder, ellipticity, boundedness and dissipativity constants."""
    dim = model.dim
    box = stream.uniform(-probe.half_width, probe.half_width, (probe.n_samples, dim))

    drift = model.drift(box)
    sigma = model.diffusion(box)
    singular = np.linalg.svd(sigma, compute_uv=False)
    s_max = singular.max(axis=1)
    s_min = singular.min(axis=1)
    if not np.all(s_min > 1e-12 * max(float(s_max.max()), 1e-300)):
        bad = box[int(np.argmin(s_min))]
        raise AssumptionViolationError(f"sigma is not invertible at probe point {bad.tolist()}")
    ellipticity = float(max(s_max.max(), 1.0 / s_min.min()))

    half = probe.n_samples // 2
    gaps = np.linalg.norm(box[:half] - box[half: 2 * half], axis=1)
    gaps = np.maximum(gaps, 1e-300) ** probe.holder_exponent
    holder_drift = float(np.max(np.linalg.norm(drift[:half] - drift[half: 2 * half], axis=1) / gaps))
    holder_diffusion = float(np.max(np.linalg.norm(sigma[:half] - sigma[half: 2 * half], axis=(1, 2)) / gaps))

    annulus = _annulus_points(probe, dim, stream)
    k1 = float(np.min(_inward_rate(model, annulus)))
    inner = box[np.linalg.norm(box, axis=1) < probe.inner_radius]
    inner = np.concatenate([inner, probe.inner_radius * stream.uniform(0.01, 1.0, (256, 1))
                            * np.eye(dim)[stream.integers(0, dim, 256)]])
    k1_near = float(np.min(_inward_rate(model, inner)))

    small, large = levy_moment_integrals(model.stable)
    c1 = ellipticity ** 2 * small + ellipticity * large
    margin = math.sqrt(2.0) * k1 - c1
    if margin <= 0.0:
        verdict = "fail"
    elif math.sqrt(2.0) * k1_near <= c1:
        verdict = "fails-near-origin"
    else:
        verdict = "pass"

    lyapunov_sup = None
    if dim == 1:
        points = annulus[: probe.lyapunov_points, 0]
        lyapunov_sup = float(np.max(lyapunov_drift(model, points)))

    audit = AssumptionAudit(
        holder_exponent=probe.holder_exponent,
        holder_drift=holder_drift,
        holder_diffusion=holder_diffusion,
        ellipticity_lambda=ellipticity,
        sup_drift=float(np.max(np.linalg.norm(drift, axis=1))),
        sup_diffusion=float(s_max.max()),
        k1=k1,
        k1_near_origin=k1_near,
        levy_small_moment=small,
        levy_large_moment=large,
        c1=c1,
        dissipativity_margin=margin,
        verdict=verdict,
        lyapunov_sup=lyapunov_sup,
        probe=asdict(probe),
    )
    logger.info(f"Audit of {model.name}: k1={k1:.4g}, C1={c1:.4g}, Lambda={ellipticity:.4g}, verdict={verdict}")
    return audit
