"""Periodic 1D grid, spectral operators, the generator A and its adjoint A*.

On the grid x_j = -L + j h the derivative and the fractional Laplacian are
Fourier multipliers (i k and |k|^alpha with k = pi m / L). The Nyquist mode of
the derivative is dropped, which makes the discrete derivative exactly
skew-symmetric; with the symmetric fractional Laplacian the discrete pair

    A u  = b u' - k (-Delta)^{alpha/2} u
    A* p = -(b p)' - (-Delta)^{alpha/2}(k p),      k(x) = |sigma(x)|^alpha,

is adjoint in the h-weighted inner product and A* annihilates mass. Coefficients
take the mean of their one-sided values at the seam x = -L, so the discrete
operators commute with x -> -x whenever b is odd and sigma even.
"""
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import integrate

from config import GridSection, get_logger
from errors import AliasingWarning, InvalidParameterError
from model import SdeModel
from stable import levy_measure_constant

logger = get_logger("nonlocal_ops")

FIELD_KINDS = ("density", "observable", "generic")
ALIASING_THRESHOLD = 1e-6
BOUNDARY_FRACTION = 0.9


@dataclass(frozen=True)
class Grid1D:
    half_width: float
    n_points: int

    def __post_init__(self):
        if not self.half_width > 0:
            raise InvalidParameterError(f"half_width must be positive, got {self.half_width}")
        n = self.n_points
        if int(n) != n or n < 64 or int(n) & (int(n) - 1):
            raise InvalidParameterError(f"n_points must be a power of two >= 64, got {n}")

    @classmethod
    def from_section(cls, section: GridSection) -> "Grid1D":
        return cls(section.half_width, section.n_points)

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.n_points

    @property
    def x(self) -> np.ndarray:
        return -self.half_width + self.spacing * np.arange(self.n_points)

    @property
    def wavenumbers(self) -> np.ndarray:
        return _multipliers(self.half_width, self.n_points)[0]

    def integrate(self, values: np.ndarray) -> float:
        return float(self.spacing * np.sum(values))

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(self.spacing * np.sum(u * v))

    def sample_periodic(self, fn: Callable) -> np.ndarray:
        """fn on the grid; the seam point -L = L takes the mean of its two one-sided values.

        x -> -x maps the grid onto itself with -L fixed, so odd coefficients vanish there.
        """
        values = np.array(fn(self.x), dtype=float)
        values[0] = 0.5 * (values[0] + float(np.asarray(fn(np.array([self.half_width])), dtype=float)[0]))
        return values

    def boundary_mask(self, fraction: float = BOUNDARY_FRACTION) -> np.ndarray:
        return np.abs(self.x) >= fraction * self.half_width

    def interpolate(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Linear interpolation; points outside [-L, L) are NaN."""
        points = np.asarray(points, dtype=float)
        xs = np.append(self.x, self.half_width)
        ys = np.append(values, values[0])
        out = np.interp(points, xs, ys)
        out[(points < -self.half_width) | (points > self.half_width)] = np.nan
        return out


@lru_cache(maxsize=32)
def _multipliers(half_width: float, n_points: int) -> Tuple[np.ndarray, np.ndarray]:
    """(k, i k with the Nyquist mode removed); cached per grid, read-only."""
    h = 2.0 * half_width / n_points
    k = 2.0 * np.pi * np.fft.rfftfreq(n_points, d=h)
    ik = 1j * k
    ik[-1] = 0.0
    k.setflags(write=False)
    ik.setflags(write=False)
    return k, ik


@lru_cache(maxsize=64)
def _fractional_multiplier(half_width: float, n_points: int, alpha: float) -> np.ndarray:
    k = _multipliers(half_width, n_points)[0]
    sym = np.abs(k) ** alpha
    sym.setflags(write=False)
    return sym


@dataclass
class GridField:
    grid: Grid1D
    values: np.ndarray
    kind: str = "generic"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_points,):
            raise InvalidParameterError(
                f"field has shape {self.values.shape}, grid expects ({self.grid.n_points},)"
            )
        if self.kind not in FIELD_KINDS:
            raise InvalidParameterError(f"unknown field kind {self.kind!r}; valid: {list(FIELD_KINDS)}")

    @classmethod
    def sample(cls, grid: Grid1D, fn: Callable, kind: str = "generic") -> "GridField":
        return cls(grid, np.asarray(fn(grid.x), dtype=float), kind)

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    def mass(self) -> float:
        return self.grid.integrate(self.values)

    def l1(self) -> float:
        return self.grid.integrate(np.abs(self.values))

    def with_values(self, values: np.ndarray, kind: Optional[str] = None) -> "GridField":
        return GridField(self.grid, values, kind or self.kind)

    def boundary_mass(self, fraction: float = BOUNDARY_FRACTION) -> float:
        return self.grid.integrate(np.abs(self.values[self.grid.boundary_mask(fraction)]))

    def at(self, points) -> np.ndarray:
        return self.grid.interpolate(self.values, points)


def _broadcast(multiplier: np.ndarray, coeff: np.ndarray) -> np.ndarray:
    return multiplier.reshape((-1,) + (1,) * (coeff.ndim - 1))


def spectral_derivative(values: np.ndarray, grid: Grid1D) -> np.ndarray:
    """d/dx along axis 0."""
    coeff = np.fft.rfft(values, axis=0)
    ik = _multipliers(grid.half_width, grid.n_points)[1]
    return np.fft.irfft(_broadcast(ik, coeff) * coeff, n=grid.n_points, axis=0)


def fractional_laplacian_values(values: np.ndarray, grid: Grid1D, alpha: float) -> np.ndarray:
    """(-Delta)^{alpha/2} along axis 0; the zero mode maps to 0."""
    coeff = np.fft.rfft(values, axis=0)
    sym = _fractional_multiplier(grid.half_width, grid.n_points, float(alpha))
    return np.fft.irfft(_broadcast(sym, coeff) * coeff, n=grid.n_points, axis=0)


def fractional_laplacian(f: GridField, alpha: float) -> GridField:
    return GridField(f.grid, fractional_laplacian_values(f.values, f.grid, alpha), "generic")


def aliasing_fraction(values: np.ndarray) -> float:
    """Share of spectral amplitude carried by the top 10% of frequencies."""
    amplitude = np.abs(np.fft.rfft(values))
    total = amplitude.sum()
    if total == 0.0:
        return 0.0
    top = int(math.floor(0.9 * (amplitude.size - 1)))
    return float(amplitude[top:].sum() / total)


def _check_aliasing(values: np.ndarray, what: str) -> None:
    fraction = aliasing_fraction(values)
    if fraction > ALIASING_THRESHOLD:
        message = f"{what}: {fraction:.2e} of the spectrum sits in the top 10% of frequencies"
        logger.warning(message)
        warnings.warn(message, AliasingWarning)


def operator_coefficients(model: SdeModel, grid: Grid1D) -> Tuple[np.ndarray, np.ndarray]:
    """Drift b and jump rate |sigma|^alpha sampled on the grid, seam point averaged."""
    return grid.sample_periodic(model.drift_1d), grid.sample_periodic(model.jump_rate_1d)


def generator_values(values: np.ndarray, grid: Grid1D, drift: np.ndarray, rate: np.ndarray, alpha: float):
    d, r = (_broadcast(drift, values), _broadcast(rate, values))
    return d * spectral_derivative(values, grid) - r * fractional_laplacian_values(values, grid, alpha)


def adjoint_values(values: np.ndarray, grid: Grid1D, drift: np.ndarray, rate: np.ndarray, alpha: float):
    d, r = (_broadcast(drift, values), _broadcast(rate, values))
    return -spectral_derivative(d * values, grid) - fractional_laplacian_values(r * values, grid, alpha)


def apply_generator(model: SdeModel, u: GridField) -> GridField:
    """A u = b u' - |sigma|^alpha (-Delta)^{alpha/2} u."""
    _check_aliasing(u.values, "generator input")
    drift, rate = operator_coefficients(model, u.grid)
    return GridField(u.grid, generator_values(u.values, u.grid, drift, rate, model.alpha), "generic")


def apply_adjoint(model: SdeModel, phi: GridField) -> GridField:
    """A* phi = -(b phi)' - (-Delta)^{alpha/2}(|sigma|^alpha phi)."""
    _check_aliasing(phi.values, "adjoint input")
    drift, rate = operator_coefficients(model, phi.grid)
    return GridField(phi.grid, adjoint_values(phi.values, phi.grid, drift, rate, model.alpha), "generic")


def adjoint_matrix(model: SdeModel, grid: Grid1D) -> np.ndarray:
    """Dense matrix of the discrete A* (columns are images of unit vectors)."""
    drift, rate = operator_coefficients(model, grid)
    return adjoint_values(np.eye(grid.n_points), grid, drift, rate, model.alpha)


def fractional_laplacian_quadrature(
    f: Callable[[float], float],
    x: float,
    alpha: float,
    curvature: Optional[Callable[[float], float]] = None,
) -> float:
    """(-Delta)^{alpha/2} f(x) on the whole line from the singular-integral definition.

    c_alpha int_0^inf (2 f(x) - f(x+y) - f(x-y)) y^{-1-alpha} dy; below y = 1e-3 the
    second difference is replaced by its Taylor term -f''(x) y^2.
    """
    c = levy_measure_constant(alpha)
    if curvature is None:
        step = 1e-4
        f2 = (f(x + step) - 2.0 * f(x) + f(x - step)) / step ** 2
    else:
        f2 = curvature(x)

    def integrand(y):
        if y < 1e-3:
            return -f2 * y ** (1.0 - alpha)
        return (2.0 * f(x) - f(x + y) - f(x - y)) * y ** (-1.0 - alpha)

    near = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-13, epsrel=1e-11, limit=200, points=[1e-3])[0]
    far = integrate.quad(integrand, 1.0, np.inf, epsabs=1e-13, epsrel=1e-11, limit=400)[0]
    return c * (near + far)


@dataclass
class HeatKernelReport:
    t: float
    x0: float
    ratio_min: float
    ratio_max: float
    band: Tuple[float, float]
    passes: bool
    peak: float
    peak_ratio: float
    expected_peak_ratio: float

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "x0": self.x0,
            "ratio_min": self.ratio_min,
            "ratio_max": self.ratio_max,
            "band": list(self.band),
            "passes": self.passes,
            "peak": self.peak,
            "peak_ratio": self.peak_ratio,
            "expected_peak_ratio": self.expected_peak_ratio,
        }


def heat_kernel_diagnostic(
    model: SdeModel,
    t_small: float,
    x0: float = 0.0,
    grid: Optional[Grid1D] = None,
    window: float = 5.0,
    band: Tuple[float, float] = (0.1, 10.0),
) -> HeatKernelReport:
    """Compare the evolved point-mass density with t (t^{1/alpha} + |y - x0|)^{-1-alpha}.

    Also reports the ratio of peak heights between 2 t and t, which is 2^{-1/alpha}
    for the free process.
    """
    from fokker_planck import FpSolveSpec, evolve_density

    if not (1e-2 <= t_small <= 1e-1):
        raise InvalidParameterError(f"t_small must lie in [0.01, 0.1], got {t_small}")
    grid = grid or Grid1D(32.0, 2048)
    alpha = model.alpha
    start = np.zeros(grid.n_points)
    j0 = int(np.argmin(np.abs(grid.x - x0)))
    start[j0] = 1.0 / grid.spacing
    x0 = float(grid.x[j0])

    spec = FpSolveSpec(dt=min(1e-3, t_small / 20.0), t_end=2.0 * t_small)
    snapshots = evolve_density(model, GridField(grid, start, "density"), spec, save_times=[t_small, 2.0 * t_small])
    at_t, at_2t = snapshots.fields

    distance = np.abs(grid.x - x0)
    inside = distance <= window
    reference = t_small * (t_small ** (1.0 / alpha) + distance[inside]) ** (-1.0 - alpha)
    ratio = at_t.values[inside] / reference
    peak = float(at_t.values.max())
    report = HeatKernelReport(
        t=t_small,
        x0=x0,
        ratio_min=float(ratio.min()),
        ratio_max=float(ratio.max()),
        band=band,
        passes=bool(ratio.min() >= band[0] and ratio.max() <= band[1]),
        peak=peak,
        peak_ratio=float(at_2t.values.max() / peak),
        expected_peak_ratio=2.0 ** (-1.0 / alpha),
    )
    logger.info(f"Heat-kernel ratio band at t={t_small}: [{report.ratio_min:.3g}, {report.ratio_max:.3g}]")
    return report
