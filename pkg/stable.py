"""Symmetric alpha-stable variates, Levy increments and distributional oracles.

The standard law has characteristic function exp(-|xi|^alpha). One-dimensional
variates use the Chambers-Mallows-Stuck construction from two uniforms; in
dimension n >= 2 the vector is isotropic, built as sqrt(2 A) * Z with A a
positive (alpha/2)-stable subordinator (Kanter's representation) and Z a
standard normal vector.

Every sample consumes a fixed number of uniforms from its stream, so a stream
produces the same sequence however the draws are batched.
"""
import math
import zlib
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np
from scipy import integrate, special

from errors import InvalidParameterError, UnsupportedDimensionError

ArrayLike = Union[Sequence[float], np.ndarray]


@dataclass(frozen=True)
class StableParams:
    alpha: float
    dim: int = 1

    def __post_init__(self):
        if not (1.0 < float(self.alpha) < 2.0):
            raise InvalidParameterError(f"stability index must lie in (1, 2), got {self.alpha}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise InvalidParameterError(f"dimension must be a positive integer, got {self.dim}")

    @property
    def uniforms_per_sample(self) -> int:
        return 2 if self.dim == 1 else 2 + self.dim


@dataclass(frozen=True)
class LevyIncrement:
    dt: float
    value: np.ndarray  # shape (count, dim)


def make_stream(master_seed: int, index: int = 0, channel: int = 0) -> np.random.Generator:
    """Counter-based stream determined only by (master_seed, index, channel)."""
    spawn_key = (int(index),) if channel == 0 else (int(index), int(channel))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(master_seed), spawn_key=spawn_key)))


def derive_seed(master_seed: int, label: str) -> int:
    """Independent seed for a named sub-computation."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(zlib.crc32(label.encode("utf-8")),))
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def to_open_interval(u: np.ndarray) -> np.ndarray:
    """Shift [0, 1) uniforms strictly inside (0, 1)."""
    return np.clip(u + 2.0 ** -54, 2.0 ** -54, 1.0 - 2.0 ** -53)


def open_uniforms(stream: np.random.Generator, count: int, width: int) -> np.ndarray:
    """(count, width) uniforms strictly inside (0, 1)."""
    return to_open_interval(stream.random((count, width)))


def stable_from_uniforms(u: np.ndarray, params: StableParams) -> np.ndarray:
    """Map uniforms of shape (..., uniforms_per_sample) to standard stable vectors (..., dim)."""
    alpha = float(params.alpha)
    if params.dim == 1:
        phi = np.pi * (u[..., 0] - 0.5)
        w = -np.log(u[..., 1])
        x = (
            np.sin(alpha * phi) / np.cos(phi) ** (1.0 / alpha)
            * (np.cos((1.0 - alpha) * phi) / w) ** ((1.0 - alpha) / alpha)
        )
        return x[..., None]

    half = 0.5 * alpha
    theta = np.pi * u[..., 0]
    w = -np.log(u[..., 1])
    kanter = (
        (np.sin(half * theta) / np.sin(theta)) ** (1.0 / (1.0 - half))
        * np.sin((1.0 - half) * theta) / np.sin(half * theta)
    )
    subordinator = (kanter / w) ** ((1.0 - half) / half)
    gauss = special.ndtri(u[..., 2:])
    return np.sqrt(2.0 * subordinator)[..., None] * gauss


def sample_stable(params: StableParams, count: int, stream: np.random.Generator) -> np.ndarray:
    """i.i.d. standard symmetric stable samples, shape (count, dim)."""
    if int(count) != count or count < 1:
        raise InvalidParameterError(f"count must be a positive integer, got {count}")
    u = open_uniforms(stream, int(count), params.uniforms_per_sample)
    return stable_from_uniforms(u, params)


def levy_increment(params: StableParams, dt: float, stream: np.random.Generator, count: int = 1) -> LevyIncrement:
    """Exact increments L_{t+dt} - L_t via self-similarity dt^{1/alpha} S."""
    if not dt > 0:
        raise InvalidParameterError(f"time step must be positive, got {dt}")
    scale = dt ** (1.0 / params.alpha)
    return LevyIncrement(dt=float(dt), value=scale * sample_stable(params, count, stream))


def stable_cf(alpha: float, xi: ArrayLike, t: float = 1.0) -> np.ndarray:
    return np.exp(-t * np.abs(np.asarray(xi, dtype=float)) ** alpha)


def empirical_cf(samples: np.ndarray, xi: Union[float, ArrayLike]) -> Tuple[float, float]:
    """Mean of cos(xi . X) over samples and its standard error."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if xi.size == 1 and samples.shape[1] > 1:
        xi = np.concatenate([xi, np.zeros(samples.shape[1] - 1)])
    c = np.cos(samples @ xi)
    return float(c.mean()), float(c.std(ddof=1) / math.sqrt(c.size))


def stable_tail_probability(alpha: float, x: float) -> float:
    """Leading-order P(|S| > x) for the standard 1D law."""
    return 2.0 / math.pi * math.gamma(alpha) * math.sin(math.pi * alpha / 2.0) * x ** (-alpha)


def stable_density_oracle(params: StableParams, x: ArrayLike, epsabs: float = 1e-13, limit: int = 400) -> np.ndarray:
    """Density of the standard 1D law by Fourier inversion, p(x) = (1/pi) int_0^inf cos(xi x) e^{-xi^alpha} dxi."""
    if params.dim != 1:
        raise UnsupportedDimensionError("the density oracle is one-dimensional")
    alpha = float(params.alpha)
    x = np.asarray(x, dtype=float)
    # e^{-xi^alpha} < 1e-19 beyond this point
    xi_max = 45.0 ** (1.0 / alpha)

    def kernel(s):
        return math.exp(-(s ** alpha))

    magnitudes, inverse = np.unique(np.abs(x).ravel(), return_inverse=True)
    values = np.empty(magnitudes.size)
    for i, xv in enumerate(magnitudes):
        if xv == 0.0:
            val, _ = integrate.quad(kernel, 0.0, xi_max, epsabs=epsabs, epsrel=1e-12, limit=limit)
        else:
            val, _ = integrate.quad(
                kernel, 0.0, xi_max, weight="cos", wvar=float(xv), epsabs=epsabs, epsrel=1e-12, limit=limit
            )
        values[i] = val / math.pi
    return values[inverse].reshape(x.shape)


def _cosine_gap_integral(alpha: float) -> float:
    """int_0^inf (1 - cos y) y^{-1-alpha} dy."""
    near, _ = integrate.quad(
        lambda y: 2.0 * math.sin(0.5 * y) ** 2 / (y * y) if y > 0 else 0.5,
        0.0,
        1.0,
        weight="alg",
        wvar=(1.0 - alpha, 0.0),
    )
    power_tail, _ = integrate.quad(lambda y: y ** (-1.0 - alpha), 1.0, np.inf)
    cos_tail, _ = integrate.quad(lambda y: y ** (-1.0 - alpha), 1.0, np.inf, weight="cos", wvar=1.0)
    return near + power_tail - cos_tail


def _sphere_area(dim: int) -> float:
    """Surface measure of the unit sphere in R^dim (2 for dim = 1)."""
    return 2.0 * math.pi ** (dim / 2.0) / math.gamma(dim / 2.0)


def levy_measure_constant(alpha: float, dim: int = 1) -> float:
    """c_alpha with int (1 - cos y_1) c_alpha |y|^{-n-alpha} dy = 1, evaluated by quadrature."""
    StableParams(alpha, dim)
    one_dim = 2.0 * _cosine_gap_integral(alpha)
    if dim == 1:
        return 1.0 / one_dim
    # integrate out the n-1 transverse coordinates
    radial, _ = integrate.quad(lambda r: r ** (dim - 2) * (1.0 + r * r) ** (-(dim + alpha) / 2.0), 0.0, np.inf)
    transverse = _sphere_area(dim - 1) * radial
    return 1.0 / (one_dim * transverse)


def levy_moment_integrals(params: StableParams) -> Tuple[float, float]:
    """(int_{|y|<1} |y|^2 nu(dy), int_{|y|>=1} |y| nu(dy)) for nu = c_alpha |y|^{-n-alpha} dy."""
    c = levy_measure_constant(params.alpha, params.dim)
    area = _sphere_area(params.dim)
    return c * area / (2.0 - params.alpha), c * area / (params.alpha - 1.0)
