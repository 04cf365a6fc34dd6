import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special

from errors import InvalidParameterError, UnsupportedDimensionError
from stable import (
    StableParams,
    derive_seed,
    empirical_cf,
    levy_increment,
    levy_measure_constant,
    levy_moment_integrals,
    make_stream,
    open_uniforms,
    sample_stable,
    stable_cf,
    stable_density_oracle,
    stable_from_uniforms,
    stable_tail_probability,
    to_open_interval,
)

XI = [0.25, 0.5, 1.0, 2.0, 4.0]


def closed_form_constant(alpha, dim):
    return alpha * 2.0 ** (alpha - 1.0) * math.gamma((dim + alpha) / 2.0) / (
        math.pi ** (dim / 2.0) * math.gamma(1.0 - alpha / 2.0)
    )


@pytest.mark.parametrize("alpha", [1.0, 2.0, 0.5, 2.5])
def test_alpha_outside_open_interval_is_rejected(alpha):
    with pytest.raises(InvalidParameterError):
        StableParams(alpha)
    with pytest.raises(ValueError):
        StableParams(alpha)


def test_dimension_must_be_positive_integer():
    with pytest.raises(InvalidParameterError):
        StableParams(1.5, 0)
    with pytest.raises(InvalidParameterError):
        StableParams(1.5, 1.5)


def test_count_zero_is_rejected():
    with pytest.raises(InvalidParameterError):
        sample_stable(StableParams(1.5), 0, make_stream(1))


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_sample_shape(dim):
    out = sample_stable(StableParams(1.5, dim), 17, make_stream(3))
    assert out.shape == (17, dim)
    assert np.all(np.isfinite(out))


def test_sequence_is_independent_of_batching():
    params = StableParams(1.3)
    whole = sample_stable(params, 1000, make_stream(11, 4))
    stream = make_stream(11, 4)
    parts = np.concatenate([sample_stable(params, 400, stream), sample_stable(params, 1, stream),
                            sample_stable(params, 599, stream)])
    np.testing.assert_array_equal(whole, parts)


def test_streams_depend_on_index_and_channel():
    a = make_stream(5, 0).random(4)
    b = make_stream(5, 1).random(4)
    c = make_stream(5, 0, channel=1).random(4)
    np.testing.assert_array_equal(a, make_stream(5, 0).random(4))
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_derive_seed_is_deterministic_and_label_dependent():
    assert derive_seed(7, "direct") == derive_seed(7, "direct")
    assert derive_seed(7, "direct") != derive_seed(7, "agarwal")
    assert derive_seed(7, "direct") != derive_seed(8, "direct")


def test_open_interval_excludes_endpoints():
    u = to_open_interval(np.array([0.0, 0.5, 1.0 - 2.0 ** -53]))
    assert np.all(u > 0.0) and np.all(u < 1.0)
    assert np.all(open_uniforms(make_stream(0), 100, 3) > 0.0)


@given(
    alpha=st.floats(1.05, 1.95),
    u0=st.floats(2.0 ** -54, 1.0 - 2.0 ** -53),
    u1=st.floats(2.0 ** -54, 1.0 - 2.0 ** -53),
    g=st.floats(0.01, 0.99),
)
def test_variates_are_finite_on_the_open_cube(alpha, u0, u1, g):
    for dim in (1, 2):
        u = np.array([[u0, u1] + [g] * (0 if dim == 1 else dim)])
        assert np.all(np.isfinite(stable_from_uniforms(u, StableParams(alpha, dim))))


@pytest.mark.parametrize("alpha", [1.2, 1.5, 1.8])
def test_empirical_cf_matches_exp_minus_abs_xi_alpha(alpha):
    samples = sample_stable(StableParams(alpha), 200_000, make_stream(20240601, alpha_index(alpha)))
    for xi in XI:
        mean, stderr = empirical_cf(samples, xi)
        assert abs(mean - stable_cf(alpha, xi)) < 5.0 * stderr + 1e-3


def alpha_index(alpha):
    return int(round(alpha * 10))


def test_isotropic_two_dimensional_cf():
    alpha = 1.5
    samples = sample_stable(StableParams(alpha, 2), 200_000, make_stream(99))
    for xi in ([1.0, 0.0], [0.0, 1.0], [0.6, 0.8], [1.0, 1.0]):
        mean, stderr = empirical_cf(samples, xi)
        expected = math.exp(-np.linalg.norm(xi) ** alpha)
        assert abs(mean - expected) < 5.0 * stderr + 1e-3


def test_median_is_near_zero():
    samples = sample_stable(StableParams(1.5), 200_000, make_stream(2))
    assert abs(np.median(samples)) < 2e-2


def test_levy_increment_is_scaled_standard_variate():
    params = StableParams(1.5)
    dt = 2.0 ** 1.5
    inc = levy_increment(params, dt, make_stream(42), count=50)
    base = sample_stable(params, 50, make_stream(42))
    assert inc.dt == dt
    np.testing.assert_allclose(inc.value, 2.0 * base, rtol=1e-12)


def test_levy_increment_rejects_nonpositive_dt():
    with pytest.raises(InvalidParameterError):
        levy_increment(StableParams(1.5), 0.0, make_stream(0))


def test_increment_cf_at_small_dt():
    inc = levy_increment(StableParams(1.5), 0.01, make_stream(8), count=200_000)
    mean, stderr = empirical_cf(inc.value, 1.0)
    assert abs(mean - math.exp(-0.01)) < 5.0 * stderr + 1e-3


def test_tail_probability_against_samples():
    alpha = 1.5
    samples = np.abs(sample_stable(StableParams(alpha), 400_000, make_stream(13))[:, 0])
    empirical = np.mean(samples > 20.0)
    assert empirical == pytest.approx(stable_tail_probability(alpha, 20.0), rel=0.15)


def test_density_oracle_at_origin():
    alpha = 1.5
    value = stable_density_oracle(StableParams(alpha), [0.0])[0]
    assert value == pytest.approx(special.gamma(1.0 + 1.0 / alpha) / math.pi, rel=1e-10)


def test_density_oracle_is_even():
    x = np.linspace(-7.0, 7.0, 29)
    p = stable_density_oracle(StableParams(1.3), x)
    np.testing.assert_array_equal(p, p[::-1])


def test_density_oracle_matches_tail_asymptotics():
    alpha = 1.5
    x = 50.0
    asymptote = math.gamma(alpha + 1.0) * math.sin(math.pi * alpha / 2.0) / math.pi * x ** (-1.0 - alpha)
    assert stable_density_oracle(StableParams(alpha), [x])[0] == pytest.approx(asymptote, rel=2e-2)


def test_density_oracle_normalization():
    alpha = 1.5
    edge = 60.0
    x = np.linspace(-edge, edge, 2401)
    p = stable_density_oracle(StableParams(alpha), x)
    body = integrate.trapezoid(p, x)
    tail = 2.0 * math.gamma(alpha + 1.0) * math.sin(math.pi * alpha / 2.0) / math.pi * edge ** (-alpha) / alpha
    assert body + tail == pytest.approx(1.0, abs=1e-4)


def test_density_oracle_is_one_dimensional():
    with pytest.raises(UnsupportedDimensionError):
        stable_density_oracle(StableParams(1.5, 2), [0.0])


@pytest.mark.parametrize("alpha", [1.2, 1.5, 1.8])
@pytest.mark.parametrize("dim", [1, 2, 3])
def test_levy_measure_constant_closed_form(alpha, dim):
    assert levy_measure_constant(alpha, dim) == pytest.approx(closed_form_constant(alpha, dim), rel=1e-6)


@pytest.mark.parametrize("alpha", [1.2, 1.5, 1.8])
def test_levy_moment_integrals_against_quadrature(alpha):
    c = levy_measure_constant(alpha)
    small, large = levy_moment_integrals(StableParams(alpha))
    near = 2.0 * c * integrate.quad(lambda y: y ** (1.0 - alpha), 0.0, 1.0)[0]
    far = 2.0 * c * integrate.quad(lambda y: y ** (-alpha), 1.0, np.inf)[0]
    assert small == pytest.approx(near, rel=1e-6)
    assert large == pytest.approx(far, rel=1e-6)


@pytest.mark.slow
@pytest.mark.parametrize("alpha", [1.2, 1.5, 1.8])
def test_cf_at_acceptance_scale(alpha):
    samples = sample_stable(StableParams(alpha), 1_000_000, make_stream(1, alpha_index(alpha)))
    for xi in XI:
        mean, _ = empirical_cf(samples, xi)
        assert abs(mean - stable_cf(alpha, xi)) < 5e-3


@pytest.mark.slow
def test_tail_exceedance_ratio():
    samples = np.abs(sample_stable(StableParams(1.5), 10_000_000, make_stream(3))[:, 0])
    ratio = np.mean(samples > 50.0) / np.mean(samples > 100.0)
    assert ratio == pytest.approx(2.0 ** 1.5, rel=0.2)
