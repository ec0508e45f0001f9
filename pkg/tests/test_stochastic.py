import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from amrdispatch.stochastic import (
    GaussianTime,
    expected_lateness,
    gauss_sum,
    joint_on_time,
    max_with_constant,
    norm_cdf,
    prob_before,
)
from oracles import lhs_normal, mean_se, var_se, within


def test_sum_examples():
    assert gauss_sum(GaussianTime(5, 2), GaussianTime(3, 1)) == GaussianTime(8, 3)
    x = GaussianTime(4.5, 7)
    assert x + GaussianTime(0, 0) == x
    assert GaussianTime(1.5, 10) + GaussianTime(2.5, 10) == GaussianTime(4.0, 20)


def test_negative_variance_rejected():
    with pytest.raises(ValueError):
        GaussianTime(0.0, -1e-3)


def test_max_standard_normal_at_zero():
    m = max_with_constant(GaussianTime(0, 1), 0)
    phi0 = 1 / math.sqrt(2 * math.pi)
    assert m.mean == pytest.approx(phi0, abs=1e-12)
    # E[max(Z,0)^2] = 1/2
    assert m.var == pytest.approx(0.5 - phi0**2, abs=1e-12)


def test_max_standard_normal_against_sampling():
    z = lhs_normal(np.random.default_rng(11), 1_000_000)
    y = np.maximum(z, 0.0)
    m = max_with_constant(GaussianTime(0, 1), 0)
    assert abs(m.mean - y.mean()) < 3e-3
    assert abs(m.var - y.var()) < 3e-3


def test_max_deterministic_and_far_constant():
    assert max_with_constant(GaussianTime(5, 0), 3) == GaussianTime(5, 0)
    assert max_with_constant(GaussianTime(2, 0), 3) == GaussianTime(3, 0)
    m = max_with_constant(GaussianTime(5, 1), -5)
    assert m.mean == pytest.approx(5, abs=1e-6)
    assert m.var == pytest.approx(1, abs=1e-6)


def test_max_far_above_collapses_to_constant():
    m = max_with_constant(GaussianTime(0, 1), 50)
    assert m == GaussianTime(50, 0)


def test_lateness_examples():
    assert expected_lateness(GaussianTime(7, 1), 7) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-12)
    assert expected_lateness(GaussianTime(5, 0), 10) == 0
    assert expected_lateness(GaussianTime(12, 0), 10) == 2


def test_lateness_is_max_minus_due():
    for mu, var, h in [(3.0, 4.0, 5.0), (100.0, 30.0, 90.0), (-2.0, 0.3, 0.0)]:
        m = max_with_constant(GaussianTime(mu, var), h).mean
        assert expected_lateness(GaussianTime(mu, var), h) == pytest.approx(m - h, abs=1e-10)


def test_prob_before_examples():
    assert prob_before(GaussianTime(0, 1), 0) == pytest.approx(0.5)
    assert prob_before(GaussianTime(3, 0), 5) == 1
    assert prob_before(GaussianTime(5, 0), 5) == 0
    assert prob_before(GaussianTime(10, 4), 13) == pytest.approx(0.9331927987311419, abs=1e-12)


def test_cdf_accuracy_against_erf_table():
    # reference values of Phi from the error function at high precision
    for z, ref in [(-3.0, 0.0013498980316300946), (0.0, 0.5), (1.0, 0.8413447460685429), (2.5, 0.9937903346742238)]:
        assert abs(norm_cdf(z) - ref) < 1e-12


def test_joint_on_time_requires_arrival_before_departure():
    x = GaussianTime(10, 1)
    assert joint_on_time(x, 20, 5.0, GaussianTime(6, 1)) == prob_before(x, 20)
    assert joint_on_time(x, 20, 6.0, GaussianTime(6, 1)) == 0.0


def test_kernels_match_sampling_on_random_cases():
    rng = np.random.default_rng(2024)
    z = lhs_normal(rng, 200_000)
    for _ in range(20):
        mu = rng.uniform(0, 100)
        var = rng.uniform(0.1, 50)
        s = math.sqrt(var)
        e = mu + s * rng.uniform(-3, 3)
        x = mu + s * z
        y = np.maximum(x, e)
        got = max_with_constant(GaussianTime(mu, var), e)
        assert within(got.mean, *mean_se(y))
        assert within(got.var, *var_se(y))
        assert within(expected_lateness(GaussianTime(mu, var), e), *mean_se(y - e))


finite = st.floats(-200, 200, allow_nan=False)
variances = st.floats(0, 60, allow_nan=False)


@given(finite, variances, finite)
def test_max_dominates_and_shrinks_variance(mu, var, e):
    m = max_with_constant(GaussianTime(mu, var), e)
    assert m.mean >= max(mu, e) - 1e-9
    assert m.var <= var + 1e-9


@given(finite, variances, finite, st.floats(0, 50))
def test_lateness_monotone(mu, var, h, step):
    x = GaussianTime(mu, var)
    assert expected_lateness(x, h + step) <= expected_lateness(x, h) + 1e-9
    assert expected_lateness(GaussianTime(mu + step, var), h) >= expected_lateness(x, h) - 1e-9
    assert expected_lateness(x, h) >= 0


@given(finite, finite)
def test_small_variance_converges_to_deterministic(mu, e):
    a = max_with_constant(GaussianTime(mu, 1e-12), e)
    b = max_with_constant(GaussianTime(mu, 0.0), e)
    assert abs(a.mean - b.mean) < 1e-5
    assert abs(a.var - b.var) < 1e-5
    assert abs(expected_lateness(GaussianTime(mu, 1e-12), e) - expected_lateness(GaussianTime(mu, 0), e)) < 1e-5
