import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srddpm.schedule import (
    LOG_VARIANCE_FLOOR,
    ScheduleConfig,
    build_linear_schedule,
    posterior_coefficients,
    x0_coefficients,
)


def test_default_endpoints_exact():
    s = build_linear_schedule(ScheduleConfig(1000, 1e-4, 0.02))
    assert s.beta[0] == 1e-4
    assert s.beta[999] == 0.02
    assert len(s) == 1000


def test_two_step_hand_values(two_step):
    np.testing.assert_allclose(two_step.alpha, [0.9, 0.8], rtol=0, atol=1e-15)
    np.testing.assert_allclose(two_step.alpha_bar, [0.9, 0.72], rtol=0, atol=1e-15)
    np.testing.assert_allclose(two_step.alpha_bar_prev, [1.0, 0.9], rtol=0, atol=1e-15)


def test_against_rational_oracle():
    # exact rational arithmetic for a short schedule
    T, b0, b1 = 5, Fraction(1, 100), Fraction(1, 10)
    betas = [b0 + (b1 - b0) * i / (T - 1) for i in range(T)]
    ab, prev = [], Fraction(1)
    for b in betas:
        prev = prev * (1 - b)
        ab.append(prev)
    ab_prev = [Fraction(1)] + ab[:-1]
    var = [b * (1 - p) / (1 - a) for b, a, p in zip(betas, ab, ab_prev)]
    s = build_linear_schedule(ScheduleConfig(T, 0.01, 0.1))
    np.testing.assert_allclose(s.alpha_bar, [float(x) for x in ab], rtol=1e-14)
    np.testing.assert_allclose(s.posterior_variance, [float(x) for x in var], rtol=1e-13, atol=1e-300)
    for t in range(T):
        c1 = math.sqrt(ab_prev[t]) * float(betas[t] / (1 - ab[t]))
        c2 = math.sqrt(1 - betas[t]) * float((1 - ab_prev[t]) / (1 - ab[t]))
        assert posterior_coefficients(s, t) == pytest.approx((c1, c2), rel=1e-13, abs=1e-15)


def test_posterior_variance_zero_at_start(two_step):
    assert two_step.posterior_variance[0] == 0.0
    assert two_step.posterior_log_variance_clipped[0] == pytest.approx(math.log(LOG_VARIANCE_FLOOR))


def test_posterior_coefficients_t0(two_step):
    c1, c2 = posterior_coefficients(two_step, 0)
    assert c1 == pytest.approx(1.0, abs=1e-15)
    assert c2 == 0.0


def test_posterior_coefficients_t1(two_step):
    c1, c2 = posterior_coefficients(two_step, 1)
    assert c1 == pytest.approx(math.sqrt(0.9) * 0.2 / 0.28, rel=1e-14)
    assert c2 == pytest.approx(math.sqrt(0.8) * 0.1 / 0.28, rel=1e-14)


def test_x0_coefficients(two_step):
    c1, c2 = x0_coefficients(two_step, 1)
    assert c1 == pytest.approx(math.sqrt(1 / 0.72), rel=1e-14)
    assert c2 == pytest.approx(math.sqrt(1 / 0.72 - 1), rel=1e-14)


@pytest.mark.parametrize("t", [-1, 2])
def test_coefficients_reject_out_of_range(two_step, t):
    with pytest.raises(IndexError):
        posterior_coefficients(two_step, t)
    with pytest.raises(IndexError):
        x0_coefficients(two_step, t)


@pytest.mark.parametrize(
    "args", [(1, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0), (2.5, 1e-4, 0.02)]
)
def test_invalid_config_rejected(args):
    with pytest.raises(ValueError):
        ScheduleConfig(*args)


def test_arrays_read_only(two_step):
    with pytest.raises(ValueError):
        two_step.beta[0] = 0.5
    assert set(two_step.arrays()) >= {"beta", "alpha_bar", "posterior_variance"}


@settings(max_examples=40, deadline=None)
@given(
    T=st.integers(2, 3000),
    b0=st.floats(1e-7, 0.05),
    extra=st.floats(0.0, 0.2),
)
def test_invariants(T, b0, extra):
    s = build_linear_schedule(ScheduleConfig(T, b0, b0 + extra))
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert np.all((s.alpha_bar > 0) & (s.alpha_bar < 1))
    assert np.all(s.posterior_variance >= 0)
    assert np.all(s.posterior_variance <= s.beta * (1 + 1e-12))
    assert np.all(s.posterior_log_variance_clipped >= math.log(LOG_VARIANCE_FLOOR))
