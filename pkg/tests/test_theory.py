import math
from fractions import Fraction

import numpy as np
import pytest

from guided_es import theory as T
from guided_es.linalg import OrthoSet, sample_orthonormal

BASE = T.ChainParams(101, 10, 0.95, 0.1)


def exact_fixed_point(alpha: Fraction, n: int, p: int) -> float:
    """Rational-arithmetic solution of the linear recurrence's fixed point."""
    a2, q = alpha ** 2, Fraction(p, n - 1)
    b = (1 - a2) / (n - 1) * (1 - q) + q
    a = (a2 - (1 - a2) / (n - 1)) * (1 - q)
    return float(b / (1 - a))


def test_fixed_point_matches_rational_oracle():
    # Frozen from exact_fixed_point(19/20, 101, 10) = 0.5347974181919392.
    assert T.fixed_point_A(BASE) == pytest.approx(0.5347974181919392, abs=1e-11)
    assert T.fixed_point_A_closed_form(BASE) == pytest.approx(0.5347974181919392, rel=1e-14)
    assert exact_fixed_point(Fraction(19, 20), 101, 10) == pytest.approx(0.5347974181919392, rel=1e-15)


@pytest.mark.parametrize("alpha, n, p", [(0.5, 21, 3), (0.99, 500, 7), (0.0, 11, 1), (0.8, 3, 2)])
def test_fixed_point_bisection_agrees_with_closed_form(alpha, n, p):
    params = T.ChainParams(n, p, alpha)
    a = T.fixed_point_A(params)
    assert a == pytest.approx(exact_fixed_point(Fraction(alpha).limit_denominator(1000), n, p), abs=1e-10)
    assert T.rotation_expected(a, params) == pytest.approx(a, abs=1e-11)


def test_fixed_point_is_one_without_rotation():
    assert T.fixed_point_A(T.ChainParams(101, 10, 1.0)) == 1.0


def test_rotation_expected_endpoints():
    q = BASE.rate
    assert T.rotation_expected(0.0, BASE) == pytest.approx((1 - 0.95 ** 2) / 100 * (1 - q) + q)
    assert T.rotation_expected(1.0, BASE) == pytest.approx(0.95 ** 2 * (1 - q) + q)
    # Without rotation it reduces to the linear-objective drift.
    lin = T.ChainParams(101, 10, 1.0)
    for x in (0.0, 0.3, 0.9):
        assert T.rotation_expected(x, lin) - x == pytest.approx(T.expected_drift_linear(x, lin))


def test_hitting_bound_values():
    b = T.hitting_time_bound(BASE)
    assert b.variable == pytest.approx(10 * (1 + math.log(10)))
    assert b.additive == pytest.approx(90.0)
    assert b.bound == pytest.approx(33.02585092994046)
    half = T.hitting_time_bound(T.ChainParams(101, 10, delta=0.5))
    assert half.bound == pytest.approx(10.0)


def test_bound_crossover():
    d = T.bound_crossover_delta()
    assert d == pytest.approx(0.3178444328993727, abs=1e-12)
    assert (1 - d) / d == pytest.approx(1 + math.log(1 / d))
    lo, hi = T.ChainParams(101, 10, delta=d - 0.05), T.ChainParams(101, 10, delta=d + 0.05)
    assert T.hitting_time_bound(lo).bound == T.hitting_time_bound(lo).variable
    assert T.hitting_time_bound(hi).bound == T.hitting_time_bound(hi).additive


def test_drift_bounds():
    assert T.additive_drift_bound(0.9, 0.1) == pytest.approx(9.0)
    assert T.variable_drift_bound(1.0, BASE) == pytest.approx(10.0)
    assert T.variable_drift_bound(10.0, BASE) == pytest.approx(T.hitting_time_bound(BASE).variable)
    with pytest.raises(ValueError):
        T.variable_drift_bound(0.5, BASE)
    with pytest.raises(ValueError):
        T.additive_drift_bound(0.0, 1.0)


def test_params_validation():
    for bad in [(1, 1), (10, 0), (10, 10)]:
        with pytest.raises(ValueError):
            T.ChainParams(*bad)
    with pytest.raises(ValueError):
        T.ChainParams(10, 2, alpha=1.5)
    with pytest.raises(ValueError):
        T.ChainParams(10, 2, delta=1.0)


def test_drift_trace_transforms():
    tr = T.DriftTrace(np.array([0.0, 0.5, 0.95]))
    np.testing.assert_allclose(tr.y, [1.0, 0.5, 0.05])
    np.testing.assert_allclose(tr.z(0.1), [10.0, 5.0, 0.0])


def test_linear_chain_is_monotone_and_hits():
    res = T.simulate_linear_chain(T.ChainParams(21, 3, delta=0.2), 50, 0)
    assert res.is_monotone()
    t = res.hitting.samples
    assert np.all(res.trajectories[np.arange(50), t] >= 0.8)
    assert np.all(res.trajectories[np.arange(50), t - 1] < 0.8)


def test_one_step_drift_small_sample():
    mean, se = T.measure_one_step(0.5, T.ChainParams(31, 3), 4000, 1)
    assert abs(mean - 0.5 * 3 / 30) < 4 * se


def test_one_step_with_rotation_matches_expectation():
    params = T.ChainParams(31, 3, alpha=0.8)
    mean, se = T.measure_one_step(0.4, params, 6000, 2)
    assert abs(mean - (T.rotation_expected(0.4, params) - 0.4)) < 4 * se


def test_rotating_chain_small():
    params = T.ChainParams(21, 3, alpha=0.9)
    res = T.simulate_rotating_chain(params, 30, 10, 5)
    assert res.trajectories.shape == (10, 31)
    assert np.all((res.trajectories >= 0) & (res.trajectories <= 1))
    again = T.simulate_rotating_chain(params, 30, 10, 5)
    assert np.array_equal(res.trajectories, again.trajectories)


def test_rotating_chain_with_seeded_history():
    res = T.simulate_rotating_chain(T.ChainParams(21, 3, alpha=1.0), 5, 4, 0, x0_sq=0.25)
    assert np.all(res.trajectories[:, 0] == 0.25)
    assert res.is_monotone()


def test_binned_transitions():
    prev = np.repeat([0.02, 0.52], 150)
    nxt = prev + 0.1
    bins = T.binned_transitions(prev, nxt, lambda v: v + 0.1)
    assert [b.count for b in bins] == [150, 150]
    assert all(abs(b.mean - b.expected) < 1e-12 for b in bins)
    assert T.binned_transitions(prev[:10], nxt[:10], lambda v: v) == []


def test_span_energy_mean():
    mean, se = T.span_energy_mean(10, 2, 4000, 3)
    assert abs(mean - 0.2) < 4 * se


def test_optimality_check_on_fixed_instance():
    rng = np.random.default_rng(4)
    frame = sample_orthonormal(12, 5, rng).directions
    grad = rng.standard_normal(12)
    rep = T.optimality_check(grad, OrthoSet(frame[:2], 12), OrthoSet(frame[2:], 12), 2000, rng)
    assert rep.passed and rep.max_excess <= 1e-9
    # The best cosine inside a span is the norm of the unit gradient's projection onto it.
    proj = frame @ (grad / np.linalg.norm(grad))
    assert rep.cosine_ours == pytest.approx(np.linalg.norm(proj), rel=1e-12)
