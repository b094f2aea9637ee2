import math

import numpy as np
import pytest
from scipy import stats

from exactbridge.errors import NumericFailure
from exactbridge.model import ornstein_uhlenbeck, with_jumps, zero_drift
from exactbridge.streams import stream_for
from exactbridge.verification import (
    estimate_transition_density,
    euler_bridge_oracle,
    ks_test,
    ou_bridge_variance,
    ou_transition_density,
    two_of_three,
)


def test_ks_against_own_empirical_cdf():
    x = np.random.default_rng(0).normal(size=1000)
    ecdf = lambda v: np.searchsorted(np.sort(x), v, side="right") / x.size  # noqa: E731
    assert ks_test(x, ecdf).statistic <= 1.0 / x.size + 1e-12


def test_ks_calibration_on_uniforms():
    passes = 0
    for seed in range(100):
        u = np.random.default_rng(1000 + seed).uniform(size=10000)
        passes += ks_test(u, stats.uniform.cdf).pvalue > 0.01
    assert passes >= 98


def test_ks_power_on_shifted_normals():
    g = np.random.default_rng(1)
    assert ks_test(g.normal(0, 1, 10000), g.normal(0.5, 1, 10000)).pvalue < 1e-6


def test_ks_degenerate_and_small_samples():
    res = ks_test(np.zeros(200), stats.norm.cdf)
    assert res.statistic == 0.5
    assert ks_test(np.ones(200), np.ones(300)).statistic == 0.0
    assert ks_test(np.ones(200), np.zeros(300)).statistic == 1.0
    with pytest.raises(ValueError):
        ks_test(np.zeros(10), stats.norm.cdf)


def test_two_of_three_stops_early():
    calls = []

    def check(seed):
        calls.append(seed)
        return True, seed

    ok, results = two_of_three(check)
    assert ok and calls == [1, 2]
    ok, _ = two_of_three(lambda s: (s == 3, s))
    assert not ok


def test_oracle_zero_drift_accepts_everything():
    out = euler_bridge_oracle(zero_drift(), 0.0, 0.0, 1.0, 1e-2, 5000, stream_for(2))
    assert out.acceptance_rate == 1.0 and out.dt == 1e-2
    assert ks_test(out.values[:, 0], stats.norm(0, 0.5).cdf).pvalue > 0.01


def test_oracle_ou_midpoint_variance():
    out = euler_bridge_oracle(ornstein_uhlenbeck(1.0), 0.0, 0.0, 1.0, 1e-4, 100000, stream_for(3))
    v = out.values[:, 0].var()
    assert abs(v / ou_bridge_variance(1.0, 0.5, 1.0) - 1.0) < 0.01


def test_oracle_jump_counts_follow_weighting():
    # constant intensity at its bound: P(N = k | accepted) ~ Poisson(k; 1/2) / sqrt(1 + k)
    m = with_jumps(zero_drift(), rate=0.5, bound=0.5)
    out = euler_bridge_oracle(m, 0.0, 0.0, 1.0, 1e-2, 50000, stream_for(4))
    w = np.array([0.5**k / math.factorial(k) / math.sqrt(1 + k) for k in range(4)])
    w /= w.sum() + sum(0.5**k / math.factorial(k) / math.sqrt(1 + k) for k in range(4, 30))
    freq = np.bincount(out.jump_counts, minlength=4)[:3] / len(out.jump_counts)
    assert np.allclose(freq, w[:3], atol=4 * np.sqrt(w[:3] * (1 - w[:3]) / 50000))


def test_oracle_step_and_feasibility_guards():
    with pytest.raises(ValueError):
        euler_bridge_oracle(zero_drift(), 0.0, 0.0, 1.0, 0.1, 10, stream_for(5))
    hopeless = ornstein_uhlenbeck(1.0)
    with pytest.raises(NumericFailure, match="smaller T"):
        euler_bridge_oracle(hopeless, 0.0, 40.0, 1.0, 1e-2, 10, stream_for(6), max_proposals=2 * 10**6)


def test_density_zero_drift_is_gaussian():
    est, se = estimate_transition_density(zero_drift(), 0.0, 0.0, 1.0, 1000, stream_for(7))
    assert est == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-12) and se == 0.0


def test_density_ou():
    exact = ou_transition_density(1.0, 0.0, 0.0, 1.0)
    assert exact == pytest.approx(1 / math.sqrt(2 * math.pi * (1 - math.exp(-2)) / 2), rel=1e-14)
    est, se = estimate_transition_density(ornstein_uhlenbeck(1.0), 0.0, 0.0, 1.0, 100000, stream_for(8))
    assert abs(est - exact) < 3 * se


def test_density_refuses_jump_models():
    with pytest.raises(ValueError):
        estimate_transition_density(with_jumps(zero_drift(), 0.5), 0.0, 0.0, 1.0, 10, stream_for(9))
