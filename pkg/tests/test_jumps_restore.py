import math

import numpy as np
import pytest
from scipy import stats

from exactbridge.cauea import simulate_cauea
from exactbridge.errors import ConditionViolation, ContractError
from exactbridge.jumps import (
    p1_end_point,
    p2_jump_weights,
    sample_compound_poisson,
    simulate_caujea,
    simulate_cujea,
)
from exactbridge.layers import Layer
from exactbridge.model import DiffusionModel, lamperti_transform, ornstein_uhlenbeck, with_jumps, zero_drift
from exactbridge.restore import restore, restore_original_scale
from exactbridge.skeleton import BridgeSkeleton, Segment
from exactbridge.streams import stream_for
from exactbridge.verification import ks_test


def _normal_sampler(gen, n):
    return gen.normal(0.0, 1.0, n)


def test_compound_poisson_without_rate_is_empty():
    J = sample_compound_poisson(0.0, _normal_sampler, 1.0, stream_for(1))
    assert J.count == 0 and J.total == 0.0 and J.value(0.7) == 0.0


def test_compound_poisson_moments():
    n = 100000
    s = stream_for(2)
    counts = np.array([sample_compound_poisson(2.0, _normal_sampler, 1.0, s).count for _ in range(n)])
    assert abs(counts.mean() - 2.0) < 3 * math.sqrt(2.0 / n)
    n = 20000
    totals = np.array([sample_compound_poisson(0.5, _normal_sampler, 1.0, s).total for _ in range(n)])
    assert abs(totals.mean()) < 4 * math.sqrt(0.5 / n)
    # Var J_T = Lambda T E[size^2]; the fourth moment of J_T is 3 (Lambda T)^2 + Lambda T * 3
    var_se = math.sqrt((3 * 0.25 + 1.5 - 0.25) / n)
    assert abs(totals.var() - 0.5) < 4 * var_se


def test_compound_poisson_limits():
    from exactbridge.jumps import CompoundPoissonPath

    J = CompoundPoissonPath([0.2, 0.6], [1.0, -0.5], 1.0)
    assert J.value(0.2) == 1.0 and J.left_limit(0.2) == 0.0
    assert J.value(0.9) == 0.5


def test_end_point_factor():
    assert p1_end_point(0.3, 1.3, 2.0, 1.0) == 1.0
    assert p1_end_point(0.0, 0.0, 1.0, 2.0) == pytest.approx(math.exp(-2.0), rel=1e-15)
    vals = [p1_end_point(0.0, 0.0, 1.0, j) for j in (0.0, 0.5, 1.0, 2.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_jump_weight_examples():
    full = with_jumps(zero_drift(), rate=0.5, bound=0.5)
    assert p2_jump_weights(full, [], []) == 1.0
    assert p2_jump_weights(full, [0.1, -0.4], [0.9, 0.3]) == pytest.approx(1.0)
    half = with_jumps(zero_drift(), rate=0.25, bound=0.5, kappa=0.5)
    assert p2_jump_weights(half, [0.0], [0.4]) == pytest.approx(1.0)
    loose = with_jumps(zero_drift(), rate=0.25, bound=0.5, kappa=1.0)
    assert p2_jump_weights(loose, [0.0], [0.4]) == pytest.approx(0.5)


def test_jump_weight_above_kappa_raises():
    tight = with_jumps(zero_drift(), rate=0.5, bound=0.5, kappa=0.5)
    with pytest.raises(ConditionViolation):
        p2_jump_weights(tight, [0.0], [1.0])


@pytest.mark.parametrize("alg", [simulate_caujea, simulate_cujea])
def test_jump_skeleton_bookkeeping(alg):
    m = with_jumps(zero_drift(), rate=1.5, bound=1.5)
    for i in range(100):
        sk, c = alg(m, 0.0, 0.4, 1.0, stream_for(3, i))
        sk.check()
        c.check()
        sizes = sk.auxiliary["jump_sizes"]
        assert np.allclose(np.subtract(sk.jump_post, sk.jump_pre), sizes, atol=1e-12)
        assert sk.segments[0].values[0] == 0.0 and sk.segments[-1].values[-1] == 0.4
        for a, b in zip(sk.segments, sk.segments[1:]):
            assert a.times[-1] == b.times[0]
            assert a.kinds[-1] == "jump-pre" and b.kinds[0] == "jump-post"


def test_jump_algorithm_without_jumps_matches_adaptive_sampler():
    m = ornstein_uhlenbeck(1.0)
    times = [0.25, 0.5, 0.75]
    a, b = [], []
    for i in range(3000):
        s = stream_for(4, i)
        sk, _ = simulate_caujea(m, 0.0, 0.5, 1.0, s)
        a.append(restore(sk, times, s)[0])
        s = stream_for(5, i)
        sk, _ = simulate_cauea(m, 0.0, 0.5, 1.0, s)
        b.append(restore(sk, times, s)[0])
    a, b = np.array(a), np.array(b)
    for j in range(3):
        assert ks_test(a[:, j], b[:, j]).pvalue > 0.01


def test_restore_stored_time_returns_stored_value():
    m = ornstein_uhlenbeck(1.0)
    s = stream_for(6)
    sk, _ = simulate_cauea(m, 0.0, 0.0, 1.0, s)
    before = (list(sk.segments[0].times), list(sk.segments[0].values))
    vals, ext = restore(sk, [0.0, 1.0, *before[0][1:-1]], s)
    assert list(vals) == [0.0, 0.0, *before[1][1:-1]]
    # the input skeleton is untouched
    assert (sk.segments[0].times, sk.segments[0].values) == before


def test_restore_jump_time_gives_post_jump_value():
    m = with_jumps(zero_drift(), rate=2.0, bound=2.0)
    for i in range(50):
        s = stream_for(7, i)
        sk, _ = simulate_caujea(m, 0.0, 0.0, 1.0, s)
        if sk.jump_count:
            vals, _ = restore(sk, sk.jump_times, s)
            assert list(vals) == sk.jump_post
            return
    pytest.fail("no skeleton with jumps drawn")


def test_restored_points_respect_their_bands():
    m = ornstein_uhlenbeck(1.0)
    s = stream_for(8)
    for _ in range(50):
        sk, _ = simulate_cauea(m, 0.0, 0.0, 1.0, s)
        _, ext = restore(sk, np.linspace(0.05, 0.95, 19), s)
        ext.check()
        assert ext.segments[0].count("restored") == 19


def test_zero_drift_midpoint_is_normal():
    m = zero_drift()
    z = []
    for i in range(5000):
        s = stream_for(9, i)
        sk, _ = simulate_cauea(m, 0.0, 0.0, 1.0, s)
        z.append(restore(sk, [0.5], s)[0][0])
    assert ks_test(z, stats.norm(0, 0.5).cdf).pvalue > 0.01


def test_one_pass_and_two_pass_restoration_agree():
    m = ornstein_uhlenbeck(1.0)
    one, two = [], []
    for i in range(4000):
        s = stream_for(10, i)
        sk, _ = simulate_cauea(m, 0.0, 0.0, 1.0, s)
        one.append(restore(sk, [0.25, 0.5], s)[0])
        s = stream_for(11, i)
        sk, _ = simulate_cauea(m, 0.0, 0.0, 1.0, s)
        v1, ext = restore(sk, [0.25], s)
        v2, _ = restore(ext, [0.5], s)
        two.append([v1[0], v2[0]])
    one, two = np.array(one), np.array(two)
    assert ks_test(one[:, 0], two[:, 0]).pvalue > 0.01
    assert ks_test(one[:, 1], two[:, 1]).pvalue > 0.01
    assert ks_test(one.sum(axis=1), two.sum(axis=1)).pvalue > 0.01


def test_restore_needs_layers():
    seg = Segment([0.0, 1.0], [0.0, 0.0], [None], ["endpoint", "endpoint"])
    with pytest.raises(ContractError):
        restore(BridgeSkeleton(0.0, 0.0, 1.0, [seg]), [0.5], stream_for(12))


def test_restore_rejects_times_outside_horizon():
    seg = Segment([0.0, 1.0], [0.0, 0.0], [Layer(-1, 1)], ["endpoint", "endpoint"])
    with pytest.raises(ValueError):
        restore(BridgeSkeleton(0.0, 0.0, 1.0, [seg]), [1.5], stream_for(13))


def test_original_scale_examples():
    assert np.array_equal(restore_original_scale(zero_drift(), [0.0, 1.5]), [0.0, 1.5])
    logv = lamperti_transform(
        DiffusionModel(lambda v: 0.0, lambda v: v, lambda v: 1.0, reference=1.0, domain=(0.0, math.inf)),
        phi_lower=0.125,
        phi_range=lambda lo, hi: (0.125, 0.125),
    )
    assert restore_original_scale(logv, [0.0])[0] == pytest.approx(1.0, abs=1e-12)
    v = np.random.default_rng(14).uniform(0.1, 20.0, 1000)
    back = restore_original_scale(logv, [logv.eta(x) for x in v])
    assert np.max(np.abs(back - v) / v) < 1e-10
