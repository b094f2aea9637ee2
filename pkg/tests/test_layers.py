import math
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from exactbridge.errors import InvariantViolation
from exactbridge.layers import (
    BandEnclosure,
    IntervalRecord,
    Layer,
    ProbabilityEnclosure,
    band_probability,
    bernoulli_from_enclosure,
    insert_point,
    refine_layers,
    sample_bridge_points,
    sample_layer,
    sample_point_given_layer,
)
from exactbridge.model import sine_drift
from exactbridge.streams import stream_for
from exactbridge.verification import band_probability_mc, bridge_grid, ks_test, stay_probability


def test_bridge_points_marginal_and_covariance():
    s = stream_for(11)
    draws = np.array([sample_bridge_points(0.0, 0.0, 0.0, 1.0, [0.25, 0.5, 0.75], s) for _ in range(20000)])
    u = np.array([0.25, 0.5, 0.75])
    expected = np.minimum.outer(u, u) - np.outer(u, u)
    assert np.allclose(np.cov(draws.T), expected, atol=0.006)
    mid = draws[:, 1]
    se = math.sqrt(0.25 / len(mid))
    assert abs(mid.mean()) < 4 * se
    assert abs(mid.var() - 0.25) < 4 * 0.25 * math.sqrt(2 / len(mid))


def test_bridge_point_with_shifted_end():
    s = stream_for(12)
    z = np.array([sample_bridge_points(0.0, 2.0, 0.0, 1.0, [0.5], s)[0] for _ in range(20000)])
    assert abs(z.mean() - 1.0) < 4 * 0.5 / math.sqrt(len(z))
    assert abs(z.var() - 0.25) < 0.015


def test_band_probability_trivial_cases():
    enc = band_probability(0.0, 1.0, 2.0, 0.0, -1.0, 1.0)
    assert enc.lo == enc.hi == 0.0
    wide = band_probability(0.0, 1.0, 0.0, 0.0, -10.0, 10.0, tol=1e-14)
    assert wide.lo > 1 - 1e-12
    with pytest.raises(ValueError):
        band_probability(0.0, 1.0, 0.0, 0.0, 1.0, 1.0)


def test_band_probability_against_grid_monte_carlo():
    enc = band_probability(0.0, 1.0, 0.0, 0.0, -1.0, 1.0, tol=1e-12)
    est, se = band_probability_mc(0.0, 1.0, 0.0, 0.0, -1.0, 1.0, 200000, 200, stream_for(13))
    assert abs(est - enc.lo) < 3 * se


def test_band_probability_asymmetric_against_grid_monte_carlo():
    enc = band_probability(0.0, 0.5, 0.2, -0.1, -0.4, 0.6, tol=1e-12)
    est, se = band_probability_mc(0.0, 0.5, 0.2, -0.1, -0.4, 0.6, 200000, 200, stream_for(14))
    assert abs(est - enc.lo) < 3 * se


def test_enclosure_refinement_is_monotone():
    enc = BandEnclosure(0.0, 1.0, 0.1, -0.2, -0.6, 0.5)
    lo, hi = enc.lo, enc.hi
    while enc.width > 1e-13:
        enc.refine()
        assert lo <= enc.lo <= enc.hi <= hi
        lo, hi = enc.lo, enc.hi


def test_disjoint_refinement_raises():
    enc = ProbabilityEnclosure(0.2, 0.4)
    with pytest.raises(InvariantViolation):
        enc._tighten(0.5, 0.6)


def test_layer_frequencies_match_band_differences():
    n = 20000
    a = 0.5
    s = stream_for(15)
    counts = Counter(sample_layer(0.0, 1.0, 0.0, 0.0, a, s).index for _ in range(n))
    prev = 0.0
    for k in range(1, 6):
        p = band_probability(0.0, 1.0, 0.0, 0.0, -k * a, k * a, tol=1e-13).lo
        q = p - prev
        freq = counts.get(k, 0) / n
        assert abs(freq - q) <= 3 * math.sqrt(q * (1 - q) / n) + 1e-12, (k, freq, q)
        prev = p
    assert sum(counts.values()) == n


def test_huge_resolution_gives_first_layer():
    s = stream_for(16)
    ks = [sample_layer(0.0, 1.0, 0.0, 0.0, 100.0, s).index for _ in range(5000)]
    assert sum(k == 1 for k in ks) / len(ks) > 0.999


def _filtered_oracle(lower, upper, inner, q, n, seed, steps=200):
    """Grid bridges from (0,0) to (1,0) kept with their continuous-time chance of satisfying the layer."""
    gen = np.random.default_rng(seed)
    out = []
    h = 1.0 / steps
    qi = int(round(q * steps))
    while sum(len(o) for o in out) < n:
        _, paths = bridge_grid(0.0, 0.0, 0.0, 1.0, steps, 20000, gen)
        p = stay_probability(paths, lower, upper, h)
        if inner is not None:
            p = p - stay_probability(paths, inner[0], inner[1], h)
        keep = gen.uniform(size=len(p)) < p
        out.append(paths[keep, qi])
    return np.concatenate(out)[:n]


def test_point_given_wide_band_is_bridge_marginal():
    s = stream_for(17)
    rec = IntervalRecord(0.0, 1.0, 0.0, 1.0, 0.0, 0.0, Layer(-50.0, 50.0))
    z = [sample_point_given_layer(rec, 0.5, s) for _ in range(10000)]
    assert ks_test(z, stats.norm(0, 0.5).cdf).pvalue > 0.01


def test_point_given_band_matches_filtered_grid_oracle():
    s = stream_for(18)
    rec = IntervalRecord(0.0, 1.0, 0.0, 1.0, 0.0, 0.0, Layer(-1.0, 1.0))
    z = np.array([sample_point_given_layer(rec, 0.5, s) for _ in range(10000)])
    oracle = _filtered_oracle(-1.0, 1.0, None, 0.5, 10000, 19)
    assert ks_test(z, oracle).pvalue > 0.01
    assert np.all((z > -1.0) & (z < 1.0))


def test_point_given_annulus_matches_filtered_grid_oracle():
    s = stream_for(20)
    lay = Layer(-1.0, 1.0, (-0.5, 0.5), 2)
    rec = IntervalRecord(0.0, 1.0, 0.0, 1.0, 0.0, 0.0, lay)
    z = np.array([sample_point_given_layer(rec, 0.3, s) for _ in range(6000)])
    oracle = _filtered_oracle(-1.0, 1.0, (-0.5, 0.5), 0.3, 6000, 21)
    assert ks_test(z, oracle).pvalue > 0.01


def _stay(s, t, x, y, band):
    if band is None:
        return 0.0
    return band_probability(s, t, x, y, band[0], band[1], tol=1e-13).lo


def test_child_layers_follow_the_conditional_law():
    # given X_q = z the two sub-bridges are independent, so each outcome has
    # probability d_left * d_right / P(parent annulus | z) with d = P(outer) - P(inner)
    parent = Layer(-1.0, 1.0, (-0.5, 0.5), 2)
    rec = IntervalRecord(0.0, 1.0, 0.0, 1.0, 0.0, 0.1, parent)
    q, z, n = 0.4, 0.2, 20000
    s = stream_for(22)
    seen = Counter()
    for _ in range(n):
        left, right = refine_layers(rec, q, z, s)
        assert left.within(parent) and right.within(parent)
        seen[(left.lower, left.upper, left.inner, right.lower, right.upper, right.inner)] += 1
    norm = _stay(0, q, 0.0, z, (-1, 1)) * _stay(q, 1, z, 0.1, (-1, 1)) - _stay(0, q, 0.0, z, (-0.5, 0.5)) * _stay(
        q, 1, z, 0.1, (-0.5, 0.5)
    )
    total = 0.0
    for (ll, lu, li, rl, ru, ri), c in seen.items():
        dl = _stay(0, q, 0.0, z, (ll, lu)) - _stay(0, q, 0.0, z, li)
        dr = _stay(q, 1, z, 0.1, (rl, ru)) - _stay(q, 1, z, 0.1, ri)
        p = dl * dr / norm
        total += p
        assert abs(c / n - p) <= 3.5 * math.sqrt(p * (1 - p) / n) + 2e-4
    assert total == pytest.approx(1.0, abs=5e-3)


def test_child_bounds_nest_within_parent():
    m = sine_drift()
    s = stream_for(23)
    root = sample_layer(0.0, 2.0, 0.0, 0.3, None, s, m.phi_range)
    rec = IntervalRecord(0.0, 2.0, 0.0, 2.0, 0.0, 0.3, root)
    for _ in range(500):
        z, left, right = insert_point(rec, 0.7, s, m.phi_range)
        assert root.lower < z < root.upper
        for child in (left, right):
            assert child.within(root)
            assert child.phi_lower >= root.phi_lower and child.phi_upper <= root.phi_upper


def test_bernoulli_from_fixed_enclosures():
    s = stream_for(24)
    assert all(bernoulli_from_enclosure(ProbabilityEnclosure(1.0), s) for _ in range(1000))
    assert not any(bernoulli_from_enclosure(ProbabilityEnclosure(0.0), s) for _ in range(1000))


class _Converging(ProbabilityEnclosure):
    def __init__(self):
        super().__init__(0.0, 1.0)
        self.k = 0

    def _next_bracket(self):
        self.k += 1
        w = 2.0**-self.k
        return max(0.0, 0.3 - w), min(1.0, 0.3 + w)


def test_bernoulli_from_converging_enclosure():
    n = 100000
    s = stream_for(25)
    hits = sum(bernoulli_from_enclosure(_Converging(), s) for _ in range(n))
    assert abs(hits / n - 0.3) < 3 * math.sqrt(0.21 / n)
