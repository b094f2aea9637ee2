"""Conditioned unbounded exact algorithm with a single global layer.

Each proposal draws a layer for the whole bridge, pre-rejects on the layer's
lower phi bound, then thins a Poisson process of rate ``U - L`` on ``[0, T]``.
"""

from __future__ import annotations

import math
import time
from dataclasses import replace

from .errors import ConditionViolation, InvalidModelError, InvariantViolation, NumericFailure
from .layers import MAX_PROPOSALS, Layer, insert_point, sample_layer
from .model import UnitVolatilityModel, evaluate_phi
from .skeleton import DiagnosticCounters, Segment, SkeletonCUEA
from .streams import as_stream


def _slack(U):
    return 1e-9 * (1.0 + abs(U))


def thinning_accept(L, U, phis, stream, intensities=None, jump_bound=0.0) -> bool:
    """Accept with probability ``prod (Lambda + U - phi_i - lambda_i) / (Lambda + U - L)``.

    Without jumps this is ``prod (U - phi_i) / (U - L)``. Values of phi (or
    intensities) outside their bounds mean a layer or model contract is broken.
    """
    phis = list(phis)
    if not phis:
        return True
    lams = [0.0] * len(phis) if intensities is None else list(intensities)
    for p in phis:
        if p < L - _slack(U) or p > U + _slack(U):
            raise InvariantViolation(f"phi={p} outside layer bounds [{L}, {U}]")
    for lam in lams:
        if lam < 0.0 or lam > jump_bound * (1 + 1e-12):
            raise ConditionViolation(f"intensity {lam} outside [0, {jump_bound}]", lam)
    width = jump_bound + U - L
    if width <= 0.0:
        return True
    prob = 1.0
    for p, lam in zip(phis, lams):
        prob *= min(1.0, max(0.0, (jump_bound + U - p - lam) / width))
    return stream.uniform() < prob


def bounded_layer(m: UnitVolatilityModel, s, t, x, y, stream) -> Layer:
    """Initial layer for ``[s, t]`` with phi bounds floored at the model's global bound."""
    layer = sample_layer(s, t, x, y, None, stream, m.phi_range)
    if layer.phi_upper < m.phi_lower:
        raise ConditionViolation(
            f"phi_range({layer.lower}, {layer.upper}) upper bound {layer.phi_upper} below Phi={m.phi_lower}",
            (layer.lower, layer.upper),
        )
    if layer.phi_lower < m.phi_lower:
        layer = replace(layer, phi_lower=m.phi_lower)
    return layer


def accept_layer_floor(m: UnitVolatilityModel, layer: Layer, duration, stream) -> bool:
    """Bernoulli ``exp(-(L - Phi) * duration)``."""
    return stream.uniform() < math.exp(-(layer.phi_lower - m.phi_lower) * duration)


def thin_segment(m: UnitVolatilityModel, seg: Segment, layer: Layer, stream, counters, jump_bound=0.0) -> bool:
    """Non-adaptive thinning of one segment holding a single gap.

    Draws ``kappa ~ Poisson((Lambda + U - L) * duration)`` uniform times, places
    the points from the layered bridge (refining layers as it goes, which also
    prepares the segment for restoration) and applies :func:`thinning_accept`.
    """
    s, t = seg.start_time, seg.end_time
    L, U = layer.phi_lower, layer.phi_upper
    rate = (jump_bound + U - L) * (t - s)
    kappa = stream.poisson(rate) if rate > 0.0 else 0
    times = sorted(s + (t - s) * stream.uniform() for _ in range(kappa))
    phis, lams = [], []
    for q in times:
        i = seg.locate(q)
        if not seg.times[i] < q < seg.times[i + 1]:
            continue  # coincident time, probability zero
        z, left, right = insert_point(seg.record(i), q, stream, m.phi_range)
        seg.split(i, q, z, left, right)
        phis.append(evaluate_phi(m, z))
        if jump_bound > 0.0:
            lams.append(float(m.intensity(z)))
    counters.phi_evaluations += len(phis)
    return thinning_accept(L, U, phis, stream, lams if jump_bound > 0.0 else None, jump_bound)


def _check_diffusion_inputs(m, T):
    if not T > 0:
        raise ValueError("T must be positive")
    if m.has_jumps:
        raise InvalidModelError("model has a jump component; use the jump algorithms")


def propose_cuea(m: UnitVolatilityModel, x, y, T, stream, counters) -> SkeletonCUEA | None:
    counters.proposals += 1
    layer = bounded_layer(m, 0.0, T, x, y, stream)
    if not accept_layer_floor(m, layer, T, stream):
        counters.pre_rejections += 1
        return None
    seg = Segment.start(0.0, T, x, y, layer)
    if not thin_segment(m, seg, layer, stream, counters):
        counters.thinning_rejections += 1
        return None
    counters.acceptances += 1
    sk = SkeletonCUEA(x, y, T, [seg], auxiliary={"layer": layer, "kappa": seg.count("skeletal")})
    counters.kappa_histogram[sk.kappa] += 1
    return sk


def simulate_cuea(m: UnitVolatilityModel, x, y, T, stream, counters=None):
    """Draw one skeleton of the ``x -> y`` bridge on ``[0, T]``; returns ``(skeleton, counters)``."""
    _check_diffusion_inputs(m, T)
    stream = as_stream(stream)
    counters = DiagnosticCounters() if counters is None else counters
    start = time.perf_counter()
    try:
        for _ in range(MAX_PROPOSALS):
            sk = propose_cuea(m, x, y, T, stream, counters)
            if sk is not None:
                return sk, counters
    finally:
        counters.wall_clock += time.perf_counter() - start
    raise NumericFailure("no proposal accepted within the proposal cap")


def acceptance_probability_estimate(m: UnitVolatilityModel, x, y, T, n, stream):
    """Empirical acceptance rate of ``n`` proposals with its binomial standard error."""
    _check_diffusion_inputs(m, T)
    if n < 1:
        raise ValueError("n must be at least 1")
    stream = as_stream(stream)
    counters = DiagnosticCounters()
    for _ in range(n):
        propose_cuea(m, x, y, T, stream, counters)
    rate = counters.acceptances / n
    return rate, math.sqrt(rate * (1.0 - rate) / n)
