"""Exact bridges of jump diffusions.

A proposal is a compound Poisson path ``J`` (rate ``Lambda``, sizes from the
proposal density) superposed on a Brownian bridge from ``x`` to ``y - J_T``,
so the end point is hit. It is accepted in stages: the end-point factor
``P1``, the jump factor ``P2``, then, for each stretch between jumps, a layer
floor and a thinning (or adaptive) pass against ``phi + lambda``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .cauea import resolve_segment, tally_rejection
from .cuea import accept_layer_floor, bounded_layer, thin_segment
from .errors import ConditionViolation, InvalidModelError, NumericFailure
from .layers import MAX_PROPOSALS, sample_bridge_points
from .model import UnitVolatilityModel, log_jump_ratio
from .skeleton import DiagnosticCounters, Segment, SkeletonCAUJEA, SkeletonCUJEA
from .streams import as_stream


@dataclass
class CompoundPoissonPath:
    times: np.ndarray
    sizes: np.ndarray
    T: float
    cumulative: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.sizes = np.asarray(self.sizes, dtype=float)
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("jump times must be strictly increasing")
        self.cumulative = np.concatenate([[0.0], np.cumsum(self.sizes)])

    @property
    def count(self) -> int:
        return len(self.times)

    @property
    def total(self) -> float:
        return float(self.cumulative[-1])

    def value(self, t) -> float:
        """``J_t`` (right-continuous)."""
        return float(self.cumulative[np.searchsorted(self.times, t, side="right")])

    def left_limit(self, t) -> float:
        return float(self.cumulative[np.searchsorted(self.times, t, side="left")])


def sample_compound_poisson(rate, sampler, T, stream) -> CompoundPoissonPath:
    """``N_T ~ Poisson(rate T)`` sorted uniform times and iid sizes from ``sampler(generator, n)``."""
    if rate < 0 or not T > 0:
        raise ValueError("need rate >= 0 and T > 0")
    n = stream.poisson(rate * T)
    times = sorted(T * stream.uniform() for _ in range(n))
    if n and sampler is None:
        raise InvalidModelError("model has no proposal jump sampler")
    sizes = np.asarray(sampler(stream.generator, n), dtype=float) if n else np.empty(0)
    return CompoundPoissonPath(np.array(times), sizes, T)


def p1_end_point(x, y, T, jump_total) -> float:
    """``exp(-(y - J_T - x)^2 / 2T)``."""
    return math.exp(-((y - jump_total - x) ** 2) / (2.0 * T))


def p2_jump_weights(m: UnitVolatilityModel, pre, post) -> float:
    """``kappa^-N prod lambda f_nu e^{-dA} / (Lambda f_delta)`` over the jumps."""
    pre = np.asarray(pre, dtype=float)
    if pre.size == 0:
        return 1.0
    logs = log_jump_ratio(m, pre, post) - math.log(m.kappa)
    k = int(np.argmax(logs))
    if logs[k] > 1e-12:
        raise ConditionViolation(
            f"jump ratio exceeds kappa={m.kappa} at jump {k}", (float(pre[k]), float(np.asarray(post)[k]))
        )
    return float(math.exp(min(0.0, float(np.sum(logs)))))


def _check_jump_inputs(m, T):
    if not T > 0:
        raise ValueError("T must be positive")
    if m.has_jumps and (m.proposal_jump_sampler is None or m.target_jump_density is None):
        raise InvalidModelError("jump models need target and proposal jump densities and a sampler")


def _propose(m: UnitVolatilityModel, x, y, T, stream, counters, adaptive: bool):
    counters.proposals += 1
    J = sample_compound_poisson(m.intensity_bound, m.proposal_jump_sampler, T, stream)
    if not stream.uniform() < p1_end_point(x, y, T, J.total):
        counters.pre_rejections += 1
        return None
    psi = J.times
    base = sample_bridge_points(x, y - J.total, 0.0, T, psi, stream) if J.count else []
    before = J.cumulative[:-1]
    pre = np.asarray(base, dtype=float) + before
    post = pre + J.sizes
    if J.count and not stream.uniform() < p2_jump_weights(m, pre, post):
        counters.pre_rejections += 1
        return None
    bounds = [0.0, *psi.tolist(), T]
    starts = [x, *post.tolist()]
    ends = [*pre.tolist(), y]
    segments = []
    for i in range(J.count + 1):
        s, t = bounds[i], bounds[i + 1]
        kinds = ("endpoint" if i == 0 else "jump-post", "endpoint" if i == J.count else "jump-pre")
        layer = bounded_layer(m, s, t, starts[i], ends[i], stream)
        if not accept_layer_floor(m, layer, t - s, stream):
            counters.pre_rejections += 1
            return None
        seg = Segment.start(s, t, starts[i], ends[i], layer, kinds)
        if adaptive:
            stage = resolve_segment(m, seg, stream, counters, m.intensity_bound)
            if stage is not None:
                tally_rejection(counters, stage)
                return None
        elif not thin_segment(m, seg, layer, stream, counters, m.intensity_bound):
            counters.thinning_rejections += 1
            return None
        segments.append(seg)
    cls = SkeletonCAUJEA if adaptive else SkeletonCUJEA
    sk = cls(
        x,
        y,
        T,
        segments,
        jump_times=psi.tolist(),
        jump_pre=pre.tolist(),
        jump_post=post.tolist(),
        auxiliary={"jump_sizes": J.sizes.tolist(), "layers": [seg.layers[0] for seg in segments]},
    )
    counters.acceptances += 1
    counters.kappa_histogram[sk.kappa] += 1
    counters.jump_histogram[sk.jump_count] += 1
    return sk


def _simulate(m, x, y, T, stream, counters, adaptive):
    _check_jump_inputs(m, T)
    stream = as_stream(stream)
    counters = DiagnosticCounters() if counters is None else counters
    start = time.perf_counter()
    try:
        for _ in range(MAX_PROPOSALS):
            sk = _propose(m, x, y, T, stream, counters, adaptive)
            if sk is not None:
                return sk, counters
    finally:
        counters.wall_clock += time.perf_counter() - start
    raise NumericFailure("no proposal accepted within the proposal cap")


def simulate_caujea(m: UnitVolatilityModel, x, y, T, stream, counters=None):
    """Jump-diffusion bridge skeleton with adaptive thinning between jumps."""
    return _simulate(m, x, y, T, stream, counters, adaptive=True)


def simulate_cujea(m: UnitVolatilityModel, x, y, T, stream, counters=None):
    """Jump-diffusion bridge skeleton with one Poisson thinning pass per inter-jump stretch."""
    return _simulate(m, x, y, T, stream, counters, adaptive=False)
