"""Conditioned adaptive unbounded exact algorithm.

Instead of thinning a Poisson process over the whole interval at once, the
process is explored from the centre of each uncovered interval outwards. The
nearest point to the centre is at distance ``tau ~ Exp(2 (U - L))``; if it
falls outside the interval the interval is done, otherwise the point is
evaluated, the layer is refined on both sides and the tighter lower bounds pay
for the untouched remainder through an extra exponential factor.
"""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass

from .cuea import _check_diffusion_inputs, _slack, accept_layer_floor, bounded_layer
from .errors import ConditionViolation, InvariantViolation, NumericFailure
from .layers import MAX_PROPOSALS, IntervalRecord, insert_point
from .model import UnitVolatilityModel, evaluate_phi
from .skeleton import DiagnosticCounters, Segment, SkeletonCAUEA
from .streams import as_stream

DROPPED = "dropped"
PLACED = "point-placed"
REJECTED = "rejected"


@dataclass
class StepOutcome:
    kind: str
    point: tuple | None = None
    children: tuple = ()
    tau: float = math.inf
    stage: str = ""


class WorkSet:
    """First-in first-out queue of interval records with a coverage check.

    ``resolved`` is the total length of the parts of ``[s0, t0]`` known to
    carry no further Poisson points; together with the active parts of the
    queued records it must always cover the segment exactly.
    """

    def __init__(self, rec: IntervalRecord):
        self.records = deque([rec])
        self.s0, self.t0 = rec.s, rec.t
        self.resolved = 0.0

    def __len__(self):
        return len(self.records)

    def pop(self) -> IntervalRecord:
        return self.records.popleft()

    def push(self, rec: IntervalRecord):
        self.records.append(rec)

    def check_tiling(self):
        active = sum(r.t - r.s for r in self.records)
        span = self.t0 - self.s0
        if abs(active + self.resolved - span) > 1e-9 * max(1.0, span):
            raise InvariantViolation(
                f"work-set covers {active + self.resolved} of a segment of length {span}"
            )


def bisect_step(rec: IntervalRecord, m: UnitVolatilityModel, stream, jump_bound: float = 0.0) -> StepOutcome:
    """One iteration of the adaptive loop on ``rec``.

    Returns ``dropped`` when the nearest Poisson point lies outside the active
    interval, ``rejected`` when either the point factor or the residual factor
    rejects, and otherwise ``point-placed`` with the two child records.
    """
    layer = rec.layer
    L, U = layer.phi_lower, layer.phi_upper
    d = rec.d
    tau = stream.exponential(2.0 * (jump_bound + U - L))
    if tau > d:
        return StepOutcome(DROPPED, tau=tau)
    xi = rec.m - tau if stream.coin() else rec.m + tau
    z, left, right = insert_point(rec, xi, stream, m.phi_range)
    phi = evaluate_phi(m, z)
    if phi < L - _slack(U) or phi > U + _slack(U):
        raise InvariantViolation(f"phi={phi} outside layer bounds [{L}, {U}]")
    lam = 0.0
    if jump_bound > 0.0:
        lam = float(m.intensity(z))
        if lam < 0.0 or lam > jump_bound * (1 + 1e-12):
            raise ConditionViolation(f"intensity {lam} outside [0, {jump_bound}] at x={z}", z)
    point = (xi, z, phi)
    width = jump_bound + U - L
    if not stream.uniform() < (jump_bound + U - phi - lam) / width:
        return StepOutcome(REJECTED, point=point, tau=tau, stage="point")
    if left.phi_lower < L or right.phi_lower < L:
        raise InvariantViolation("child lower bound below the parent's")
    excess = (left.phi_lower + right.phi_lower - 2.0 * L) * (d - tau)
    if excess > 0.0 and not stream.uniform() < math.exp(-excess):
        return StepOutcome(REJECTED, point=point, tau=tau, stage="residual")
    children = []
    if rec.s < rec.m - tau:
        children.append(IntervalRecord(rec.s_bar, xi, rec.s, rec.m - tau, rec.x, z, left))
    if rec.m + tau < rec.t:
        children.append(IntervalRecord(xi, rec.t_bar, rec.m + tau, rec.t, z, rec.y, right))
    return StepOutcome(PLACED, point=point, children=(left, right, tuple(children)), tau=tau)


def resolve_segment(m: UnitVolatilityModel, seg: Segment, stream, counters, jump_bound: float = 0.0):
    """Run the adaptive loop on a one-gap segment, inserting accepted points into it.

    Returns ``None`` once the work-set empties, or the stage (``"point"`` or
    ``"residual"``) of the first rejection.
    """
    work = WorkSet(seg.record(0))
    while len(work):
        rec = work.pop()
        out = bisect_step(rec, m, stream, jump_bound)
        if out.point is not None:
            counters.phi_evaluations += 1
        if out.kind == DROPPED:
            work.resolved += rec.t - rec.s
        elif out.kind == REJECTED:
            return out.stage
        else:
            xi, z, _ = out.point
            left, right, children = out.children
            i = seg.locate(xi)
            if seg.times[i] != rec.s_bar or seg.times[i + 1] != rec.t_bar:
                raise InvariantViolation("record does not match a gap of the skeleton")
            seg.split(i, xi, z, left, right)
            work.resolved += 2.0 * out.tau
            for child in children:
                work.push(child)
        work.check_tiling()
    return None


def tally_rejection(counters, stage):
    if stage == "point":
        counters.thinning_rejections += 1
    else:
        counters.pre_rejections += 1


def propose_cauea(m: UnitVolatilityModel, x, y, T, stream, counters) -> SkeletonCAUEA | None:
    counters.proposals += 1
    layer = bounded_layer(m, 0.0, T, x, y, stream)
    if not accept_layer_floor(m, layer, T, stream):
        counters.pre_rejections += 1
        return None
    seg = Segment.start(0.0, T, x, y, layer)
    stage = resolve_segment(m, seg, stream, counters)
    if stage is not None:
        tally_rejection(counters, stage)
        return None
    counters.acceptances += 1
    sk = SkeletonCAUEA(x, y, T, [seg], auxiliary={"layer": layer, "kappa": seg.count("skeletal")})
    counters.kappa_histogram[sk.kappa] += 1
    return sk


def simulate_cauea(m: UnitVolatilityModel, x, y, T, stream, counters=None):
    """Draw one adaptive skeleton of the ``x -> y`` bridge on ``[0, T]``."""
    _check_diffusion_inputs(m, T)
    stream = as_stream(stream)
    counters = DiagnosticCounters() if counters is None else counters
    start = time.perf_counter()
    try:
        for _ in range(MAX_PROPOSALS):
            sk = propose_cauea(m, x, y, T, stream, counters)
            if sk is not None:
                return sk, counters
    finally:
        counters.wall_clock += time.perf_counter() - start
    raise NumericFailure("no proposal accepted within the proposal cap")
