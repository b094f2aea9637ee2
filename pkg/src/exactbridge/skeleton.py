"""Skeleton containers and per-run diagnostic counters."""

from __future__ import annotations

import bisect
import copy
from collections import Counter
from dataclasses import dataclass, field

from .errors import InvariantViolation
from .layers import IntervalRecord, Layer


@dataclass
class Segment:
    """Points of a continuous stretch of path with one layer per gap.

    ``layers[i]`` constrains the bridge between ``times[i]`` and ``times[i+1]``.
    """

    times: list
    values: list
    layers: list
    kinds: list

    @classmethod
    def start(cls, s, t, x, y, layer, kinds=("endpoint", "endpoint")):
        return cls([s, t], [x, y], [layer], list(kinds))

    @property
    def start_time(self):
        return self.times[0]

    @property
    def end_time(self):
        return self.times[-1]

    def locate(self, q) -> int:
        """Index ``i`` with ``times[i] <= q < times[i+1]``."""
        i = bisect.bisect_right(self.times, q) - 1
        return min(max(i, 0), len(self.times) - 2)

    def record(self, i) -> IntervalRecord:
        s, t = self.times[i], self.times[i + 1]
        return IntervalRecord(s, t, s, t, self.values[i], self.values[i + 1], self.layers[i])

    def split(self, i, q, z, left: Layer, right: Layer, kind="skeletal"):
        if not self.times[i] < q < self.times[i + 1]:
            raise InvariantViolation(f"split time {q} not inside gap {i}")
        for lay in (left, right):
            if not lay.within(self.layers[i]):
                raise InvariantViolation("child band escapes its parent band")
        if not self.layers[i].lower < z < self.layers[i].upper:
            raise InvariantViolation(f"point {z} outside its band")
        self.times.insert(i + 1, q)
        self.values.insert(i + 1, z)
        self.kinds.insert(i + 1, kind)
        self.layers[i : i + 1] = [left, right]

    def count(self, kind) -> int:
        return sum(k == kind for k in self.kinds)


@dataclass
class BridgeSkeleton:
    """Exact finite summary of an accepted path on ``[0, T]``.

    Continuous stretches are stored as :class:`Segment` objects; consecutive
    segments are separated by jumps at ``jump_times`` with pre- and post-jump
    values. ``auxiliary`` holds the proposal's auxiliary draws (initial layers,
    Poisson counts) for inspection.
    """

    x: float
    y: float
    T: float
    segments: list
    jump_times: list = field(default_factory=list)
    jump_pre: list = field(default_factory=list)
    jump_post: list = field(default_factory=list)
    auxiliary: dict = field(default_factory=dict)
    algorithm = "bridge"

    @property
    def kappa(self) -> int:
        return sum(seg.count("skeletal") for seg in self.segments)

    @property
    def jump_count(self) -> int:
        return len(self.jump_times)

    def copy(self) -> "BridgeSkeleton":
        # layers are never mutated, so sharing them is safe
        segs = [Segment(list(g.times), list(g.values), list(g.layers), list(g.kinds)) for g in self.segments]
        return type(self)(
            self.x,
            self.y,
            self.T,
            segs,
            list(self.jump_times),
            list(self.jump_pre),
            list(self.jump_post),
            copy.copy(self.auxiliary),
        )

    def check(self):
        """Hard structural checks: time order, band membership, jump bookkeeping."""
        if len(self.segments) != len(self.jump_times) + 1:
            raise InvariantViolation("segment count does not match jump count")
        if self.segments[0].values[0] != self.x or self.segments[-1].values[-1] != self.y:
            raise InvariantViolation("skeleton endpoints differ from the conditioning values")
        for i, seg in enumerate(self.segments):
            if any(b <= a for a, b in zip(seg.times, seg.times[1:])):
                raise InvariantViolation("segment times not strictly increasing")
            for k, lay in enumerate(seg.layers):
                for v in seg.values[k : k + 2]:
                    if not lay.lower <= v <= lay.upper:
                        raise InvariantViolation(f"value {v} outside band [{lay.lower}, {lay.upper}]")
            if i:
                if seg.values[0] != self.jump_post[i - 1] or self.segments[i - 1].values[-1] != self.jump_pre[i - 1]:
                    raise InvariantViolation("segment boundary values disagree with jump values")
        return self


class SkeletonCUEA(BridgeSkeleton):
    algorithm = "cuea"


class SkeletonCAUEA(BridgeSkeleton):
    algorithm = "cauea"


class SkeletonCUJEA(BridgeSkeleton):
    algorithm = "cujea"


class SkeletonCAUJEA(BridgeSkeleton):
    algorithm = "caujea"


@dataclass
class DiagnosticCounters:
    """Proposal accounting for one or more simulation calls.

    ``pre_rejections`` counts rejections decided without evaluating phi at a
    path point (layer factors, end-point and jump factors, residual factors);
    ``thinning_rejections`` counts rejections at evaluated points.
    """

    proposals: int = 0
    pre_rejections: int = 0
    thinning_rejections: int = 0
    acceptances: int = 0
    phi_evaluations: int = 0
    kappa_histogram: Counter = field(default_factory=Counter)
    jump_histogram: Counter = field(default_factory=Counter)
    wall_clock: float = 0.0

    def check(self):
        if self.proposals != self.pre_rejections + self.thinning_rejections + self.acceptances:
            raise InvariantViolation(f"counter identity broken: {self}")
        return self

    def merge(self, other: "DiagnosticCounters") -> "DiagnosticCounters":
        self.proposals += other.proposals
        self.pre_rejections += other.pre_rejections
        self.thinning_rejections += other.thinning_rejections
        self.acceptances += other.acceptances
        self.phi_evaluations += other.phi_evaluations
        self.kappa_histogram.update(other.kappa_histogram)
        self.jump_histogram.update(other.jump_histogram)
        self.wall_clock += other.wall_clock
        return self

    @property
    def acceptance_rate(self) -> float:
        return self.acceptances / self.proposals if self.proposals else float("nan")

    def summary(self) -> dict:
        n = max(self.acceptances, 1)
        mean_kappa = sum(k * c for k, c in self.kappa_histogram.items()) / n
        return {
            "proposals": self.proposals,
            "acceptances": self.acceptances,
            "pre_rejections": self.pre_rejections,
            "thinning_rejections": self.thinning_rejections,
            "acceptance_rate": self.acceptance_rate,
            "phi_evaluations": self.phi_evaluations,
            "phi_evaluations_per_acceptance": self.phi_evaluations / n,
            "mean_kappa": mean_kappa,
            "wall_clock": self.wall_clock,
        }
