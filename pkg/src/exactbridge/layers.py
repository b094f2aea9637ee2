"""Brownian-bridge primitives: band probabilities, layers, conditional points.

A *band* is a closed interval ``[lower, upper]``. The probability that a
Brownian bridge from ``(s, x)`` to ``(t, y)`` stays inside a band is an
infinite reflection series; :class:`BandEnclosure` brackets it and tightens the
bracket one term at a time.

A :class:`Layer` records that a bridge segment lies in an outer band and, when
``inner`` is set, that it leaves the inner band. Layers are drawn from a nested
family of bands, so the layer of a segment is the annulus between the first
band containing the path and the band before it. Conditioning on the annulus,
rather than just the outer band, is what keeps the sub-bridge laws exact when
points are inserted later.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Callable, Sequence

from scipy.special import log_ndtr

from .errors import InvariantViolation, NumericFailure

MAX_REFINEMENTS = 10_000
MAX_PROPOSALS = 1_000_000
LAYER_SCHEME = "nested-arithmetic-bands/v1"

# slack for accumulated rounding in partial sums
_ROUNDING = 1e-14
_SQRT2 = math.sqrt(2.0)
_STD_NORMAL = NormalDist()

ENCLOSURE_AUDIT = {"refinements": 0, "enclosures": 0}

PhiRange = Callable[[float, float], "tuple[float, float]"]


class ProbabilityEnclosure:
    """A bracket ``[lo, hi]`` around a probability, refinable on demand.

    The base class holds a fixed value. Subclasses provide ``_next_bracket``;
    :meth:`refine` intersects the new bracket with the current one, so ``lo``
    never decreases and ``hi`` never increases. A new bracket that does not
    overlap the current one means the bounds are wrong and raises.
    """

    max_refinements = MAX_REFINEMENTS

    def __init__(self, lo: float, hi: float | None = None):
        hi = lo if hi is None else hi
        if not 0.0 <= lo <= hi <= 1.0:
            raise InvariantViolation(f"invalid enclosure [{lo}, {hi}]")
        self.lo = lo
        self.hi = hi
        self.refinements = 0
        ENCLOSURE_AUDIT["enclosures"] += 1

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def exact(self) -> bool:
        return self.lo == self.hi

    def refine(self) -> None:
        if self.exact:
            return
        if self.refinements >= self.max_refinements:
            raise NumericFailure(
                f"enclosure [{self.lo:.6g}, {self.hi:.6g}] undecided after "
                f"{self.refinements} refinements"
            )
        lo, hi = self._next_bracket()
        self.refinements += 1
        self._tighten(lo, hi)

    def refine_to(self, tol: float) -> "ProbabilityEnclosure":
        while self.width > tol:
            self.refine()
        return self

    def _next_bracket(self) -> tuple[float, float]:
        return self.lo, self.hi

    def _tighten(self, lo: float, hi: float) -> None:
        lo = max(self.lo, lo)
        hi = min(self.hi, hi)
        if lo > hi:
            raise InvariantViolation(
                f"enclosure refinement [{lo}, {hi}] left the previous bracket"
            )
        ENCLOSURE_AUDIT["refinements"] += 1
        self.lo, self.hi = lo, hi

    def __repr__(self) -> str:
        return f"{type(self).__name__}([{self.lo:.10g}, {self.hi:.10g}], n={self.refinements})"


class BandEnclosure(ProbabilityEnclosure):
    """P(Brownian bridge (s, x) -> (t, y) stays inside (lower, upper)).

    With width ``w`` and offsets ``u = x - lower``, ``v = y - lower`` the
    method of images gives ``1 - sum_j (sigma_j - tau_j)`` where

        sigma_j = exp(-2((j-1)w + u)((j-1)w + v)/dt) + exp(-2(jw - u)(jw - v)/dt)
        tau_j   = exp(-2jw(jw + v - u)/dt)           + exp(-2jw(jw - v + u)/dt)

    Every ``sigma_j`` and ``tau_j`` is at most ``2 q^((j-1)^2)`` with
    ``q = exp(-2 w^2 / dt)``, so after ``J`` terms the remainder is within
    ``2 sum_{k>=J} q^(k^2) <= 2 q^(J^2) / (1 - q^(2J+1))``.
    """

    def __init__(self, s: float, t: float, x: float, y: float, lower: float, upper: float):
        self.dt = t - s
        if self.dt <= 0.0:
            raise ValueError("band probability needs s < t")
        self.refinements = 0
        self._terms = 0
        ENCLOSURE_AUDIT["enclosures"] += 1
        if not (lower < x < upper and lower < y < upper):
            self.lo = self.hi = 0.0
            return
        self.lo, self.hi = 0.0, 1.0
        self._w = upper - lower
        self._u = x - lower
        self._v = y - lower
        self._log_q = -2.0 * self._w * self._w / self.dt
        self._partial = 1.0
        self.refine()

    def refine(self) -> None:
        if self.lo == self.hi:
            return
        if self.refinements >= self.max_refinements:
            raise NumericFailure(
                f"enclosure [{self.lo:.6g}, {self.hi:.6g}] undecided after {self.refinements} refinements"
            )
        self.refinements += 1
        lo, hi = self._next_bracket()
        self._tighten(lo, hi)

    def _next_bracket(self) -> tuple[float, float]:
        j = self._terms + 1
        w, u, v, c = self._w, self._u, self._v, -2.0 / self.dt
        jw = j * w
        e = math.exp
        sigma = e(c * (jw - w + u) * (jw - w + v)) + e(c * (jw - u) * (jw - v))
        tau = e(c * jw * (jw + v - u)) + e(c * jw * (jw - v + u))
        self._partial += tau - sigma
        self._terms = j
        log_head = j * j * self._log_q
        if log_head > -745.0:
            tail = 2.0 * e(log_head) / (1.0 - e((2 * j + 1) * self._log_q))
        else:
            tail = 0.0
            if sigma == 0.0 and tau == 0.0:
                # further terms underflow: the partial sum is all double precision can say
                p = min(max(self._partial, self.lo), self.hi)
                return p, p
        slack = tail + _ROUNDING * j
        p = self._partial
        return (p - slack if p > slack else 0.0), (p + slack if p + slack < 1.0 else 1.0)

    @property
    def terms(self) -> int:
        return self._terms


class CompositeEnclosure(ProbabilityEnclosure):
    """Enclosure of ``combine(parts)`` for a combination monotone in each part.

    ``combine`` maps the list of part brackets ``[(lo, hi), ...]`` to a bracket
    on the result using interval arithmetic.
    """

    def __init__(self, parts: Sequence[ProbabilityEnclosure], combine):
        self.parts = list(parts)
        self._combine = combine
        super().__init__(*self._bracket())

    def _bracket(self) -> tuple[float, float]:
        # round outwards: the combination itself rounds, and near-exact parts
        # can otherwise come back a few ulps inverted
        lo, hi = self._combine([(p.lo, p.hi) for p in self.parts])
        return _clip(lo - _ROUNDING), _clip(hi + _ROUNDING)

    def _next_bracket(self) -> tuple[float, float]:
        # refine the widest part; the others keep their brackets
        widest = max(self.parts, key=lambda p: p.width)
        if widest.width == 0.0:
            return self.lo, self.hi
        widest.refine()
        return self._bracket()

    def refine(self) -> None:
        if self.exact:
            return
        if all(p.exact for p in self.parts):
            self._tighten(*self._bracket())
            if not self.exact:
                # exact parts, rounding in combine: collapse to the midpoint
                self.lo = self.hi = 0.5 * (self.lo + self.hi)
            return
        super().refine()


def _clip(p: float) -> float:
    return 0.0 if p < 0.0 else 1.0 if p > 1.0 else p


def _product(brackets):
    lo = hi = 1.0
    for a, b in brackets:
        lo *= a
        hi *= b
    return lo, hi


def _annulus(brackets):
    # P_L(O) P_R(O) - P_L(I) P_R(I)
    (lo1, hi1), (lo2, hi2), (lo3, hi3), (lo4, hi4) = brackets
    return lo1 * lo2 - hi3 * hi4, hi1 * hi2 - lo3 * lo4


def _ratio(brackets):
    (nlo, nhi), (dlo, dhi) = brackets
    lo = nlo / dhi if dhi > 0.0 else 0.0
    hi = nhi / dlo if dlo > 0.0 else 1.0
    return lo, min(hi, 1.0)


def _conditional_ratio(brackets):
    # (P_j - P_floor) / (P_top - P_floor)
    (jlo, jhi), (flo, fhi), (tlo, thi) = brackets
    num_lo, num_hi = max(jlo - fhi, 0.0), jhi - flo
    den_lo, den_hi = tlo - fhi, thi - flo
    lo = num_lo / den_hi if den_hi > 0.0 else 0.0
    hi = num_hi / den_lo if den_lo > 0.0 else 1.0
    return lo, min(hi, 1.0)


def _left_leaves(brackets):
    # P(left child leaves I | not both stay in I) = (1 - A) / (1 - A B), A, B = P(in I | in O)
    (lilo, lihi), (lolo, lohi), (rilo, rihi), (rolo, rohi) = brackets
    a_lo = lilo / lohi if lohi > 0.0 else 0.0
    a_hi = min(1.0, lihi / lolo) if lolo > 0.0 else 1.0
    b_lo = rilo / rohi if rohi > 0.0 else 0.0
    b_hi = min(1.0, rihi / rolo) if rolo > 0.0 else 1.0

    def f(a, b):
        den = 1.0 - a * b
        return (1.0 - a) / den if den > 0.0 else None

    lo, hi = f(a_hi, b_lo), f(a_lo, b_hi)
    return (0.0 if lo is None else lo), (1.0 if hi is None else hi)


def product_enclosure(*parts: ProbabilityEnclosure) -> ProbabilityEnclosure:
    return CompositeEnclosure(parts, _product)


def ratio_enclosure(num: ProbabilityEnclosure, den: ProbabilityEnclosure) -> ProbabilityEnclosure:
    """Enclosure of ``num / den`` for events with ``num`` contained in ``den``."""
    return CompositeEnclosure([num, den], _ratio)


def decide_below(enc: ProbabilityEnclosure, u: float) -> bool:
    """Return ``u < p`` where ``p`` is the limit of ``enc``, refining as needed."""
    while True:
        if u < enc.lo:
            return True
        if u > enc.hi:
            return False
        if enc.exact:
            # tie on a degenerate bracket
            return True
        enc.refine()


def bernoulli_from_enclosure(enc: ProbabilityEnclosure, stream) -> bool:
    """Event of probability exactly ``lim enc``, decided retrospectively."""
    return decide_below(enc, stream.uniform())


def band_probability(
    s: float, t: float, x: float, y: float, lower: float, upper: float, tol: float | None = None
) -> BandEnclosure:
    if not lower < upper:
        raise ValueError(f"band needs lower < upper, got [{lower}, {upper}]")
    enc = BandEnclosure(s, t, x, y, lower, upper)
    if tol is not None:
        enc.refine_to(tol)
    return enc


def sample_bridge_points(x: float, y: float, s: float, t: float, times: Sequence[float], stream) -> list[float]:
    """Brownian bridge from (s, x) to (t, y) at increasing ``times`` in (s, t)."""
    out = []
    ps, pv = s, x
    for q in times:
        if not ps < q < t:
            if q == ps and ps != s:
                raise ValueError("bridge times must be strictly increasing")
            raise ValueError(f"bridge time {q} outside ({s}, {t}) or unordered")
        frac = (q - ps) / (t - ps)
        mean = pv + (y - pv) * frac
        sd = math.sqrt((q - ps) * (t - q) / (t - ps))
        pv = mean + sd * stream.normal()
        ps = q
        out.append(pv)
    return out


@dataclass(frozen=True)
class Layer:
    """Path lies in ``[lower, upper]`` and, if ``inner`` is set, leaves ``inner``.

    ``phi_lower``/``phi_upper`` bound phi over the outer band.
    """

    lower: float
    upper: float
    inner: tuple[float, float] | None = None
    index: int = 1
    phi_lower: float = -math.inf
    phi_upper: float = math.inf

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise InvariantViolation(f"layer band [{self.lower}, {self.upper}] is empty")
        if self.phi_lower > self.phi_upper:
            raise InvariantViolation(f"layer phi bounds {self.phi_lower} > {self.phi_upper}")

    def contains(self, v: float) -> bool:
        return self.lower <= v <= self.upper

    def within(self, other: "Layer") -> bool:
        return other.lower <= self.lower and self.upper <= other.upper

    def with_bounds(self, phi_range: PhiRange | None, parent: "Layer | None" = None) -> "Layer":
        if phi_range is None:
            if parent is None:
                return self
            lo, hi = parent.phi_lower, parent.phi_upper
        else:
            lo, hi = phi_range(self.lower, self.upper)
            lo, hi = float(lo), float(hi)
            if parent is not None:
                # the child band sits inside the parent's, so both bounds hold
                lo = max(lo, parent.phi_lower)
                hi = min(hi, parent.phi_upper)
        return Layer(self.lower, self.upper, self.inner, self.index, lo, hi)


@dataclass
class IntervalRecord:
    """One element of the adaptive work-set.

    ``(s_bar, t_bar)`` are the surrounding known points with values ``x`` and
    ``y``; ``(s, t)`` is the part of it still to be examined.
    """

    s_bar: float
    t_bar: float
    s: float
    t: float
    x: float
    y: float
    layer: Layer

    def __post_init__(self):
        if not (self.s_bar <= self.s < self.t <= self.t_bar):
            raise InvariantViolation(
                f"record times out of order: {self.s_bar}, {self.s}, {self.t}, {self.t_bar}"
            )

    @property
    def m(self) -> float:
        return 0.5 * (self.s + self.t)

    @property
    def d(self) -> float:
        return 0.5 * (self.t - self.s)


def default_resolution(duration: float, scale: float = 0.5) -> float:
    return scale * math.sqrt(duration)


def sample_layer(
    s: float,
    t: float,
    x: float,
    y: float,
    a: float | None,
    stream,
    phi_range: PhiRange | None = None,
) -> Layer:
    """Draw the layer of a bridge under the bands ``[min(x,y) - ka, max(x,y) + ka]``.

    Returns the smallest ``k`` whose band contains the path: one uniform ``u``
    is compared against the enclosures of ``P(band k)`` for ``k = 1, 2, ...``
    and the first ``k`` with ``u < P(band k)`` is the layer.
    """
    if a is None:
        a = default_resolution(t - s)
    if not a > 0.0:
        raise ValueError("layer resolution must be positive")
    lo0, hi0 = min(x, y), max(x, y)
    u = stream.uniform()
    k = 1
    while True:
        enc = BandEnclosure(s, t, x, y, lo0 - k * a, hi0 + k * a)
        if decide_below(enc, u):
            break
        k += 1
        if k > MAX_REFINEMENTS:
            raise NumericFailure("layer index exceeded the refinement cap")
    inner = None if k == 1 else (lo0 - (k - 1) * a, hi0 + (k - 1) * a)
    return Layer(lo0 - k * a, hi0 + k * a, inner, k).with_bounds(phi_range)


def _upper_tail(x: float) -> float:
    return 0.5 * math.erfc(x / _SQRT2)


def _log_gauss_mass(a: float, b: float) -> float:
    """log P(a < Z < b) for standard normal Z, accurate in both tails."""
    if a >= 0.0:
        return float(log_ndtr(-a)) + math.log1p(-math.exp(float(log_ndtr(-b) - log_ndtr(-a))))
    if b <= 0.0:
        return _log_gauss_mass(-b, -a)
    return math.log(1.0 - _upper_tail(b) - _upper_tail(-a))


def _std_tail(a: float, b: float, stream) -> float:
    """Standard normal conditioned on ``0 <= a < Z < b``."""
    qa, qb = _upper_tail(a), _upper_tail(b)
    if qa > 1e-280:
        p = qb + stream.uniform() * (qa - qb)
        if 0.0 < p < 1.0:
            return -_STD_NORMAL.inv_cdf(p)
        return a
    # far tail: rejection from a uniform or a translated exponential proposal
    for _ in range(MAX_PROPOSALS):
        if (b - a) * a < 1.0:
            z = a + (b - a) * stream.uniform()
            if stream.uniform() < math.exp(-0.5 * (z * z - a * a)):
                return z
        else:
            rate = 0.5 * (a + math.sqrt(a * a + 4.0))
            z = a + stream.exponential(rate)
            if z < b and stream.uniform() < math.exp(-0.5 * (z - rate) ** 2):
                return z
    raise NumericFailure(f"tail normal on ({a}, {b}) not sampled")


def _truncated_normal(mean: float, sd: float, lower: float, upper: float, stream) -> float:
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    if a >= 0.0:
        z = _std_tail(a, b, stream)
    elif b <= 0.0:
        z = -_std_tail(-b, -a, stream)
    else:
        fa, fb = _upper_tail(-a), 1.0 - _upper_tail(b)
        p = fa + stream.uniform() * (fb - fa)
        z = _STD_NORMAL.inv_cdf(min(max(p, 1e-300), 1.0 - 1e-16))
    return mean + sd * z


def _crossing_tilts(s, q, t, x, y, inner):
    """Single-barrier crossing probabilities of the two sub-bridges as ``exp(beta z + gamma)``.

    For ``z`` inside ``inner`` their sum bounds the probability that the path
    through ``(q, z)`` leaves ``inner``.
    """
    a, b = inner
    d1, d2 = q - s, t - q
    return [
        (2.0 * (b - x) / d1, -2.0 * (b - x) * b / d1),  # left crosses b
        (-2.0 * (x - a) / d1, 2.0 * (x - a) * a / d1),  # left crosses a
        (2.0 * (b - y) / d2, -2.0 * (b - y) * b / d2),  # right crosses b
        (-2.0 * (y - a) / d2, 2.0 * (y - a) * a / d2),  # right crosses a
    ]


def _point_envelope(mean, sd, layer, tilts):
    """Mixture pieces ``(lower, upper, tilted mean, log mass)`` of the proposal."""
    lo, hi = layer.lower, layer.upper
    pieces = []
    if layer.inner is None:
        spans = [(lo, hi)]
    else:
        ilo, ihi = layer.inner
        spans = [(lo, ilo), (ihi, hi)]
        for beta, gamma in tilts:
            mu = mean + beta * sd * sd
            logw = gamma + beta * mean + 0.5 * (beta * sd) ** 2
            pieces.append((ilo, ihi, mu, logw + _log_gauss_mass((ilo - mu) / sd, (ihi - mu) / sd)))
    for a, b in spans:
        if b > a:
            pieces.append((a, b, mean, _log_gauss_mass((a - mean) / sd, (b - mean) / sd)))
    top = max(p[3] for p in pieces)
    weights = [math.exp(p[3] - top) for p in pieces]
    total = sum(weights)
    return pieces, [w / total for w in weights]


def sample_point_given_layer(rec: IntervalRecord, q: float, stream) -> float:
    """Draw X_q for the bridge of ``rec`` conditional on its layer.

    The target density is the bridge marginal times ``g(z)``, the probability
    that the sub-bridges through ``(q, z)`` stay in the outer band and, for
    ``z`` in the inner band, leave it. Outside the inner band ``g <= 1``; inside
    it ``g`` is at most the summed single-barrier crossing probabilities, each
    ``exp(linear in z)``. The proposal is the marginal times this envelope, a
    mixture of truncated Gaussians, and ``g / envelope`` is decided
    retrospectively with band-probability enclosures.
    """
    s, t, x, y, layer = rec.s_bar, rec.t_bar, rec.x, rec.y, rec.layer
    if not s < q < t:
        raise ValueError(f"query time {q} not inside ({s}, {t})")
    dur = t - s
    mean = x + (y - x) * (q - s) / dur
    sd = math.sqrt((q - s) * (t - q) / dur)
    lo, hi = layer.lower, layer.upper
    inner = layer.inner
    tilts = _crossing_tilts(s, q, t, x, y, inner) if inner is not None else []
    pieces, weights = _point_envelope(mean, sd, layer, tilts)
    for _ in range(MAX_PROPOSALS):
        u = stream.uniform()
        k = 0
        while k < len(weights) - 1 and u >= weights[k]:
            u -= weights[k]
            k += 1
        a, b, mu, _ = pieces[k]
        z = _truncated_normal(mu, sd, a, b, stream)
        if not (lo < z < hi and a <= z <= b):
            continue
        left = BandEnclosure(s, q, x, z, lo, hi)
        right = BandEnclosure(q, t, z, y, lo, hi)
        if inner is not None and inner[0] < z < inner[1]:
            bound = sum(math.exp(beta * z + gamma) for beta, gamma in tilts)

            def combine(br, bound=bound):
                plo, phi_ = _annulus(br)
                return plo / bound, phi_ / bound

            enc = CompositeEnclosure(
                [
                    left,
                    right,
                    BandEnclosure(s, q, x, z, inner[0], inner[1]),
                    BandEnclosure(q, t, z, y, inner[0], inner[1]),
                ],
                combine,
            )
        else:
            enc = CompositeEnclosure([left, right], _product)
        if bernoulli_from_enclosure(enc, stream):
            return z
    raise NumericFailure(f"no point accepted in ({s}, {t}) after {MAX_PROPOSALS} proposals")


class _BandChain:
    """Nested bands for a child bridge, growing from its endpoint hull.

    Each side grows by ``max(a, gap / MAX_STEPS)`` per step towards the next
    milestone band (clipped to it), then on towards the following milestone.
    The inner milestone (if any) is a member of the chain, so "inside the inner
    band" is a function of the index.
    """

    MAX_STEPS = 8

    def __init__(self, s, t, x, y, milestones, a):
        self.s, self.t, self.x, self.y, self.a = s, t, x, y, a
        self.bands = [(min(x, y), max(x, y))]
        self.inner_index = None
        for k, (mlo, mhi) in enumerate(milestones):
            base_lo, base_hi = self.bands[-1]
            step_lo = max(a, (base_lo - mlo) / self.MAX_STEPS)
            step_hi = max(a, (mhi - base_hi) / self.MAX_STEPS)
            n = 0
            while self.bands[-1] != (mlo, mhi):
                n += 1
                self.bands.append((max(mlo, base_lo - n * step_lo), min(mhi, base_hi + n * step_hi)))
            if k == 0 and len(milestones) == 2:
                self.inner_index = len(self.bands) - 1
        self.outer = milestones[-1]
        self._encs: dict[int, BandEnclosure] = {}
        self._top = self.enclosure(len(self.bands) - 1)

    def band(self, j):
        return self.bands[j]

    def enclosure(self, j):
        enc = self._encs.get(j)
        if enc is None:
            enc = BandEnclosure(self.s, self.t, self.x, self.y, *self.bands[j])
            self._encs[j] = enc
        return enc

    def sample_index(self, stream, floor: int = 0) -> int:
        """Smallest j with the path in band j, given it is in the outer band but not in band ``floor``.

        ``P(J <= j | floor < J) = (P_j - P_floor) / (P_outer - P_floor)``; band 0
        is the endpoint hull, which has probability zero.
        """
        u = stream.uniform()
        base = self.enclosure(floor) if floor else ProbabilityEnclosure(0.0)
        j = floor + 1
        while True:
            band = self.band(j)
            if band == self.outer:
                return j
            enc = CompositeEnclosure([self.enclosure(j), base, self._top], _conditional_ratio)
            if decide_below(enc, u):
                return j
            j += 1

    def sample_index_within(self, stream, ceiling: int) -> int:
        """Smallest j with the path in band j, given it stays in band ``ceiling``."""
        u = stream.uniform()
        top = self.enclosure(ceiling)
        for j in range(1, ceiling):
            if decide_below(ratio_enclosure(self.enclosure(j), top), u):
                return j
        return ceiling

    def within_inner(self, j) -> bool:
        return self.inner_index is not None and j <= self.inner_index

    def layer(self, j) -> Layer:
        lo, hi = self.bands[j]
        inner = self.bands[j - 1] if j >= 2 else None
        return Layer(lo, hi, inner, j)


def refine_layers(
    rec: IntervalRecord,
    q: float,
    z: float,
    stream,
    phi_range: PhiRange | None = None,
    scale: float = 0.5,
) -> tuple[Layer, Layer]:
    """Layers for ``[s_bar, q]`` and ``[q, t_bar]`` given ``X_q = z`` and the parent layer.

    Each child index is drawn from its own chain conditional on staying in the
    parent band. If the parent must leave an inner band that ``z`` lies inside,
    the child that leaves it is chosen first (left with probability
    ``(1 - A) / (1 - AB)``, ``A`` and ``B`` the children's chances of staying
    inside) and the indices are then drawn given that choice.
    """
    parent = rec.layer
    if not rec.s_bar < q < rec.t_bar:
        raise ValueError(f"split time {q} not inside ({rec.s_bar}, {rec.t_bar})")
    if not parent.lower < z < parent.upper:
        raise InvariantViolation(f"split value {z} outside parent band [{parent.lower}, {parent.upper}]")
    outer = (parent.lower, parent.upper)
    inner = parent.inner
    inner_active = inner is not None and inner[0] < z < inner[1]
    milestones = [inner, outer] if inner_active else [outer]
    left = _BandChain(rec.s_bar, q, rec.x, z, milestones, default_resolution(q - rec.s_bar, scale))
    right = _BandChain(q, rec.t_bar, z, rec.y, milestones, default_resolution(rec.t_bar - q, scale))
    if not inner_active:
        jl, jr = left.sample_index(stream), right.sample_index(stream)
    else:
        # at least one child leaves the inner band: pick which, then the indices
        il, ir = left.inner_index, right.inner_index
        enc = CompositeEnclosure(
            [left.enclosure(il), left._top, right.enclosure(ir), right._top], _left_leaves
        )
        if bernoulli_from_enclosure(enc, stream):
            jl, jr = left.sample_index(stream, floor=il), right.sample_index(stream)
        else:
            jl, jr = left.sample_index_within(stream, il), right.sample_index(stream, floor=ir)
    return (
        left.layer(jl).with_bounds(phi_range, parent),
        right.layer(jr).with_bounds(phi_range, parent),
    )


def insert_point(rec: IntervalRecord, q: float, stream, phi_range: PhiRange | None = None):
    """Sample ``X_q`` given the record's layer and refine the two child layers."""
    z = sample_point_given_layer(rec, q, stream)
    left, right = refine_layers(rec, q, z, stream, phi_range)
    return z, left, right
