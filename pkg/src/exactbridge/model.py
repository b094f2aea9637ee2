"""SDE coefficients, the Lamperti transform and model checks.

Algorithms work with a :class:`UnitVolatilityModel`: an SDE with unit
volatility, drift ``alpha`` and, optionally, a state-dependent compound Poisson
jump component. ``phi(x) = (alpha(x)^2 + alpha'(x)) / 2`` and its bounds on
compact bands drive every acceptance step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy import integrate, optimize

from .errors import ConditionViolation, InvalidModelError, NumericFailure

QUAD_TOL = 1e-12


def _zero(x):
    return 0.0 * x


@dataclass(frozen=True)
class DiffusionModel:
    """Coefficients of ``dV = beta(V-) dt + sigma(V-) dW + dJ``.

    ``jump_density(size, v)`` is the density of a jump of the given size from
    state ``v``; ``reference`` is the lower limit ``v*`` of the Lamperti
    integral. ``drift_prime`` and ``volatility_second`` are optional; without
    them ``alpha'`` is taken by central differences.
    """

    drift: Callable[[float], float]
    volatility: Callable[[float], float]
    volatility_prime: Callable[[float], float]
    intensity: Callable[[float], float] | None = None
    jump_density: Callable[[float, float], float] | None = None
    reference: float = 0.0
    domain: tuple[float, float] = (-math.inf, math.inf)
    drift_prime: Callable[[float], float] | None = None
    volatility_second: Callable[[float], float] | None = None
    name: str = "custom"


@dataclass(frozen=True)
class UnitVolatilityModel:
    """``dX = alpha(X-) dt + dW + dJ`` with jump intensity ``lambda(X-)``.

    Jump densities are densities of the jump *size* given the pre-jump state:
    ``target_jump_density(size, pre)`` for the model and
    ``proposal_jump_density(size, pre)`` for the compound Poisson proposal with
    constant rate ``intensity_bound``. ``proposal_jump_sampler(generator, n)``
    draws ``n`` proposal jump sizes and must not depend on the state.
    """

    alpha: Callable[[Any], Any]
    alpha_prime: Callable[[Any], Any]
    antiderivative: Callable[[Any], Any]
    phi_lower: float
    phi_range: Callable[[float, float], tuple[float, float]]
    intensity: Callable[[Any], Any] = _zero
    intensity_bound: float = 0.0
    target_jump_density: Callable[[Any, Any], Any] | None = None
    proposal_jump_density: Callable[[Any, Any], Any] | None = None
    proposal_jump_sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None
    kappa: float = 1.0
    eta: Callable[[Any], Any] = lambda v: v
    eta_inverse: Callable[[Any], Any] = lambda x: x
    name: str = "custom"
    params: dict = field(default_factory=dict)
    phi_range_exact: bool = True
    constant_phi: float | None = None
    constant_intensity: float | None = None

    def phi(self, x):
        a = self.alpha(x)
        return 0.5 * (a * a + self.alpha_prime(x))

    @property
    def has_jumps(self) -> bool:
        return self.intensity_bound > 0.0

    def describe(self) -> str:
        ps = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.name}({ps})" if ps else self.name


def evaluate_phi(m: UnitVolatilityModel, x: float) -> float:
    if not math.isfinite(x):
        raise InvalidModelError(f"phi evaluated outside the model domain at x={x}")
    val = float(m.phi(x))
    if not math.isfinite(val):
        raise InvalidModelError(f"phi({x}) is not finite")
    return val


# ---------------------------------------------------------------- transform


def _check_sigma(sigma, v):
    s = float(sigma(v))
    if not s > 0.0:
        raise InvalidModelError(f"volatility must be strictly positive, got sigma({v})={s}")
    return s


def _quad(f, a, b, what):
    val, err = integrate.quad(f, a, b, epsabs=QUAD_TOL, epsrel=1e-12, limit=200)
    if not err <= 1e-8 * max(1.0, abs(val)):
        raise NumericFailure(f"quadrature for {what} did not converge on [{a}, {b}] (error {err:.3g})")
    return val


def heuristic_phi_range(phi, lipschitz: float, points: int = 257):
    """Grid range of phi widened by ``lipschitz * h / 2``.

    Heuristic: the bounds are only as good as the Lipschitz constant, so
    exactness claims do not hold for models using it.
    """

    def phi_range(lo, hi):
        xs = np.linspace(lo, hi, points)
        vals = np.asarray(phi(xs), dtype=float)
        pad = 0.5 * lipschitz * (hi - lo) / (points - 1)
        return float(vals.min() - pad), float(vals.max() + pad)

    return phi_range


def lamperti_transform(
    m: DiffusionModel,
    *,
    phi_lower: float,
    phi_range=None,
    lipschitz: float | None = None,
    eta=None,
    eta_inverse=None,
    antiderivative=None,
    intensity_bound: float = 0.0,
    proposal_jump_density=None,
    proposal_jump_sampler=None,
    kappa: float = 1.0,
    params: dict | None = None,
) -> UnitVolatilityModel:
    """Map ``m`` to unit volatility via ``eta(v) = int_{v*}^v 1/sigma``.

    ``eta``/``eta_inverse`` are used when given; otherwise they are computed by
    adaptive quadrature and bracketed root finding. ``phi_lower`` is the
    user's global lower bound on phi. Without an analytic ``phi_range`` a
    ``lipschitz`` constant for phi is required and the result is flagged as
    heuristic.
    """
    sigma, sigma_p, beta = m.volatility, m.volatility_prime, m.drift
    lo_dom, hi_dom = m.domain

    if eta is None:

        def eta(v):
            if not lo_dom < v < hi_dom:
                raise InvalidModelError(f"state {v} outside domain {m.domain}")
            return _quad(lambda u: 1.0 / _check_sigma(sigma, u), m.reference, v, "eta")

    if eta_inverse is None:

        def eta_inverse(x):
            if x == 0.0:
                return m.reference
            step = 1.0
            a = b = m.reference
            for _ in range(200):
                if x > 0:
                    b = b + step if hi_dom == math.inf else 0.5 * (b + hi_dom)
                    if eta(b) >= x:
                        break
                else:
                    a = a - step if lo_dom == -math.inf else 0.5 * (a + lo_dom)
                    if eta(a) <= x:
                        break
                step *= 2.0
            else:
                raise NumericFailure(f"could not bracket eta^-1({x})")
            return optimize.brentq(lambda v: eta(v) - x, a, b, xtol=QUAD_TOL, rtol=4 * np.finfo(float).eps)

    def _alpha_v(v):
        s = _check_sigma(sigma, v)
        return beta(v) / s - 0.5 * sigma_p(v)

    inv = np.vectorize(eta_inverse, otypes=[float])

    def alpha(x):
        if np.ndim(x):
            return np.array([_alpha_v(v) for v in inv(x)])
        return _alpha_v(eta_inverse(x))

    if m.drift_prime is not None and m.volatility_second is not None:

        def _alpha_prime_v(v):
            s = _check_sigma(sigma, v)
            sp = sigma_p(v)
            return s * ((m.drift_prime(v) * s - beta(v) * sp) / (s * s) - 0.5 * m.volatility_second(v))

        def alpha_prime(x):
            if np.ndim(x):
                return np.array([_alpha_prime_v(v) for v in inv(x)])
            return _alpha_prime_v(eta_inverse(x))

    else:
        h = 1e-5

        def alpha_prime(x):
            return (alpha(x + h) - alpha(x - h)) / (2 * h)

    if antiderivative is None:

        def antiderivative(u):
            if np.ndim(u):
                return np.array([antiderivative(float(v)) for v in np.ravel(u)]).reshape(np.shape(u))
            return _quad(alpha, 0.0, u, "A")

    exact = phi_range is not None

    def phi_fn(x):
        a = alpha(x)
        return 0.5 * (a * a + alpha_prime(x))

    if phi_range is None:
        if lipschitz is None:
            raise InvalidModelError("either phi_range or a Lipschitz constant for phi is required")
        phi_range = heuristic_phi_range(phi_fn, lipschitz)

    kwargs = {}
    if m.intensity is not None:
        lam_v = m.intensity

        def intensity(x):
            if np.ndim(x):
                return np.array([lam_v(v) for v in inv(x)])
            return lam_v(eta_inverse(x))

        kwargs["intensity"] = intensity
        if m.jump_density is not None:
            f_mu = m.jump_density

            def target_jump_density(size, pre):
                v = eta_inverse(pre)
                v_post = eta_inverse(pre + size)
                return f_mu(v_post - v, v) * _check_sigma(sigma, v_post)

            kwargs["target_jump_density"] = target_jump_density
    return UnitVolatilityModel(
        alpha=alpha,
        alpha_prime=alpha_prime,
        antiderivative=antiderivative,
        phi_lower=phi_lower,
        phi_range=phi_range,
        intensity_bound=intensity_bound,
        proposal_jump_density=proposal_jump_density,
        proposal_jump_sampler=proposal_jump_sampler,
        kappa=kappa,
        eta=eta,
        eta_inverse=eta_inverse,
        name=m.name,
        params=dict(params or {}),
        phi_range_exact=exact,
        **kwargs,
    )


# ---------------------------------------------------------------- Girsanov


@dataclass
class DiscretePath:
    """A path known on a grid, for the verification oracles.

    ``values[k]`` is the right-continuous value at ``times[k]``; jumps are
    listed separately with their pre/post values. ``x0`` and ``xT`` default to
    the first and last grid values.
    """

    times: np.ndarray
    values: np.ndarray
    jump_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    pre_jump: np.ndarray = field(default_factory=lambda: np.empty(0))
    post_jump: np.ndarray = field(default_factory=lambda: np.empty(0))
    x0: float | None = None
    xT: float | None = None
    rule: str = "trapezoid"

    def integral(self, f) -> float:
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(f(np.asarray(self.values, dtype=float)), dtype=float) * np.ones_like(t)
        dt = np.diff(t)
        if self.rule == "left":
            return float(np.sum(v[:-1] * dt))
        return float(np.sum(0.5 * (v[:-1] + v[1:]) * dt))


def log_jump_ratio(m: UnitVolatilityModel, pre, post):
    """log of ``lambda(pre) f_nu(post-pre; pre) e^{-[A(post)-A(pre)]} / (Lambda f_delta(post-pre; pre))``."""
    pre = np.asarray(pre, dtype=float)
    post = np.asarray(post, dtype=float)
    size = post - pre
    num = np.asarray(m.intensity(pre), dtype=float) * np.asarray(m.target_jump_density(size, pre), dtype=float)
    den = m.intensity_bound * np.asarray(m.proposal_jump_density(size, pre), dtype=float)
    if np.any(den <= 0.0):
        idx = int(np.flatnonzero(np.atleast_1d(den) <= 0.0)[0])
        raise ZeroDivisionError(f"proposal jump density is zero at jump {idx}")
    with np.errstate(divide="ignore"):
        return np.log(num) - np.log(den) - (m.antiderivative(post) - m.antiderivative(pre))


def log_rnd_unconditioned(m: UnitVolatilityModel, path: DiscretePath, T: float) -> float:
    """log dQ^x/dW^x for a path described on a grid (Girsanov for jump diffusions)."""
    x0 = float(path.values[0] if path.x0 is None else path.x0)
    xT = float(path.values[-1] if path.xT is None else path.xT)
    out = float(m.antiderivative(xT) - m.antiderivative(x0)) - path.integral(m.phi)
    if m.has_jumps or len(path.jump_times):
        lam_int = path.integral(m.intensity)
        out -= lam_int - m.intensity_bound * T
        if len(path.jump_times):
            out += float(np.sum(log_jump_ratio(m, path.pre_jump, path.post_jump)))
    return out


# ---------------------------------------------------------------- validation


@dataclass
class ConditionCheck:
    status: str  # "pass", "fail" or "not-checkable"
    detail: str = ""
    witness: Any = None


@dataclass
class ValidationReport:
    checks: dict[str, ConditionCheck]
    region: str

    @property
    def ok(self) -> bool:
        return all(c.status != "fail" for c in self.checks.values())

    def lines(self) -> list[str]:
        out = [f"checked region: {self.region}"]
        for name, c in self.checks.items():
            w = "" if c.witness is None else f" witness={c.witness}"
            out.append(f"{name}: {c.status} {c.detail}{w}".rstrip())
        return out


def validate_model(m: UnitVolatilityModel, grid, pair_samples: int = 1000, stream=None) -> ValidationReport:
    """Spot-check the model's declared bounds on a finite grid.

    Existence of solutions and the growth bound cannot be decided from finitely
    many evaluations and are reported as not-checkable.
    """
    from .streams import as_stream

    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("validation grid is empty")
    stream = as_stream(stream if stream is not None else 0)
    gen = stream.generator
    checks: dict[str, ConditionCheck] = {}
    checks["existence"] = ConditionCheck("not-checkable", "user-asserted")

    a = np.asarray(m.alpha(grid), dtype=float)
    ap = np.asarray(m.alpha_prime(grid), dtype=float)
    h = 1e-5
    fd = (np.asarray(m.alpha(grid + h), dtype=float) - np.asarray(m.alpha(grid - h), dtype=float)) / (2 * h)
    err = np.abs(fd - ap) / (1.0 + np.abs(ap))
    i = int(np.argmax(err))
    if err[i] > 1e-5:
        checks["continuity"] = ConditionCheck("fail", "alpha' disagrees with finite differences", float(grid[i]))
    else:
        checks["continuity"] = ConditionCheck("pass", "alpha' matches finite differences")

    k_needed = float(np.max((a * a + 1.0) / (1.0 + grid * grid)))
    checks["growth"] = ConditionCheck("not-checkable", f"grid consistent with K >= {k_needed:.6g}")

    lam = np.asarray(m.intensity(grid), dtype=float) * np.ones_like(grid)
    bad = np.flatnonzero((lam < 0.0) | (lam > m.intensity_bound))
    if bad.size:
        checks["jump_rate"] = ConditionCheck(
            "fail", f"lambda outside [0, {m.intensity_bound}]", float(grid[bad[0]])
        )
    else:
        checks["jump_rate"] = ConditionCheck("pass", f"0 <= lambda <= {m.intensity_bound}")

    phi = np.asarray(m.phi(grid), dtype=float) * np.ones_like(grid)
    j = int(np.argmin(phi))
    if phi[j] < m.phi_lower:
        checks["phi_lower"] = ConditionCheck("fail", f"phi={phi[j]:.6g} < Phi={m.phi_lower}", float(grid[j]))
    else:
        checks["phi_lower"] = ConditionCheck("pass", f"min phi on grid {phi[j]:.6g} >= {m.phi_lower}")

    if m.has_jumps and m.proposal_jump_sampler is not None and m.target_jump_density is not None:
        pre = gen.choice(grid, size=pair_samples)
        post = pre + np.asarray(m.proposal_jump_sampler(gen, pair_samples), dtype=float)
        ratio = np.exp(log_jump_ratio(m, pre, post))
        k = int(np.argmax(ratio))
        if ratio[k] > m.kappa * (1 + 1e-12):
            checks["kappa"] = ConditionCheck(
                "fail", f"jump ratio {ratio[k]:.6g} > kappa={m.kappa}", (float(pre[k]), float(post[k]))
            )
        else:
            checks["kappa"] = ConditionCheck("pass", f"max sampled ratio {ratio[k]:.6g} <= {m.kappa}")
    else:
        checks["kappa"] = ConditionCheck("not-checkable", "no jump component")

    worst = None
    lo_g, hi_g = float(grid.min()), float(grid.max())
    for _ in range(50):
        a_, b_ = np.sort(gen.uniform(lo_g, hi_g, 2))
        if b_ <= a_:
            continue
        L, U = m.phi_range(float(a_), float(b_))
        xs = np.linspace(a_, b_, 1000)
        vals = np.asarray(m.phi(xs), dtype=float) * np.ones_like(xs)
        viol = np.maximum(L - vals, vals - U)
        idx = int(np.argmax(viol))
        if viol[idx] > 1e-12 * (1 + abs(U)):
            worst = (float(a_), float(b_), float(xs[idx]))
            break
    if worst is not None:
        checks["phi_range"] = ConditionCheck("fail", "phi outside phi_range on a sub-band", worst)
    else:
        label = "analytic" if m.phi_range_exact else "heuristic - exactness claims void"
        checks["phi_range"] = ConditionCheck("pass", f"brackets phi on sampled sub-bands ({label})")

    region = f"[{lo_g:.6g}, {hi_g:.6g}] with {grid.size} points"
    return ValidationReport(checks, region)


def check_kappa(m: UnitVolatilityModel, pre: float, post: float) -> float:
    ratio = float(np.exp(log_jump_ratio(m, pre, post)))
    if ratio > m.kappa * (1 + 1e-12):
        raise ConditionViolation(f"jump ratio {ratio:.6g} exceeds kappa={m.kappa}", (pre, post))
    return ratio


# ---------------------------------------------------------------- builtins


def zero_drift() -> UnitVolatilityModel:
    return UnitVolatilityModel(
        alpha=_zero,
        alpha_prime=_zero,
        antiderivative=_zero,
        phi_lower=0.0,
        phi_range=lambda lo, hi: (0.0, 0.0),
        name="zero",
        constant_phi=0.0,
    )


def ornstein_uhlenbeck(theta: float = 1.0) -> UnitVolatilityModel:
    if not theta > 0:
        raise InvalidModelError("theta must be positive")

    def phi_range(lo, hi):
        sq_min = 0.0 if lo <= 0.0 <= hi else min(lo * lo, hi * hi)
        sq_max = max(lo * lo, hi * hi)
        return 0.5 * (theta * theta * sq_min - theta), 0.5 * (theta * theta * sq_max - theta)

    return UnitVolatilityModel(
        alpha=lambda x: -theta * x,
        alpha_prime=lambda x: -theta + 0.0 * x,
        antiderivative=lambda u: -0.5 * theta * u * u,
        phi_lower=-0.5 * theta,
        phi_range=phi_range,
        name="ou",
        params={"theta": theta},
    )


def _cos_range(lo, hi):
    if hi - lo >= 2 * math.pi:
        return -1.0, 1.0
    cmax = 1.0 if math.floor(hi / (2 * math.pi)) * 2 * math.pi >= lo else max(math.cos(lo), math.cos(hi))
    odd = math.floor((hi - math.pi) / (2 * math.pi)) * 2 * math.pi + math.pi
    cmin = -1.0 if odd >= lo else min(math.cos(lo), math.cos(hi))
    return cmin, cmax


def sine_drift() -> UnitVolatilityModel:
    def g(c):
        return 0.5 * (1.0 - c * c + c)

    def phi_range(lo, hi):
        cmin, cmax = _cos_range(lo, hi)
        return min(g(cmin), g(cmax)), g(min(max(0.5, cmin), cmax))

    return UnitVolatilityModel(
        alpha=np.sin,
        alpha_prime=np.cos,
        antiderivative=lambda u: 1.0 - np.cos(u),
        phi_lower=-0.5,
        phi_range=phi_range,
        name="sine",
    )


def logistic(r: float = 1.0, capacity: float = 1.0, sigma: float = 1.0) -> UnitVolatilityModel:
    """Lamperti-transformed ``dV = rV(1 - V/K) dt + sigma V dW`` on ``V > 0``."""
    if not (r > 0 and capacity > 0 and sigma > 0):
        raise InvalidModelError("logistic parameters must be positive")
    c = r / sigma - 0.5 * sigma
    b = r / (sigma * capacity)
    lin = c * b + 0.5 * r / capacity

    def quad_w(w):
        return 0.5 * b * b * w * w - lin * w + 0.5 * c * c

    w_star = lin / (b * b)
    phi_lower = quad_w(w_star) if w_star > 0 else 0.5 * c * c

    def phi_range(lo, hi):
        w_lo, w_hi = math.exp(sigma * lo), math.exp(sigma * hi)
        ends = (quad_w(w_lo), quad_w(w_hi))
        low = quad_w(w_star) if w_lo <= w_star <= w_hi else min(ends)
        return low, max(ends)

    return UnitVolatilityModel(
        alpha=lambda x: c - b * np.exp(sigma * x),
        alpha_prime=lambda x: -b * sigma * np.exp(sigma * x),
        antiderivative=lambda u: c * u - (b / sigma) * (np.exp(sigma * u) - 1.0),
        phi_lower=phi_lower,
        phi_range=phi_range,
        eta=lambda v: np.log(v) / sigma,
        eta_inverse=lambda x: np.exp(sigma * x),
        name="logistic",
        params={"r": r, "capacity": capacity, "sigma": sigma},
    )


def _normal_pdf(scale):
    norm = 1.0 / (scale * math.sqrt(2 * math.pi))

    def pdf(size, pre=None):
        size = np.asarray(size, dtype=float)
        return norm * np.exp(-0.5 * (size / scale) ** 2)

    return pdf


def with_jumps(
    base: UnitVolatilityModel,
    rate: float,
    bound: float | None = None,
    jump_scale: float = 1.0,
    kappa: float | None = None,
) -> UnitVolatilityModel:
    """Add constant-rate Gaussian jumps, proposed from the same Gaussian.

    With ``bound = rate`` and identical densities the Condition-6 ratio is
    ``exp(-[A(post) - A(pre)])``; ``kappa`` defaults to 1 and must be supplied
    for drifts with non-constant ``A``.
    """
    bound = rate if bound is None else bound
    if not 0 <= rate <= bound:
        raise InvalidModelError("jump rate must lie in [0, bound]")
    pdf = _normal_pdf(jump_scale)
    params = dict(base.params, rate=rate, bound=bound, jump_scale=jump_scale)
    return UnitVolatilityModel(
        alpha=base.alpha,
        alpha_prime=base.alpha_prime,
        antiderivative=base.antiderivative,
        phi_lower=base.phi_lower,
        phi_range=base.phi_range,
        intensity=lambda x: rate + 0.0 * np.asarray(x, dtype=float) if np.ndim(x) else rate,
        intensity_bound=bound,
        target_jump_density=pdf,
        proposal_jump_density=pdf,
        proposal_jump_sampler=lambda gen, n: gen.normal(0.0, jump_scale, n),
        kappa=(rate / bound if bound > 0 else 1.0) if kappa is None else kappa,
        eta=base.eta,
        eta_inverse=base.eta_inverse,
        name=f"{base.name}+jumps",
        params=params,
        phi_range_exact=base.phi_range_exact,
        constant_phi=base.constant_phi,
        constant_intensity=rate,
    )


BUILTIN_MODELS = {
    "zero": lambda p: zero_drift(),
    "ou": lambda p: ornstein_uhlenbeck(float(p.get("theta", 1.0))),
    "sine": lambda p: sine_drift(),
    "logistic": lambda p: logistic(
        float(p.get("r", 1.0)), float(p.get("capacity", 1.0)), float(p.get("sigma", 1.0))
    ),
}


def model_from_config(params: dict) -> UnitVolatilityModel:
    """Build a builtin model from ``{"kind": ..., <params>, "jumps": {...}}``."""
    params = dict(params)
    kind = params.pop("kind", None)
    jumps = params.pop("jumps", None)
    if kind == "custom":
        raise InvalidModelError(
            "custom models cannot be described in a config file; build a "
            "UnitVolatilityModel (or use lamperti_transform) through the Python API"
        )
    if kind not in BUILTIN_MODELS:
        raise InvalidModelError(f"unknown model kind {kind!r}; expected one of {sorted(BUILTIN_MODELS)} or 'custom'")
    model = BUILTIN_MODELS[kind](params)
    if jumps:
        jumps = dict(jumps)
        kappa = jumps.get("kappa")
        model = with_jumps(
            model,
            rate=float(jumps["rate"]),
            bound=float(jumps.get("bound", jumps["rate"])),
            jump_scale=float(jumps.get("scale", 1.0)),
            kappa=None if kappa is None else float(kappa),
        )
    return model
