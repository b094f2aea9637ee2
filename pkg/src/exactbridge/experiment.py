"""Experiment driver: YAML configs, replication runs and the skeleton record file."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .cauea import simulate_cauea
from .cuea import simulate_cuea
from .errors import ExactBridgeError, NumericFailure
from .jumps import simulate_caujea, simulate_cujea
from .layers import LAYER_SCHEME, Layer
from .model import model_from_config
from .restore import restore, restore_original_scale
from .skeleton import (
    BridgeSkeleton,
    DiagnosticCounters,
    Segment,
    SkeletonCAUEA,
    SkeletonCAUJEA,
    SkeletonCUEA,
    SkeletonCUJEA,
)
from .streams import stream_for
from .verification import ks_test, ou_bridge_mean, ou_bridge_variance

SCHEMA_VERSION = 1
SEED_ENV = "EXACTBRIDGE_SEED"

SIMULATORS = {
    "cuea": simulate_cuea,
    "cauea": simulate_cauea,
    "cujea": simulate_cujea,
    "caujea": simulate_caujea,
}
SKELETON_CLASSES = {
    "cuea": SkeletonCUEA,
    "cauea": SkeletonCAUEA,
    "cujea": SkeletonCUJEA,
    "caujea": SkeletonCAUJEA,
}

COLUMNS = [
    "skeleton_id",
    "segment",
    "time",
    "value",
    "band_lower",
    "band_upper",
    "inner_lower",
    "inner_upper",
    "band_index",
    "phi_lower",
    "phi_upper",
    "kind",
]


class ConfigError(ExactBridgeError, ValueError):
    """Bad experiment config; ``field`` and ``line`` locate the problem when known."""

    def __init__(self, message, field=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.field = field
        self.line = line


@dataclass
class VerificationBlock:
    grid_step: float = 1e-3
    ks_samples: int = 1000
    query_times: list = field(default_factory=list)
    level: float = 0.01


@dataclass
class ExperimentConfig:
    model: dict
    x: float
    y: float
    T: float
    algorithm: str = "cauea"
    replications: int = 1
    seed: int = 0
    scale: str = "transformed"
    output: str = "out"
    query_times: list = field(default_factory=list)
    verification: VerificationBlock | None = None
    schema: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema version {self.schema}", "schema")
        if not (isinstance(self.T, (int, float)) and self.T > 0 and math.isfinite(self.T)):
            raise ConfigError("must be a positive number", "T")
        if self.algorithm not in SIMULATORS:
            raise ConfigError(f"must be one of {sorted(SIMULATORS)}", "algorithm")
        if not (isinstance(self.replications, int) and self.replications >= 1):
            raise ConfigError("must be an integer >= 1", "replications")
        if self.scale not in ("transformed", "original"):
            raise ConfigError("must be 'transformed' or 'original'", "scale")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("must be an unsigned 64-bit integer", "seed")
        for q in self.query_times:
            if not 0.0 <= q <= self.T:
                raise ConfigError(f"query time {q} outside [0, T]", "query_times")
        v = self.verification
        if v is not None:
            if not v.grid_step > 0:
                raise ConfigError("must be positive", "verification.grid_step")
            if v.ks_samples < 100:
                raise ConfigError("must be at least 100", "verification.ks_samples")
            if not 0.0 < v.level < 1.0:
                raise ConfigError("must lie in (0, 1)", "verification.level")


def _key_lines(text):
    """Line numbers of top-level and nested mapping keys, keyed by dotted path."""
    lines = {}

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                name = f"{prefix}{k.value}"
                lines[name] = k.start_mark.line + 1
                walk(v, name + ".")

    try:
        walk(yaml.compose(text), "")
    except yaml.YAMLError:
        pass
    return lines


_FIELD_TYPES = {
    "x": float,
    "y": float,
    "T": float,
    "algorithm": str,
    "replications": int,
    "seed": int,
    "scale": str,
    "output": str,
    "schema": int,
}


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}", line=mark.line + 1 if mark else None) from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    lines = _key_lines(text)

    def fail(msg, name):
        return ConfigError(msg, name, lines.get(name))

    known = set(_FIELD_TYPES) | {"model", "query_times", "verification"}
    for k in raw:
        if k not in known:
            raise fail("unknown field", str(k))
    for k in ("model", "x", "y", "T"):
        if k not in raw:
            raise ConfigError("missing required field", k)
    kwargs = {}
    for k, typ in _FIELD_TYPES.items():
        if k not in raw:
            continue
        v = raw[k]
        if typ is float and isinstance(v, (int, float)) and not isinstance(v, bool):
            v = float(v)
        if not isinstance(v, typ) or isinstance(v, bool):
            raise fail(f"expected {typ.__name__}, got {v!r}", k)
        kwargs[k] = v
    if not isinstance(raw["model"], dict) or "kind" not in raw["model"]:
        raise fail("must be a mapping with a 'kind'", "model")
    kwargs["model"] = raw["model"]
    try:
        kwargs["query_times"] = [float(q) for q in raw.get("query_times") or []]
        ver = raw.get("verification")
        if ver is not None:
            if not isinstance(ver, dict):
                raise fail("must be a mapping", "verification")
            for k in ver:
                if k not in ("grid_step", "ks_samples", "query_times", "level"):
                    raise fail("unknown field", f"verification.{k}")
            kwargs["verification"] = VerificationBlock(
                grid_step=float(ver.get("grid_step", 1e-3)),
                ks_samples=int(ver.get("ks_samples", 1000)),
                query_times=[float(q) for q in ver.get("query_times") or []],
                level=float(ver.get("level", 0.01)),
            )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad value: {exc}") from exc
    try:
        cfg = ExperimentConfig(**kwargs)
    except ConfigError as exc:
        exc.line = lines.get(exc.field)
        raise ConfigError(str(exc).split(": ", 1)[-1], exc.field, exc.line) from None
    try:
        model_from_config(cfg.model)
    except (ExactBridgeError, TypeError, KeyError, ValueError) as exc:
        raise fail(str(exc), "model") from exc
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def resolve_seed(cli_seed=None, config_seed=0) -> int:
    """``--seed`` beats the environment variable, which beats the config."""
    if cli_seed is not None:
        return int(cli_seed)
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    return int(config_seed)


@dataclass
class Replication:
    index: int
    skeleton: BridgeSkeleton | None
    counters: DiagnosticCounters
    restored: np.ndarray | None = None
    error: str | None = None


def _run_one(model, cfg, x, y, seed, i, query_times):
    stream = stream_for(seed, i)
    counters = DiagnosticCounters()
    try:
        sk, counters = SIMULATORS[cfg.algorithm](model, x, y, cfg.T, stream, counters)
        restored = None
        if query_times:
            restored, sk = restore(sk, query_times, stream)
        sk.check()
    except NumericFailure as exc:
        return Replication(i, None, counters, error=f"skeleton {i}: numeric failure during simulation: {exc}")
    return Replication(i, sk, counters, restored)


def simulate_replications(cfg: ExperimentConfig, seed: int, threads: int = 1, query_times=None):
    """Run every replication; results come back in replication order whatever ``threads`` is."""
    model = model_from_config(cfg.model)
    x, y = cfg.x, cfg.y
    if cfg.scale == "original":
        x, y = float(model.eta(x)), float(model.eta(y))
    qt = list(cfg.query_times if query_times is None else query_times)
    args = [(model, cfg, x, y, seed, i, qt) for i in range(cfg.replications)]
    if threads <= 1:
        return model, [_run_one(*a) for a in args]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return model, list(pool.map(lambda a: _run_one(*a), args))


def _fmt(v):
    if v is None:
        return ""
    return repr(float(v))


def skeleton_rows(skeleton_id, sk: BridgeSkeleton):
    """One row per point; band columns describe the gap that starts at the point."""
    rows = []
    for k, seg in enumerate(sk.segments):
        for i, (t, v, kind) in enumerate(zip(seg.times, seg.values, seg.kinds)):
            lay = seg.layers[i] if i < len(seg.layers) else None
            inner = lay.inner if lay is not None else None
            rows.append(
                [
                    str(skeleton_id),
                    str(k),
                    _fmt(t),
                    _fmt(v),
                    _fmt(lay.lower if lay else None),
                    _fmt(lay.upper if lay else None),
                    _fmt(inner[0] if inner else None),
                    _fmt(inner[1] if inner else None),
                    str(lay.index) if lay else "",
                    _fmt(lay.phi_lower if lay else None),
                    _fmt(lay.phi_upper if lay else None),
                    kind,
                ]
            )
    return rows


def format_skeleton_file(skeletons, *, model: str, algorithm: str, seed: int, T: float) -> str:
    buf = io.StringIO()
    for key, value in (
        ("model", model),
        ("algorithm", algorithm),
        ("seed", seed),
        ("version", __version__),
        ("layer_scheme", LAYER_SCHEME),
        ("schema", SCHEMA_VERSION),
        ("horizon", repr(float(T))),
    ):
        buf.write(f"# {key}: {value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for sid, sk in skeletons:
        writer.writerows(skeleton_rows(sid, sk))
    return buf.getvalue()


def _opt(s):
    return float(s) if s != "" else None


def read_skeleton_file(path):
    """Parse a skeleton record file back into ``(header, {skeleton_id: skeleton})``."""
    header = {}
    body = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("# "):
                key, _, value = line[2:].rstrip("\n").partition(": ")
                header[key] = value
            else:
                body.append(line)
    if header.get("layer_scheme") != LAYER_SCHEME:
        raise ConfigError(f"skeleton file uses layer scheme {header.get('layer_scheme')!r}, expected {LAYER_SCHEME!r}")
    reader = csv.DictReader(body)
    grouped = {}
    for row in reader:
        grouped.setdefault(int(row["skeleton_id"]), {}).setdefault(int(row["segment"]), []).append(row)
    cls = SKELETON_CLASSES.get(header.get("algorithm"), BridgeSkeleton)
    T = float(header["horizon"])
    out = {}
    for sid, segs in grouped.items():
        segments = []
        for k in sorted(segs):
            rows = segs[k]
            layers = []
            for r in rows[:-1]:
                inner = None
                if r["inner_lower"] != "":
                    inner = (float(r["inner_lower"]), float(r["inner_upper"]))
                layers.append(
                    Layer(
                        float(r["band_lower"]),
                        float(r["band_upper"]),
                        inner,
                        int(r["band_index"]),
                        float(r["phi_lower"]),
                        float(r["phi_upper"]),
                    )
                )
            segments.append(
                Segment([float(r["time"]) for r in rows], [float(r["value"]) for r in rows], layers, [r["kind"] for r in rows])
            )
        jt = [s.times[0] for s in segments[1:]]
        pre = [s.values[-1] for s in segments[:-1]]
        post = [s.values[0] for s in segments[1:]]
        out[sid] = cls(segments[0].values[0], segments[-1].values[-1], T, segments, jt, pre, post).check()
    return header, out


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _plot_rows(reps, times, model, scale):
    lines = ["skeleton_id,time,value"]
    for rep in reps:
        if rep.restored is None:
            continue
        vals = restore_original_scale(model, rep.restored) if scale == "original" else rep.restored
        for t, v in zip(times, vals):
            lines.append(f"{rep.index},{t!r},{float(v)!r}")
    return "\n".join(lines) + "\n"


def verification_checks(model, cfg: ExperimentConfig, reps, times):
    """KS checks of restored marginals against analytic references (OU and zero drift)."""
    kind = cfg.model.get("kind")
    if kind not in ("ou", "zero") or model.has_jumps:
        return [{"check": "analytic-marginal", "status": "skipped", "detail": f"no analytic reference for {kind!r}"}]
    from scipy import stats

    theta = float(cfg.model.get("theta", 1.0)) if kind == "ou" else 0.0
    values = np.array([r.restored for r in reps if r.restored is not None])
    checks = []
    for j, t in enumerate(times):
        if t <= 0.0 or t >= cfg.T:
            continue
        if theta:
            mean = ou_bridge_mean(theta, cfg.x, cfg.y, t, cfg.T)
            var = ou_bridge_variance(theta, t, cfg.T)
        else:
            mean = cfg.x + (cfg.y - cfg.x) * t / cfg.T
            var = t * (cfg.T - t) / cfg.T
        res = ks_test(values[:, j], stats.norm(mean, math.sqrt(var)).cdf)
        checks.append(
            {
                "check": f"ks-marginal t={t!r}",
                "statistic": res.statistic,
                "pvalue": res.pvalue,
                "status": "pass" if res.pvalue >= cfg.verification.level else "fail",
            }
        )
    return checks


def run_experiment(cfg: ExperimentConfig, *, seed=None, threads=1, out=None) -> int:
    """Simulate, write the skeleton file, diagnostics and plot data; returns an exit status.

    Exit status 1 flags a failed verification check, 2 a replication that hit
    a numeric failure.
    """
    seed = resolve_seed(seed, cfg.seed)
    outdir = Path(out or cfg.output)
    times = list(cfg.query_times)
    if cfg.verification is not None:
        times = sorted(set(times) | set(cfg.verification.query_times))
        cfg = replace(cfg, replications=max(cfg.replications, cfg.verification.ks_samples))
    model, reps = simulate_replications(cfg, seed, threads, times)
    failures = [r.error for r in reps if r.error]
    totals = DiagnosticCounters()
    for r in reps:
        totals.merge(r.counters)
    good = [(r.index, r.skeleton) for r in reps if r.skeleton is not None]
    _write(
        outdir / "skeletons.csv",
        format_skeleton_file(good, model=model.name, algorithm=cfg.algorithm, seed=seed, T=cfg.T),
    )
    if times:
        _write(outdir / "restored.csv", _plot_rows(reps, times, model, cfg.scale))
    summary = totals.summary()
    summary.pop("wall_clock")
    kappas = [sk.kappa for _, sk in good]
    diagnostics = {
        "model": model.name,
        "algorithm": cfg.algorithm,
        "seed": seed,
        "replications": cfg.replications,
        "summary": summary,
        "kappa": {
            "mean": float(np.mean(kappas)) if kappas else None,
            "max": int(max(kappas)) if kappas else None,
        },
        "failures": failures,
    }
    status = 2 if failures else 0
    if cfg.verification is not None and not failures:
        checks = verification_checks(model, cfg, reps, times)
        diagnostics["verification"] = checks
        if any(c["status"] == "fail" for c in checks):
            status = 1
    _write(outdir / "diagnostics.json", json.dumps(diagnostics, indent=2, sort_keys=True) + "\n")
    # wall-clock varies run to run, so it lives apart from the reproducible files
    _write(outdir / "timing.json", json.dumps({"wall_clock": totals.wall_clock}) + "\n")
    return status


def restore_file(path, times, seed, out, threads=1, model_cfg=None, scale="transformed"):
    """Restore every skeleton in a record file at ``times``; writes skeletons and plot data to ``out``."""
    header, skeletons = read_skeleton_file(path)
    ids = sorted(skeletons)

    def work(sid):
        # offset the stream index so restoration does not reuse simulation draws
        stream = stream_for(seed, sid, 1)
        return restore(skeletons[sid], times, stream)

    if threads <= 1:
        results = [work(s) for s in ids]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, ids))
    outdir = Path(out)
    T = max(sk.T for sk in skeletons.values())
    _write(
        outdir / "skeletons.csv",
        format_skeleton_file(
            [(sid, res[1]) for sid, res in zip(ids, results)],
            model=header.get("model", ""),
            algorithm=header.get("algorithm", ""),
            seed=seed,
            T=T,
        ),
    )
    model = model_from_config(model_cfg) if model_cfg else None
    reps = [Replication(sid, None, DiagnosticCounters(), res[0]) for sid, res in zip(ids, results)]
    if model is None:
        scale = "transformed"
    _write(outdir / "restored.csv", _plot_rows(reps, times, model, scale))
    return 0


def _marginals(model, algorithm, x, y, T, times, n, seed, threads):
    def one(i):
        stream = stream_for(seed, i)
        sk, _ = SIMULATORS[algorithm](model, x, y, T, stream)
        return restore(sk, times, stream)[0]

    if threads <= 1:
        return np.array([one(i) for i in range(n)])
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.array(list(pool.map(one, range(n))))


def verify_named_model(name, *, n=1000, seed=0, threads=1, level=0.01, report=print) -> int:
    """Quick desk-scale version of the acceptance checks for one builtin model.

    ``zero`` and ``ou`` are checked against their analytic bridge marginals,
    ``sine`` compares both samplers with each other and with the grid oracle.
    Prints one PASS/FAIL line per check and returns 1 if any failed.
    """
    from scipy import stats

    from .model import ornstein_uhlenbeck, sine_drift, zero_drift
    from .verification import euler_bridge_oracle

    T, times = 1.0, [0.25, 0.5, 0.75]
    results = []
    if name in ("zero", "ou"):
        model = zero_drift() if name == "zero" else ornstein_uhlenbeck(1.0)
        for alg in ("cuea", "cauea"):
            vals = _marginals(model, alg, 0.0, 0.0, T, times, n, seed, threads)
            for j, t in enumerate(times):
                var = t * (T - t) / T if name == "zero" else ou_bridge_variance(1.0, t, T)
                res = ks_test(vals[:, j], stats.norm(0.0, math.sqrt(var)).cdf)
                results.append((f"{alg} marginal t={t} vs analytic", res.pvalue))
    elif name == "sine":
        model = sine_drift()
        a = _marginals(model, "cuea", 0.0, 0.0, T, times, n, seed, threads)
        b = _marginals(model, "cauea", 0.0, 0.0, T, times, n, seed + 1, threads)
        oracle = euler_bridge_oracle(model, 0.0, 0.0, T, 1e-3, n, stream_for(seed, 2**32), times=times)
        for j, t in enumerate(times):
            results.append((f"cuea vs cauea t={t}", ks_test(a[:, j], b[:, j]).pvalue))
            results.append((f"cauea vs grid oracle t={t}", ks_test(b[:, j], oracle.values[:, j]).pvalue))
    else:
        raise ConfigError(f"no verification suite for model {name!r}; choose zero, ou or sine")
    # several p-values per run, so split the level Bonferroni-style
    cut = level / len(results)
    failed = 0
    for label, p in results:
        ok = p >= cut
        failed += not ok
        report(f"{'PASS' if ok else 'FAIL'} {label}: p={p:.4g}")
    return 1 if failed else 0
