"""JSON problem and parameter files.

Problem file (``schema_version`` 1)::

    {"schema_version": 1, "id": "rm-linear", "type": "rm",
     "M": {"name": "linear", "params": {"k": 2, "c": 1}}, "b": 0,
     "noise": {"kind": "gaussian", "sigma": 1},
     "schedule": "harmonic1", "x0": 0}

``type`` is one of ``rm``, ``kw``, ``sgd``, ``banach`` or ``dvoretzky`` (an
explicit ``transform`` map with ``x_star``). Schedules are a builtin name,
``{"name": family, "params": {...}}`` or ``{"csv": path}``. An optional
``noise_schedule`` replaces the per-step noise factor.

Parameter file::

    {"schema_version": 1, "construction": "blum",
     "overrides": {"gamma": "zero"}, "config": {"alpha_tol": 0.1}}

or explicit ``alpha``, ``beta``, ``gamma`` schedules with ``n0``. ``config``
keys are fields of :class:`stochapprox.checker.CertifyConfig`.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, fields
from pathlib import Path

from . import algorithms as alg
from . import checker as ck
from . import process as pe
from .errors import ConfigError
from .series import BUILTINS, RealSeq, builtin, family, read_csv_sequence

SCHEMA_VERSION = 1

BUILTIN_PROBLEMS = {
    "rm-linear": {
        "type": "rm", "M": {"name": "linear", "params": {"k": 2.0, "c": 1.0}}, "b": 0.0,
        "noise": {"kind": "gaussian", "sigma": 1.0}, "schedule": "harmonic1", "x0": 0.0,
    },
    "rm-saturating": {
        "type": "rm", "M": {"name": "saturating", "params": {"k": 1.0, "c": 0.0}}, "b": 0.25,
        "noise": {"kind": "uniform", "h": 1.0}, "schedule": "harmonic1", "x0": 0.0,
    },
    "sgd-quadratic": {
        "type": "sgd", "grad": {"name": "quadratic", "params": {"curv": 1.0, "theta": 1.0}},
        "noise": {"kind": "gaussian", "sigma": 1.0}, "schedule": "harmonic1", "x0": 0.0,
    },
    "kw-quadratic": {
        "type": "kw", "M": {"name": "neg_quadratic", "params": {"scale": 1.0, "theta": 0.0}},
        "x_star": 0.0, "noise": {"kind": "gaussian", "sigma": 0.1}, "x0": 1.0,
    },
    "banach-affine": {
        "type": "banach", "g": {"name": "linear", "params": {"k": 0.5, "c": 1.0}},
        "gamma_contr": 0.5, "fixed_point": 2.0, "schedule": "harmonic1", "x0": 2.05,
    },
}


@dataclass(frozen=True)
class LoadedProblem:
    spec_id: str
    kind: str
    problem: object
    spec: pe.ProcessSpec
    schedule: RealSeq | None
    noise_scale: RealSeq | None
    raw: dict


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return d[key]


def _check_version(d: dict, where: str) -> None:
    v = d.get("schema_version", SCHEMA_VERSION)
    if v != SCHEMA_VERSION:
        raise ConfigError(f"{where}: unsupported schema_version {v!r}")


def parse_schedule(obj, base: Path | None = None, *, nonnegative: bool = True) -> RealSeq:
    try:
        if isinstance(obj, str):
            return builtin(obj, nonnegative=nonnegative)
        if not isinstance(obj, dict):
            raise ConfigError(f"schedule must be a name or an object, got {obj!r}")
        if "csv" in obj:
            path = Path(obj["csv"])
            if base is not None and not path.is_absolute():
                path = base / path
            if not path.exists():
                raise ConfigError(f"schedule file {path} does not exist")
            return read_csv_sequence(path, nonnegative=nonnegative)
        name = _require(obj, "name", "schedule")
        if name in BUILTINS and not obj.get("params"):
            return builtin(name, nonnegative=nonnegative)
        return family(name, obj.get("params"), nonnegative=nonnegative)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    except TypeError as exc:
        raise ConfigError(f"bad schedule parameters: {exc}") from None


def parse_noise(obj, base: Path | None = None) -> pe.NoiseModel:
    if obj is None:
        return pe.NoiseModel.zero()
    kind = _require(obj, "kind", "noise")
    try:
        if kind == "gaussian":
            return pe.NoiseModel.gaussian(_scale(obj.get("sigma", 1.0), base))
        if kind == "uniform":
            return pe.NoiseModel.uniform(_scale(obj.get("h", 1.0), base))
        if kind == "discrete":
            return pe.NoiseModel.discrete(_require(obj, "values", "noise"), _require(obj, "probs", "noise"),
                                          _scale(obj.get("scale", 1.0), base))
        if kind == "zero":
            return pe.NoiseModel.zero()
    except ValueError as exc:
        raise ConfigError(f"noise: {exc}") from None
    raise ConfigError(f"unknown noise kind {kind!r}")


def _scale(v, base):
    if isinstance(v, (int, float)):
        if v < 0:
            raise ConfigError("noise scale must be nonnegative")
        return float(v)
    return parse_schedule(v, base)


def _map(obj, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: map must be an object with 'name' and 'params'")
    return alg.make_map(_require(obj, "name", where), obj.get("params"))


def build_problem(d: dict, base: Path | None = None, default_id: str = "problem") -> LoadedProblem:
    if not isinstance(d, dict):
        raise ConfigError("problem file must hold a JSON object")
    _check_version(d, "problem")
    kind = _require(d, "type", "problem")
    spec_id = str(d.get("id", default_id))
    noise = parse_noise(d.get("noise"), base)
    x0 = float(d.get("x0", 0.0))
    sched = parse_schedule(d["schedule"], base) if "schedule" in d else None
    noise_scale = parse_schedule(d["noise_schedule"], base) if "noise_schedule" in d else None

    if kind == "rm":
        m = _map(_require(d, "M", "problem"), "M")
        if not hasattr(m, "linear_bound"):
            raise ConfigError(f"map {type(m).__name__} has no declared linear bound for root finding")
        p = alg.RootFindingProblem.from_map(m, float(d.get("b", 0.0)), noise)
        if "A" in d or "B" in d:
            p = alg.RootFindingProblem(p.M, p.b, p.noise, float(d.get("A", p.A)), float(d.get("B", p.B)),
                                       p.x_star, p.M_inverse, p.inverse_domain)
        sched = sched or builtin("harmonic1")
        spec = alg.rm_spec(p, sched, x0, noise_scale, spec_id=spec_id)
    elif kind == "sgd":
        g = _require(d, "grad", "problem")
        loss = _map(g, "grad")
        if not isinstance(loss, alg.Quadratic):
            raise ConfigError("sgd supports the quadratic loss only")
        p = alg.MinimizationProblem.quadratic(loss.curv, loss.theta, noise)
        sched = sched or builtin("harmonic1")
        spec = alg.rm_spec(alg.RootFindingProblem(p.grad, 0.0, noise, x_star=p.x_star), sched, x0,
                           noise_scale, spec_id=spec_id)
    elif kind == "kw":
        m = _map(_require(d, "M", "problem"), "M")
        x_star = d.get("x_star", getattr(m, "theta", None))
        p = alg.ObjectiveProblem(m, noise, None if x_star is None else float(x_star))
        c = parse_schedule(d["c_schedule"], base) if "c_schedule" in d else None
        spec = alg.kw_spec(p, sched, c, x0, spec_id=spec_id)
        sched = spec.transform.a
    elif kind == "banach":
        g = _map(_require(d, "g", "problem"), "g")
        p = alg.ContractionProblem(g, float(_require(d, "gamma_contr", "problem")),
                                   float(_require(d, "fixed_point", "problem")))
        sched = sched or builtin("harmonic1")
        spec = alg.banach_spec(p, sched, x0, spec_id=spec_id)
    elif kind == "dvoretzky":
        t = _map(_require(d, "transform", "problem"), "transform")
        if not isinstance(t, alg.Linear):
            raise ConfigError("dvoretzky problems support the linear transform map only")
        p = None
        if noise_scale is not None:
            noise = noise.rescaled(noise_scale)
        spec = pe.ProcessSpec(pe.AffineStep(t.k, t.c), noise, float(_require(d, "x_star", "problem")), x0,
                              spec_id=spec_id)
    else:
        raise ConfigError(f"unknown problem type {kind!r}")
    return LoadedProblem(spec_id, kind, p, spec, sched, noise_scale, d)


def load_problem(ref: str) -> LoadedProblem:
    """``builtin:NAME`` or a path to a JSON problem file."""
    if ref.startswith("builtin:"):
        name = ref[len("builtin:"):]
        if name not in BUILTIN_PROBLEMS:
            raise ConfigError(f"unknown builtin problem {name!r}; known: {sorted(BUILTIN_PROBLEMS)}")
        return build_problem(copy.deepcopy(BUILTIN_PROBLEMS[name]), None, name)
    path = Path(ref)
    d = _read_json(path)
    return build_problem(d, path.parent, path.stem)


def _read_json(path: Path):
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from None


_CONFIG_FIELDS = {f.name for f in fields(ck.CertifyConfig)}
_TUPLE_FIELDS = {"grid", "param_seeds", "checkpoints"}


def certify_config(obj: dict | None, **overrides) -> ck.CertifyConfig:
    obj = dict(obj or {})
    unknown = set(obj) - _CONFIG_FIELDS - {"mc_seed_count", "mc_seed_base"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kw = {}
    for k, v in obj.items():
        if k in _TUPLE_FIELDS and v is not None:
            v = tuple(v)
        if k in _CONFIG_FIELDS:
            kw[k] = v
    if "mc_seed_count" in obj or "mc_seed_base" in obj:
        base = int(obj.get("mc_seed_base", 0))
        kw["mc_seeds"] = tuple(range(base, base + int(obj.get("mc_seed_count", 100))))
    elif "mc_seeds" in kw:
        kw["mc_seeds"] = tuple(kw["mc_seeds"])
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ck.CertifyConfig(**kw)
    except TypeError as exc:
        raise ConfigError(f"bad config: {exc}") from None


@dataclass(frozen=True)
class LoadedParams:
    params: ck.DvoretzkyParams
    config: ck.CertifyConfig


def build_params(d: dict, lp: LoadedProblem, base: Path | None = None, *, mode: str | None = None,
                 horizon: int | None = None) -> LoadedParams:
    if not isinstance(d, dict):
        raise ConfigError("params file must hold a JSON object")
    _check_version(d, "params")
    config = certify_config(d.get("config"), seq_horizon=horizon)
    construction = d.get("construction")
    if construction in ("blum", "auto"):
        if lp.kind not in ("rm", "sgd", "banach"):
            raise ConfigError(f"blum construction needs an rm, sgd or banach problem, got {lp.kind!r}")
        n_needed = max(config.seq_horizon, d.get("horizon", 0))
        bundle = alg.as_dvoretzky(lp.problem, lp.schedule, x0=lp.spec.x0, horizon=n_needed + config.grid_steps + 1,
                                  noise_scale=lp.noise_scale, spec_id=lp.spec_id)
        p = bundle.params
        over = d.get("overrides", {})
        if not isinstance(over, dict):
            raise ConfigError("overrides must be an object")
        seqs = {k: parse_schedule(v, base, nonnegative=False) if k in over else getattr(p, k)
                for k, v in [("alpha", over.get("alpha")), ("beta", over.get("beta")), ("gamma", over.get("gamma"))]}
        params = ck.DvoretzkyParams(seqs["alpha"], seqs["beta"], seqs["gamma"], p.mode, p.n0)
    elif construction in (None, "explicit"):
        seqs = {k: parse_schedule(_require(d, k, "params"), base, nonnegative=False)
                for k in ("alpha", "beta", "gamma")}
        params = ck.DvoretzkyParams(seqs["alpha"], seqs["beta"], seqs["gamma"], d.get("mode", "original"),
                                    int(d.get("n0", 1)))
    else:
        raise ConfigError(f"unknown construction {construction!r}")
    try:
        if mode is not None:
            params = params.with_mode(mode)
        elif "mode" in d:
            params = params.with_mode(d["mode"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return LoadedParams(params, config)


def load_params(ref: str, lp: LoadedProblem, *, mode: str | None = None, horizon: int | None = None) -> LoadedParams:
    path = Path(ref)
    return build_params(_read_json(path), lp, path.parent, mode=mode, horizon=horizon)
