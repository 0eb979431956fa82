"""Experiment configuration: a flat, typed key-value text format.

Lines are ``section.key = value``; ``#`` starts a comment.  Unknown keys are
errors, and validation failures are reported together with their key paths.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from fractions import Fraction

_KINDS = ("run", "sweep", "median", "chaos", "verify")
_OPS = ("adv", "lns")
_SCHEMES = ("euler", "rk3", "leapfrog")

SCHEMA_VERSION = 1


def _parse_fraction(s: str) -> Fraction:
    if "/" in s:
        num, den = s.split("/")
        return Fraction(int(num), int(den))
    return Fraction(s)


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes", "on"):
        return True
    if s.lower() in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_float_list(s: str):
    return [float(x) for x in s.split(",") if x.strip()]


def _parse_int_list(s: str):
    return [int(x) for x in s.split(",") if x.strip()]


# key -> (parser, default); required keys have default None and are listed
# per experiment kind in _REQUIRED
_REGISTRY = {
    "grid.dealias": (_parse_fraction, Fraction(2, 3)),
    "noise.alpha": (float, 12.0),
    "noise.sigma": (float, 1.0),
    "noise.seed": (int, 0),
    "flow.n": (int, None),
    "flow.dt": (float, None),
    "flow.t_burn": (float, 0.0),
    "flow.t_total": (float, None),
    "flow.u0": (str, "zero"),
    "flow.cfl": (float, 0.5),
    "scalar.kappa": (float, None),
    "scalar.kappa_list": (_parse_float_list, None),
    "scalar.op": (str, "adv"),
    "scalar.rho0": (str, "mode:1"),
    "scalar.scheme": (str, "euler"),
    "experiment.kind": (str, "run"),
    "experiment.ensemble_size": (int, 1),
    "experiment.delta": (float, 0.2),
    "experiment.q": (float, 2.5),
    "experiment.output_dir": (str, "out"),
    "experiment.record_every": (int, 1),
    "experiment.m0_list": (_parse_int_list, None),
    "experiment.threads": (int, 1),
    "experiment.checkpoint_every": (int, 0),
    "median.engine": (str, "kernel"),
    "median.t_max_factor": (float, 5.0),
    "median.noise_band": (int, None),
    "median.circular": (_parse_bool, False),
    "median.precision": (str, "f64"),
    "median.u_refresh": (int, 1),
    "median.control": (_parse_bool, False),
    "chaos.k_max": (int, None),
    "chaos.m_list": (_parse_int_list, None),
    "chaos.paths": (int, 3000),
    "chaos.quad_steps": (int, 2400),
}

_REQUIRED = {
    "run": ("flow.n", "flow.dt", "flow.t_total", "scalar.kappa"),
    "sweep": ("flow.n", "flow.dt", "flow.t_total", "scalar.kappa_list"),
    "median": ("flow.n", "flow.dt", "scalar.kappa", "experiment.m0_list"),
    "chaos": ("flow.n", "scalar.kappa", "chaos.m_list"),
    "verify": (),
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        v = self.values.get(key)
        return default if v is None else v

    @property
    def kind(self) -> str:
        return self.values["experiment.kind"]

    def canonical_text(self) -> str:
        lines = []
        for key in sorted(self.values):
            v = self.values[key]
            if v is None:
                continue
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]

    def with_overrides(self, **kv) -> "ExperimentConfig":
        vals = dict(self.values)
        vals.update(kv)
        return ExperimentConfig(vals)


def parse_config_text(text: str) -> ExperimentConfig:
    raw = {}
    errors = []
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            errors.append(f"line {ln}: expected 'key = value', got {stripped!r}")
            continue
        key, val = (part.strip() for part in stripped.split("=", 1))
        if key not in _REGISTRY:
            errors.append(f"line {ln}: unknown key {key!r}")
            continue
        if key in raw:
            errors.append(f"line {ln}: duplicate key {key!r}")
            continue
        raw[key] = val
    if errors:
        raise ConfigError("config parse failed:\n  " + "\n  ".join(errors))

    values = {}
    for key, (parser, default) in _REGISTRY.items():
        if key in raw:
            try:
                values[key] = parser(raw[key])
            except (ValueError, TypeError) as exc:
                errors.append(f"{key}: cannot parse {raw[key]!r} ({exc})")
        else:
            values[key] = default
    if errors:
        raise ConfigError("config parse failed:\n  " + "\n  ".join(errors))
    cfg = ExperimentConfig(values)
    validate_config(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config_text(fh.read())


def validate_config(cfg: ExperimentConfig) -> None:
    v = cfg.values
    errors = []

    def need(cond, key, msg):
        if not cond:
            errors.append(f"{key}: {msg}")

    kind = v["experiment.kind"]
    need(kind in _KINDS, "experiment.kind", f"must be one of {_KINDS}, got {kind!r}")
    if kind in _REQUIRED:
        for key in _REQUIRED[kind]:
            need(v.get(key) is not None, key, f"required for kind {kind!r}")
    if v["flow.n"] is not None:
        need(v["flow.n"] >= 8 and v["flow.n"] % 2 == 0, "flow.n", "must be even and >= 8")
    need(0 < v["grid.dealias"] <= 1, "grid.dealias", "must lie in (0, 1]")
    need(v["noise.alpha"] > 10, "noise.alpha", "must exceed 10")
    need(v["noise.sigma"] >= 0, "noise.sigma", "must be nonnegative")
    for key in ("flow.dt", "flow.t_total"):
        if v[key] is not None:
            need(v[key] > 0, key, "must be positive")
    need(v["flow.t_burn"] >= 0, "flow.t_burn", "must be nonnegative")
    need(v["flow.cfl"] > 0, "flow.cfl", "must be positive")
    if v["scalar.kappa"] is not None:
        need(0 < v["scalar.kappa"] <= 1, "scalar.kappa", "must lie in (0, 1]")
    if v["scalar.kappa_list"] is not None:
        need(
            all(0 < k <= 1 for k in v["scalar.kappa_list"]),
            "scalar.kappa_list",
            "all entries must lie in (0, 1]",
        )
    if kind == "run" and v["scalar.kappa"] is None:
        errors.append("scalar.kappa: required for kind 'run'")
    need(v["scalar.op"] in _OPS, "scalar.op", f"must be one of {_OPS}")
    need(v["scalar.scheme"] in _SCHEMES, "scalar.scheme", f"must be one of {_SCHEMES}")
    need(0 < v["experiment.delta"] < 0.25, "experiment.delta", "must lie in (0, 1/4)")
    need(v["experiment.q"] > 2, "experiment.q", "must exceed 2")
    need(v["experiment.ensemble_size"] >= 1, "experiment.ensemble_size", "must be >= 1")
    need(v["experiment.record_every"] >= 1, "experiment.record_every", "must be >= 1")
    need(v["experiment.threads"] >= 1, "experiment.threads", "must be >= 1")
    need(v["median.engine"] in ("kernel", "reference"), "median.engine", "kernel or reference")
    need(v["median.precision"] in ("f32", "f64"), "median.precision", "f32 or f64")
    for src_key, allowed in (("flow.u0", ("zero", "snapshot", "random")),
                             ("scalar.rho0", ("mode", "annulus", "snapshot"))):
        spec = v[src_key]
        head = spec.split(":", 1)[0]
        need(head in allowed, src_key, f"must start with one of {allowed}, got {spec!r}")
        if head != "zero" and ":" not in spec:
            errors.append(f"{src_key}: {head!r} needs an argument, e.g. '{head}:...'")
    if errors:
        raise ConfigError("config validation failed:\n  " + "\n  ".join(errors))


def seed_schedule(base_seed: int, count: int):
    """Fixed, auditable seed derivation for ensembles: base + index."""
    return [base_seed + i for i in range(count)]
