"""Flat ``key = value`` configuration files.

Grammar: one ``key = value`` per line, ``#`` or ``;`` starts a comment line,
keys are dotted paths such as ``model.kind`` or ``truth.theta``.  Lists are
comma separated.  Unknown keys are rejected so typos cannot silently fall
back to defaults.

Recognised keys and defaults::

    model.kind = linear            # linear | nonlinear | l1 | elliptic
    model.N = 2048
    model.a = 1.0                  # spectral kinds
    model.p = 2.0                  # l1 kind, a = 1 / (p - 1)
    model.eps = 0.1                # nonlinear kind
    model.weight.generator = polynomial   # polynomial | geometric
    model.weight.param = 1.0       # exponent or ratio
    elliptic.preset = constant     # constant | manufactured
    elliptic.M = 200
    elliptic.R = 4.0
    elliptic.c0 = 1.0
    truth.theta = 0.5
    truth.E = 1.0
    truth.mu = 0.01
    truth.mode = deterministic     # deterministic | seeded
    truth.oversmoothing = true
    truth.seed = 0
    dp.c_dp = 2.0
    dp.kappa_lo = 1e-12
    dp.kappa_hi = 1e6
    dp.rtol = 1e-9
    dp.max_steps = 200
    dp.scan_per_decade = 32
    experiment.deltas = 1e-2, 3.1622776601683794e-3, ...
    experiment.seeds = 3
    experiment.seed = 0
    experiment.slope_tolerance = 0.08
    experiment.c_u_samples = 100
    smoothing = exp2               # exp | exp2 | rational | hat
    audit.t_min = 1e-3
    audit.t_max = 1.0
    audit.t_per_decade = 8
    audit.deltas = 1e-2, 1e-3, 1e-4, 1e-5
    audit.samples = 100
    audit.s_values = 0.25, 0.5, 0.75
    audit.max_drift = 0.05
    audit.tau0 = 1.0
    kfun.t = 0.01, 0.1, 1, 10
    kfun.mode = 3                  # index of the unit vector probed
    kfun.space_a = X
    kfun.space_b = V
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .discrepancy import DiscrepancyConfig
from .harness import DEFAULT_DELTAS, ExperimentConfig, ModelSpec, TruthSpec

__all__ = ["ConfigError", "AuditSettings", "KfunSettings", "RunConfig", "parse_config", "load_config"]

_SECTION = "oversmooth"


class ConfigError(ValueError):
    """Malformed configuration; the CLI maps it to exit code 2."""


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# dotted key -> (group, field name, converter)
_KEYS = {
    "model.kind": ("model", "kind", str),
    "model.N": ("model", "N", int),
    "model.a": ("model", "a", float),
    "model.p": ("model", "p", float),
    "model.eps": ("model", "eps", float),
    "model.weight.generator": ("model", "generator", str),
    "model.weight.param": ("model", "param", float),
    "elliptic.preset": ("model", "preset", str),
    "elliptic.M": ("model", "M", int),
    "elliptic.R": ("model", "R", float),
    "elliptic.c0": ("model", "c0", float),
    "truth.theta": ("truth", "theta", float),
    "truth.E": ("truth", "E", float),
    "truth.mu": ("truth", "mu", float),
    "truth.mode": ("truth", "mode", str),
    "truth.oversmoothing": ("truth", "require_oversmoothing", _bool),
    "truth.seed": ("truth", "seed", int),
    "dp.c_dp": ("dp", "c_dp", float),
    "dp.kappa_lo": ("dp", "kappa_lo", float),
    "dp.kappa_hi": ("dp", "kappa_hi", float),
    "dp.rtol": ("dp", "rtol", float),
    "dp.max_steps": ("dp", "max_steps", int),
    "dp.scan_per_decade": ("dp", "scan_per_decade", int),
    "experiment.deltas": ("experiment", "deltas", _floats),
    "experiment.seeds": ("experiment", "seeds", int),
    "experiment.seed": ("experiment", "seed", int),
    "experiment.slope_tolerance": ("experiment", "slope_tolerance", float),
    "experiment.c_u_samples": ("experiment", "c_u_samples", int),
    "smoothing": ("audit", "smoothing", str),
    "audit.t_min": ("audit", "t_min", float),
    "audit.t_max": ("audit", "t_max", float),
    "audit.t_per_decade": ("audit", "t_per_decade", int),
    "audit.deltas": ("audit", "deltas", _floats),
    "audit.samples": ("audit", "samples", int),
    "audit.s_values": ("audit", "s_values", _floats),
    "audit.max_drift": ("audit", "max_drift", float),
    "audit.tau0": ("audit", "tau0", float),
    "kfun.t": ("kfun", "t_values", _floats),
    "kfun.mode": ("kfun", "mode", int),
    "kfun.space_a": ("kfun", "space_a", str),
    "kfun.space_b": ("kfun", "space_b", str),
}


@dataclass(frozen=True)
class AuditSettings:
    smoothing: str = "exp2"
    t_min: float = 1e-3
    t_max: float = 1.0
    t_per_decade: int = 8
    deltas: tuple = (1e-2, 1e-3, 1e-4, 1e-5)
    samples: int = 100
    s_values: tuple = (0.25, 0.5, 0.75)
    max_drift: float = 0.05
    tau0: float = 1.0


@dataclass(frozen=True)
class KfunSettings:
    t_values: tuple = (0.01, 0.1, 1.0, 10.0)
    mode: int = 3
    space_a: str = "X"
    space_b: str = "V"


@dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    audit: AuditSettings = field(default_factory=AuditSettings)
    kfun: KfunSettings = field(default_factory=KfunSettings)
    source: str = "<defaults>"

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, experiment=replace(self.experiment, seed=int(seed)))


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    """Parse configuration text into a :class:`RunConfig`."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n" + text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    groups = {"model": {}, "truth": {}, "dp": {}, "experiment": {}, "audit": {}, "kfun": {}}
    for key, raw in parser.items(_SECTION):
        if key not in _KEYS:
            raise ConfigError(f"{source}: unknown key {key!r}")
        group, name, convert = _KEYS[key]
        try:
            groups[group][name] = convert(raw.strip())
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {key}: {exc}") from exc
    try:
        model = ModelSpec(**groups["model"])
        truth = TruthSpec(**groups["truth"])
        dp = DiscrepancyConfig(**groups["dp"])
        exp_fields = dict(groups["experiment"])
        exp_fields.setdefault("deltas", DEFAULT_DELTAS)
        experiment = ExperimentConfig(model=model, truth=truth, dp=dp, **exp_fields)
        audit = AuditSettings(**groups["audit"])
        kfun = KfunSettings(**groups["kfun"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return RunConfig(experiment, audit, kfun, source)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))
