"""Run configuration: an INI file with one section per stage.

Sections and keys mirror the library dataclasses. Unknown sections or keys are
rejected, and every value is parsed into the type of its default. The
resolved configuration (all defaults filled in) can be written back out with
:func:`effective_ini` so a run is reproducible from its output directory.

Example::

    [run]
    seed = 11
    target = ring8

    [flow]
    lambda1 = 0.3
    estimator = krr
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigInvalid, IoFailure
from .flow import FlowConfig
from .nets import GanTrainConfig
from .runs import AblationGrid
from .targets import BUILTIN_TARGETS, GmmTarget, get_target, target_from_components


@dataclass
class RunSection:
    seed: int = 11
    out: str = "gminfer-out"
    target: str = "ring8"
    generator: str = "mlp"
    nets: str = ""
    n_eval: int = 1024
    oracle_score: bool = False


@dataclass
class TargetSection:
    weights: tuple = ()
    means: tuple = ()
    stddevs: tuple = ()


@dataclass
class ConditionSection:
    variant: str = "none"
    observed: tuple = (0,)
    values: tuple = (0.0,)
    tau: float = 0.05
    index: int = 0
    beta: float = 1.0


@dataclass
class VerifySection:
    sigma_grid: tuple = (0.05, 0.1, 0.2, 0.4)
    m: int = 100_000
    probes: int = 20
    bandwidth: float = 1.0
    eta_grid: tuple = (1.0, 10.0, 100.0, 1000.0)
    n_matrices: int = 10
    matrix_size: int = 16
    score_n: int = 256
    score_ridge: float = 1000.0


SECTIONS = {
    "run": RunSection,
    "target": TargetSection,
    "gan": GanTrainConfig,
    "flow": FlowConfig,
    "condition": ConditionSection,
    "ablate": AblationGrid,
    "verify": VerifySection,
}


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    target: TargetSection = field(default_factory=TargetSection)
    gan: GanTrainConfig = field(default_factory=GanTrainConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    condition: ConditionSection = field(default_factory=ConditionSection)
    ablate: AblationGrid = field(default_factory=AblationGrid)
    verify: VerifySection = field(default_factory=VerifySection)

    def resolve_target(self) -> GmmTarget:
        name = self.run.target
        if name == "custom":
            t = self.target
            if not (len(t.weights) == len(t.means) == len(t.stddevs) > 0):
                raise ConfigInvalid("target = custom needs weights, means and stddevs of equal length")
            try:
                return target_from_components(list(zip(t.weights, t.means, t.stddevs)))
            except ValueError as exc:
                raise ConfigInvalid(f"invalid custom target: {exc}") from exc
        try:
            return get_target(name)
        except (KeyError, ValueError) as exc:
            raise ConfigInvalid(f"unknown target {name!r}; built-ins are {sorted(BUILTIN_TARGETS)} or custom") from exc

    def validate(self):
        if self.run.generator not in ("mlp", "identity"):
            raise ConfigInvalid("run.generator must be 'mlp' or 'identity'")
        if self.run.n_eval < 2:
            raise ConfigInvalid("run.n_eval must be at least 2")
        for name in ("gan", "flow"):
            try:
                getattr(self, name).validate()
            except ValueError as exc:
                raise ConfigInvalid(f"[{name}] {exc}") from exc
        self.ablate.validate()
        v = self.verify
        if len(v.sigma_grid) < 1 or v.m < 1 or v.probes < 1 or v.n_matrices < 1 or v.matrix_size < 1:
            raise ConfigInvalid("[verify] grids and counts must be non-empty and positive")
        self.resolve_target()
        return self


def _parse_scalar(kind, text, where):
    text = text.strip()
    try:
        if kind is bool:
            return {"true": True, "false": False, "1": True, "0": False}[text.lower()]
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except (KeyError, ValueError) as exc:
        raise ConfigInvalid(f"{where}: cannot parse {text!r} as {kind.__name__}") from exc
    return text


def _parse_tuple(text, where):
    """Comma separated scalars; ``;`` separates rows of a matrix (e.g. means)."""
    def item(tok):
        tok = tok.strip()
        try:
            return float(tok) if any(c in tok for c in ".eE") else int(tok)
        except ValueError:
            return tok

    text = text.strip()
    if not text:
        return ()
    if ";" in text or ("," not in text and len(text.split()) > 1):
        return tuple(tuple(item(t) for t in row.replace(",", " ").split()) for row in text.split(";"))
    return tuple(item(t) for t in text.split(","))


def _parse_value(default, text, where):
    if text.strip().lower() == "none" and not isinstance(default, str):
        return None
    if isinstance(default, tuple):
        return _parse_tuple(text, where)
    if default is None:
        # optional fields default to None; accept a number
        return _parse_scalar(float, text, where)
    return _parse_scalar(type(default), text, where)


def _format_value(v):
    if v is None:
        return "none"
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return "; ".join(" ".join(repr(x) for x in row) for row in v)
        return ", ".join(str(x) for x in v)
    return str(v)


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigInvalid(f"{source}: {exc}") from exc
    cfg = RunConfig()
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigInvalid(f"unknown config section [{section}]")
        obj = getattr(cfg, section)
        known = {f.name: getattr(obj, f.name) for f in fields(obj)}
        updates = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigInvalid(f"unknown config key {section}.{key}")
            updates[key] = _parse_value(known[key], raw, f"{section}.{key}")
        setattr(cfg, section, replace(obj, **updates))
    return cfg


def load_config(path=None, seed: int | None = None, out: str | None = None,
                estimator: str | None = None, generator: str | None = None) -> RunConfig:
    """Read ``path`` (or use defaults), apply command-line overrides, validate."""
    text = ""
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise IoFailure(f"cannot read config {path}: {exc}") from exc
    cfg = parse_config(text, str(path))
    if seed is not None:
        cfg.run = replace(cfg.run, seed=seed)
    if out is not None:
        cfg.run = replace(cfg.run, out=out)
    if estimator is not None:
        cfg.flow = replace(cfg.flow, estimator=estimator)
    if generator is not None:
        cfg.run = replace(cfg.run, generator=generator)
    return cfg.validate()


def config_dict(cfg: RunConfig) -> dict:
    out = {}
    for name in SECTIONS:
        obj = getattr(cfg, name)
        out[name] = {f.name: getattr(obj, f.name) for f in fields(obj)}
    return out


def effective_ini(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name, values in config_dict(cfg).items():
        parser[name] = {k: _format_value(v) for k, v in values.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
