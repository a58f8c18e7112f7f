"""Experiment configuration: strict INI parsing with every default resolved.

Sections map onto parameter dataclasses.  Keys not declared by a section's
dataclass are rejected with the offending key and its line number, and the
resolved configuration lists every field whether it was set or defaulted.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .detour import DetourLearnParams, DetourParams
from .snap import LearnParams, SnapParams

SCENARIOS = ("detour", "snap", "synthetic-cause-effect")


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = "" if line is None else f" (line {line})"
        super().__init__(f"{message}{where}")
        self.key, self.line = key, line


@dataclass
class ExperimentParams:
    scenario: str = "detour"
    seed: int = 0
    trials: int = 5
    out: str = "runs/out"


@dataclass
class DetourScenarioParams:
    barrier_width: float = 20.0


@dataclass
class SyntheticParams:
    """A planted-delay stream: each effect copies one cause after a fixed lag."""

    ticks: int = 400
    causes: int = 3
    planted: tuple[int, ...] = (2, 5)
    pulse_prob: float = 0.15
    noise: float = 0.02
    alpha: float = 0.5
    beta: float = 0.01
    max_delay: int = 8
    r_threshold: float = 0.3


SECTIONS: dict[str, type] = {
    "experiment": ExperimentParams,
    "detour": DetourScenarioParams,
    "detour.world": DetourParams,
    "detour.learn": DetourLearnParams,
    "snap.body": SnapParams,
    "snap.learn": LearnParams,
    "synthetic": SyntheticParams,
}

# dataclass fields that are structured data rather than scalar settings
_FIXED = {("snap.body", "programs")}


def _fields(section: str) -> dict[str, dataclasses.Field]:
    cls = SECTIONS[section]
    hints = typing.get_type_hints(cls)
    return {f.name: (f, hints[f.name]) for f in dataclasses.fields(cls) if (section, f.name) not in _FIXED}


def _coerce(raw: str, hint, key: str, line: int | None):
    raw = raw.strip()
    try:
        if hint is bool:
            low = raw.lower()
            if low not in configparser.ConfigParser.BOOLEAN_STATES:
                raise ValueError(raw)
            return configparser.ConfigParser.BOOLEAN_STATES[low]
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if typing.get_origin(hint) is tuple:
            return tuple(int(x) for x in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}", key, line) from None


def _locate(text: str) -> dict[tuple[str | None, str], int]:
    """Line number of every ``key = value`` entry, keyed by (section, key)."""
    where, section = {}, None
    for n, ln in enumerate(text.splitlines(), 1):
        s = ln.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            where[(section, "")] = n
            continue
        for sep in ("=", ":"):
            if sep in s:
                where[(section, s.split(sep, 1)[0].strip().lower())] = n
                break
    return where


@dataclass
class ExperimentConfig:
    experiment: ExperimentParams = field(default_factory=ExperimentParams)
    sections: dict[str, object] = field(default_factory=dict)

    @property
    def scenario(self) -> str:
        return self.experiment.scenario

    @property
    def seed(self) -> int:
        return self.experiment.seed

    def section(self, name: str):
        if name == "experiment":
            return self.experiment
        if name not in self.sections:
            self.sections[name] = SECTIONS[name]()
        return self.sections[name]

    def resolved(self) -> dict[str, dict]:
        out = {}
        for name in SECTIONS:
            obj = self.section(name)
            out[name] = {k: (list(v) if isinstance(v, tuple) else v)
                         for k, v in dataclasses.asdict(obj).items() if (name, k) not in _FIXED}
        return out

    def to_ini(self, with_out: bool = True) -> str:
        lines = []
        for name, values in self.resolved().items():
            lines.append(f"[{name}]")
            for k, v in values.items():
                if name == "experiment" and k == "out" and not with_out:
                    continue
                v = ", ".join(str(x) for x in v) if isinstance(v, list) else str(v)
                lines.append(f"{k} = {v}")
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        """Hash of everything that can change results; the output location is excluded."""
        res = self.resolved()
        res["experiment"] = {k: v for k, v in res["experiment"].items() if k != "out"}
        blob = json.dumps(res, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, seed: int | None = None, out: str | None = None,
                       trials: int | None = None) -> "ExperimentConfig":
        exp = dataclasses.replace(self.experiment,
                                  **{k: v for k, v in (("seed", seed), ("out", out), ("trials", trials))
                                     if v is not None})
        return ExperimentConfig(exp, dict(self.sections))


def parse_config(text: str) -> ExperimentConfig:
    lines = _locate(text)
    cp = configparser.ConfigParser(interpolation=None, strict=True, default_section="\0none")
    try:
        cp.read_string(text)
    except configparser.DuplicateOptionError as e:
        raise ConfigError(f"duplicate key {e.option!r}", e.option, e.lineno) from None
    except configparser.DuplicateSectionError as e:
        raise ConfigError(f"duplicate section {e.section!r}", e.section, e.lineno) from None
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError("entry outside any section", None, e.lineno) from None
    except configparser.Error as e:
        raise ConfigError(str(e).splitlines()[0]) from None
    cfg = ExperimentConfig()
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section {name!r}", name, lines.get((name, "")))
        known = _fields(name)
        values = {}
        for key, raw in cp.items(name):
            line = lines.get((name, key))
            if key not in known:
                raise ConfigError(f"unknown key {name}.{key}", key, line)
            values[key] = _coerce(raw, known[key][1], f"{name}.{key}", line)
        obj = SECTIONS[name](**values)
        if name == "experiment":
            cfg.experiment = obj
        else:
            cfg.sections[name] = obj
    if cfg.scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {cfg.scenario!r}", "scenario", lines.get(("experiment", "scenario")))
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} not found")
    return parse_config(path.read_text())
