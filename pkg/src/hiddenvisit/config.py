"""Pipeline configuration: INI file with sections, overridable from the command line.

Precedence, lowest to highest: built-in defaults, the config file,
``--set section.key=value`` overrides, then the dedicated ``--seed`` and
``--workers`` flags.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from typing import Iterable

from .errors import ConfigError
from .localization import DEFAULT_DIAMETER_KM
from .model import DEFAULT_TAU, HOUR, StudyWindow, parse_timestamp
from .movement import DEFAULT_DWELL_MIN, DEFAULT_FREQ_MIN, scaled_frequency
from .synth import SynthConfig, config_from_mapping

# config key -> (section, attribute)
SECTIONS = {
    "paths": ("cdr", "towers", "out_dir"),
    "study": ("start", "days", "utc_offset_hours"),
    "localization": ("diameter_km",),
    "movement": ("tau", "dwell_min", "freq_min"),
    "fusion": ("frequent_hours",),
    "learning": ("C", "cutoff", "k", "tol", "max_iter"),
    "deploy": ("max_duration_hours",),
    "run": ("seed", "workers"),
}


@dataclass(frozen=True)
class PipelineConfig:
    cdr: str = ""
    towers: str = ""
    out_dir: str = "out"
    start: str = "2013-11-01T00:00:00"
    days: int = 30
    utc_offset_hours: float = 0.0
    diameter_km: float = DEFAULT_DIAMETER_KM
    tau: int = DEFAULT_TAU
    dwell_min: int = DEFAULT_DWELL_MIN
    freq_min: int = DEFAULT_FREQ_MIN  # distinct days per 30 days
    frequent_hours: int = 0  # 0 means half of all study hours
    C: float = 1.0
    cutoff: float = 0.5
    k: int = 10
    tol: float = 1e-8
    max_iter: int = 1000
    max_duration_hours: float = 8.0
    seed: int = 0
    workers: int = 0  # 0 means all available cores
    synth: SynthConfig = field(default_factory=SynthConfig)

    @property
    def window(self) -> StudyWindow:
        return StudyWindow.from_days(parse_timestamp(self.start), self.days)

    @property
    def utc_offset(self) -> int:
        return int(round(self.utc_offset_hours * HOUR))

    @property
    def freq_min_days(self) -> int:
        return scaled_frequency(self.freq_min, self.days)

    @property
    def frequent_threshold(self) -> int | None:
        return self.frequent_hours or None

    @property
    def n_workers(self) -> int:
        if self.workers > 0:
            return self.workers
        try:
            return max(1, len(os.sched_getaffinity(0)))
        except AttributeError:
            return os.cpu_count() or 1

    def problems(self) -> list[str]:
        out = []
        try:
            parse_timestamp(self.start)
        except ValueError:
            out.append(f"study.start: cannot parse {self.start!r}")
        for name in ("days", "diameter_km", "tau", "dwell_min", "freq_min", "C", "k", "tol", "max_iter", "max_duration_hours"):
            if not getattr(self, name) > 0:
                out.append(f"{_section_of(name)}.{name}: must be positive")
        if self.k < 2:
            out.append("learning.k: need at least 2 folds")
        if not 0.0 < self.cutoff < 1.0:
            out.append("learning.cutoff: must lie in (0, 1)")
        if self.frequent_hours < 0:
            out.append("fusion.frequent_hours: must be >= 0")
        if self.workers < 0:
            out.append("run.workers: must be >= 0")
        try:
            self.synth.validate()
        except ConfigError as exc:
            out.extend(f"synth: {p}" for p in exc.problems)
        return out

    def validate(self) -> "PipelineConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def to_ini(self) -> str:
        """Canonical text form; also the input of the config hash."""
        lines = []
        for section, keys in SECTIONS.items():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {getattr(self, k)}" for k in keys)
            lines.append("")
        lines.append("[synth]")
        for f in fields(SynthConfig):
            value = getattr(self.synth, f.name)
            if isinstance(value, tuple):
                value = ", ".join(str(x) for x in _flatten(value))
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def _flatten(values) -> Iterable:
    for v in values:
        if isinstance(v, tuple):
            yield from v
        else:
            yield v


def _section_of(name: str) -> str:
    for section, keys in SECTIONS.items():
        if name in keys:
            return section
    return "synth"


def _coerce(name: str, raw: str, default):
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def load_config(path: str | None = None, overrides: Iterable[str] = (), seed: int | None = None,
                workers: int | None = None) -> PipelineConfig:
    """Read and validate a configuration; raises ConfigError listing every problem."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive ("C")
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError([f"config file not found: {path}"])
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError([f"config file: {exc}"]) from None
    problems = []
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            problems.append(f"override {item!r}: expected section.key=value")
            continue
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, name, value.strip())

    defaults = PipelineConfig()
    kwargs = {}
    synth_values = {}
    for section in parser.sections():
        if section == "synth":
            synth_values.update(parser.items(section))
            continue
        allowed = SECTIONS.get(section)
        if allowed is None:
            problems.append(f"unknown section [{section}]")
            continue
        for name, raw in parser.items(section):
            if name not in allowed:
                problems.append(f"{section}.{name}: unknown option")
                continue
            try:
                kwargs[name] = _coerce(name, raw, getattr(defaults, name))
            except ValueError:
                problems.append(f"{section}.{name}: invalid value {raw!r}")
    if seed is not None:
        kwargs["seed"] = seed
    if workers is not None:
        kwargs["workers"] = workers
    try:
        synth = config_from_mapping(synth_values) if synth_values else SynthConfig()
    except ConfigError as exc:
        problems.extend(exc.problems)
        synth = SynthConfig()
    # the synthetic study follows the pipeline's window and seed
    cfg = PipelineConfig(**kwargs)
    synth_fields = {"study_start": cfg.start, "study_days": cfg.days, "seed": cfg.seed}
    cfg = replace(cfg, synth=replace(synth, **synth_fields))
    problems.extend(cfg.problems())
    if problems:
        raise ConfigError(problems)
    return cfg
