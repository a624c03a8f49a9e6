"""Campaign configuration: an INI file with fixed sections and keys.

Every key has a documented default, so an empty file is a valid campaign.
Unknown sections or keys are rejected, and errors point at the offending
line and column.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .bench import DEFAULT_ALPHAS, DEFAULT_NS
from .grid import parse_cell_count
from .randfield import PRESETS, MaternSpec, SoilBaselines
from .solver import BoundaryConditions, SolverOptions
from . import uq

ENV_PREFIX = "RICHARDS_MLMC_"


class ConfigError(ValueError):
    def __init__(self, message, line=None, column=None):
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.column = column


def _number(text: str) -> float:
    text = text.strip()
    return float(Fraction(text)) if "/" in text else float(text)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int(text: str) -> int:
    return int(text.strip())


def _cells(text: str) -> int:
    return parse_cell_count(text.strip())


def _floats(text: str) -> tuple:
    return tuple(_number(t) for t in re.split(r"[,\s]+", text.strip()) if t)


def _overrides(text: str) -> tuple:
    """``"0:2.9/1.65, 1:2.95/1.55"`` -> ``((0, 2.9, 1.65), (1, 2.95, 1.55))``."""
    out = []
    for item in filter(None, (t.strip() for t in text.split(","))):
        lvl, pair = item.split(":")
        a, n = pair.split("/")
        out.append((int(lvl), float(a), float(n)))
    return tuple(out)


def _str(text: str) -> str:
    return text.strip()


# section -> key -> (parser, default)
SCHEMA = {
    "run": {
        "seed": (_int, 0),
        "threads": (_int, 0),
        "out": (_str, "results"),
    },
    "problem": {
        "t_final": (_number, 0.2),
        "dt_scale": (_number, 1.0),
        "bottom": (_number, 0.1),
        "top": (_number, -0.4),
        "cells": (_cells, 64),
    },
    "field": {
        "preset": (_str, "phi1"),
        "nu": (_number, None),
        "lambda_x": (_number, None),
        "lambda_z": (_number, None),
        "sigma2": (_number, None),
        "padding": (_int, 2),
    },
    "soil": {
        "ks": (_number, 0.2),
        "alpha": (_number, 1.0),
        "n": (_number, 2.0),
        "theta_s": (_number, 0.5),
        "theta_r": (_number, 0.05),
        "d_alpha": (_number, 0.2),
        "d_n": (_number, 0.05),
        "d_theta_s": (_number, 0.05),
        "d_theta_r": (_number, 0.005),
        "random": (_bool, True),
        "n_pc": (_int, 6),
    },
    "solver": {
        "eps_pi": (_number, 1e-5),
        "eps_mg": (_number, 1e-5),
        "max_nl": (_int, 50),
        "max_cycles": (_int, 100),
    },
    "mlmc": {
        "eps": (_number, 0.02),
        "coarsest": (_cells, 16),
        "std_coarsest": (_cells, 32),
        "d_alpha": (_number, 0.05),
        "d_n": (_number, 0.1),
        "pin_finest": (_bool, False),
        "theta": (_overrides, ()),
        "warmup_base": (_int, 64),
        "warmup_decay": (_number, 4.0),
        "warmup_min": (_int, 8),
        "cost_model": (_str, "work"),
        "max_attempts": (_int, 20),
        "max_rounds": (_int, 50),
    },
    "costmap": {
        "alphas": (_floats, DEFAULT_ALPHAS),
        "ns": (_floats, DEFAULT_NS),
        "reps": (_int, 64),
        "cells": (_cells, 32),
        "dt": (_number, 1 / 64),
        "t_final": (_number, 0.1),
    },
    "converge": {
        "coarsest": (_cells, 8),
        "levels": (_int, 4),
        "samples": (_int, 32),
    },
}


def defaults() -> dict:
    return {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}


def _locate(text: str, section: str, key: str | None = None, value: bool = True):
    """Line and column of a section header, a key or the key's value."""
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        m = re.match(r"\[([^\]]+)\]", stripped)
        if m:
            current = m.group(1).strip().lower()
            if key is None and current == section:
                return lineno, line.index("[") + 1
            continue
        if current == section and key is not None:
            m = re.match(r"\s*([^=:\s]+)\s*[=:]\s*", line)
            if m and m.group(1).lower() == key:
                return lineno, (m.end() if value else m.start(1)) + 1
    return None, None


@dataclass
class CampaignConfig:
    values: dict = field(default_factory=defaults)

    def __getitem__(self, section):
        return self.values[section]

    # -- derived objects ------------------------------------------------
    def matern(self) -> MaternSpec:
        f = self["field"]
        name = f["preset"].lower()
        if name not in PRESETS:
            raise ValueError(f"unknown covariance preset {f['preset']!r}")
        base = PRESETS[name].as_tuple()
        explicit = (f["nu"], f["lambda_x"], f["lambda_z"], f["sigma2"])
        return MaternSpec(*(e if e is not None else b for e, b in zip(explicit, base)))

    def soil(self) -> SoilBaselines:
        s = self["soil"]
        kw = {k: s[k] for k in ("ks", "alpha", "n", "theta_s", "theta_r", "n_pc")}
        if not s["random"]:
            return SoilBaselines.deterministic(**kw)
        return SoilBaselines(d_alpha=s["d_alpha"], d_n=s["d_n"], d_theta_s=s["d_theta_s"],
                             d_theta_r=s["d_theta_r"], **kw)

    def solver_options(self) -> SolverOptions:
        return SolverOptions(**self["solver"])

    def boundary(self) -> BoundaryConditions:
        p = self["problem"]
        return BoundaryConditions(bottom=p["bottom"], top=p["top"])

    def setup(self) -> uq.SampleSetup:
        return uq.SampleSetup(self.matern(), self.soil(), self["problem"]["t_final"],
                              self.boundary(), self.solver_options(),
                              self["field"]["padding"])

    def _levels(self, coarsest: int, marched: bool) -> list:
        m, p, s = self["mlmc"], self["problem"], self["soil"]
        finest = p["cells"]
        if coarsest > finest or finest % coarsest or (finest // coarsest) & (finest // coarsest - 1):
            raise ValueError(f"coarsest grid {coarsest} does not divide finest {finest} "
                             "by a power of two")
        n_levels = (finest // coarsest).bit_length()
        return uq.build_levels(
            coarsest, n_levels, s["alpha"], s["n"],
            m["d_alpha"] if marched else 0.0, m["d_n"] if marched else 0.0,
            pin_finest=m["pin_finest"], dt_scale=p["dt_scale"],
            warmup=(m["warmup_base"], m["warmup_decay"], m["warmup_min"]),
            overrides={l: (a, n) for l, a, n in m["theta"]} if marched else None)

    def pc_levels(self) -> list:
        return self._levels(self["mlmc"]["coarsest"], marched=True)

    def std_levels(self) -> list:
        return self._levels(self["mlmc"]["std_coarsest"], marched=False)

    def mc_level(self) -> uq.LevelSpec:
        return self._levels(self["problem"]["cells"], marched=False)[0]

    @property
    def threads(self) -> int:
        t = self["run"]["threads"]
        return t if t > 0 else (os.cpu_count() or 1)

    # -- validation and identity ----------------------------------------
    def validate(self, command: str | None = None) -> "CampaignConfig":
        """Build every derived object so invariant violations surface early.

        Level hierarchies are checked only when ``command`` uses them (or
        when no command is given).
        """
        self.soil()
        self.solver_options()
        self.boundary()
        self.matern()
        if self["field"]["padding"] < 2:
            raise ValueError("padding must be at least 2")
        if self["problem"]["t_final"] <= 0 or self["problem"]["dt_scale"] <= 0:
            raise ValueError("t_final and dt_scale must be positive")
        if self["mlmc"]["eps"] <= 0:
            raise ValueError("eps must be positive")
        if self["mlmc"]["cost_model"] not in ("work", "walltime"):
            raise ValueError("cost_model must be 'work' or 'walltime'")
        if self["run"]["seed"] < 0:
            raise ValueError("seed must be a non-negative integer")
        for key in ("reps",):
            if self["costmap"][key] < 1:
                raise ValueError(f"costmap {key} must be positive")
        if self["converge"]["levels"] < 3:
            raise ValueError("converge needs at least three levels")
        soil = self.soil()
        hierarchies = {None: (self.pc_levels, self.std_levels), "pcmlmc": (self.pc_levels,),
                       "mlmc": (self.std_levels,), "compare": (self.pc_levels, self.std_levels)}
        for build in hierarchies.get(command, ()):
            for spec in build():
                soil.with_theta(spec.alpha, spec.n)
        for a in self["costmap"]["alphas"]:
            for n in self["costmap"]["ns"]:
                SoilBaselines.deterministic(alpha=a, n=n)
        return self

    def canonical(self, exclude=("threads", "out")) -> dict:
        """Plain-data echo; by default without keys that cannot change results."""
        data = {sec: {k: list(v) if isinstance(v, tuple) else v for k, v in keys.items()}
                for sec, keys in self.values.items()}
        data["run"] = {k: v for k, v in data["run"].items() if k not in exclude}
        return data

    def digest(self) -> str:
        """Short hash of everything that influences results."""
        data = self.canonical()
        blob = json.dumps(data, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def override(self, section, key, value) -> "CampaignConfig":
        parser, _ = SCHEMA[section][key]
        self.values[section][key] = parser(str(value)) if isinstance(value, str) else value
        return self


def parse_config_text(text: str, command: str | None = None) -> CampaignConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str.lower
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any [section]", exc.lineno, 1) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(exc.message.split(": ", 1)[-1], exc.lineno, 1) from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"cannot parse {line!r}", lineno, 1) from None
    cfg = CampaignConfig()
    for section in cp.sections():
        sec = section.lower()
        if sec not in SCHEMA:
            line, col = _locate(text, sec)
            raise ConfigError(f"unknown section [{section}]", line, col)
        for key, raw in cp.items(section):
            if key not in SCHEMA[sec]:
                line, col = _locate(text, sec, key, value=False)
                raise ConfigError(f"unknown key {key!r} in [{section}]", line, col)
            parser, _ = SCHEMA[sec][key]
            line, col = _locate(text, sec, key)
            try:
                cfg.values[sec][key] = parser(raw)
            except (ValueError, ZeroDivisionError) as exc:
                raise ConfigError(f"[{sec}] {key}: {exc}", line, col) from None
    try:
        cfg.validate(command)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def parse_config(path, command: str | None = None) -> CampaignConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config_text(path.read_text(), command)


def env_overrides(environ=None) -> dict:
    """Flag values supplied through ``RICHARDS_MLMC_*`` variables."""
    environ = os.environ if environ is None else environ
    out = {}
    for flag in ("config", "seed", "out", "threads"):
        val = environ.get(ENV_PREFIX + flag.upper())
        if val not in (None, ""):
            out[flag] = val
    return out
