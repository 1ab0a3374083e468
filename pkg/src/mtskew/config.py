"""Experiment configuration.

Configurations are INI files (``key = value`` under ``[section]``
headers). Every key has a type and an admissible range; unknown
sections or keys are rejected. Lists are comma separated.

Grammar::

    file    := { "[" section "]" { key "=" value } }
    value   := number | word | number { "," number }

A parameter is given either by ``value`` or by ``preperiod``, ``period``
and a ``bracket`` for root finding; a nonzero ``value`` wins when both
are set.
"""
from __future__ import annotations

import configparser
import copy
import math
from dataclasses import dataclass

from .errors import ConfigError

__all__ = ["ExperimentConfig", "SCHEMA", "PRESETS", "load_config", "preset"]

# section -> key -> (kind, lo, hi, default); kind in int, float, floats, ints, str
SCHEMA = {
    "base": {
        "value": ("float", 1.0, 2.0, 0.0),
        "preperiod": ("int", 1, 64, 2),
        "period": ("int", 1, 64, 1),
        "bracket": ("floats", 1.0, 2.0, [1.9, 2.0]),
        "m1": ("int", 0, 64, 3),
    },
    "fiber": {
        "value": ("float", 1.0, 2.0, 0.0),
        "preperiod": ("int", 1, 64, 3),
        "period": ("int", 1, 64, 1),
        "bracket": ("floats", 1.0, 2.0, [1.5, 1.6]),
    },
    "coupling": {
        "alpha": ("float", 0.0, 1.0, 1e-3),
        "phi": ("floats", -1e6, 1e6, [0.0, 1.0]),
    },
    "coords": {
        "max_level": ("int", 0, 16, 8),
        "distortion_level": ("int", 0, 12, 2),
        "distortion_samples": ("int", 10, 10**7, 1000),
    },
    "lyapunov": {
        "orbits": ("int", 1, 10**6, 100),
        "length": ("int", 1, 10**10, 10**6),
        "burn_in": ("int", 0, 10**8, 1000),
    },
    "sigma": {
        "trials": ("int", 1, 10**6, 200),
        "orbit_length": ("int", 100, 10**9, 20000),
    },
    "curves": {
        "count": ("int", 1, 10**5, 50),
        "min_depth": ("int", 1, 60, 5),
        "max_depth": ("int", 1, 60, 20),
        "l_max": ("int", 1, 30, 8),
        "alphas": ("floats", 1e-12, 1.0, [1e-2, 1e-3, 1e-4]),
        "linear_depth": ("int", 1, 40, 8),
        "linear_count": ("int", 1, 1000, 5),
        "recurrence_eps": ("floats", 1e-12, 1.0, [1e-1, 1e-2, 1e-3]),
        "separation_depth": ("int", 1, 4, 2),
    },
    "measure": {
        "n_theta": ("int", 16, 1 << 14, 512),
        "n_y": ("int", 16, 1 << 14, 256),
        "samples": ("int", 6, 64, 8),
        "starts": ("int", 2, 64, 4),
        "attractor_levels": ("ints", 0, 8, [0, 1, 2, 3]),
    },
    "recurrence": {
        "orbits": ("int", 1, 10**7, 1000),
        "n_list": ("ints", 1, 10**10, [1000, 10000, 100000]),
        "epsilon": ("float", 1e-12, 1e6, 1e-2),
        "delta_tilde": ("float", 1e-12, 0.5, 0.1),
        "r_points": ("int", 2, 1000, 11),
        "r_span": ("float", 1e-3, 100.0, 5.0),
        "theta_samples": ("int", 100, 10**8, 100000),
    },
    "run": {
        "seed": ("int", 0, (1 << 64) - 1, 0),
        "workers": ("int", 1, 1024, 1),
        "out": ("str", None, None, "out"),
    },
}

PRESETS = {
    "default": {},
    "quick": {
        "coords": {"max_level": 5, "distortion_samples": 200},
        "lyapunov": {"orbits": 8, "length": 20000, "burn_in": 200},
        "sigma": {"trials": 20, "orbit_length": 5000},
        "curves": {"count": 8, "min_depth": 3, "max_depth": 6, "linear_count": 2},
        "measure": {"n_theta": 64, "n_y": 32, "attractor_levels": [0, 1, 2]},
        "recurrence": {"orbits": 50, "n_list": [100, 1000, 5000], "theta_samples": 10000},
    },
}


def _describe(kind, lo, hi):
    if kind == "str":
        return "any string"
    if kind in ("int", "ints"):
        rng = f"integer in [{lo:d}, {hi:d}]"
    else:
        rng = f"number in [{lo:g}, {hi:g}]"
    return f"comma-separated list of {rng}" if kind in ("floats", "ints") else rng


def _convert(section, key, raw):
    kind, lo, hi, _ = SCHEMA[section][key]
    where = f"[{section}] {key}"
    if kind == "str":
        return raw
    items = [t.strip() for t in str(raw).split(",")] if kind in ("floats", "ints") else [str(raw).strip()]
    out = []
    for t in items:
        try:
            v = int(float(t)) if kind in ("int", "ints") and float(t).is_integer() else float(t)
            if kind in ("int", "ints") and not isinstance(v, int):
                raise ValueError
        except ValueError:
            raise ConfigError(f"{where}: cannot parse {t!r}; expected {_describe(kind, lo, hi)}",
                              key=where, admissible=_describe(kind, lo, hi)) from None
        if key == "value" and v == 0:  # 0 leaves the parameter to root finding
            out.append(0.0)
            continue
        if not (lo <= v <= hi) or (isinstance(v, float) and not math.isfinite(v)):
            raise ConfigError(f"{where}: {v!r} outside admissible range; expected {_describe(kind, lo, hi)}",
                              key=where, admissible=_describe(kind, lo, hi))
        out.append(v)
    return out if kind in ("floats", "ints") else out[0]


@dataclass
class ExperimentConfig:
    """Resolved configuration: ``sections[section][key] -> value``."""

    sections: dict
    preset: str = "default"

    def __getitem__(self, section):
        return self.sections[section]

    def get(self, section, key):
        return self.sections[section][key]

    def set(self, section, key, value):
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown key [{section}] {key}", key=f"[{section}] {key}")
        self.sections[section][key] = _convert(section, key, value if not isinstance(value, list)
                                               else ",".join(map(str, value)))

    def to_dict(self) -> dict:
        return {"preset": self.preset, **copy.deepcopy(self.sections)}

    def to_ini(self) -> str:
        lines = []
        for sec, kv in self.sections.items():
            lines.append(f"[{sec}]")
            for k, v in kv.items():
                lines.append(f"{k} = {', '.join(map(repr, v)) if isinstance(v, list) else v}")
            lines.append("")
        return "\n".join(lines)

    def validate(self):
        for sec in ("base", "fiber"):
            br = self.sections[sec]["bracket"]
            if len(br) != 2 or not br[0] < br[1]:
                raise ConfigError(f"[{sec}] bracket: need two increasing numbers in [1, 2]",
                                  key=f"[{sec}] bracket", admissible="lo, hi with 1 <= lo < hi <= 2")
        c = self.sections["curves"]
        if c["min_depth"] > c["max_depth"]:
            raise ConfigError("[curves] min_depth exceeds max_depth", key="[curves] min_depth",
                              admissible=f"integer in [1, {c['max_depth']}]")
        if len(self.sections["coupling"]["phi"]) < 2:
            raise ConfigError("[coupling] phi: need at least a linear polynomial",
                              key="[coupling] phi", admissible="at least two coefficients")
        if len(self.sections["recurrence"]["n_list"]) < 2:
            raise ConfigError("[recurrence] n_list: need at least two lengths",
                              key="[recurrence] n_list", admissible="two or more integers")
        return self


def preset(name: str = "default") -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}", key="--preset",
                          admissible=", ".join(sorted(PRESETS)))
    sections = {s: {k: copy.deepcopy(spec[3]) for k, spec in keys.items()}
                for s, keys in SCHEMA.items()}
    for s, kv in PRESETS[name].items():
        sections[s].update(copy.deepcopy(kv))
    return ExperimentConfig(sections, name)


def load_config(path=None, preset_name: str = "default", text: str | None = None) -> ExperimentConfig:
    """Preset values overridden by the INI file at ``path`` (or the string ``text``).

    Raises
    ------
    ConfigError
        Unreadable file, unknown section or key, unparsable or out-of-range value.
    """
    cfg = preset(preset_name)
    if path is None and text is None:
        return cfg.validate()
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        if text is not None:
            parser.read_string(text)
        else:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config: {exc}", key=str(path)) from None
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]; admissible: {', '.join(SCHEMA)}",
                              key=f"[{sec}]", admissible=", ".join(SCHEMA))
        for key, raw in parser.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key [{sec}] {key}; admissible: {', '.join(SCHEMA[sec])}",
                                  key=f"[{sec}] {key}", admissible=", ".join(SCHEMA[sec]))
            cfg.sections[sec][key] = _convert(sec, key, raw)
    return cfg.validate()
