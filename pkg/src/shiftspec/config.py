"""Sectioned key=value run configuration.

Every key has a parser and a default; unknown sections or keys are errors.
Per-filter overrides for verify-filters live in sections named
``filter.<kind>``.
"""
from __future__ import annotations

import configparser
import io
import math

from .filters import KINDS as FILTER_KINDS


class ConfigError(ValueError):
    pass


def _float(v):
    v = v.strip().lower()
    if v in ("inf", "infinity", "+inf"):
        return math.inf
    return float(v)


def _opt_float(v):
    return None if v.strip() in ("", "none", "auto") else _float(v)


def _int(v):
    f = float(v)
    if f != int(f):
        raise ValueError(f"{v!r} is not an integer")
    return int(f)


def _bool(v):
    v = v.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{v!r} is not a boolean")


def _floats(v):
    return tuple(_float(x) for x in v.replace(";", ",").split(",") if x.strip())


def _ints(v):
    return tuple(_int(x) for x in v.replace(";", ",").split(",") if x.strip())


def _words(v):
    return tuple(x.strip() for x in v.replace(";", ",").split(",") if x.strip())


def _str(v):
    return v.strip()


SCHEMA = {
    "scenario": {"kind": (_str, "bounded_linear"), "p": (_float, math.inf)},
    "kernel": {"beta": (_float, 2.0), "j_max": (_int, 4096), "basis": (_str, "cosine")},
    "filter": {"kind": (_str, "ridge"), "tau": (_opt_float, None),
               "E": (_opt_float, None), "F": (_opt_float, None)},
    "source": {"r": (_float, 0.5), "eps_u": (_float, 0.05), "scale": (_float, 1.0)},
    "experiment": {
        "schedule": (_str, "thm1"), "gamma_list": (_floats, (0.0,)),
        "n_grid": (_ints, (128, 256, 512, 1024, 2048, 4096)), "trials": (_int, 20),
        "eps": (_opt_float, None), "m": (_int, 3), "master_seed": (_int, 0),
        "noise_bound": (_float, 0.2), "alpha0": (_opt_float, None),
        "manual_s": (_opt_float, None), "manual_scale": (_float, 1.0),
        "delta": (_float, 0.1), "compare_untruncated": (_bool, True),
        "drop_burn_in": (_bool, True),
    },
    "report": {"tolerance": (_float, 0.10)},
    "verify": {
        "filters": (_words, FILTER_KINDS), "lambda_points": (_int, 25),
        "lambda_min_exp": (_float, -4.0), "lambda_max_exp": (_float, 0.0),
        "t_points": (_int, 1000), "thetas": (_floats, (0.0, 0.25, 0.5, 0.75, 1.0)),
        "approx_theta_step": (_float, 0.25),
    },
    "moments": {
        "scenarios": (_words, ("none", "bounded_linear", "log_tail:2")),
        "m_max": (_int, 8), "constants": (_str, "auto"),
        "L": (_opt_float, None), "sigma": (_opt_float, None), "sigma2": (_opt_float, None),
        "expect_fail": (_words, ()),
    },
    "fit": {"n": (_int, 256), "lambda": (_opt_float, None), "gamma_list": (_floats, (0.0, 0.5, 1.0)),
            "grid_points": (_int, 201), "truncate": (_bool, False)},
    "output": {"verbosity": (_int, 1)},
}

FILTER_OVERRIDE_KEYS = {"tau": _opt_float, "E": _opt_float, "F": _opt_float}


def _fmt(v):
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


class RunConfig:
    """Resolved configuration: defaults, then file, then overrides."""

    def __init__(self):
        self.values = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}
        self.filter_overrides: dict[str, dict] = {}

    def __getitem__(self, section):
        return self.values[section]

    def set(self, section: str, key: str, raw: str):
        if section.startswith("filter."):
            kind = section.split(".", 1)[1]
            if kind not in FILTER_KINDS:
                raise ConfigError(f"unknown filter section [{section}]")
            if key not in FILTER_OVERRIDE_KEYS:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            parser = FILTER_OVERRIDE_KEYS[key]
            target = self.filter_overrides.setdefault(kind, {})
        else:
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]")
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            parser = SCHEMA[section][key][0]
            target = self.values[section]
        try:
            target[key] = parser(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from exc

    def load_text(self, text: str, source: str = "<config>"):
        cp = configparser.ConfigParser(interpolation=None, strict=True, inline_comment_prefixes=(";", "#"))
        cp.optionxform = str
        try:
            cp.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {source}: {exc}") from exc
        for section in cp.sections():
            for key, raw in cp.items(section):
                self.set(section, key, raw)

    def load(self, path):
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        self.load_text(text, source=str(path))

    def apply_override(self, item: str):
        """Apply a ``section.key=value`` override."""
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        lhs, raw = item.split("=", 1)
        if "." not in lhs:
            raise ConfigError(f"override {item!r} lacks a section")
        section, key = lhs.strip().rsplit(".", 1)
        self.set(section, key.strip(), raw)

    def dumps(self) -> str:
        buf = io.StringIO()
        for section, keys in self.values.items():
            buf.write(f"[{section}]\n")
            for k, v in keys.items():
                buf.write(f"{k} = {_fmt(v)}\n")
            buf.write("\n")
        for kind, keys in sorted(self.filter_overrides.items()):
            buf.write(f"[filter.{kind}]\n")
            for k, v in keys.items():
                buf.write(f"{k} = {_fmt(v)}\n")
            buf.write("\n")
        return buf.getvalue()
