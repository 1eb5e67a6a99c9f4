"""Flat ``key = value`` experiment configuration files.

Blank lines and text after ``#`` are ignored. Keys are case sensitive and
may appear once. Values are parsed lazily by :class:`ExperimentConfig`
so that errors point at the offending line.

Recognised keys
---------------
name          experiment label
dgp           changepoint | gamma_shared | shared_additive | two_level | additive | none
frailty       gamma:<theta> | discrete:<z>@<p>,<z>@<p>,... | none
beta, beta1, beta2, nu, lambda0, theta, theta2, alpha, psi
n, replicates, seed, workers
censoring     none | mixed[:u_max,admin_time,fraction] | uniform:<u_max> | admin:<time>
estimators    comma separated, see :data:`hazardlens.simlab.runner.ESTIMATORS`
tgrid         <start>:<stop>:<num>
taus          comma separated Kendall's tau values
horizon, n_boot, bandwidth, windows (<a>:<b>,<a>:<b>), fig9_target
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..core import DomainError
from ..frailty import DiscreteFrailty, GammaFrailty
from .censoring import AdminCensoring, MixedCensoring, NoCensoring, UniformCensoring

__all__ = ["ConfigError", "parse_config", "load_config", "bundled_configs", "ExperimentConfig"]

DGPS = ("changepoint", "gamma_shared", "shared_additive", "two_level", "additive", "none")


class ConfigError(ValueError):
    """Malformed configuration; ``line`` is 1-based when known."""

    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = f"{source or '<config>'}:{line}: " if line is not None else ""
        super().__init__(where + message)


def parse_config(text, source=None):
    """Return ``{key: (value, line)}`` for a flat configuration text."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, source)
        if key in out:
            raise ConfigError(f"duplicate key {key!r} (first on line {out[key][1]})", lineno, source)
        out[key] = (value, lineno)
    return out


def bundled_configs():
    """Names of the configurations shipped with the package."""
    root = resources.files(__package__) / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def load_config(name_or_path, **overrides) -> "ExperimentConfig":
    """Load a bundled configuration by name or a file by path.

    ``overrides`` replace keys after parsing, e.g. ``seed=7``.
    """
    path = Path(str(name_or_path))
    if path.is_file():
        text, source = path.read_text(encoding="utf-8"), str(path)
    else:
        res = resources.files(__package__) / "configs" / f"{name_or_path}.cfg"
        if not res.is_file():
            raise ConfigError(f"no such config file or bundled config: {name_or_path}")
        text, source = res.read_text(encoding="utf-8"), f"{name_or_path}.cfg"
    entries = parse_config(text, source)
    for key, value in overrides.items():
        if value is not None:
            entries[key] = (str(value), None)
    return ExperimentConfig.from_entries(entries, source)


def _parse_frailty(text):
    kind, _, body = text.partition(":")
    if kind == "none":
        return None
    if kind == "gamma":
        return GammaFrailty(float(body))
    if kind == "discrete":
        atoms, probs = zip(*(item.split("@") for item in body.split(",")))
        return DiscreteFrailty(tuple(map(float, atoms)), tuple(map(float, probs)))
    raise ValueError(f"unknown frailty {text!r}")


def _parse_censoring(text):
    kind, _, body = text.partition(":")
    args = [float(x) for x in body.split(",")] if body else []
    if kind == "none" and not args:
        return NoCensoring()
    if kind == "mixed":
        return MixedCensoring(*args)
    if kind == "uniform" and len(args) == 1:
        return UniformCensoring(*args)
    if kind == "admin" and len(args) == 1:
        return AdminCensoring(*args)
    raise ValueError(f"unknown censoring scheme {text!r}")


def _parse_grid(text):
    start, stop, num = text.split(":")
    num = int(num)
    if num < 1:
        raise ValueError("grid needs at least one point")
    return np.linspace(float(start), float(stop), num)


def _parse_list(text):
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _parse_windows(text):
    return tuple(tuple(float(v) for v in w.split(":")) for w in _parse_list(text))


_FLOAT_KEYS = ("beta", "beta1", "beta2", "nu", "lambda0", "theta", "theta2", "alpha", "psi",
               "horizon", "bandwidth", "fig9_target")
_INT_KEYS = ("n", "replicates", "seed", "workers", "n_boot")


def _float(text):
    text = text.strip()
    if text.startswith("log(") and text.endswith(")"):
        return math.log(float(text[4:-1]))
    if text.startswith("-log(") and text.endswith(")"):
        return -math.log(float(text[5:-1]))
    return float(text)


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """A validated experiment; ``params`` keeps numeric model parameters."""

    name: str
    dgp: str
    n: int
    censoring: object
    estimators: tuple
    tgrid: np.ndarray
    seed: int
    replicates: int
    frailty: object = None
    params: dict = field(default_factory=dict)
    taus: tuple = ()
    windows: tuple = ()
    workers: int = 1
    echo: dict = field(default_factory=dict)

    @classmethod
    def from_entries(cls, entries, source=None):
        from .runner import ESTIMATORS

        def get(key, parse, default=None, required=False):
            if key not in entries:
                if required:
                    raise ConfigError(f"missing required key {key!r}", None, source)
                return default
            value, line = entries[key]
            try:
                return parse(value)
            except (ValueError, DomainError, TypeError) as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}", line, source) from None

        known = set(_FLOAT_KEYS) | set(_INT_KEYS) | {
            "name", "dgp", "frailty", "censoring", "estimators", "tgrid", "taus", "windows"}
        for key, (_, line) in entries.items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r}", line, source)

        def choice(options):
            def parse(v):
                if v not in options:
                    raise ValueError(f"expected one of {', '.join(options)}")
                return v
            return parse

        def positive_int(v):
            i = int(v)
            if i < 1:
                raise ValueError("must be a positive integer")
            return i

        def estimator_list(v):
            items = _parse_list(v)
            for item in items:
                if item not in ESTIMATORS:
                    raise ValueError(f"unknown estimator {item!r}")
            return items

        params = {}
        for key in _FLOAT_KEYS:
            value = get(key, _float)
            if value is not None:
                params[key] = value
        for key in ("n_boot",):
            value = get(key, positive_int)
            if value is not None:
                params[key] = value
        return cls(
            name=get("name", str, required=True),
            dgp=get("dgp", choice(DGPS), "none"),
            n=get("n", positive_int, 1),
            censoring=get("censoring", _parse_censoring, NoCensoring()),
            estimators=get("estimators", estimator_list, ()),
            tgrid=get("tgrid", _parse_grid, np.linspace(0.0, 1.0, 11)),
            seed=get("seed", int, 0),
            replicates=get("replicates", positive_int, 1),
            frailty=get("frailty", _parse_frailty, None),
            params=params,
            taus=get("taus", lambda v: tuple(float(x) for x in _parse_list(v)), ()),
            windows=get("windows", _parse_windows, ()),
            workers=get("workers", positive_int, 1),
            echo={k: v for k, (v, _) in sorted(entries.items())},
        )
