"""Run configuration: typed INI sections, round trip and hashing."""
from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, fields

import numpy as np

from .geometry import Nozzle
from .upstream import PRESETS, UpstreamProfiles, preset


class ConfigError(ValueError):
    pass


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _levels(text):
    out = []
    for part in text.split(";"):
        part = part.strip()
        if part:
            mu, R = _floats(part)
            out.append((mu, R))
    return tuple(out)


def _fmt(v):
    return repr(float(v))


@dataclass
class RunConfig:
    # gas
    gamma: float = 2.0
    eps: float = 0.02
    # upstream profiles
    preset: str = "constant"
    Hbar: float = 2.0
    B0: float = 1.0
    S0: float = 1.0
    bump_B: float = 5e-4
    bump_S: float = 5e-4
    profile_table: str = ""  # CSV y,B,S replacing the preset when set
    # nozzle
    nozzle_table: str = ""  # CSV y,N(y) of the wall above y = 1; empty for the tangent wall
    # flow
    Q: float = 0.02
    # grid
    hx: float = 1.0 / 32.0
    hy: float = 1.0 / 32.0
    # truncation schedule
    levels: tuple = ((1.0, 3.0),)
    # tolerances
    solver_tol: float = 1e-10
    fit_tol: float = 2.0  # |Upsilon(1)| target in units of hx
    continuation_tol: float = 1e-3
    c0: float = 8.0
    prebracket: bool = True  # fit Lambda on a coarser grid first
    # sweep
    lambdas: tuple = ()
    # run
    out: str = "out"
    threads: int = 1

    _SECTIONS = {
        "gas": ("gamma", "eps"),
        "profiles": ("preset", "Hbar", "B0", "S0", "bump_B", "bump_S", "profile_table"),
        "nozzle": ("nozzle_table",),
        "flow": ("Q",),
        "grid": ("hx", "hy"),
        "truncation": ("levels",),
        "tolerances": ("solver_tol", "fit_tol", "continuation_tol", "c0", "prebracket"),
        "sweep": ("lambdas",),
        "run": ("out", "threads"),
    }

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.gamma > 1.0:
            raise ConfigError("gamma must exceed 1")
        for name in ("eps", "Q", "hx", "hy", "solver_tol", "fit_tol", "continuation_tol", "Hbar"):
            if not getattr(self, name) > 0.0:
                raise ConfigError(f"{name} must be positive")
        if not self.c0 > 1.0:
            raise ConfigError("c0 must exceed 1")
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {PRESETS}")
        if not self.levels:
            raise ConfigError("at least one truncation level is needed")
        for a, b in zip(self.levels, self.levels[1:]):
            if not (b[0] > a[0] and b[1] > a[1]):
                raise ConfigError("truncation schedule must increase strictly in mu and R")
        if int(self.threads) < 1:
            raise ConfigError("threads must be at least 1")

    # serialisation --------------------------------------------------------

    def _text(self, name):
        v = getattr(self, name)
        if name == "levels":
            return "; ".join(f"{_fmt(m)}, {_fmt(r)}" for m, r in v)
        if name == "lambdas":
            return ", ".join(_fmt(x) for x in v)
        if isinstance(v, bool):
            return "yes" if v else "no"
        if isinstance(v, int):
            return str(v)
        if isinstance(v, float):
            return _fmt(v)
        return str(v)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for sec, names in self._SECTIONS.items():
            cp[sec] = {n: self._text(n) for n in names}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp.read_string(text)
        kw = {}
        known = {n: sec for sec, names in cls._SECTIONS.items() for n in names}
        types = {f.name: f.type for f in fields(cls)}
        for sec in cp.sections():
            if sec not in cls._SECTIONS:
                raise ConfigError(f"unknown section [{sec}]")
            for key, raw in cp[sec].items():
                if known.get(key) != sec:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
                try:
                    kw[key] = cls._parse(key, raw, types[key], cp[sec])
                except ValueError as exc:
                    raise ConfigError(f"[{sec}] {key}: {exc}") from None
        return cls(**kw)

    @staticmethod
    def _parse(key, raw, typ, sec):
        if key == "levels":
            return _levels(raw)
        if key == "lambdas":
            return _floats(raw)
        if typ in ("bool", bool):
            return sec.getboolean(key)
        if typ in ("int", int):
            return int(raw)
        if typ in ("float", float):
            return float(raw)
        return raw.strip()

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_ini(fh.read())

    def digest(self) -> str:
        """sha256 of the canonical INI text."""
        return hashlib.sha256(self.to_ini().encode("utf-8")).hexdigest()

    # model objects --------------------------------------------------------

    def profiles(self) -> UpstreamProfiles:
        if self.profile_table:
            tab = np.loadtxt(self.profile_table, delimiter=",", skiprows=1, ndmin=2)
            return UpstreamProfiles.from_tables(self.gamma, tab[:, 0], tab[:, 1], tab[:, 0],
                                                tab[:, 2], name=self.profile_table)
        return preset(self.preset, gamma=self.gamma, Hbar=self.Hbar, B0=self.B0, S0=self.S0,
                      bump_B=self.bump_B, bump_S=self.bump_S)

    def nozzle(self) -> Nozzle:
        if self.nozzle_table:
            tab = np.loadtxt(self.nozzle_table, delimiter=",", skiprows=1, ndmin=2)
            return Nozzle.from_table(tab[:, 0], tab[:, 1], self.Hbar)
        return Nozzle.tangent(self.Hbar)
