"""Run configuration: flat ``key = value`` text with ``[section]`` headers.

Example::

    [model]
    N = 200
    beta = 1.5
    dist = two_valued:0.2:0.5
    seed = 7

    [partition]
    n = 2

Unknown keys are kept and echoed, so a configuration always round-trips
through :meth:`RunConfig.to_text` and :meth:`RunConfig.from_text`.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field as dc_field
from pathlib import Path

from .errors import DomainError

DEFAULTS: dict[str, dict[str, str]] = {
    "model": {"N": "200", "beta": "1.5", "dist": "constant:0.0", "seed": "0", "field_file": ""},
    "partition": {"n": "1"},
    "predict": {"mode": "empirical", "convention": "metropolis"},
    "solver": {"method": "auto", "window": "", "tol": "1e-10"},
    "bounds": {"bk_mode": "monte_carlo", "paths": "4000"},
    "simulate": {"chain": "lumped", "R": "1000", "max_steps": "10000000000", "start": "nu",
                 "burn_in_sweeps": "50", "budget_steps": "1e9"},
    "landscape": {"grid_points": "401"},
    "output": {"dir": "out"},
}


@dataclass
class RunConfig:
    """Sectioned string settings with typed accessors."""

    sections: dict[str, dict[str, str]] = dc_field(default_factory=dict)

    @classmethod
    def default(cls) -> "RunConfig":
        return cls({s: dict(kv) for s, kv in DEFAULTS.items()})

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None, strict=True)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise DomainError(f"malformed configuration: {exc}") from exc
        cfg = cls.default()
        for sec in cp.sections():
            cfg.sections.setdefault(sec, {}).update(dict(cp[sec]))
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for sec in sorted(self.sections):
            cp[sec] = {k: self.sections[sec][k] for k in sorted(self.sections[sec])}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def set(self, section: str, key: str, value) -> None:
        self.sections.setdefault(section, {})[key] = str(value)

    def get(self, section: str, key: str) -> str:
        try:
            return self.sections[section][key]
        except KeyError as exc:
            raise DomainError(f"missing configuration key [{section}] {key}") from exc

    def get_int(self, section: str, key: str) -> int:
        v = self.get(section, key)
        try:
            return int(float(v)) if "e" in v.lower() else int(v)
        except ValueError as exc:
            raise DomainError(f"[{section}] {key} = {v!r} is not an integer") from exc

    def get_float(self, section: str, key: str) -> float:
        v = self.get(section, key)
        try:
            return float(v)
        except ValueError as exc:
            raise DomainError(f"[{section}] {key} = {v!r} is not a number") from exc

    def get_window(self) -> tuple[int, int] | None:
        v = self.get("solver", "window").strip()
        if not v:
            return None
        try:
            lo, hi = (int(x) for x in v.split(","))
        except ValueError as exc:
            raise DomainError(f"[solver] window must be 'below,above', got {v!r}") from exc
        return lo, hi

    def as_dict(self) -> dict:
        return {s: dict(sorted(kv.items())) for s, kv in sorted(self.sections.items())}
