"""Experiment configuration: an INI file with one ``[experiment]`` section.

Grammar (all keys optional except ``scenario``)::

    [experiment]
    scenario  = cell                 # see SCENARIOS
    field     = shear-sin            # built-in name or "inline"
    vgrid     = 64                   # points per axis of the v torus
    xgrid     = 64                   # points per axis of the x box (grid scenarios)
    epsilons  = 2^-3..2^-6           # dyadic range, or a comma list of floats
    alpha     = 1.0                  # diffusion strength
    alphas    = 0, 0.25, 0.5         # counterexample subsequence phases
    ns        = 4, 8, 16, 32         # counterexample subsequence indices
    t_final   = 0.25
    seed      = 0
    out       = results
    preset    = desk                 # desk or full

    [field]                          # only read when field = inline
    kind      = shear                # shear: a = (b(v2), 0); constant: a = c
    mean      = 0.0                  # shear: constant term of b
    sin       = 1.0, 0.0             # shear: coefficients of sin(2 pi k v2), k = 1, 2, ...
    cos       = 0.0                  # shear: coefficients of cos(2 pi k v2)
    value     = 0.5, 0.7071          # constant: the vector c

Values are parsed as literals only; nothing in a config is executed.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import re
from dataclasses import asdict, dataclass, replace
from dataclasses import field as dc_field
from pathlib import Path

import numpy as np

from kinhom.errors import ConfigError
from kinhom.fields import BUILTIN_FIELDS, shear
from kinhom.torus import PeriodicField, TorusGrid

SCENARIOS = ("two-scale", "triple-scale", "kernel", "hyperbolic", "counterexample",
             "fine-scale", "cell", "diffusion", "corrector")
PRESETS = ("desk", "full")
NAMED_FIELDS = tuple(sorted(set(BUILTIN_FIELDS) | {"counterexample-32"}))

_DYADIC = re.compile(r"^\s*2\^(-?\d+)\s*\.\.\s*2\^(-?\d+)\s*$")
_KEYS = {"scenario", "field", "vgrid", "xgrid", "epsilons", "alpha", "alphas", "ns",
         "t_final", "seed", "out", "preset"}

# defaults per scenario and preset; explicit config keys win
_DEFAULTS = {
    "two-scale": {"desk": dict(epsilons="2^-3..2^-7"), "full": dict(epsilons="2^-3..2^-9")},
    "triple-scale": {"desk": dict(epsilons="2^-2..2^-4"), "full": dict(epsilons="2^-2..2^-5")},
    "kernel": {"desk": dict(field="shear-positive", vgrid="8, 16, 32"),
               "full": dict(field="shear-positive", vgrid="8, 16, 32, 64")},
    "hyperbolic": {"desk": dict(field="shear-positive", vgrid="16", epsilons="2^-2..2^-4",
                                t_final="0.25"),
                   "full": dict(field="shear-positive", vgrid="16", epsilons="2^-3..2^-7",
                                t_final="0.25")},
    "counterexample": {"desk": dict(field="counterexample-32", alphas="0, 0.25, 0.5",
                                    ns="4, 8, 16", t_final="2.5"),
                       "full": dict(field="counterexample-32", alphas="0, 0.25, 0.5",
                                    ns="4, 8, 16, 32", t_final="2.5")},
    "fine-scale": {"desk": dict(field="rotation", vgrid="8", xgrid="16, 32"),
                   "full": dict(field="rotation", vgrid="8", xgrid="16, 32, 64")},
    "cell": {"desk": dict(field="shear-sin", vgrid="16, 32, 64", alpha="1.0"),
             "full": dict(field="shear-sin", vgrid="16, 32, 64, 128", alpha="1.0")},
    "diffusion": {"desk": dict(field="shear-sin", vgrid="32", alpha="1.0",
                               epsilons="2^-3..2^-5", t_final="0.05"),
                  "full": dict(field="shear-sin", vgrid="32", alpha="1.0",
                               epsilons="2^-3..2^-6", t_final="0.05")},
    "corrector": {"desk": dict(field="shear-sin", vgrid="32", alpha="1.0",
                               epsilons="2^-3..2^-5", t_final="0.05"),
                  "full": dict(field="shear-sin", vgrid="32", alpha="1.0",
                               epsilons="2^-3..2^-6", t_final="0.05")},
}


@dataclass(frozen=True)
class InlineField:
    kind: str
    mean: float = 0.0
    sin: tuple = ()
    cos: tuple = ()
    value: tuple = ()

    def build(self, grid: TorusGrid) -> PeriodicField:
        if self.kind == "constant":
            return PeriodicField.constant(grid, np.asarray(self.value, dtype=float))

        def b(s):
            out = np.full_like(s, self.mean, dtype=float)
            for k, c in enumerate(self.sin, start=1):
                out += c * np.sin(2 * np.pi * k * s)
            for k, c in enumerate(self.cos, start=1):
                out += c * np.cos(2 * np.pi * k * s)
            return out

        return shear(grid, b)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    field: str | None = None
    inline: InlineField | None = None
    vgrid: tuple = ()
    xgrid: tuple = ()
    epsilons: tuple = ()
    alpha: float = 1.0
    alphas: tuple = ()
    ns: tuple = ()
    t_final: float | None = None
    seed: int = 0
    out: str = "results"
    preset: str = "desk"
    source: str = dc_field(default="", compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("source")
        return d

    def config_hash(self) -> str:
        """sha256 of the canonical JSON form; output paths are excluded."""
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_ladder(self, epsilons) -> ExperimentConfig:
        return replace(self, epsilons=tuple(float(e) for e in epsilons))

    def build_field(self, grid: TorusGrid) -> PeriodicField:
        if self.field == "inline":
            return self.inline.build(grid)
        if self.field == "random":
            return BUILTIN_FIELDS["random"](grid, seed=self.seed)
        if self.field == "ergodic-constant":
            return BUILTIN_FIELDS["ergodic-constant"](grid, 0.5)
        return BUILTIN_FIELDS[self.field](grid)


def _floats(text: str, key: str) -> tuple:
    try:
        return tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"expected a comma list of numbers, got {text!r}", key) from None


def _ints(text: str, key: str) -> tuple:
    vals = _floats(text, key)
    if any(v != int(v) or v <= 0 for v in vals):
        raise ConfigError(f"expected positive integers, got {text!r}", key)
    return tuple(int(v) for v in vals)


def parse_ladder(text: str, key: str = "experiment.epsilons") -> tuple:
    m = _DYADIC.match(text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if hi >= lo:
            raise ConfigError(f"dyadic range must run to smaller eps, got {text!r}", key)
        vals = tuple(2.0**k for k in range(lo, hi - 1, -1))
    else:
        vals = _floats(text, key)
    if not vals:
        raise ConfigError("empty ladder", key)
    if any(e <= 0 for e in vals):
        raise ConfigError("ladder entries must be positive", key)
    if any(b >= a for a, b in zip(vals, vals[1:])):
        raise ConfigError("ladder must be strictly decreasing", key)
    return vals


def _parse_inline(cp: configparser.ConfigParser) -> InlineField:
    if not cp.has_section("field"):
        raise ConfigError("field = inline needs a [field] section", "field")
    sec = cp["field"]
    kind = sec.get("kind", "shear").strip()
    if kind == "shear":
        inl = InlineField("shear", float(sec.get("mean", "0")),
                          _floats(sec.get("sin", ""), "field.sin"),
                          _floats(sec.get("cos", ""), "field.cos"))
        if not inl.sin and not inl.cos and inl.mean == 0:
            raise ConfigError("inline shear profile is identically zero", "field.sin")
        return inl
    if kind == "constant":
        val = _floats(sec.get("value", ""), "field.value")
        if len(val) != 2:
            raise ConfigError("constant fields need two components", "field.value")
        return InlineField("constant", value=val)
    raise ConfigError(f"unknown inline kind {kind!r}", "field.kind")


def parse_config(text: str, preset: str | None = None) -> ExperimentConfig:
    """Parse INI text. ``preset`` overrides the file's preset key."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    if not cp.has_section("experiment"):
        raise ConfigError("missing [experiment] section", "experiment")
    sec = dict(cp["experiment"])
    unknown = set(sec) - _KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown key {key!r}", f"experiment.{key}")
    scenario = sec.get("scenario", "").strip()
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; known: {', '.join(SCENARIOS)}",
                          "experiment.scenario")
    preset = (preset or sec.get("preset", "desk")).strip()
    if preset not in PRESETS:
        raise ConfigError(f"preset must be one of {PRESETS}", "experiment.preset")
    merged = dict(_DEFAULTS[scenario][preset])
    merged.update(sec)

    kw = dict(scenario=scenario, preset=preset, source=text)
    name = merged.get("field")
    if name is not None:
        name = name.strip()
        allowed = NAMED_FIELDS + ("inline",) + (("rotation",) if scenario == "fine-scale" else ())
        if name not in allowed:
            raise ConfigError(f"unknown field {name!r}; known: {', '.join(allowed)}",
                              "experiment.field")
        kw["field"] = name
        if name == "inline":
            kw["inline"] = _parse_inline(cp)
    if "vgrid" in merged:
        kw["vgrid"] = _ints(merged["vgrid"], "experiment.vgrid")
    if "xgrid" in merged:
        kw["xgrid"] = _ints(merged["xgrid"], "experiment.xgrid")
    if "epsilons" in merged:
        kw["epsilons"] = parse_ladder(merged["epsilons"])
    if "ns" in merged:
        ns = _ints(merged["ns"], "experiment.ns")
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ConfigError("ns must be strictly increasing", "experiment.ns")
        kw["ns"] = ns
    if "alphas" in merged:
        kw["alphas"] = _floats(merged["alphas"], "experiment.alphas")
    for key, conv in (("alpha", float), ("t_final", float), ("seed", int)):
        if key in merged:
            try:
                kw[key] = conv(merged[key])
            except ValueError:
                raise ConfigError(f"bad value {merged[key]!r}", f"experiment.{key}") from None
    if kw.get("alpha", 1.0) < 0:
        raise ConfigError("alpha must be nonnegative", "experiment.alpha")
    if kw.get("t_final") is not None and kw["t_final"] < 0:
        raise ConfigError("t_final must be nonnegative", "experiment.t_final")
    if "out" in merged:
        kw["out"] = merged["out"].strip()
    return ExperimentConfig(**kw)


def load_config(path, preset: str | None = None) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), preset)
