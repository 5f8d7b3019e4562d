"""TOML experiment configs.

A config has a ``[graph]`` table and one table per command. Graph kinds::

    kind = "star"        m, centre_potential, attachment_potentials, weights, [graph.branch]
    kind = "sharpness"   m, [graph.v0]
    kind = "general"     size, edges = [[u, v, w], ...], potential, attachments,
                         [[graph.branches]] (one per attachment) or [graph.branch]
    kind = "paste"       coupling = [[...]], [[graph.factors]]
    kind = "sht"         branching = [...], [graph.coeffs]
    file = "other.toml"  read the [graph] table of another file instead

A rule table is ``{kind = ..., params = {...}, seed = ...}``. Energy and
length grids are either a list or ``{min, max, count}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .graph import BranchCoefficients, CompactComponent, GraphError, StarLikeGraph, build_sht, build_star_like, star_graph
from .operator import make_potential, paste_halflines

__all__ = ["ConfigError", "load_config", "build_graph", "build_rule", "read_grid", "Section"]


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def load_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError("--config", f"no such file {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"parse error: {exc}") from None
    except UnicodeDecodeError as exc:
        raise ConfigError(str(path), f"not UTF-8: {exc}") from None
    cfg["__dir__"] = str(path.resolve().parent)
    return cfg


@dataclass
class Section:
    """Typed accessor over one config table; errors name the dotted field."""

    data: dict
    name: str

    def _get(self, key, default, required):
        if key not in self.data:
            if required:
                raise ConfigError(f"{self.name}.{key}", "missing required field")
            return default
        return self.data[key]

    def number(self, key, default=None, *, required=False, positive=False, nonneg=False) -> float:
        val = self._get(key, default, required)
        field = f"{self.name}.{key}"
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(field, f"expected a number, got {val!r}")
        val = float(val)
        if not math.isfinite(val):
            raise ConfigError(field, "must be finite")
        if positive and not val > 0:
            raise ConfigError(field, f"must be > 0, got {val}")
        if nonneg and val < 0:
            raise ConfigError(field, f"must be >= 0, got {val}")
        return val

    def integer(self, key, default=None, *, required=False, minimum=None) -> int:
        val = self._get(key, default, required)
        field = f"{self.name}.{key}"
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(field, f"expected an integer, got {val!r}")
        if minimum is not None and val < minimum:
            raise ConfigError(field, f"must be >= {minimum}, got {val}")
        return val

    def table(self, key, *, required=False) -> "Section":
        val = self._get(key, {}, required)
        if not isinstance(val, dict):
            raise ConfigError(f"{self.name}.{key}", "expected a table")
        return Section(val, f"{self.name}.{key}")

    def raw(self, key, default=None, *, required=False):
        return self._get(key, default, required)

    def keys_known(self, allowed) -> None:
        extra = sorted(set(self.data) - set(allowed))
        if extra:
            raise ConfigError(f"{self.name}.{extra[0]}", "unknown field")


def build_rule(sec: Section) -> BranchCoefficients:
    sec.keys_known({"kind", "params", "seed"})
    kind = sec.raw("kind", required=True)
    params = sec.raw("params", {})
    if not isinstance(params, dict):
        raise ConfigError(f"{sec.name}.params", "expected a table")
    seed = sec.raw("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        raise ConfigError(f"{sec.name}.seed", "expected an integer")
    if kind == "iid_uniform" and seed is None:
        raise ConfigError(f"{sec.name}.seed", "randomised rule needs an explicit seed")
    try:
        return make_potential(kind, params, seed)
    except ValueError as exc:
        raise ConfigError(f"{sec.name}", str(exc)) from None


def _float_list(sec: Section, key, length=None, default=None):
    val = sec.raw(key, default)
    if val is None:
        return None
    field = f"{sec.name}.{key}"
    if not isinstance(val, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in val):
        raise ConfigError(field, "expected a list of numbers")
    if length is not None and len(val) != length:
        raise ConfigError(field, f"expected {length} entries, got {len(val)}")
    return [float(x) for x in val]


def _branch_rules(sec: Section, count: int, list_key="branches", single_key="branch"):
    if list_key in sec.data:
        items = sec.data[list_key]
        if not isinstance(items, list) or len(items) != count:
            raise ConfigError(f"{sec.name}.{list_key}", f"expected {count} rule tables")
        return [build_rule(Section(r, f"{sec.name}.{list_key}[{k}]")) for k, r in enumerate(items)]
    rule = build_rule(sec.table(single_key, required=True))
    return [rule] * count


def build_graph(cfg: dict) -> tuple[StarLikeGraph, Any]:
    """Graph described by ``cfg['graph']``; the second item is the sharpness model if any."""
    if "graph" not in cfg:
        raise ConfigError("graph", "missing required table")
    sec = Section(cfg["graph"], "graph")
    if "file" in sec.data:
        ref = Path(cfg.get("__dir__", ".")) / str(sec.data["file"])
        return build_graph(load_config(ref))
    kind = sec.raw("kind", required=True)
    try:
        if kind == "star":
            sec.keys_known({"kind", "m", "centre_potential", "attachment_potentials", "weights",
                            "branch", "branches"})
            m = sec.integer("m", required=True, minimum=1)
            return star_graph(_branch_rules(sec, m), sec.number("centre_potential", 0.0),
                              _float_list(sec, "attachment_potentials", m),
                              _float_list(sec, "weights", m)), None
        if kind == "sharpness":
            from .sharpness import build_sharpness_model
            sec.keys_known({"kind", "m", "v0"})
            m = sec.integer("m", required=True, minimum=2)
            model = build_sharpness_model(m, build_rule(sec.table("v0", required=True)))
            return model.graph, model
        if kind == "general":
            sec.keys_known({"kind", "size", "edges", "potential", "attachments", "branch", "branches"})
            size = sec.integer("size", required=True, minimum=1)
            edges = sec.raw("edges", [])
            if not isinstance(edges, list) or not all(isinstance(e, list) and len(e) == 3 for e in edges):
                raise ConfigError("graph.edges", "expected a list of [u, v, w] triples")
            pot = _float_list(sec, "potential", size, [0.0] * size)
            att = sec.raw("attachments", required=True)
            if not isinstance(att, list) or not all(isinstance(x, int) for x in att):
                raise ConfigError("graph.attachments", "expected a list of integers")
            comp = CompactComponent(size, tuple((int(u), int(v), float(w)) for u, v, w in edges),
                                    tuple(pot), tuple(att))
            return build_star_like(comp, _branch_rules(sec, len(att))), None
        if kind == "paste":
            sec.keys_known({"kind", "coupling", "factors"})
            coupling = sec.raw("coupling", required=True)
            items = sec.raw("factors", required=True)
            if not isinstance(items, list):
                raise ConfigError("graph.factors", "expected a list of rule tables")
            rules = [build_rule(Section(r, f"graph.factors[{k}]")) for k, r in enumerate(items)]
            return paste_halflines(rules, coupling), None
        if kind == "sht":
            sec.keys_known({"kind", "branching", "coeffs"})
            branching = sec.raw("branching", required=True)
            if not isinstance(branching, list) or not all(isinstance(x, int) for x in branching):
                raise ConfigError("graph.branching", "expected a list of integers")
            coeffs = build_rule(sec.table("coeffs")) if "coeffs" in sec.data else None
            return build_sht(branching, coeffs), None
    except GraphError as exc:
        raise ConfigError("graph", str(exc)) from None
    raise ConfigError("graph.kind", f"unknown graph kind {kind!r}")


def read_grid(sec: Section, key: str, *, required=True) -> np.ndarray:
    val = sec.raw(key, required=required)
    field = f"{sec.name}.{key}"
    if val is None:
        return np.empty(0)
    if isinstance(val, list):
        if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in val):
            raise ConfigError(field, "expected a list of numbers")
        arr = np.array(val, dtype=float)
    elif isinstance(val, dict):
        g = Section(val, field)
        g.keys_known({"min", "max", "count"})
        lo, hi = g.number("min", required=True), g.number("max", required=True)
        count = g.integer("count", required=True, minimum=0)
        if hi < lo:
            raise ConfigError(field, "max < min")
        arr = np.linspace(lo, hi, count)
    else:
        raise ConfigError(field, "expected a list or a {min, max, count} table")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(field, "grid must be finite")
    return arr
