"""YAML scenario and sweep files.

Both file kinds carry ``version`` (currently 1) and ``kind`` (``scenario`` or
``sweep``).  Unknown keys are errors; every error names the file and line of
the offending entry.

Scenario layout::

    version: 1
    kind: scenario
    name: two_agent_crossing
    regime: distributed          # or decentralized
    controller: drcvar           # or deterministic
    horizon: 20
    dt: 0.1
    steps: 60
    seed: 0
    repetitions: 1
    noise_std: 0.0
    limits: {a_max: 2.0, v_max: 2.0}
    weights: {position: 1.0, velocity: 0.1, input: 0.1, consistency: 1.0}
    risk: {theta: 0.001, alpha: 0.1, d_min: 0.1, n_samples: 10,
           support: null, zero_samples: false, pooled_samples: false}
    solver: {outer_tol: 1.0e-5, outer_max: 30, inner_tol: 1.0e-8}
    agents:
      - {name: a1, position: [-5, 0, 0], goal: [5, 0, 0], half_extents: [1, 1, 100]}

``support`` is ``null`` (unbounded), ``{box: [bx, by, bz]}`` for
``|w_k| <= b_k``, or ``{C: [[...]], h: [...]}``.

A sweep names a base scenario (path relative to the sweep file, or an inline
mapping) and the axes to cross::

    version: 1
    kind: sweep
    base: two_agent_crossing.yaml
    repetitions: 20
    max_runs: 5000
    axes: {theta: [1.0e-4, 1.0e-3, 1.0e-2], alpha: [0.1]}
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from .risk import AmbiguityParams, SupportPolytope
from .simulator import AgentSpec, ConfigError, ScenarioConfig

SCHEMA_VERSION = 1
DEFAULT_MAX_RUNS = 10000

_SCENARIO_KEYS = {"version", "kind", "name", "regime", "controller", "horizon", "dt", "steps", "seed",
                  "repetitions", "noise_std", "limits", "weights", "risk", "solver", "agents"}
_LIMIT_KEYS = {"a_max", "v_max"}
_WEIGHT_KEYS = {"position", "velocity", "input", "consistency"}
_RISK_KEYS = {"theta", "alpha", "d_min", "n_samples", "support", "zero_samples", "pooled_samples"}
_SOLVER_KEYS = {"outer_tol", "outer_max", "inner_tol"}
_AGENT_KEYS = {"name", "position", "goal", "half_extents", "velocity"}
_SWEEP_KEYS = {"version", "kind", "name", "base", "repetitions", "max_runs", "axes"}
# axis name -> how it is applied to a ScenarioConfig
AXES = ("alpha", "theta", "noise_std", "n_samples", "horizon", "regime", "controller")


class _Node:
    """Parsed YAML value with the line it came from (1-based)."""

    __slots__ = ("value", "line")

    def __init__(self, value, line):
        self.value = value
        self.line = line


def _convert(node):
    line = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            if not isinstance(k, yaml.ScalarNode):
                raise _Error("mapping keys must be plain scalars", k.start_mark.line + 1)
            key = _scalar(k)
            if key in out:
                raise _Error(f"duplicate key {key!r}", k.start_mark.line + 1)
            out[key] = _convert(v)
        return _Node(out, line)
    if isinstance(node, yaml.SequenceNode):
        return _Node([_convert(v) for v in node.value], line)
    return _Node(_scalar(node), line)


def _scalar(node):
    return yaml.safe_load(yaml.serialize(node))


class _Error(Exception):
    def __init__(self, message, line):
        super().__init__(message)
        self.message = message
        self.line = line


def _parse(text: str, source: str) -> _Node:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 0
        raise ConfigError(f"{source}:{line}: invalid YAML ({getattr(exc, 'problem', exc)})") from None
    if root is None:
        raise ConfigError(f"{source}:1: empty file")
    try:
        return _convert(root)
    except _Error as exc:
        raise ConfigError(f"{source}:{exc.line}: {exc.message}") from None


class _Reader:
    def __init__(self, source: str):
        self.source = source

    def fail(self, node, msg):
        raise ConfigError(f"{self.source}:{node.line}: {msg}")

    def mapping(self, node, allowed, where):
        if not isinstance(node.value, dict):
            self.fail(node, f"{where} must be a mapping")
        for key, val in node.value.items():
            if key not in allowed:
                self.fail(val, f"unknown key {key!r} in {where} (allowed: {', '.join(sorted(allowed))})")
        return node.value

    def number(self, node, key, integer=False):
        v = node.value
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(node, f"{key} must be a number, got {v!r}")
        if integer:
            if int(v) != v:
                self.fail(node, f"{key} must be an integer, got {v!r}")
            return int(v)
        if not np.isfinite(v):
            self.fail(node, f"{key} must be finite")
        return float(v)

    def flag(self, node, key):
        if not isinstance(node.value, bool):
            self.fail(node, f"{key} must be true or false")
        return node.value

    def text(self, node, key):
        if not isinstance(node.value, str):
            self.fail(node, f"{key} must be a string")
        return node.value

    def vector(self, node, key, n=3):
        if not isinstance(node.value, list) or len(node.value) != n:
            self.fail(node, f"{key} must be a list of {n} numbers")
        return np.array([self.number(v, key) for v in node.value])

    def matrix(self, node, key):
        if not isinstance(node.value, list) or not node.value:
            self.fail(node, f"{key} must be a non-empty list of rows")
        return np.array([self.vector(r, key) for r in node.value])

    def numbers(self, node, key, integer=False):
        if not isinstance(node.value, list) or not node.value:
            self.fail(node, f"{key} must be a non-empty list")
        return [self.number(v, key, integer) for v in node.value]

    def header(self, m, node, kind):
        if "version" not in m:
            self.fail(node, "missing 'version'")
        if self.number(m["version"], "version", integer=True) != SCHEMA_VERSION:
            self.fail(m["version"], f"unsupported version {m['version'].value!r} (expected {SCHEMA_VERSION})")
        if "kind" not in m:
            self.fail(node, "missing 'kind'")
        if self.text(m["kind"], "kind") != kind:
            self.fail(m["kind"], f"expected kind {kind!r}, got {m['kind'].value!r}")


def _support(r: _Reader, node):
    if node.value is None:
        return SupportPolytope.unbounded()
    m = r.mapping(node, {"box", "C", "h"}, "support")
    if "box" in m:
        if set(m) != {"box"}:
            r.fail(node, "support takes either 'box' or 'C' and 'h'")
        b = r.vector(m["box"], "box")
        if np.any(b <= 0):
            r.fail(m["box"], "box half widths must be positive")
        return SupportPolytope.polytope(np.vstack([np.eye(3), -np.eye(3)]), np.concatenate([b, b]))
    if set(m) != {"C", "h"}:
        r.fail(node, "support needs both 'C' and 'h'")
    C = r.matrix(m["C"], "C")
    h = np.array(r.numbers(m["h"], "h"))
    try:
        return SupportPolytope.polytope(C, h)
    except ValueError as exc:
        r.fail(node, str(exc))


def _scenario(r: _Reader, node) -> ScenarioConfig:
    m = r.mapping(node, _SCENARIO_KEYS, "scenario")
    r.header(m, node, "scenario")
    kw = {}
    where = {}  # config field -> node, for locating validation errors
    for key in ("name", "regime", "controller"):
        if key in m:
            kw[key] = r.text(m[key], key)
            where[key] = m[key]
    for key in ("horizon", "steps", "seed", "repetitions"):
        if key in m:
            kw[key] = r.number(m[key], key, integer=True)
            where[key] = m[key]
    for key in ("dt", "noise_std"):
        if key in m:
            kw[key] = r.number(m[key], key)
            where[key] = m[key]
    if "limits" in m:
        for key, val in r.mapping(m["limits"], _LIMIT_KEYS, "limits").items():
            kw[key] = r.number(val, key)
            where[key] = val
    if "weights" in m:
        names = {"position": "q_position", "velocity": "q_velocity", "input": "r_input", "consistency": "consistency"}
        for key, val in r.mapping(m["weights"], _WEIGHT_KEYS, "weights").items():
            kw[names[key]] = r.number(val, key)
            where[names[key]] = val
    if "solver" in m:
        for key, val in r.mapping(m["solver"], _SOLVER_KEYS, "solver").items():
            kw[key] = r.number(val, key, integer=key == "outer_max")
            where[key] = val
    amb = AmbiguityParams(0.001, 0.1, 0.1, 10)
    if "risk" in m:
        rm = r.mapping(m["risk"], _RISK_KEYS, "risk")
        vals = {}
        for key in ("theta", "alpha", "d_min"):
            if key in rm:
                vals[key] = r.number(rm[key], key)
        if "n_samples" in rm:
            vals["n_samples"] = r.number(rm["n_samples"], "n_samples", integer=True)
        try:
            amb = replace(amb, **vals)
        except ValueError as exc:
            r.fail(m["risk"], str(exc))
        if "support" in rm:
            kw["support"] = _support(r, rm["support"])
        for key in ("zero_samples", "pooled_samples"):
            if key in rm:
                kw[key] = r.flag(rm[key], key)
    kw["ambiguity"] = amb
    if "agents" not in m:
        r.fail(node, "missing 'agents'")
    if not isinstance(m["agents"].value, list) or not m["agents"].value:
        r.fail(m["agents"], "agents must be a non-empty list")
    agents = []
    for a in m["agents"].value:
        am = r.mapping(a, _AGENT_KEYS, "agent")
        for key in ("name", "position", "goal"):
            if key not in am:
                r.fail(a, f"agent is missing {key!r}")
        akw = {"name": r.text(am["name"], "name")}
        for key in ("position", "goal", "half_extents", "velocity"):
            if key in am:
                akw[key] = r.vector(am[key], key)
        try:
            agents.append(AgentSpec(**akw))
        except ConfigError as exc:
            r.fail(a, str(exc))
        where[f"agent {akw['name']!r}"] = a
    try:
        return ScenarioConfig(agents=tuple(agents), **kw)
    except ConfigError as exc:
        msg = str(exc)
        hit = [n for key, n in where.items() if key in msg]
        r.fail(hit[0] if hit else node, msg)


def scenario_from_text(text: str, source: str = "<scenario>") -> ScenarioConfig:
    return _scenario(_Reader(source), _parse(text, source))


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    return scenario_from_text(text, str(path))


def apply_axis(cfg: ScenarioConfig, axis: str, value) -> ScenarioConfig:
    """``cfg`` with one sweep axis set to ``value``."""
    if axis in ("alpha", "theta"):
        return replace(cfg, ambiguity=replace(cfg.ambiguity, **{axis: float(value)}))
    if axis == "n_samples":
        return replace(cfg, ambiguity=replace(cfg.ambiguity, n_samples=int(value)))
    if axis == "horizon":
        return replace(cfg, horizon=int(value))
    if axis == "noise_std":
        return replace(cfg, noise_std=float(value))
    if axis in ("regime", "controller"):
        return replace(cfg, **{axis: value})
    raise ConfigError(f"unknown sweep axis {axis!r}")


@dataclass(frozen=True, eq=False)
class SweepSpec:
    base: ScenarioConfig
    axes: dict  # axis name -> list of values, in file order
    repetitions: int
    max_runs: int = DEFAULT_MAX_RUNS
    name: str = "sweep"

    def cells(self):
        """``(settings, config)`` per cell; the last axis varies fastest."""
        names = list(self.axes)
        out = []
        for combo in itertools.product(*(self.axes[n] for n in names)):
            cfg = replace(self.base, repetitions=self.repetitions)
            for n, v in zip(names, combo):
                cfg = apply_axis(cfg, n, v)
            out.append((dict(zip(names, combo)), cfg))
        return out


def sweep_from_text(text: str, source: str = "<sweep>", root: Path | None = None) -> SweepSpec:
    r = _Reader(source)
    node = _parse(text, source)
    m = r.mapping(node, _SWEEP_KEYS, "sweep")
    r.header(m, node, "sweep")
    if "base" not in m:
        r.fail(node, "missing 'base'")
    b = m["base"]
    if isinstance(b.value, str):
        base_path = (root or Path(".")) / b.value
        try:
            base = load_scenario(base_path)
        except ConfigError as exc:
            r.fail(b, f"base scenario: {exc}")
    elif isinstance(b.value, dict):
        base = _scenario(r, b)
    else:
        r.fail(b, "base must be a file path or a scenario mapping")
    reps = r.number(m["repetitions"], "repetitions", integer=True) if "repetitions" in m else base.repetitions
    if reps < 1:
        r.fail(m["repetitions"], "repetitions must be positive")
    cap = r.number(m["max_runs"], "max_runs", integer=True) if "max_runs" in m else DEFAULT_MAX_RUNS
    if "axes" not in m:
        r.fail(node, "missing 'axes'")
    am = r.mapping(m["axes"], set(AXES), "axes")
    if not am:
        r.fail(m["axes"], "axes must not be empty")
    axes = {}
    for key, val in am.items():
        if key in ("regime", "controller"):
            if not isinstance(val.value, list) or not val.value:
                r.fail(val, f"{key} must be a non-empty list")
            axes[key] = [r.text(v, key) for v in val.value]
        else:
            axes[key] = r.numbers(val, key, integer=key in ("n_samples", "horizon"))
    spec = SweepSpec(base, axes, reps, cap, r.text(m["name"], "name") if "name" in m else "sweep")
    n_cells = int(np.prod([len(v) for v in axes.values()]))
    if n_cells * reps > cap:
        r.fail(m["axes"], f"{n_cells} cells x {reps} repetitions exceeds max_runs = {cap}")
    _checked_cells(spec, r, m["axes"])
    return spec


def _checked_cells(spec, r, node):
    try:
        return spec.cells()
    except (ConfigError, ValueError) as exc:
        r.fail(node, f"invalid axis value: {exc}")


def load_sweep(path) -> SweepSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    return sweep_from_text(text, str(path), root=path.parent)
