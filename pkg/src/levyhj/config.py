"""TOML experiment configuration: validation, overrides and object builders.

A configuration has the sections ``family``, ``hamiltonian``, ``grid``,
``solver``, ``samples``, ``distance`` and ``output``. Unknown keys are
rejected and numeric fields are range-checked at load time; every problem is
reported as :class:`~levyhj.errors.ConfigError`.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .assumptions import SamplePlan
from .errors import ConfigError
from .expr import Expression
from .hamiltonian import HamiltonianSpec
from .measures import (DensityFamily, FiniteAtomicFamily, LevyFamily, LevyItoFamily, PolarGrid,
                       RotatedQuadrantFamily, VariableOrderFamily)
from .solver import SolveConfig

FAMILY_TYPES = ("density", "power_law", "variable_order", "levy_ito", "rotated_quadrant",
                "finite_atomic")
ASSUMPTION_IDS = ("M1", "M2", "M3", "M4", "M", "M4'", "M4''", "H", "J")

# key -> (kind, lower, upper); kind in {"float", "int", "bool", "str", "expr", "list", "table"}
_FAMILY_KEYS = {
    "type": ("str",), "dim": ("int", 1, 3), "sigma": ("float", 0.0, 2.0), "lam": ("float", 0.0, None),
    "c_k": ("float", 0.0, None), "normalization": ("float", 0.0, None), "weight": ("expr",),
    "kernel": ("expr",), "order": ("expr",), "sigma_lo": ("float", 0.0, 2.0),
    "sigma_hi": ("float", 0.0, 2.0), "c_sigma": ("float", 0.0, None), "jump": ("expr",),
    "c0": ("float", 0.0, None), "c1": ("float", 0.0, None), "base": ("table",),
    "points": ("list",), "masses": ("list",),
}
_HAMILTONIAN_KEYS = {
    "b": ("expr",), "f": ("expr",), "expr": ("expr",), "m": ("float", 1.0, None),
    "b_m": ("float", 0.0, None), "b_0": ("float", 0.0, None), "r_0": ("float", 0.0, None),
    "mu_0": ("float", 0.0, 1.0), "time_dependent": ("bool",),
}
_GRID_KEYS = {
    "r_inner": ("float", 0.0, None), "r_outer": ("float", 0.0, None), "ratio": ("float", 1.0, None),
    "n_angular": ("int", 1, 4096),
}
_SOLVER_KEYS = {
    "lam": ("float", 0.0, None), "L": ("float", 0.0, None), "n": ("int", 3, 100_000),
    "far_rule": ("str",), "far_const": ("float", None, None), "delta": ("float", 0.0, None),
    "tol": ("float", 0.0, None), "max_iter": ("int", 1, 10 ** 9), "damping": ("float", 0.0, None),
    "n_radial": ("int", 1, 64), "n_angular": ("int", 1, 1024), "clamp_factor": ("float", 0.0, None),
    "dt": ("float", 0.0, None), "T": ("float", 0.0, None), "discount": ("float", 0.0, None),
    "init": ("expr",), "sub": ("expr",), "super": ("expr",),
}
_SAMPLE_KEYS = {
    "seed": ("int", 0, 2 ** 64 - 1), "n_separations": ("int", 2, 10_000),
    "s_min": ("float", 0.0, None), "s_max": ("float", 0.0, None), "n_anchors": ("int", 1, 10_000),
    "n_xi": ("int", 1, 100_000), "assumptions": ("list",), "r_list": ("list",),
    "R_list": ("list",), "p": ("float", 1.0, None),
}
_DISTANCE_KEYS = {"x": ("list",), "y": ("list",), "r": ("float", 0.0, None),
                  "p": ("float", 1.0, None)}
_OUTPUT_KEYS = {"dir": ("str",)}
SECTIONS = {"family": _FAMILY_KEYS, "hamiltonian": _HAMILTONIAN_KEYS, "grid": _GRID_KEYS,
            "solver": _SOLVER_KEYS, "samples": _SAMPLE_KEYS, "distance": _DISTANCE_KEYS,
            "output": _OUTPUT_KEYS}


def _check_value(where: str, value, spec) -> None:
    kind = spec[0]
    if kind in ("float", "int"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        if kind == "int" and not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        if not math.isfinite(value):
            raise ConfigError(f"{where} must be finite")
        lo, hi = spec[1], spec[2]
        if lo is not None and not value > lo - (kind == "int"):
            raise ConfigError(f"{where} = {value} must be {'>=' if kind == 'int' else '>'} {lo}")
        if hi is not None and not value < hi + (kind == "int"):
            raise ConfigError(f"{where} = {value} must be {'<=' if kind == 'int' else '<'} {hi}")
    elif kind == "bool" and not isinstance(value, bool):
        raise ConfigError(f"{where} must be true or false")
    elif kind == "str" and not isinstance(value, str):
        raise ConfigError(f"{where} must be a string")
    elif kind == "expr" and not isinstance(value, (str, int, float)):
        raise ConfigError(f"{where} must be an expression string or a number")
    elif kind == "list" and not isinstance(value, list):
        raise ConfigError(f"{where} must be an array")
    elif kind == "table" and not isinstance(value, dict):
        raise ConfigError(f"{where} must be a table")


def _validate_section(name: str, table: dict, keys: dict) -> None:
    if not isinstance(table, dict):
        raise ConfigError(f"[{name}] must be a table")
    for key, value in table.items():
        if key not in keys:
            raise ConfigError(f"unknown key {name}.{key}")
        _check_value(f"{name}.{key}", value, keys[key])


def validate(raw: dict) -> None:
    """Reject unknown sections/keys and out-of-range values."""
    for section, table in raw.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        _validate_section(section, table, SECTIONS[section])
    fam = raw.get("family", {})
    if "base" in fam:
        _validate_section("family.base", fam["base"], _FAMILY_KEYS)
    ftype = fam.get("type")
    if ftype is not None and ftype not in FAMILY_TYPES:
        raise ConfigError(f"family.type must be one of {FAMILY_TYPES}")
    rule = raw.get("solver", {}).get("far_rule")
    if rule is not None and rule not in ("boundary", "constant", "periodic"):
        raise ConfigError("solver.far_rule must be boundary, constant or periodic")
    for aid in raw.get("samples", {}).get("assumptions", []):
        if aid not in ASSUMPTION_IDS:
            raise ConfigError(f"unknown assumption id {aid!r}; expected one of {ASSUMPTION_IDS}")
    smp = raw.get("samples", {})
    if smp.get("s_min", 1e-3) >= smp.get("s_max", 1e-1):
        raise ConfigError("samples.s_min must be below samples.s_max")


# ---------------------------------------------------------------------------
# Loading and overrides
# ---------------------------------------------------------------------------

def parse_override(text: str) -> tuple[list[str], object]:
    """``section.key=value`` with ``value`` parsed as TOML (bare words as strings)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    key, value = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if len(path) < 2:
        raise ConfigError(f"override key {key!r} must name section.key")
    try:
        parsed = tomllib.loads(f"v = {value.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        parsed = value.strip()
    return path, parsed


def apply_overrides(raw: dict, overrides) -> dict:
    out = copy.deepcopy(raw)
    for item in overrides or ():
        path, value = parse_override(item) if isinstance(item, str) else item
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {'.'.join(path)} crosses a non-table value")
        node[path[-1]] = value
    return out


def config_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class ExperimentConfig:
    """Validated raw tables plus builders for the library objects."""

    raw: dict
    source: str | None = None

    def __post_init__(self):
        validate(self.raw)

    @classmethod
    def load(cls, path, overrides=(), seed: int | None = None) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_string(text, overrides, seed, source=str(path))

    @classmethod
    def from_string(cls, text: str, overrides=(), seed: int | None = None,
                    source: str | None = None) -> "ExperimentConfig":
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed TOML: {exc}") from None
        raw = apply_overrides(raw, overrides)
        if seed is not None:
            raw.setdefault("samples", {})["seed"] = int(seed)
        return cls(raw, source)

    def section(self, name: str) -> dict:
        return self.raw.get(name, {})

    @property
    def sha256(self) -> str:
        return config_hash(self.raw)

    @property
    def seed(self) -> int:
        return int(self.section("samples").get("seed", 0))

    @property
    def dim(self) -> int:
        fam = self.section("family")
        if fam.get("type") == "rotated_quadrant":
            return 2
        if fam.get("type") == "levy_ito" and "dim" not in fam:
            return int(fam.get("base", {}).get("dim", 1))
        return int(fam.get("dim", 1))

    # -- builders ----------------------------------------------------------
    def family(self) -> LevyFamily:
        if "family" not in self.raw:
            raise ConfigError("missing [family] section")
        return build_family(self.section("family"))

    def hamiltonian(self) -> HamiltonianSpec:
        if "hamiltonian" not in self.raw:
            raise ConfigError("missing [hamiltonian] section")
        return build_hamiltonian(self.section("hamiltonian"), self.dim)

    def polar_grid(self) -> PolarGrid:
        g = self.section("grid")
        try:
            return PolarGrid.geometric(dim=self.dim, r_inner=g.get("r_inner", 1e-4),
                                       r_outer=g.get("r_outer", 32.0),
                                       ratio=g.get("ratio", 2 ** 0.25),
                                       n_angular=g.get("n_angular", 32))
        except ValueError as exc:
            raise ConfigError(f"[grid]: {exc}") from None

    def solve_config(self) -> SolveConfig:
        s = {k: v for k, v in self.section("solver").items()
             if k not in ("init", "sub", "super")}
        try:
            return SolveConfig(dim=self.dim, **s)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[solver]: {exc}") from None

    def sample_plan(self) -> SamplePlan:
        s = self.section("samples")
        keys = ("seed", "n_separations", "s_min", "s_max", "n_anchors", "n_xi")
        return SamplePlan(**{k: s[k] for k in keys if k in s})

    def grid_expression(self, key: str, default: str | None = None):
        """Callable ``(M, N) -> (M,)`` from a solver expression in ``x``."""
        src = self.section("solver").get(key, default)
        if src is None:
            return None
        return x_function(src)


def _expr(src, variables) -> Expression:
    return Expression(str(src), variables=variables)


def x_function(src):
    """Vectorised ``(M, N) -> (M,)`` function from an expression in ``x``."""
    e = _expr(src, ("x",))

    def fn(x):
        x = np.atleast_2d(x)
        return np.broadcast_to(e.scalar(x=x), (len(x),)).astype(float)
    return fn


def _xi_function(src):
    e = _expr(src, ("xi",))
    return lambda xi: float(np.asarray(e.scalar(xi=np.asarray(xi, float))).reshape(-1)[0])


def _require(table: dict, *keys):
    missing = [k for k in keys if k not in table]
    if missing:
        raise ConfigError(f"family of type {table.get('type')!r} needs {missing}")


def build_family(t: dict) -> LevyFamily:
    ftype = t.get("type")
    if ftype is None:
        raise ConfigError("family.type is required")
    dim = int(t.get("dim", 1))
    try:
        if ftype == "power_law":
            weight = _xi_function(t["weight"]) if "weight" in t else None
            return DensityFamily.power_law(t.get("sigma", 1.0), t.get("lam", 1.0), dim, weight,
                                           t.get("c_k", 0.0), t.get("normalization", 1.0))
        if ftype == "density":
            _require(t, "kernel", "sigma", "lam")
            e = _expr(t["kernel"], ("xi", "z"))

            def kernel(xi, z):
                return np.broadcast_to(e.scalar(xi=xi, z=z), (len(z),)).astype(float)
            fam = DensityFamily(kernel, t["sigma"], t["lam"], t.get("c_k", 0.0), dim,
                                xi_independent=not e.uses("xi"))
            return fam
        if ftype == "variable_order":
            _require(t, "order", "sigma_lo", "sigma_hi")
            return VariableOrderFamily(_xi_function(t["order"]), t["sigma_lo"], t["sigma_hi"],
                                       t.get("c_sigma", 0.0), dim)
        if ftype == "rotated_quadrant":
            return RotatedQuadrantFamily(t.get("sigma", 1.0), t.get("lam", 1.0))
        if ftype == "levy_ito":
            _require(t, "jump", "c0", "c1", "base")
            base = build_family(t["base"])
            e = _expr(t["jump"], ("xi", "z"))

            def jump(xi, z):
                return np.broadcast_to(e.vector(base.dim, xi=xi, z=z), z.shape).astype(float)
            return LevyItoFamily(base, jump, t["c0"], t["c1"])
        if ftype == "finite_atomic":
            _require(t, "points", "masses")
            pts = np.asarray(t["points"], dtype=float).reshape(len(t["masses"]), -1)
            if all(isinstance(m, (int, float)) for m in t["masses"]):
                return FiniteAtomicFamily((pts, np.asarray(t["masses"], float)), pts.shape[1])
            masses = [_xi_function(m) for m in t["masses"]]
            return FiniteAtomicFamily(lambda xi: (pts, np.array([m(xi) for m in masses])),
                                      pts.shape[1])
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[family]: {exc}") from None
    raise ConfigError(f"unknown family type {ftype!r}")


def build_hamiltonian(t: dict, dim: int) -> HamiltonianSpec:
    """Model ``b(x)|p|^m - f(x, t)`` from ``b``/``f``, or a general ``expr`` in ``x, t, p``."""
    kw = {k: t[k] for k in ("b_m", "b_0", "r_0", "mu_0") if k in t}
    m = t.get("m", 2.0)
    td = bool(t.get("time_dependent", False))
    try:
        if "expr" in t:
            if "b" in t or "f" in t:
                raise ConfigError("give either hamiltonian.expr or hamiltonian.b/f, not both")
            e = _expr(t["expr"], ("x", "t", "p"))

            def func(x, tt, p):
                return np.broadcast_to(e.scalar(x=x, t=tt, p=p), (len(x),)).astype(float)
            return HamiltonianSpec(func, m, time_dependent=td, **kw)
        b = x_function(t.get("b", 1.0))
        fe = _expr(t.get("f", 0.0), ("x", "t"))

        def f(x, tt=0.0):
            x = np.atleast_2d(x)
            return np.broadcast_to(fe.scalar(x=x, t=tt), (len(x),)).astype(float)
        return HamiltonianSpec.model(b, f, m, time_dependent=td or fe.uses("t"), **kw)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[hamiltonian]: {exc}") from None
