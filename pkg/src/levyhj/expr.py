"""A small, safe arithmetic language for kernels, orders and jumps in configs.

Expressions are parsed with :mod:`ast` against a whitelist and compiled to
closures over numpy arrays. ``^`` means power. Vector variables keep their
trailing coordinate axis and scalars carry a trailing axis of length one, so
``norm(z) * z`` broadcasts the way one would write it by hand.

>>> Expression("2^3 + 1").scalar()
9.0
"""

from __future__ import annotations

import ast
import math
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigError

_Node = Callable[[Mapping[str, np.ndarray]], np.ndarray]


def _norm(v):
    return np.linalg.norm(v, axis=-1, keepdims=True)


def _vec(*parts):
    parts = np.broadcast_arrays(*[np.asarray(p, dtype=float) for p in parts])
    return np.concatenate([np.atleast_1d(p) for p in parts], axis=-1)


_FUNCS: dict[str, tuple[Callable, int | None]] = {
    "abs": (np.abs, 1),
    "exp": (np.exp, 1),
    "log": (np.log, 1),
    "cos": (np.cos, 1),
    "sin": (np.sin, 1),
    "tanh": (np.tanh, 1),
    "sqrt": (np.sqrt, 1),
    "min": (np.minimum, 2),
    "max": (np.maximum, 2),
    "norm": (_norm, 1),
    "vec": (_vec, None),
}

_CONSTANTS = {"pi": math.pi, "e": math.e}

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class Expression:
    """Compiled expression over named variables and numeric parameters."""

    def __init__(self, source: str, params: Mapping[str, float] | None = None,
                 variables: tuple[str, ...] = ("xi", "z", "x", "t", "p")):
        if not isinstance(source, str) or not source.strip():
            raise ConfigError("expression must be a non-empty string")
        self.source = source
        self.params = {k: float(v) for k, v in (params or {}).items()}
        self.variables = variables
        try:
            tree = ast.parse(source.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"cannot parse expression {source!r}: {exc.msg}") from None
        self.names: set[str] = set()
        self._fn = self._compile(tree.body)

    def __repr__(self):
        return f"Expression({self.source!r})"

    def uses(self, name: str) -> bool:
        return name in self.names

    def _compile(self, node) -> _Node:
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            value = np.array([float(node.value)])
            return lambda env: value
        if isinstance(node, ast.Name):
            name = node.id
            if name in self.variables:
                self.names.add(name)
                return lambda env: env[name]
            if name in self.params:
                value = np.array([self.params[name]])
                return lambda env: value
            if name in _CONSTANTS:
                value = np.array([_CONSTANTS[name]])
                return lambda env: value
            raise ConfigError(f"unknown name {name!r} in expression {self.source!r}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            op = _BINOPS[type(node.op)]
            left, right = self._compile(node.left), self._compile(node.right)
            return lambda env: op(left(env), right(env))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            inner = self._compile(node.operand)
            if isinstance(node.op, ast.USub):
                return lambda env: -inner(env)
            return inner
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
                and node.func.id in _FUNCS and not node.keywords:
            fn, arity = _FUNCS[node.func.id]
            if arity is not None and len(node.args) != arity:
                raise ConfigError(f"{node.func.id} takes {arity} argument(s)")
            args = [self._compile(a) for a in node.args]
            return lambda env: fn(*[a(env) for a in args])
        if isinstance(node, ast.Subscript) and isinstance(node.value, ast.Name):
            idx = node.slice
            if isinstance(idx, ast.Constant) and isinstance(idx.value, int):
                base = self._compile(node.value)
                i = idx.value
                return lambda env: np.asarray(base(env))[..., i:i + 1]
        raise ConfigError(f"unsupported syntax in expression {self.source!r}")

    def _env(self, values):
        env = {}
        for name in self.variables:
            if name in values and values[name] is not None:
                v = np.asarray(values[name], dtype=float)
                env[name] = v[..., None] if v.ndim == 0 else v
        missing = self.names - env.keys()
        if missing:
            raise ConfigError(f"expression {self.source!r} needs {sorted(missing)}")
        return env

    def scalar(self, **values) -> np.ndarray | float:
        """Evaluate a scalar-valued expression; drops the trailing axis."""
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = np.asarray(self._fn(self._env(values)), dtype=float)
        if out.shape[-1:] != (1,):
            raise ConfigError(f"expression {self.source!r} is not scalar-valued")
        out = out[..., 0]
        return float(out) if out.ndim == 0 else out

    def vector(self, dim: int, **values) -> np.ndarray:
        """Evaluate a vector-valued expression with ``dim`` components."""
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = np.asarray(self._fn(self._env(values)), dtype=float)
        if out.shape[-1:] == (1,) and dim != 1:
            raise ConfigError(f"expression {self.source!r} is not {dim}-dimensional")
        return out
