"""Closed-form field descriptors.

Coefficient fields in a problem file are small arithmetic expressions such as
``"0.5 + 0.1*sin(x0)"`` or ``"z*(1 + 0.1*x)"``.  They are parsed once through
:mod:`ast`, restricted to a whitelist of node types, and evaluated vectorised
over numpy arrays.

Variables
---------
``x0, x1``   spatial coordinates (``x`` is an alias of ``x0`` when n == 1)
``r``        Euclidean norm of the spatial point
``t``        time
``z0, z1``   jump variable components (``z`` aliases ``z0`` when l == 1)
``rz``       Euclidean norm of the jump variable
"""

from __future__ import annotations

import ast
from typing import Callable

import numpy as np

__all__ = ["Expr", "ExpressionError", "FieldEvaluationError", "as_expr"]


class ExpressionError(ValueError):
    """Raised for malformed or disallowed expression source."""


class FieldEvaluationError(ArithmeticError):
    """A field produced a non-finite value at some evaluation point."""

    def __init__(self, field: str, point, value=None):
        self.field = field
        self.point = point
        self.value = value
        msg = f"field {field!r} is not finite at point {point}"
        if value is not None:
            msg += f" (value {value})"
        super().__init__(msg)


_FUNCS: dict[str, Callable] = {
    "abs": np.abs,
    "sqrt": np.sqrt,
    "exp": np.exp,
    "log": np.log,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "tanh": np.tanh,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "min": np.minimum,
    "max": np.maximum,
    "sign": np.sign,
}
_CONSTS = {"pi": np.pi, "e": np.e}
_VARS = {"x", "x0", "x1", "r", "t", "z", "z0", "z1", "z2", "rz"}
_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_UNOPS = (ast.UAdd, ast.USub)


def _check_node(node: ast.AST, source: str) -> None:
    if isinstance(node, ast.Expression):
        _check_node(node.body, source)
    elif isinstance(node, ast.BinOp):
        if not isinstance(node.op, _BINOPS):
            raise ExpressionError(f"operator {type(node.op).__name__} not allowed in {source!r}")
        _check_node(node.left, source)
        _check_node(node.right, source)
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, _UNOPS):
            raise ExpressionError(f"operator {type(node.op).__name__} not allowed in {source!r}")
        _check_node(node.operand, source)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
            raise ExpressionError(f"unknown function in {source!r}")
        if node.keywords:
            raise ExpressionError(f"keyword arguments not allowed in {source!r}")
        for arg in node.args:
            _check_node(arg, source)
    elif isinstance(node, ast.Name):
        if node.id not in _VARS and node.id not in _CONSTS:
            raise ExpressionError(f"unknown name {node.id!r} in {source!r}")
    elif isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"only numeric literals allowed in {source!r}")
    else:
        raise ExpressionError(f"construct {type(node).__name__} not allowed in {source!r}")


class Expr:
    """A parsed scalar field f(x, t, z)."""

    __slots__ = ("source", "name", "_code", "free_vars")

    def __init__(self, source: str | float | int, name: str = "field"):
        if isinstance(source, bool):
            raise ExpressionError("boolean is not a field")
        if isinstance(source, (int, float)):
            source = repr(float(source))
        source = str(source).strip()
        if not source:
            raise ExpressionError(f"empty expression for {name}")
        try:
            tree = ast.parse(source, mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {source!r}: {exc.msg}") from None
        _check_node(tree, source)
        self.source = source
        self.name = name
        self._code = compile(tree, f"<{name}>", "eval")
        self.free_vars = frozenset(
            n.id for n in ast.walk(tree) if isinstance(n, ast.Name) and n.id in _VARS
        )

    def __repr__(self) -> str:
        return f"Expr({self.source!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Expr) and other.source == self.source

    def __hash__(self) -> int:
        return hash(self.source)

    @property
    def is_constant(self) -> bool:
        return not self.free_vars

    @property
    def depends_on_x(self) -> bool:
        return bool(self.free_vars & {"x", "x0", "x1", "r"})

    def renamed(self, name: str) -> Expr:
        return Expr(self.source, name)

    def combine(self, other: Expr | str | float, scale: float = 1.0) -> Expr:
        """Return the field ``self + scale * other``."""
        other = as_expr(other)
        return Expr(f"({self.source}) + ({scale!r})*({other.source})", self.name)

    def __call__(self, x, t=0.0, z=None) -> np.ndarray:
        """Evaluate at points ``x`` of shape (N, n) and times ``t`` (scalar or (N,))."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        npts, n = x.shape
        ns: dict[str, object] = dict(_CONSTS)
        ns.update(_FUNCS)
        for k in range(n):
            ns[f"x{k}"] = x[:, k]
        if n == 1:
            ns["x"] = x[:, 0]
        elif "x" in self.free_vars:
            raise ExpressionError(f"{self.name}: use x0/x1 in dimension {n}")
        ns["r"] = np.sqrt(np.sum(x * x, axis=1))
        ns["t"] = np.broadcast_to(np.asarray(t, dtype=float), (npts,))
        if z is not None:
            # 1-D z is one jump node shared by all points; 2-D is per point
            z = np.atleast_1d(np.asarray(z, dtype=float))
            if z.ndim == 1:
                z = z[None, :]
            z = np.broadcast_to(z, (npts, z.shape[1]))
            for k in range(z.shape[1]):
                ns[f"z{k}"] = z[:, k]
            if z.shape[1] == 1:
                ns["z"] = z[:, 0]
            ns["rz"] = np.sqrt(np.sum(z * z, axis=1))
        missing = [v for v in self.free_vars if v not in ns]
        if missing:
            raise ExpressionError(f"{self.name}: variable(s) {sorted(missing)} unavailable here")
        with np.errstate(all="ignore"):
            val = eval(self._code, {"__builtins__": {}}, ns)  # noqa: S307 - whitelisted AST
        out = np.array(np.broadcast_to(np.asarray(val, dtype=float), (npts,)))
        bad = ~np.isfinite(out)
        if bad.any():
            k = int(np.argmax(bad))
            point = {"x": x[k].tolist(), "t": float(ns["t"][k])}
            if z is not None:
                point["z"] = np.asarray(z)[k].tolist()
            raise FieldEvaluationError(self.name, point, out[k])
        return out


def as_expr(value, name: str = "field") -> Expr:
    if isinstance(value, Expr):
        return value if value.name == name or name == "field" else value.renamed(name)
    return Expr(value, name)
