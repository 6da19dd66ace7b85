"""A small arithmetic grammar for coefficient and data expressions.

Expression strings are parsed with :mod:`ast` against a whitelist and turned
into sympy expressions (never ``eval``-ed), then compiled with ``lambdify``.
Identifiers: ``x1``, ``x2``, ``y1`` .. ``ys``, ``pi``, ``e``; functions
``exp sin cos tan tanh abs sqrt log atan2 min max``.
"""

from __future__ import annotations

import ast
from functools import cached_property

import numpy as np
import sympy as sp

from .errors import ValidationError

X1, X2 = sp.symbols("x1 x2", real=True)
MAX_PARAMETERS = 16
Y = sp.symbols(f"y1:{MAX_PARAMETERS + 1}", real=True)

_FUNCS = {
    "exp": sp.exp,
    "sin": sp.sin,
    "cos": sp.cos,
    "tan": sp.tan,
    "tanh": sp.tanh,
    "abs": sp.Abs,
    "sqrt": sp.sqrt,
    "log": sp.log,
    "atan2": sp.atan2,
    "min": sp.Min,
    "max": sp.Max,
}
_CONSTS = {"pi": sp.pi, "e": sp.E}
_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a**b,
}


def parse_expression(text, s: int = 0, path: str = "$") -> sp.Expr:
    """Parse ``text`` into a sympy expression in x1, x2, y1..ys."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return sp.nsimplify(text) if float(text).is_integer() else sp.Float(text)
    if not isinstance(text, str):
        raise ValidationError(f"expected expression string, got {type(text).__name__}", path)
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ValidationError(f"syntax error in expression {text!r}: {exc.msg}", path) from None
    return _convert(tree.body, s, path, text)


def _convert(node, s, path, text):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        v = node.value
        return sp.Integer(v) if isinstance(v, int) else sp.Float(v)
    if isinstance(node, ast.Name):
        name = node.id
        if name == "x1":
            return X1
        if name == "x2":
            return X2
        if name in _CONSTS:
            return _CONSTS[name]
        if name.startswith("y") and name[1:].isdigit():
            j = int(name[1:])
            if 1 <= j <= s:
                return Y[j - 1]
            raise ValidationError(
                f"parameter {name} out of range (s = {s}) in {text!r}", path)
        raise ValidationError(f"unknown identifier {name!r} in {text!r}", path)
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_convert(node.left, s, path, text),
                                      _convert(node.right, s, path, text))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        val = _convert(node.operand, s, path, text)
        return -val if isinstance(node.op, ast.USub) else val
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
            and node.func.id in _FUNCS and not node.keywords:
        args = [_convert(a, s, path, text) for a in node.args]
        return _FUNCS[node.func.id](*args)
    raise ValidationError(
        f"unsupported construct {type(node).__name__} in {text!r}", path)


class Compiled:
    """Vectorized numpy evaluator of a sympy expression."""

    def __init__(self, expr: sp.Expr, s: int):
        self.expr = sp.sympify(expr)
        self.s = s

    @cached_property
    def _fn(self):
        return sp.lambdify((X1, X2, *Y[: self.s]), self.expr, modules="numpy")

    def __call__(self, x: np.ndarray, y=()) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        yv = [float(v) for v in np.atleast_1d(np.asarray(y, dtype=float))][: self.s]
        if len(yv) < self.s:
            raise ValueError(f"expected {self.s} parameters, got {len(yv)}")
        with np.errstate(all="ignore"):
            out = self._fn(x[:, 0], x[:, 1], *yv)
        return np.broadcast_to(np.asarray(out, dtype=float), (x.shape[0],)).copy()


def vanishes(e: sp.Expr, s: int = MAX_PARAMETERS) -> bool:
    """Symbolic zero test; large expressions are probed numerically instead of simplified."""
    e = sp.sympify(e)
    if e.is_zero is not None or not e.free_symbols:
        return bool(e.is_zero) or (not e.free_symbols and complex(e) == 0)
    if sp.count_ops(e) <= 60:
        return sp.simplify(e) == 0
    rng = np.random.default_rng(12345)
    x = rng.uniform(-2.0, 2.0, size=(64, 2))
    y = rng.uniform(-1.0, 1.0, size=(64, s))
    fn = sp.lambdify((X1, X2, *Y[:s]), e, modules="numpy")
    with np.errstate(all="ignore"):
        vals = np.array([fn(xi[0], xi[1], *yi) for xi, yi in zip(x, y)], dtype=float)
    return bool(np.all(vals[np.isfinite(vals)] == 0.0))


class PiecewiseExpr:
    """An expression given per subdomain (``None`` key = all subdomains)."""

    def __init__(self, exprs, s: int = 0):
        if not isinstance(exprs, dict):
            exprs = {None: exprs}
        self.exprs = {k: sp.sympify(v) for k, v in exprs.items()}
        self.s = s
        self._compiled = {k: Compiled(v, s) for k, v in self.exprs.items()}

    @classmethod
    def constant(cls, value, s: int = 0):
        return cls({None: sp.sympify(value)}, s)

    def expr_for(self, sub):
        if sub in self.exprs:
            return self.exprs[sub]
        if None in self.exprs:
            return self.exprs[None]
        raise KeyError(f"no expression for subdomain {sub}")

    def __call__(self, x, sub, y=()) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        sub = np.broadcast_to(np.asarray(sub), (x.shape[0],))
        if list(self.exprs) == [None]:
            return self._compiled[None](x, y)
        out = np.empty(x.shape[0])
        for k in np.unique(sub):
            mask = sub == k
            key = int(k) if int(k) in self._compiled else None
            if key not in self._compiled:
                raise KeyError(f"no expression for subdomain {k}")
            out[mask] = self._compiled[key](x[mask], y)
        return out

    def map(self, fn) -> "PiecewiseExpr":
        return PiecewiseExpr({k: fn(v) for k, v in self.exprs.items()}, self.s)

    def diff_y(self, j: int, order: int = 1) -> "PiecewiseExpr":
        return self.map(lambda e: sp.diff(e, Y[j], order) if order else e)

    def diff_x(self, i: int) -> "PiecewiseExpr":
        sym = X1 if i == 0 else X2
        return self.map(lambda e: sp.diff(e, sym))

    def diff_alpha_y(self, alpha) -> "PiecewiseExpr":
        out = self
        for j, k in enumerate(alpha):
            if k:
                out = out.diff_y(j, k)
        return out

    def is_zero(self) -> bool:
        return all(vanishes(e, self.s) for e in self.exprs.values())

    def depends_on_y(self) -> bool:
        ys = set(Y[: self.s])
        return any(e.free_symbols & ys for e in self.exprs.values())

    def is_affine_in_y(self) -> bool:
        for e in self.exprs.values():
            for j in range(self.s):
                if not vanishes(sp.diff(e, Y[j], 2), self.s):
                    return False
                for i in range(j + 1, self.s):
                    if not vanishes(sp.diff(e, Y[j], Y[i]), self.s):
                        return False
        return True

    def at_y(self, y) -> "PiecewiseExpr":
        subs = {Y[j]: float(v) for j, v in enumerate(np.atleast_1d(y)[: self.s])}
        return self.map(lambda e: e.subs(subs))

    def __repr__(self):
        return f"PiecewiseExpr({self.exprs!r})"
