"""Small arithmetic expression trees with symbolic differentiation.

Coefficient fields of a system are written in a tiny grammar::

    expr := number | x | y | pi | name | expr (+ - * / ^) expr | -expr
          | sin(expr) | cos(expr) | exp(expr) | sqrt(expr) | log(expr)

``name`` must be bound through ``params`` at parse time, so every tree is a
function of ``x`` and ``y`` only. Parsing reuses :mod:`ast` (``^`` is mapped to
``**`` first) and walks the result against a whitelist.

Trees are immutable and simplified on construction (constant folding, the
usual 0/1 identities), which keeps repeated derivatives small. ``compile``
turns a tree into a numpy-vectorized callable ``f(x, y)``.
"""

from __future__ import annotations

import ast
import math
from functools import cached_property

import numpy as np

from .errors import ExpressionError

FUNCTIONS = ("sin", "cos", "exp", "sqrt", "log")
VARIABLES = ("x", "y")


class Expr:
    __slots__ = ()
    precedence = 100

    # operator sugar so trees can be built in code
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __pow__(self, other):
        return power(self, as_expr(other))

    def __neg__(self):
        return neg(self)

    def is_const(self, value=None):
        return False

    def __repr__(self):
        return f"Expr({str(self)!r})"


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = float(value)

    def is_const(self, value=None):
        return value is None or self.value == value

    def __eq__(self, other):
        return isinstance(other, Const) and other.value == self.value

    def __hash__(self):
        return hash(("c", self.value))

    def __str__(self):
        v = self.value
        if v == int(v) and abs(v) < 1e15:
            return str(int(v)) if v >= 0 else f"({int(v)})"
        return repr(v) if v >= 0 else f"({v!r})"

    def source(self):
        return repr(self.value)


class Var(Expr):
    __slots__ = ("name",)

    def __init__(self, name):
        self.name = name

    def __eq__(self, other):
        return isinstance(other, Var) and other.name == self.name

    def __hash__(self):
        return hash(("v", self.name))

    def __str__(self):
        return self.name

    def source(self):
        return self.name


class Func(Expr):
    __slots__ = ("name", "arg")

    def __init__(self, name, arg):
        self.name = name
        self.arg = arg

    def __eq__(self, other):
        return isinstance(other, Func) and (other.name, other.arg) == (self.name, self.arg)

    def __hash__(self):
        return hash(("f", self.name, self.arg))

    def __str__(self):
        return f"{self.name}({self.arg})"

    def source(self):
        return f"np.{self.name}({self.arg.source()})"


class BinOp(Expr):
    __slots__ = ("op", "left", "right")
    _prec = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}

    def __init__(self, op, left, right):
        self.op = op
        self.left = left
        self.right = right

    @property
    def precedence(self):
        return self._prec[self.op]

    def __eq__(self, other):
        return isinstance(other, BinOp) and (other.op, other.left, other.right) == (
            self.op,
            self.left,
            self.right,
        )

    def __hash__(self):
        return hash(("b", self.op, self.left, self.right))

    def _wrap(self, e, right_side):
        p = e.precedence
        tight = p < self.precedence or (right_side and p == self.precedence and self.op in "-/^")
        if self.op == "^" and not right_side and p == self.precedence:
            tight = True
        return f"({e})" if tight else str(e)

    def __str__(self):
        return f"{self._wrap(self.left, False)} {self.op} {self._wrap(self.right, True)}"

    def source(self):
        op = "**" if self.op == "^" else self.op
        return f"({self.left.source()} {op} {self.right.source()})"


class Neg(Expr):
    __slots__ = ("arg",)
    precedence = 3

    def __init__(self, arg):
        self.arg = arg

    def __eq__(self, other):
        return isinstance(other, Neg) and other.arg == self.arg

    def __hash__(self):
        return hash(("n", self.arg))

    def __str__(self):
        a = str(self.arg)
        return f"-({a})" if self.arg.precedence <= self.precedence else f"-{a}"

    def source(self):
        return f"(-{self.arg.source()})"


ZERO = Const(0.0)
ONE = Const(1.0)


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)):
        return Const(value)
    if isinstance(value, str):
        return parse(value)
    raise TypeError(f"cannot convert {value!r} to an expression")


# simplifying constructors ---------------------------------------------------


def add(a, b):
    if a.is_const(0.0):
        return b
    if b.is_const(0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if isinstance(b, Neg):
        return sub(a, b.arg)
    return BinOp("+", a, b)


def sub(a, b):
    if b.is_const(0.0):
        return a
    if a.is_const(0.0):
        return neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if a == b:
        return ZERO
    if isinstance(b, Neg):
        return add(a, b.arg)
    return BinOp("-", a, b)


def neg(a):
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def mul(a, b):
    if a.is_const(0.0) or b.is_const(0.0):
        return ZERO
    if a.is_const(1.0):
        return b
    if b.is_const(1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if a.is_const(-1.0):
        return neg(b)
    if b.is_const(-1.0):
        return neg(a)
    if isinstance(b, Const):
        a, b = b, a
    if isinstance(a, Neg):
        return neg(mul(a.arg, b))
    if isinstance(b, Neg):
        return neg(mul(a, b.arg))
    return BinOp("*", a, b)


def div(a, b):
    if b.is_const(0.0):
        raise ExpressionError("division by constant zero")
    if a.is_const(0.0):
        return ZERO
    if b.is_const(1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value / b.value)
    if a == b:
        return ONE
    return BinOp("/", a, b)


def power(a, b):
    if b.is_const(0.0):
        return ONE
    if b.is_const(1.0):
        return a
    if a.is_const(0.0):
        return ZERO
    if a.is_const(1.0):
        return ONE
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value**b.value)
    return BinOp("^", a, b)


def func(name, arg):
    if name not in FUNCTIONS:
        raise ExpressionError(f"unknown function {name!r}")
    if isinstance(arg, Const):
        return Const(getattr(math, name)(arg.value))
    return Func(name, arg)


# differentiation ------------------------------------------------------------


def diff(e: Expr, var: str) -> Expr:
    """Symbolic partial derivative of ``e`` with respect to ``var``."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, Neg):
        return neg(diff(e.arg, var))
    if isinstance(e, Func):
        du = diff(e.arg, var)
        if du.is_const(0.0):
            return ZERO
        u = e.arg
        outer = {
            "sin": lambda: func("cos", u),
            "cos": lambda: neg(func("sin", u)),
            "exp": lambda: e,
            "sqrt": lambda: div(Const(0.5), e),
            "log": lambda: div(ONE, u),
        }[e.name]()
        return mul(outer, du)
    if isinstance(e, BinOp):
        a, b = e.left, e.right
        da, db = diff(a, var), diff(b, var)
        if e.op == "+":
            return add(da, db)
        if e.op == "-":
            return sub(da, db)
        if e.op == "*":
            return add(mul(da, b), mul(a, db))
        if e.op == "/":
            if db.is_const(0.0):
                return div(da, b)
            return div(sub(mul(da, b), mul(a, db)), power(b, Const(2.0)))
        if e.op == "^":
            if isinstance(b, Const):
                return mul(mul(b, power(a, Const(b.value - 1.0))), da)
            # general u^v = exp(v log u)
            return mul(e, add(mul(db, func("log", a)), div(mul(b, da), a)))
    raise ExpressionError(f"cannot differentiate {e!r}")


def substitute(e: Expr, bindings: dict) -> Expr:
    """Replace variables by expressions (used for parameters and shifts)."""
    if isinstance(e, Var):
        return as_expr(bindings[e.name]) if e.name in bindings else e
    if isinstance(e, Const):
        return e
    if isinstance(e, Neg):
        return neg(substitute(e.arg, bindings))
    if isinstance(e, Func):
        return func(e.name, substitute(e.arg, bindings))
    if isinstance(e, BinOp):
        builder = {"+": add, "-": sub, "*": mul, "/": div, "^": power}[e.op]
        return builder(substitute(e.left, bindings), substitute(e.right, bindings))
    raise ExpressionError(f"cannot substitute into {e!r}")


def free_vars(e: Expr) -> set:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, (Neg, Func)):
        return free_vars(e.arg)
    if isinstance(e, BinOp):
        return free_vars(e.left) | free_vars(e.right)
    return set()


# parsing --------------------------------------------------------------------

_BINOPS = {ast.Add: add, ast.Sub: sub, ast.Mult: mul, ast.Div: div, ast.Pow: power}


def parse(text: str, params: dict | None = None) -> Expr:
    """Parse ``text`` into a tree; ``params`` binds extra names to numbers."""
    params = dict(params or {})
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None

    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return Const(node.value)
        if isinstance(node, ast.Name):
            if node.id in VARIABLES:
                return Var(node.id)
            if node.id == "pi":
                return Const(math.pi)
            if node.id in params:
                return Const(params[node.id])
            raise ExpressionError(f"unbound name {node.id!r} in {text!r}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](walk(node.left), walk(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            arg = walk(node.operand)
            return neg(arg) if isinstance(node.op, ast.USub) else arg
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
            if node.func.id not in FUNCTIONS or len(node.args) != 1 or node.keywords:
                raise ExpressionError(f"unsupported call {node.func.id!r} in {text!r}")
            return func(node.func.id, walk(node.args[0]))
        raise ExpressionError(f"unsupported syntax in {text!r}: {ast.dump(node)[:60]}")

    return walk(tree)


# compilation ----------------------------------------------------------------


class Field:
    """A scalar field ``f(x, y)`` backed by an expression tree.

    Calling broadcasts ``x`` and ``y`` and always returns a float array of the
    broadcast shape (or a float for scalar input). Derivatives are cached.
    """

    def __init__(self, expr):
        self.expr = as_expr(expr)
        self._derivs = {}

    @cached_property
    def _fn(self):
        src = self.expr.source()
        return eval(compile(f"lambda x, y: {src}", f"<field {self.expr}>", "eval"), {"np": np})

    def __call__(self, x, y):
        val = self._fn(x, y)
        if np.ndim(x) == 0 and np.ndim(y) == 0:
            return float(val)
        shape = np.broadcast(x, y).shape
        val = np.asarray(val, dtype=float)
        if val.shape != shape:
            val = np.broadcast_to(val, shape).copy()
        return val

    def d(self, var: str) -> "Field":
        if var not in self._derivs:
            self._derivs[var] = Field(diff(self.expr, var))
        return self._derivs[var]

    @property
    def is_zero(self):
        return self.expr.is_const(0.0)

    def __str__(self):
        return str(self.expr)

    def __repr__(self):
        return f"Field({str(self.expr)!r})"

    def __getstate__(self):
        return {"expr": self.expr}

    def __setstate__(self, state):
        self.expr = state["expr"]
        self._derivs = {}
