"""Arithmetic target expressions over named inputs.

Grammar (lowest to highest precedence)::

    expr  := term (('+' | '-') term)*
    term  := unary ('*' unary)*
    unary := '-' unary | power
    power := atom ('^' INT)*
    atom  := NUMBER | NAME | '(' expr ')'

so ``-x^2`` is ``-(x^2)`` and ``a - b`` is ``a + (-b)``.  Exponents must be
non-negative integer literals.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np


class ExprError(ValueError):
    def __init__(self, message: str, position: int | None = None):
        super().__init__(message if position is None else f"{message} (at position {position})")
        self.position = position


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str
    index: int


@dataclass(frozen=True)
class Add:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Mul:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


Expr = Union[Const, Var, Add, Mul, Pow, Neg]


@dataclass(frozen=True)
class ExprTree:
    """Parsed expression bound to an ordered list of variable names."""
    root: Expr
    variables: tuple[str, ...]
    text: str = ""

    def __call__(self, point) -> float:
        return float(self.evaluate(np.asarray(point, dtype=float)[None, :])[0])

    def evaluate(self, X) -> np.ndarray:
        """Value for every row of ``X`` (columns ordered as ``variables``)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.variables):
            raise ValueError(f"expected {len(self.variables)} columns, got {X.shape[1]}")
        out = evaluate(self.root, X)
        return np.broadcast_to(out, (X.shape[0],)).astype(float, copy=True)

    def scaled(self, factor: float) -> "ExprTree":
        return ExprTree(Mul(Const(float(factor)), self.root), self.variables, f"{factor}*({self.text})")

    def __str__(self) -> str:
        return to_text(self.root)


_TOKEN = re.compile(r"\s*(?:(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?|([A-Za-z_][A-Za-z_0-9]*)|(.))")


def _tokenize(text: str):
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m.group(0).strip() == "":
            break
        start = m.start(0) + len(m.group(0)) - len(m.group(0).lstrip())
        if m.group(1) is not None:
            toks.append(("num", m.group(1) + (m.group(2) or ""), start))
        elif m.group(3) is not None:
            toks.append(("name", m.group(3), start))
        else:
            ch = m.group(4)
            if ch not in "+-*^()":
                raise ExprError(f"unexpected character {ch!r}", start)
            toks.append((ch, ch, start))
        pos = m.end(0)
    toks.append(("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str, variables: Sequence[str]):
        self.toks = _tokenize(text)
        self.i = 0
        self.vars = {name: i for i, name in enumerate(variables)}

    def peek(self):
        return self.toks[self.i]

    def take(self, kind=None):
        tok = self.toks[self.i]
        if kind is not None and tok[0] != kind:
            what = "end of input" if tok[0] == "end" else repr(tok[1])
            raise ExprError(f"expected {kind!r}, found {what}", tok[2])
        self.i += 1
        return tok

    def expr(self) -> Expr:
        node = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.take()[0]
            rhs = self.term()
            node = Add(node, rhs if op == "+" else Neg(rhs))
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek()[0] == "*":
            self.take()
            node = Mul(node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.peek()[0] == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        node = self.atom()
        while self.peek()[0] == "^":
            self.take()
            kind, val, pos = self.take()
            if kind != "num" or not val.isdigit():
                raise ExprError(f"exponent must be a non-negative integer literal, found {val!r}", pos)
            node = Pow(node, int(val))
        return node

    def atom(self) -> Expr:
        kind, val, pos = self.peek()
        if kind == "num":
            self.take()
            return Const(float(val))
        if kind == "name":
            self.take()
            if val not in self.vars:
                valid = ", ".join(self.vars)
                raise ExprError(f"unknown variable {val!r}; valid names: {valid}", pos)
            return Var(val, self.vars[val])
        if kind == "(":
            self.take()
            node = self.expr()
            self.take(")")
            return node
        what = "end of input" if kind == "end" else repr(val)
        raise ExprError(f"syntax error: unexpected {what}", pos)


def parse_expr(text: str, variables: Sequence[str] = ("x1", "x2", "y1", "y2")) -> ExprTree:
    if not text or not text.strip():
        raise ExprError("empty expression")
    p = _Parser(text, variables)
    root = p.expr()
    kind, val, pos = p.peek()
    if kind != "end":
        raise ExprError(f"syntax error: unexpected {val!r}", pos)
    return ExprTree(root, tuple(variables), text)


def evaluate(node: Expr, X: np.ndarray):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return X[:, node.index]
    if isinstance(node, Add):
        return evaluate(node.left, X) + evaluate(node.right, X)
    if isinstance(node, Mul):
        return evaluate(node.left, X) * evaluate(node.right, X)
    if isinstance(node, Pow):
        base = evaluate(node.base, X)
        return np.ones_like(base) if node.exponent == 0 else base ** node.exponent
    if isinstance(node, Neg):
        return -evaluate(node.operand, X)
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------------------
# symbolic differentiation with zero/one folding

_ZERO = Const(0.0)
_ONE = Const(1.0)


def _add(a: Expr, b: Expr) -> Expr:
    if a == _ZERO:
        return b
    if b == _ZERO:
        return a
    return Add(a, b)


def _mul(a: Expr, b: Expr) -> Expr:
    if a == _ZERO or b == _ZERO:
        return _ZERO
    if a == _ONE:
        return b
    if b == _ONE:
        return a
    return Mul(a, b)


def _neg(a: Expr) -> Expr:
    return _ZERO if a == _ZERO else Neg(a)


def derivative(node: Expr, index: int) -> Expr:
    if isinstance(node, Const):
        return _ZERO
    if isinstance(node, Var):
        return _ONE if node.index == index else _ZERO
    if isinstance(node, Add):
        return _add(derivative(node.left, index), derivative(node.right, index))
    if isinstance(node, Mul):
        return _add(_mul(derivative(node.left, index), node.right),
                    _mul(node.left, derivative(node.right, index)))
    if isinstance(node, Pow):
        if node.exponent == 0:
            return _ZERO
        inner = derivative(node.base, index)
        if inner == _ZERO:
            return _ZERO
        lower = node.base if node.exponent == 2 else Pow(node.base, node.exponent - 1)
        return _mul(_mul(Const(float(node.exponent)), lower), inner)
    if isinstance(node, Neg):
        return _neg(derivative(node.operand, index))
    raise TypeError(f"not an expression node: {node!r}")


def gradient_exprs(expr: ExprTree) -> list[Expr]:
    return [derivative(expr.root, i) for i in range(len(expr.variables))]


def expr_grad(expr: ExprTree, point) -> np.ndarray:
    """Exact gradient at one point (1-D) or at every row of a 2-D array."""
    P = np.asarray(point, dtype=float)
    X = np.atleast_2d(P)
    cols = [np.broadcast_to(evaluate(g, X), (X.shape[0],)) for g in gradient_exprs(expr)]
    G = np.column_stack(cols).astype(float)
    return G[0] if P.ndim == 1 else G


def to_text(node: Expr) -> str:
    if isinstance(node, Const):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Add):
        return f"({to_text(node.left)} + {to_text(node.right)})"
    if isinstance(node, Mul):
        return f"({to_text(node.left)} * {to_text(node.right)})"
    if isinstance(node, Pow):
        return f"({to_text(node.base)})^{node.exponent}"
    if isinstance(node, Neg):
        return f"-({to_text(node.operand)})"
    raise TypeError(node)


Z_TEXT = "x1^2*x2 + y1*y2^2"
ZPRIME_TEXT = "x1*y1*y2 + x1*x2*y2"
