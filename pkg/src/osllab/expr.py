"""Small arithmetic grammar for scenario data, compiled to numpy closures.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := number | name | call | '(' expr ')' | '|' expr '|'
    call   := func '(' expr (',' expr)* ')'

Names are ``x`` (first coordinate), ``x1``..``xd``, ``t`` and ``pi``. Functions:
``sgn abs sqrt exp min max pos`` and ``ind(x, a, b)`` for the indicator of
``[a, b]``. Nothing is evaluated through ``eval``.
"""

from __future__ import annotations

import math
import re
from typing import Callable

import numpy as np


class ExpressionError(ValueError):
    def __init__(self, message: str, text: str, position: int):
        super().__init__(f"{message} at column {position + 1} in {text!r}")
        self.text = text
        self.position = position


_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(\S))")

_UNARY = {
    "sgn": np.sign,
    "abs": np.abs,
    "sqrt": lambda v: np.sqrt(np.maximum(v, 0.0)),
    "exp": np.exp,
    "pos": lambda v: np.maximum(v, 0.0),
}
_ARITY = {**{k: 1 for k in _UNARY}, "min": 2, "max": 2, "ind": 3}


def _tokenize(text: str) -> list:
    out, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            break
        if m.group(1) is not None:
            out.append(("num", m.group(1), m.start(1)))
        elif m.group(2) is not None:
            out.append(("name", m.group(2), m.start(2)))
        else:
            out.append(("op", m.group(3), m.start(3)))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str, dim: int):
        self.text = text
        self.dim = dim
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def fail(self, message: str, tok=None):
        tok = tok or self.peek()
        raise ExpressionError(message, self.text, tok[2])

    def take(self, value: str):
        tok = self.peek()
        if tok[1] != value or tok[0] == "num":
            self.fail(f"expected {value!r}")
        self.i += 1

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail("unexpected token")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.peek()[1]
            self.i += 1
            a, b = node, self.term()
            node = (lambda a, b: lambda x, t: a(x, t) + b(x, t))(a, b) if op == "+" else \
                (lambda a, b: lambda x, t: a(x, t) - b(x, t))(a, b)
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.peek()[1]
            self.i += 1
            a, b = node, self.unary()
            if op == "*":
                node = (lambda a, b: lambda x, t: a(x, t) * b(x, t))(a, b)
            else:
                node = (lambda a, b: lambda x, t: _divide(a(x, t), b(x, t)))(a, b)
        return node

    def unary(self):
        if self.peek()[1] == "-" and self.peek()[0] == "op":
            self.i += 1
            inner = self.unary()
            return lambda x, t: -inner(x, t)
        if self.peek()[1] == "+" and self.peek()[0] == "op":
            self.i += 1
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.i += 1
            exponent = self.unary()
            return lambda x, t: _power(base(x, t), exponent(x, t))
        return base

    def atom(self):
        tok = self.peek()
        kind, value, _ = tok
        if kind == "num":
            self.i += 1
            c = float(value)
            return lambda x, t: np.full(x.shape[0], c)
        if kind == "name":
            self.i += 1
            if self.peek()[1] == "(":
                return self.call(value, tok)
            return self.variable(value, tok)
        if value == "(":
            self.i += 1
            node = self.expr()
            self.take(")")
            return node
        if value == "|" and kind == "op":
            self.i += 1
            inner = self.expr()
            self.take("|")
            return lambda x, t: np.abs(inner(x, t))
        if kind == "end":
            self.fail("unexpected end of expression")
        self.fail(f"unexpected {value!r}")

    def variable(self, name: str, tok):
        if name == "pi":
            return lambda x, t: np.full(x.shape[0], math.pi)
        if name == "t":
            return lambda x, t: np.full(x.shape[0], float(t))
        if name == "x":
            return lambda x, t: x[:, 0]
        m = re.fullmatch(r"x(\d+)", name)
        if m:
            k = int(m.group(1))
            if not 1 <= k <= self.dim:
                self.fail(f"coordinate {name} outside dimension {self.dim}", tok)
            return lambda x, t: x[:, k - 1]
        self.fail(f"unknown name {name!r}", tok)

    def call(self, name: str, tok):
        if name not in _ARITY:
            self.fail(f"unknown function {name!r}", tok)
        self.take("(")
        args = [self.expr()]
        while self.peek()[1] == ",":
            self.i += 1
            args.append(self.expr())
        self.take(")")
        if len(args) != _ARITY[name]:
            self.fail(f"{name} takes {_ARITY[name]} argument(s), got {len(args)}", tok)
        if name in _UNARY:
            fn, a = _UNARY[name], args[0]
            return lambda x, t: fn(a(x, t))
        if name == "min":
            a, b = args
            return lambda x, t: np.minimum(a(x, t), b(x, t))
        if name == "max":
            a, b = args
            return lambda x, t: np.maximum(a(x, t), b(x, t))
        v, lo, hi = args
        return lambda x, t: ((v(x, t) >= lo(x, t)) & (v(x, t) <= hi(x, t))).astype(float)


def _divide(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        return a / b


def _power(a, b):
    # real powers of negative bases are only defined for integer exponents
    whole = np.equal(np.round(b), b)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = np.power(np.abs(a), b)
    odd = whole & (np.abs(np.round(b)) % 2 == 1)
    out = np.where(odd, np.sign(a) * out, out)
    return np.where((a < 0) & ~whole, np.nan, out)


class Expression:
    """Compiled expression; call with points ``(n, d)`` and a time."""

    def __init__(self, text: str, dim: int = 1):
        if not isinstance(text, str) or not text.strip():
            raise ExpressionError("empty expression", str(text), 0)
        self.text = text
        self.dim = dim
        self._fn: Callable = _Parser(text, dim).parse()

    def __call__(self, points, t: float = 0.0) -> np.ndarray:
        x = np.atleast_2d(np.asarray(points, dtype=float))
        if x.shape[1] != self.dim and x.shape[0] == self.dim and self.dim == 1:
            x = x.T
        with np.errstate(invalid="ignore", over="ignore"):
            return np.asarray(self._fn(x, t), dtype=float).reshape(-1)

    def __repr__(self):
        return f"Expression({self.text!r})"


def compile_expression(text: str, dim: int = 1) -> Expression:
    return Expression(text, dim)
