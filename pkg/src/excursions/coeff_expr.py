"""Coefficient expressions for a(x) and b(x).

Grammar (whitespace insensitive)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := NUMBER | 'x' | FUNC '(' expr ')' | '(' expr ')'
    FUNC   := exp | log | sqrt | abs | tanh

``^`` binds tighter than unary minus, so ``-x^2`` is ``-(x^2)``.  Evaluation
works on floats and numpy arrays alike; any domain violation raises
:class:`DomainError` instead of returning NaN.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DomainError, ExprSyntaxError

FUNCTIONS = ("exp", "log", "sqrt", "abs", "tanh")

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Union[Num, Var, Neg, BinOp, Call]


def _tokenize(src):
    pos = 0
    tokens = []
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            start = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise ExprSyntaxError(start, f"unexpected character {src[start]!r}", src)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        kind, value, offset = self.peek()
        if value != text or kind != "op":
            raise ExprSyntaxError(offset, f"expected '{text}'", self.src)
        self.advance()

    def parse(self):
        node = self.expr()
        kind, value, offset = self.peek()
        if kind != "end":
            raise ExprSyntaxError(offset, f"expected operator or end of input, found {value!r}", self.src)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        kind, value, _ = self.peek()
        if kind == "op" and value == "-":
            self.advance()
            return Neg(self.unary())
        if kind == "op" and value == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, value, offset = self.peek()
        if kind == "num":
            self.advance()
            return Num(float(value))
        if kind == "name":
            self.advance()
            if value == "x":
                return Var()
            if value in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(value, arg)
            raise ExprSyntaxError(offset, f"unknown name {value!r}; expected 'x' or one of {', '.join(FUNCTIONS)}", self.src)
        if kind == "op" and value == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        what = "end of input" if kind == "end" else repr(value)
        raise ExprSyntaxError(offset, f"expected number, 'x', function or '(', found {what}", self.src)


def parse(src: str) -> Expr:
    """Parse ``src`` into an expression tree; raises :class:`ExprSyntaxError`."""
    return _Parser(src).parse()


def to_text(e: Expr) -> str:
    """Fully parenthesized rendering; ``parse(to_text(e))`` evaluates like ``e``."""
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return "x"
    if isinstance(e, Neg):
        return f"(-{to_text(e.operand)})"
    if isinstance(e, Call):
        return f"{e.func}({to_text(e.arg)})"
    return f"({to_text(e.left)} {e.op} {to_text(e.right)})"


def is_constant(e: Expr) -> bool:
    if isinstance(e, Num):
        return True
    if isinstance(e, Var):
        return False
    if isinstance(e, Neg):
        return is_constant(e.operand)
    if isinstance(e, Call):
        return is_constant(e.arg)
    return is_constant(e.left) and is_constant(e.right)


def _first_bad(x, mask):
    if np.ndim(mask) == 0:
        return x
    idx = int(np.flatnonzero(mask)[0])
    return np.broadcast_to(x, np.shape(mask)).ravel()[idx]


def _eval(e, x):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return x
    if isinstance(e, Neg):
        return -_eval(e.operand, x)
    if isinstance(e, Call):
        v = _eval(e.arg, x)
        if e.func == "log":
            bad = np.asarray(v) <= 0
            if np.any(bad):
                raise DomainError(to_text(e), _first_bad(x, bad), "log of non-positive value")
            return np.log(v)
        if e.func == "sqrt":
            bad = np.asarray(v) < 0
            if np.any(bad):
                raise DomainError(to_text(e), _first_bad(x, bad), "sqrt of negative value")
            return np.sqrt(v)
        return getattr(np, e.func)(v)
    left = _eval(e.left, x)
    right = _eval(e.right, x)
    if e.op == "+":
        return left + right
    if e.op == "-":
        return left - right
    if e.op == "*":
        return left * right
    if e.op == "/":
        bad = np.asarray(right) == 0
        if np.any(bad):
            raise DomainError(to_text(e), _first_bad(x, bad), "division by zero")
        return left / right
    # power
    l_arr, r_arr = np.asarray(left, dtype=float), np.asarray(right, dtype=float)
    bad = (l_arr == 0) & (r_arr < 0)
    if np.any(bad):
        raise DomainError(to_text(e), _first_bad(x, bad), "zero raised to a negative power")
    bad = (l_arr < 0) & (r_arr != np.round(r_arr))
    if np.any(bad):
        raise DomainError(to_text(e), _first_bad(x, bad), "negative base with non-integer exponent")
    return np.power(l_arr, r_arr) if (np.ndim(left) or np.ndim(right)) else float(l_arr) ** float(r_arr)


def evaluate(e: Expr, x):
    """Evaluate at a float or an array of points.

    Non-finite results (overflow, inf - inf) are reported as a domain error
    at the root expression.
    """
    with np.errstate(all="ignore"):
        try:
            value = _eval(e, x)
        except OverflowError:
            raise DomainError(to_text(e), x, "overflow") from None
    if np.ndim(value) == 0 and np.ndim(x) != 0:
        value = np.full(np.shape(x), float(value))
    finite = np.isfinite(value)
    if not np.all(finite):
        raise DomainError(to_text(e), _first_bad(x, ~finite), "non-finite result")
    return float(value) if np.ndim(value) == 0 else value


def _compile_scalar(e):
    # closure tree over math functions for float arguments; same domain checks as _eval
    if isinstance(e, Num):
        v = e.value
        return lambda x: v
    if isinstance(e, Var):
        return lambda x: x
    if isinstance(e, Neg):
        f = _compile_scalar(e.operand)
        return lambda x: -f(x)
    if isinstance(e, Call):
        f, text = _compile_scalar(e.arg), to_text(e)
        if e.func == "log":
            def log_(x):
                v = f(x)
                if v <= 0:
                    raise DomainError(text, x, "log of non-positive value")
                return math.log(v)
            return log_
        if e.func == "sqrt":
            def sqrt_(x):
                v = f(x)
                if v < 0:
                    raise DomainError(text, x, "sqrt of negative value")
                return math.sqrt(v)
            return sqrt_
        g = {"exp": math.exp, "abs": abs, "tanh": math.tanh}[e.func]
        return lambda x: g(f(x))
    f, g, text = _compile_scalar(e.left), _compile_scalar(e.right), to_text(e)
    if e.op == "+":
        return lambda x: f(x) + g(x)
    if e.op == "-":
        return lambda x: f(x) - g(x)
    if e.op == "*":
        return lambda x: f(x) * g(x)
    if e.op == "/":
        def div(x):
            r = g(x)
            if r == 0:
                raise DomainError(text, x, "division by zero")
            return f(x) / r
        return div

    def power(x):
        left, right = f(x), g(x)
        if left == 0 and right < 0:
            raise DomainError(text, x, "zero raised to a negative power")
        if left < 0 and right != round(right):
            raise DomainError(text, x, "negative base with non-integer exponent")
        return left ** right
    return power


eval = evaluate  # noqa: A001  (public name used by the grammar docs)


class Coefficient:
    """A parsed coefficient usable as ``f(x)`` on floats or arrays."""

    def __init__(self, source):
        if isinstance(source, Coefficient):
            self.expr, self.text = source.expr, source.text
        elif isinstance(source, (int, float)):
            self.expr, self.text = Num(float(source)), repr(float(source))
        elif isinstance(source, str):
            self.expr, self.text = parse(source), source
        else:
            self.expr, self.text = source, to_text(source)
        self.constant = is_constant(self.expr)
        self._const_value = evaluate(self.expr, 0.0) if self.constant else None
        self._scalar = _compile_scalar(self.expr)

    def __call__(self, x):
        if self.constant:
            return self._const_value if np.ndim(x) == 0 else np.full(np.shape(x), self._const_value)
        if np.ndim(x) == 0:
            x = float(x)
            try:
                value = self._scalar(x)
            except OverflowError:
                raise DomainError(to_text(self.expr), x, "overflow") from None
            if not math.isfinite(value):
                raise DomainError(to_text(self.expr), x, "non-finite result")
            return value
        return evaluate(self.expr, x)

    def __repr__(self):
        return f"Coefficient({self.text!r})"
