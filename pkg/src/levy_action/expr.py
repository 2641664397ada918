"""Small arithmetic grammar for coefficient functions in model documents.

Grammar (``^`` binds tighter than unary minus and is right associative)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('+' | '-') unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | VAR | CONST | FUNC '(' expr ')' | '(' expr ')'

Expressions compile to closures over numpy, so they evaluate elementwise on
arrays as well as on floats.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ExpressionSyntaxError

FUNCTIONS = {
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "tanh": np.tanh,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
}
CONSTANTS = {"pi": np.pi, "e": np.e}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)


@dataclass(frozen=True)
class Token:
    kind: str  # 'num', 'name', 'op' or 'end'
    text: str
    offset: int


def tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExpressionSyntaxError(f"unexpected character {text[bad]!r}", text, bad)
        kind = m.lastgroup
        tokens.append(Token(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, variable):
        self.text = text
        self.variable = variable
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def error(self, message, tok=None):
        tok = tok or self.tok
        raise ExpressionSyntaxError(message, self.text, tok.offset)

    def take(self):
        tok = self.tok
        self.i += 1
        return tok

    def expect(self, text):
        if self.tok.text != text:
            self.error(f"expected {text!r}")
        return self.take()

    def parse(self):
        if self.tok.kind == "end":
            self.error("empty expression")
        node = self.expr()
        if self.tok.kind != "end":
            self.error(f"unexpected {self.tok.text!r}")
        return node

    def expr(self):
        node = self.term()
        while self.tok.text in ("+", "-"):
            op = self.take().text
            node = ("+" if op == "+" else "-", node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.tok.text in ("*", "/"):
            op = self.take().text
            node = (op, node, self.unary())
        return node

    def unary(self):
        if self.tok.text in ("+", "-"):
            op = self.take().text
            operand = self.unary()
            return operand if op == "+" else ("neg", operand)
        return self.power()

    def power(self):
        base = self.atom()
        if self.tok.text == "^":
            self.take()
            return ("^", base, self.unary())
        return base

    def atom(self):
        tok = self.tok
        if tok.kind == "num":
            self.take()
            return ("num", float(tok.text))
        if tok.kind == "name":
            self.take()
            if tok.text == self.variable:
                return ("var",)
            if tok.text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return ("call", tok.text, arg)
            if tok.text in CONSTANTS:
                return ("num", CONSTANTS[tok.text])
            self.error(f"unknown name {tok.text!r}", tok)
        if tok.text == "(":
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "end":
            self.error("unexpected end of expression")
        self.error(f"unexpected {tok.text!r}")


def parse(text, variable="x"):
    """Parse ``text`` into a nested-tuple syntax tree."""
    return _Parser(text, variable).parse()


def _build(node):
    kind = node[0]
    if kind == "num":
        value = node[1]
        return lambda x: np.full_like(x, value, dtype=float) if np.ndim(x) else value
    if kind == "var":
        return lambda x: x
    if kind == "neg":
        f = _build(node[1])
        return lambda x: -f(x)
    if kind == "call":
        fn = FUNCTIONS[node[1]]
        f = _build(node[2])
        return lambda x: fn(f(x))
    f, g = _build(node[1]), _build(node[2])
    if kind == "+":
        return lambda x: f(x) + g(x)
    if kind == "-":
        return lambda x: f(x) - g(x)
    if kind == "*":
        return lambda x: f(x) * g(x)
    if kind == "/":
        return lambda x: f(x) / g(x)
    if kind == "^":
        return lambda x: np.power(f(x), g(x))
    raise AssertionError(kind)


class Expression:
    """A compiled expression in one variable, callable on floats or arrays."""

    def __init__(self, text, variable="x"):
        self.text = text
        self.variable = variable
        self.tree = parse(text, variable)
        self._fn = _build(self.tree)

    @property
    def is_constant(self):
        """True when the variable does not occur."""

        def walk(node):
            return node[0] != "var" and all(walk(c) for c in node[1:] if isinstance(c, tuple))

        return walk(self.tree)

    def __call__(self, x):
        with np.errstate(all="ignore"):
            if np.ndim(x):
                return np.asarray(self._fn(np.asarray(x, dtype=float)), dtype=float)
            return float(self._fn(float(x)))

    def __repr__(self):
        return f"Expression({self.text!r})"


def compile_expression(text, variable="x"):
    return Expression(text, variable)
