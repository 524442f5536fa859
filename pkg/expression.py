"""Coordinate expressions such as "y*(1-y)" for boundary data and sources.

Top-down operator precedence parser. Binding powers, loosest first:
+ -, then * /, then unary minus, then ^ (right associative).
"""

import re
from dataclasses import dataclass

import numpy as np

from errors import ExpressionSyntaxError

VARIABLES = ("x", "y", "z")
CONSTANTS = {"pi": np.pi}
FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}

BINDING_POWER = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 30}
UNARY_MINUS_POWER = 25

TOKEN_PATTERN = re.compile(
    r"\s*(?:(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)


@dataclass(frozen=True)
class Number:
    value: float


@dataclass(frozen=True)
class Variable:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    operand: object


@dataclass(frozen=True)
class Binary:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    function: str
    argument: object


@dataclass(frozen=True)
class Token:
    kind: str  # number, name, op, end
    text: str
    offset: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    position = 0
    while True:
        while position < len(text) and text[position].isspace():
            position += 1
        if position == len(text):
            break
        match = TOKEN_PATTERN.match(text, position)
        if match is None:
            raise ExpressionSyntaxError(
                f"unexpected character {text[position]!r}", _byte_offset(text, position), "number, name or operator"
            )
        kind = match.lastgroup
        tokens.append(Token(kind, match.group(kind), _byte_offset(text, match.start(kind))))
        position = match.end()
    tokens.append(Token("end", "", _byte_offset(text, len(text))))
    return tokens


def _byte_offset(text: str, position: int) -> int:
    return len(text[:position].encode("utf-8"))


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.index = 0

    @property
    def current(self) -> Token:
        return self.tokens[self.index]

    def advance(self) -> Token:
        token = self.current
        self.index += 1
        return token

    def expect(self, text: str):
        token = self.advance()
        if token.text != text:
            found = "end of input" if token.kind == "end" else repr(token.text)
            raise ExpressionSyntaxError(f"unexpected {found}", token.offset, repr(text))

    def left_power(self, token: Token) -> int:
        return BINDING_POWER.get(token.text, 0) if token.kind == "op" else 0

    def parse(self):
        node = self.expression(0)
        token = self.current
        if token.kind != "end":
            raise ExpressionSyntaxError(f"unexpected {token.text!r}", token.offset, "operator or end of input")
        return node

    def expression(self, right_power: int):
        left = self.prefix(self.advance())
        while right_power < self.left_power(self.current):
            token = self.advance()
            if token.text == "^":
                right = self.expression(BINDING_POWER["^"] - 1)
            else:
                right = self.expression(BINDING_POWER[token.text])
            left = Binary(token.text, left, right)
        return left

    def prefix(self, token: Token):
        if token.kind == "number":
            value = float(token.text)
            if not np.isfinite(value):
                raise ExpressionSyntaxError(f"number {token.text} overflows a double", token.offset, "finite number")
            return Number(value)
        if token.kind == "name":
            if token.text in FUNCTIONS:
                self.expect("(")
                argument = self.expression(0)
                self.expect(")")
                return Call(token.text, argument)
            if token.text in VARIABLES or token.text in CONSTANTS:
                return Variable(token.text)
            raise ExpressionSyntaxError(
                f"unknown name {token.text!r}", token.offset, f"one of {', '.join(VARIABLES + tuple(CONSTANTS))} or a function"
            )
        if token.text == "(":
            node = self.expression(0)
            self.expect(")")
            return node
        if token.text == "-":
            return Unary("-", self.expression(UNARY_MINUS_POWER))
        found = "end of input" if token.kind == "end" else repr(token.text)
        raise ExpressionSyntaxError(f"unexpected {found}", token.offset, "number, variable, function or '('")


def to_text(node) -> str:
    """Fully parenthesized form; parsing it gives back an equal tree."""
    match node:
        case Number(value):
            return repr(value)
        case Variable(name):
            return name
        case Unary(op, operand):
            return f"({op}{to_text(operand)})"
        case Binary(op, left, right):
            return f"({to_text(left)} {op} {to_text(right)})"
        case Call(function, argument):
            return f"{function}({to_text(argument)})"
    raise TypeError(f"not an expression node: {node!r}")


def _evaluate(node, env: dict):
    match node:
        case Number(value):
            return value
        case Variable(name):
            return CONSTANTS[name] if name in CONSTANTS else env[name]
        case Unary("-", operand):
            return -_evaluate(operand, env)
        case Call(function, argument):
            return FUNCTIONS[function](_evaluate(argument, env))
        case Binary(op, left, right):
            a, b = _evaluate(left, env), _evaluate(right, env)
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if op == "/":
                if np.any(np.asarray(b) == 0):
                    raise ZeroDivisionError(f"division by zero in {to_text(node)}")
                return np.divide(a, b)
            return np.power(a, b)
    raise TypeError(f"not an expression node: {node!r}")


class Expression:
    def __init__(self, tree, text: str | None = None):
        self.tree = tree
        self.text = text if text is not None else to_text(tree)

    def __eq__(self, other):
        return isinstance(other, Expression) and self.tree == other.tree

    def __hash__(self):
        return hash(self.tree)

    def __repr__(self):
        return f"Expression({self.text!r})"

    def __str__(self):
        return to_text(self.tree)

    def evaluate(self, points) -> np.ndarray:
        """Evaluate at points (..., d); missing coordinates are zero."""
        points = np.asarray(points, dtype=float)
        zero = np.zeros(points.shape[:-1])
        env = {name: points[..., i] if i < points.shape[-1] else zero for i, name in enumerate(VARIABLES)}
        return np.broadcast_to(_evaluate(self.tree, env), points.shape[:-1]).astype(float)

    def at(self, x=0.0, y=0.0, z=0.0) -> float:
        return float(_evaluate(self.tree, {"x": x, "y": y, "z": z}))

    __call__ = evaluate


class VectorExpression:
    """One expression per component, evaluated to (..., n)."""

    def __init__(self, components):
        self.components = tuple(components)

    def __call__(self, points) -> np.ndarray:
        return np.stack([component.evaluate(points) for component in self.components], axis=-1)

    def __len__(self):
        return len(self.components)

    def __repr__(self):
        return f"VectorExpression({[c.text for c in self.components]!r})"


def parse_expression(text: str) -> Expression:
    if not text or not text.strip():
        raise ExpressionSyntaxError("empty expression", 0, "number, variable, function or '('")
    return Expression(_Parser(text).parse(), text)
