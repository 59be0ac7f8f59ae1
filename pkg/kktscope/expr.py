"""
Arithmetic expressions for objectives and constraints.

Expressions are parsed into immutable trees (``Const``, ``Var``, ``Unary``,
``Binary``), evaluated with numpy in 64-bit floating point (scalar or batched
over grids), and differentiated symbolically.

Grammar, loosest binding first::

    additive   := multiplicative (('+' | '-') multiplicative)*
    multiplicative := unary (('*' | '/') unary)*
    unary      := '-' unary | power
    power      := primary ('^' unary)?          # right-associative, constant exponent
    primary    := number | name | fn '(' additive ')' | '(' additive ')'

'-' and '/' associate to the left. Runs of '+' or '*' are built as balanced
trees so long sums and products stay shallow.
"""
import logging
import math
import re
from dataclasses import dataclass
from functools import lru_cache, singledispatch
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    ExprSyntaxError,
    NonConstantExponent,
    NumericDomainError,
    NumericError,
    UnboundVariable,
)

logger = logging.getLogger("kktscope.expr")

IDENTIFIER = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")
UNARY_OPS = ("neg",) + FUNCTIONS
BINARY_OPS = ("+", "-", "*", "/", "^")

# Binding strength used by the printer; mirrors the grammar above.
_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5
_BINARY_PREC = {"+": _PREC_ADD, "-": _PREC_ADD, "*": _PREC_MUL, "/": _PREC_MUL, "^": _PREC_POW}


@dataclass(frozen=True)
class Const:
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise NumericError(f"non-finite constant {self.value!r}")
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class Var:
    name: str

    def __post_init__(self):
        if not IDENTIFIER.match(self.name or ""):
            raise ExprSyntaxError(f"invalid variable name {self.name!r}", 0)


@dataclass(frozen=True)
class Unary:
    op: str
    child: "Expr"

    def __post_init__(self):
        if self.op not in UNARY_OPS:
            raise ExprSyntaxError(f"unknown unary operator {self.op!r}", 0)


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise ExprSyntaxError(f"unknown binary operator {self.op!r}", 0)
        if self.op == "^" and not isinstance(self.right, Const):
            raise NonConstantExponent("exponent of '^' must be a constant", 0)


Expr = Union[Const, Var, Unary, Binary]

ZERO = Const(0.0)
ONE = Const(1.0)

# Deepest tree accepted from text; the walkers below recurse once per level.
MAX_DEPTH = 128


def _balanced(op: str, items: Sequence[Expr]) -> Expr:
    """Fold a run of operands of an associative ``op`` into a tree of logarithmic depth.

    Runs of two or three operands come out left-nested, as plain left folding would.
    """
    if len(items) == 1:
        return items[0]
    mid = (len(items) + 1) // 2
    return Binary(op, _balanced(op, items[:mid]), _balanced(op, items[mid:]))


def depth(node: Expr) -> int:
    """Number of levels in ``node`` (a leaf has depth 1), computed without recursion."""
    deepest = 0
    stack = [(node, 1)]
    while stack:
        current, level = stack.pop()
        deepest = max(deepest, level)
        if isinstance(current, Unary):
            stack.append((current.child, level + 1))
        elif isinstance(current, Binary):
            stack.append((current.left, level + 1))
            stack.append((current.right, level + 1))
    return deepest


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

class _Token(NamedTuple):
    kind: str  # number | name | op | end
    text: str
    offset: int


_TOKEN_RE = re.compile(
    r"(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()])"
)


def _tokenize(text: str) -> List[_Token]:
    tokens: List[_Token] = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise ExprSyntaxError(f"expected a number, name or operator, found {text[pos]!r}", pos)
        kind = match.lastgroup
        tokens.append(_Token(kind, match.group(kind), pos))
        pos = match.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


def _describe(token: _Token) -> str:
    return "end of input" if token.kind == "end" else repr(token.text)


class _Parser:
    """Recursive-descent parser over a token list; one instance per input string."""

    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    @property
    def current(self) -> _Token:
        return self.tokens[self.pos]

    def _advance(self) -> _Token:
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def _expect(self, text: str, what: str) -> _Token:
        token = self.current
        if token.kind != "op" or token.text != text:
            raise ExprSyntaxError(f"expected {what}, found {_describe(token)}", token.offset)
        return self._advance()

    def parse(self) -> Expr:
        node = self.additive()
        if self.current.kind != "end":
            raise ExprSyntaxError(f"expected operator or end of input, found {_describe(self.current)}",
                                  self.current.offset)
        return node

    def additive(self) -> Expr:
        run = [self.multiplicative()]
        while self.current.kind == "op" and self.current.text in "+-":
            op = self._advance().text
            operand = self.multiplicative()
            if op == "+":
                run.append(operand)
            else:
                run = [Binary("-", _balanced("+", run), operand)]
        return _balanced("+", run)

    def multiplicative(self) -> Expr:
        run = [self.unary()]
        while self.current.kind == "op" and self.current.text in "*/":
            op = self._advance().text
            operand = self.unary()
            if op == "*":
                run.append(operand)
            else:
                run = [Binary("/", _balanced("*", run), operand)]
        return _balanced("*", run)

    def unary(self) -> Expr:
        token = self.current
        if token.kind == "op" and token.text == "-":
            self._advance()
            literal = self.current.kind == "number"
            operand = self.unary()
            # Only a bare literal folds: '-(3)' stays a negation.
            if literal and isinstance(operand, Const):
                return Const(-operand.value)
            return Unary("neg", operand)
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        if self.current.kind == "op" and self.current.text == "^":
            self._advance()
            offset = self.current.offset
            exponent = self.unary()
            return Binary("^", base, _fold_exponent(exponent, offset))
        return base

    def primary(self) -> Expr:
        token = self.current
        if token.kind == "number":
            self._advance()
            return Const(float(token.text))
        if token.kind == "name":
            self._advance()
            if token.text in FUNCTIONS:
                self._expect("(", f"'(' after function name {token.text!r}")
                child = self.additive()
                self._expect(")", "')'")
                return Unary(token.text, child)
            if self.current.kind == "op" and self.current.text == "(":
                raise ExprSyntaxError(f"unknown function {token.text!r}", token.offset)
            return Var(token.text)
        if token.kind == "op" and token.text == "(":
            self._advance()
            node = self.additive()
            self._expect(")", "')'")
            return node
        raise ExprSyntaxError(f"expected operand, found {_describe(token)}", token.offset)


def _fold_exponent(node: Expr, offset: int) -> Const:
    if isinstance(node, Const):
        return node
    if variables(node):
        raise NonConstantExponent("exponent of '^' must be a constant", offset)
    try:
        return Const(evaluate(node, {}))
    except NumericError as exc:
        raise NonConstantExponent(f"exponent does not evaluate to a finite constant ({exc})", offset) from exc


def parse_expression(text: str) -> Expr:
    """Parse ``text`` into an expression tree."""
    if not text or not text.strip():
        raise ExprSyntaxError("expected an expression, found end of input", 0)
    parser = _Parser(text)
    try:
        node = parser.parse()
    except RecursionError:
        raise ExprSyntaxError("expression nests too deeply", parser.current.offset) from None
    if depth(node) > MAX_DEPTH:
        raise ExprSyntaxError(f"expression nests too deeply (more than {MAX_DEPTH} levels)", 0)
    return node


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

def _format_number(value: float) -> str:
    if value < 0 or (value == 0 and math.copysign(1.0, value) < 0):
        return f"(-{_format_number(-value)})"
    if value.is_integer() and value < 1e15:
        return str(int(value))
    return repr(value)


def _precedence(node: Expr) -> int:
    if isinstance(node, Binary):
        return _BINARY_PREC[node.op]
    if isinstance(node, Unary) and node.op == "neg":
        return _PREC_NEG
    return _PREC_ATOM


def _join(op: str, left: str, right: str) -> str:
    return f"{left}{op}{right}" if op in "*/^" else f"{left} {op} {right}"


def _flatten(node: Expr, op: str) -> List[Expr]:
    if isinstance(node, Binary) and node.op == op:
        return _flatten(node.left, op) + _flatten(node.right, op)
    return [node]


def _run_item(item: Expr, prec: int, first: bool) -> str:
    text = to_text(item)
    item_prec = _precedence(item)
    if item_prec < prec or (not first and (item_prec == prec or item_prec == _PREC_NEG)):
        return f"({text})"
    return text


def to_text(node: Expr) -> str:
    """Render ``node`` with the fewest parentheses that reparse to the same tree."""
    if isinstance(node, Const):
        return _format_number(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        if node.op == "neg":
            if isinstance(node.child, Const):
                number = _format_number(node.child.value)
                return f"-{number}" if number.startswith("(") else f"-({number})"
            inner = to_text(node.child)
            return f"-({inner})" if _precedence(node.child) < _PREC_NEG else f"-{inner}"
        return f"{node.op}({to_text(node.child)})"
    prec = _BINARY_PREC[node.op]
    if node.op in "+*":
        # The parser balances runs of '+' and '*'; print flat only when that rebuilds this tree.
        items = _flatten(node, node.op)
        if _balanced(node.op, items) == node:
            parts = [_run_item(item, prec, first=(i == 0)) for i, item in enumerate(items)]
            return f" {node.op} ".join(parts) if node.op == "+" else node.op.join(parts)
    left, right = to_text(node.left), to_text(node.right)
    # '^' is right-associative, everything else left-associative.
    if (_precedence(node.left) < prec or (node.op == "^" and _precedence(node.left) == prec)
            or (isinstance(node.left, Binary) and node.left.op == node.op and node.op in "+*")):
        left = f"({left})"
    if (_precedence(node.right) < prec or (node.op != "^" and _precedence(node.right) == prec)
            or _precedence(node.right) == _PREC_NEG):
        right = f"({right})"
    return _join(node.op, left, right)


# ---------------------------------------------------------------------------
# Inspection
# ---------------------------------------------------------------------------

@lru_cache(maxsize=4096)
def variables(node: Expr) -> Tuple[str, ...]:
    """Variable names in order of first appearance."""
    if isinstance(node, Const):
        return ()
    if isinstance(node, Var):
        return (node.name,)
    if isinstance(node, Unary):
        return variables(node.child)
    seen = list(variables(node.left))
    seen.extend(name for name in variables(node.right) if name not in seen)
    return tuple(seen)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

class _Env:
    """Broadcast bindings plus the context needed to report offending points."""

    def __init__(self, binding: Mapping[str, np.ndarray]):
        arrays = {name: np.asarray(value, dtype=np.float64) for name, value in binding.items()}
        self.shape = np.broadcast_shapes(*(a.shape for a in arrays.values())) if arrays else ()
        self.arrays = arrays

    def fail(self, message: str, bad) -> NumericDomainError:
        bad = np.broadcast_to(bad, self.shape)
        flat = int(np.flatnonzero(bad)[0]) if bad.any() else 0
        point = {name: float(np.broadcast_to(arr, self.shape).flat[flat]) for name, arr in self.arrays.items()}
        return NumericDomainError(message, point)

    def check(self, value: np.ndarray, what: str) -> np.ndarray:
        finite = np.isfinite(value)
        if not finite.all():
            raise self.fail(f"non-finite result in {what}", ~finite)
        return value


@singledispatch
def _eval(node, env: _Env) -> np.ndarray:
    raise TypeError(f"cannot evaluate {type(node).__name__}")


@_eval.register(Const)
def _(node: Const, env: _Env) -> np.ndarray:
    return np.asarray(node.value)


@_eval.register(Var)
def _(node: Var, env: _Env) -> np.ndarray:
    return env.arrays[node.name]


@_eval.register(Unary)
def _(node: Unary, env: _Env) -> np.ndarray:
    x = _eval(node.child, env)
    if node.op == "neg":
        return -x
    if node.op == "log":
        if (x <= 0).any():
            raise env.fail("log of nonpositive value", x <= 0)
        return np.log(x)
    if node.op == "sqrt":
        if (x < 0).any():
            raise env.fail("sqrt of negative value", x < 0)
        return np.sqrt(x)
    fn = {"sin": np.sin, "cos": np.cos, "exp": np.exp}[node.op]
    return env.check(fn(x), node.op)


@_eval.register(Binary)
def _(node: Binary, env: _Env) -> np.ndarray:
    a = _eval(node.left, env)
    b = _eval(node.right, env)
    if node.op == "+":
        return env.check(a + b, "'+'")
    if node.op == "-":
        return env.check(a - b, "'-'")
    if node.op == "*":
        return env.check(a * b, "'*'")
    if node.op == "/":
        if (b == 0).any():
            raise env.fail("division by zero", b == 0)
        return env.check(a / b, "'/'")
    e = node.right.value
    if not e.is_integer() and (a < 0).any():
        raise env.fail("fractional power of negative value", a < 0)
    if e < 0 and (a == 0).any():
        raise env.fail("division by zero", a == 0)
    return env.check(np.power(a, e), "'^'")


def evaluate_batch(node: Expr, binding: Mapping[str, object]) -> np.ndarray:
    """Evaluate ``node`` elementwise over broadcast arrays of variable values."""
    for name in variables(node):
        if name not in binding:
            raise UnboundVariable(name)
    env = _Env(binding)
    for name, arr in env.arrays.items():
        if not np.isfinite(arr).all():
            raise env.fail(f"non-finite value bound to '{name}'", ~np.isfinite(arr))
    with np.errstate(all="ignore"):
        result = _eval(node, env)
    return np.broadcast_to(result, env.shape)


def evaluate(node: Expr, binding: Mapping[str, float]) -> float:
    """Evaluate ``node`` at a single point."""
    return float(evaluate_batch(node, {k: float(v) for k, v in binding.items()}))


# ---------------------------------------------------------------------------
# Differentiation
# ---------------------------------------------------------------------------

def _is(node: Expr, value: float) -> bool:
    return isinstance(node, Const) and node.value == value


def _fold(node: Expr) -> Expr:
    """Replace a variable-free subtree by its value when that value is finite."""
    if isinstance(node, Const) or variables(node):
        return node
    try:
        return Const(evaluate(node, {}))
    except NumericError:
        return node


def add(a: Expr, b: Expr) -> Expr:
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    return _fold(Binary("+", a, b))


def sub(a: Expr, b: Expr) -> Expr:
    if _is(b, 0):
        return a
    if _is(a, 0):
        return neg(b)
    return _fold(Binary("-", a, b))


def mul(a: Expr, b: Expr) -> Expr:
    if _is(a, 0) or _is(b, 0):
        return ZERO
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    return _fold(Binary("*", a, b))


def div(a: Expr, b: Expr) -> Expr:
    if _is(b, 1):
        return a
    if _is(a, 0) and not _is(b, 0):
        return ZERO
    return _fold(Binary("/", a, b))


def power(a: Expr, exponent: float) -> Expr:
    if exponent == 1:
        return a
    if exponent == 0:
        return ONE
    return _fold(Binary("^", a, Const(exponent)))


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.child
    return Unary("neg", a)


def call(op: str, a: Expr) -> Expr:
    return _fold(Unary(op, a))


@singledispatch
def _derive(node, var: str) -> Expr:
    raise TypeError(f"cannot differentiate {type(node).__name__}")


@_derive.register(Const)
def _(node: Const, var: str) -> Expr:
    return ZERO


@_derive.register(Var)
def _(node: Var, var: str) -> Expr:
    return ONE if node.name == var else ZERO


@_derive.register(Unary)
def _(node: Unary, var: str) -> Expr:
    u = node.child
    du = differentiate(u, var)
    if node.op == "neg":
        return neg(du)
    if node.op == "sin":
        return mul(call("cos", u), du)
    if node.op == "cos":
        return mul(neg(call("sin", u)), du)
    if node.op == "exp":
        return mul(call("exp", u), du)
    if node.op == "log":
        return div(du, u)
    return div(du, mul(Const(2.0), call("sqrt", u)))


@_derive.register(Binary)
def _(node: Binary, var: str) -> Expr:
    a, b = node.left, node.right
    da = differentiate(a, var)
    if node.op == "^":
        e = b.value
        return mul(mul(Const(e), power(a, e - 1)), da)
    db = differentiate(b, var)
    if node.op == "+":
        return add(da, db)
    if node.op == "-":
        return sub(da, db)
    if node.op == "*":
        return add(mul(da, b), mul(a, db))
    return div(sub(mul(da, b), mul(a, db)), power(b, 2.0))


@lru_cache(maxsize=4096)
def differentiate(node: Expr, var: str) -> Expr:
    """Exact symbolic derivative of ``node`` with respect to ``var``."""
    if not IDENTIFIER.match(var or ""):
        raise ExprSyntaxError(f"invalid variable name {var!r}", 0)
    if var not in variables(node):
        return ZERO
    return _derive(node, var)


def gradient(node: Expr, names: Sequence[str], point: Sequence[float]) -> np.ndarray:
    """Symbolic gradient of ``node`` over ``names`` evaluated at ``point``."""
    if len(names) != len(point):
        raise ValueError(f"expected {len(names)} coordinates, got {len(point)}")
    binding: Dict[str, float] = dict(zip(names, (float(p) for p in point)))
    return np.array([evaluate(differentiate(node, name), binding) for name in names], dtype=np.float64)


def as_expr(value: Union[str, Expr], field_path: Optional[str] = None) -> Expr:
    """Accept either expression text or an already built tree."""
    if isinstance(value, (Const, Var, Unary, Binary)):
        return value
    try:
        return parse_expression(value)
    except (ExprSyntaxError, NonConstantExponent) as exc:
        if field_path is None:
            raise
        raise exc.at(field_path) from exc
