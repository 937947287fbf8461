"""Closed-form scalar expressions over chart coordinates x1..x9.

Immutable expression trees with exact symbolic partial derivatives, a
recursive-descent parser for the small coefficient grammar, and a code
generator that turns trees into plain Python callables for the numeric
hot paths (transport integration, grid residuals).

Grammar (EBNF):

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := base ('^' factor)?
    base   := number | ident | '(' expr ')' | func '(' expr ')' | '-' base
    func   := 'exp' | 'log' | 'sin' | 'cos' | 'sqrt'
    ident  := 'x1' .. 'x9'

Numbers are decimal literals, optionally with a fractional part and an
exponent (2, 0.5, 1e-3). Unary minus binds at the base level, so
"-x1^2" parses as (-x1)^2.

Nodes are hash-consed: structurally identical subtrees are the same
Python object. Construction goes through the factory functions below
(const, var, add, ...), which also fold constants and drop algebraic
no-ops so that derivative trees stay small. Memoised evaluation and
differentiation then cost one visit per distinct node, which keeps the
large rational trees produced by symbolic matrix inversion tractable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "ScalarExpression",
    "Const",
    "Var",
    "Unary",
    "Binary",
    "FUNCTIONS",
    "ExpressionError",
    "ParseError",
    "UnknownIdentifierError",
    "ArityError",
    "DomainError",
    "const",
    "var",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "pow_",
    "func",
    "parse",
    "evaluate",
    "differentiate",
    "to_string",
    "compile_expr",
    "variables",
    "ZERO",
    "ONE",
]

FUNCTIONS = ("exp", "log", "sin", "cos", "sqrt")
MAX_VARIABLES = 9


class ExpressionError(Exception):
    """Base class for expression failures."""


class ParseError(ExpressionError):
    """Syntax error with the source offset and the tokens that were legal there."""

    def __init__(self, message: str, offset: int, expected: tuple[str, ...] = ()):
        super().__init__(f"{message} (offset {offset})")
        self.message = message
        self.offset = offset
        self.expected = tuple(sorted(expected))


class UnknownIdentifierError(ParseError):
    """Identifier that is neither x1..x9 nor a known function."""


class ArityError(ParseError):
    """Function name used without an argument list."""


class DomainError(ExpressionError):
    """Evaluation left the real domain of some subexpression.

    Carries the offending subtree so callers can report which factor
    divided by zero or took log of a negative number.
    """

    def __init__(self, message: str, node=None, point=None):
        self.node = node
        self.point = None if point is None else tuple(point)
        where = f" in '{to_string(node)}'" if node is not None else ""
        at = f" at {self.point}" if point is not None else ""
        super().__init__(message + where + at)


# ---------------------------------------------------------------------------
# AST nodes (construct only through the factory functions)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScalarExpression:
    """Base node type. Identity comparison is structural equality (hash-consing)."""

    __slots__ = ()


@dataclass(frozen=True, eq=False)
class Const(ScalarExpression):
    __slots__ = ("value",)
    value: float


@dataclass(frozen=True, eq=False)
class Var(ScalarExpression):
    __slots__ = ("index",)
    index: int  # 1-based: x1 .. x9


@dataclass(frozen=True, eq=False)
class Unary(ScalarExpression):
    __slots__ = ("op", "arg")
    op: str  # 'neg' or a function name
    arg: ScalarExpression


@dataclass(frozen=True, eq=False)
class Binary(ScalarExpression):
    __slots__ = ("op", "left", "right")
    op: str  # '+', '-', '*', '/', '^'
    left: ScalarExpression
    right: ScalarExpression


_INTERN: dict = {}


def _intern(key, build):
    node = _INTERN.get(key)
    if node is None:
        node = build()
        _INTERN[key] = node
    return node


def const(value: float) -> Const:
    v = float(value)
    if math.isnan(v):
        raise ValueError("NaN constant is not a valid expression")
    if v == 0.0:
        v = 0.0  # canonicalise -0.0
    return _intern(("c", v), lambda: Const(v))


ZERO = const(0.0)
ONE = const(1.0)


def var(index: int) -> Var:
    if not 1 <= index <= MAX_VARIABLES:
        raise ValueError(f"coordinate index must be 1..{MAX_VARIABLES}, got {index}")
    return _intern(("v", index), lambda: Var(index))


def _is_const(e, value=None):
    return isinstance(e, Const) and (value is None or e.value == value)


def neg(a: ScalarExpression) -> ScalarExpression:
    if _is_const(a):
        return const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return _intern(("u", "neg", id(a)), lambda: Unary("neg", a))


def add(a: ScalarExpression, b: ScalarExpression) -> ScalarExpression:
    if _is_const(a) and _is_const(b):
        return const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return _intern(("b", "+", id(a), id(b)), lambda: Binary("+", a, b))


def sub(a: ScalarExpression, b: ScalarExpression) -> ScalarExpression:
    if _is_const(a) and _is_const(b):
        return const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    if a is b:
        return ZERO
    return _intern(("b", "-", id(a), id(b)), lambda: Binary("-", a, b))


def mul(a: ScalarExpression, b: ScalarExpression) -> ScalarExpression:
    if _is_const(a) and _is_const(b):
        return const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a, -1.0):
        return neg(b)
    if _is_const(b, -1.0):
        return neg(a)
    return _intern(("b", "*", id(a), id(b)), lambda: Binary("*", a, b))


def div(a: ScalarExpression, b: ScalarExpression) -> ScalarExpression:
    if _is_const(b, 1.0):
        return a
    if _is_const(b, -1.0):
        return neg(a)
    if _is_const(a, 0.0):
        # Drops a potential pole of the denominator; fine for the
        # derivative algebra this factory exists for.
        return ZERO
    if _is_const(a) and _is_const(b) and b.value != 0.0:
        return const(a.value / b.value)
    if a is b:
        return ONE
    return _intern(("b", "/", id(a), id(b)), lambda: Binary("/", a, b))


def pow_(a: ScalarExpression, b: ScalarExpression) -> ScalarExpression:
    if _is_const(b, 1.0):
        return a
    if _is_const(b, 0.0):
        return ONE
    if _is_const(a, 1.0):
        return ONE
    if _is_const(a) and _is_const(b):
        try:
            v = a.value ** b.value
        except (ValueError, OverflowError, ZeroDivisionError):
            v = None
        if v is not None and isinstance(v, float) and math.isfinite(v):
            return const(v)
    return _intern(("b", "^", id(a), id(b)), lambda: Binary("^", a, b))


def func(name: str, a: ScalarExpression) -> ScalarExpression:
    if name not in FUNCTIONS:
        raise ValueError(f"unknown function {name!r}")
    if _is_const(a):
        try:
            v = getattr(math, name)(a.value)
        except (ValueError, OverflowError):
            v = None
        if v is not None and math.isfinite(v):
            return const(v)
        # keep the node so evaluation reports the domain error
    return _intern(("u", name, id(a)), lambda: Unary(name, a))


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_NUM_START = set("0123456789.")


def _tokenize(source: str):
    tokens = []
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c in " \t\r\n":
            i += 1
            continue
        if c in "+-*/^()":
            tokens.append((c, c, i))
            i += 1
            continue
        if c in _NUM_START:
            j = i
            while j < n and source[j].isdigit():
                j += 1
            if j < n and source[j] == ".":
                j += 1
                while j < n and source[j].isdigit():
                    j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    j = k
                    while j < n and source[j].isdigit():
                        j += 1
            text = source[i:j]
            try:
                value = float(text)
            except ValueError:
                raise ParseError(f"malformed number {text!r}", i, ("number",))
            tokens.append(("num", value, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(("ident", source[i:j], i))
            i = j
            continue
        raise ParseError(f"unexpected character {c!r}", i, ())
    tokens.append(("eof", None, n))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.pos = 0

    def _peek(self):
        return self.tokens[self.pos]

    def _advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def _expect(self, kind, expected):
        tok = self._peek()
        if tok[0] != kind:
            raise ParseError(f"expected {expected}", tok[2], (expected,))
        return self._advance()

    def parse(self) -> ScalarExpression:
        e = self._expr()
        tok = self._peek()
        if tok[0] != "eof":
            raise ParseError("unexpected trailing input", tok[2], ("end of input",))
        return e

    def _expr(self):
        e = self._term()
        while self._peek()[0] in ("+", "-"):
            op = self._advance()[0]
            rhs = self._term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def _term(self):
        e = self._factor()
        while self._peek()[0] in ("*", "/"):
            op = self._advance()[0]
            rhs = self._factor()
            e = mul(e, rhs) if op == "*" else div(e, rhs)
        return e

    def _factor(self):
        base = self._base()
        if self._peek()[0] == "^":
            self._advance()
            exponent = self._factor()
            return pow_(base, exponent)
        return base

    def _base(self):
        kind, value, offset = self._peek()
        if kind == "num":
            self._advance()
            return const(value)
        if kind == "-":
            self._advance()
            return neg(self._base())
        if kind == "(":
            self._advance()
            e = self._expr()
            self._expect(")", "')'")
            return e
        if kind == "ident":
            self._advance()
            if value in FUNCTIONS:
                if self._peek()[0] != "(":
                    raise ArityError(
                        f"function {value!r} needs an argument list", offset, ("'('",)
                    )
                self._advance()
                arg = self._expr()
                self._expect(")", "')'")
                return func(value, arg)
            if (
                len(value) == 2
                and value[0] == "x"
                and value[1].isdigit()
                and value[1] != "0"
            ):
                return var(int(value[1]))
            raise UnknownIdentifierError(f"unknown identifier {value!r}", offset, ())
        raise ParseError(
            "expected a number, coordinate, function or '('",
            offset,
            ("number", "identifier", "'('", "'-'"),
        )


def parse(source: str) -> ScalarExpression:
    """Parse UTF-8 text in the coefficient grammar into an expression tree."""
    return _Parser(source).parse()


# ---------------------------------------------------------------------------
# Evaluation (iterative walker with per-call memo; reports offending subtree)
# ---------------------------------------------------------------------------


def _check_finite(v: float, node, point):
    if not math.isfinite(v):
        raise DomainError("non-finite value", node, point)
    return v


def evaluate(e: ScalarExpression, point) -> float:
    """Evaluate at a coordinate point (sequence indexed x1 -> point[0]).

    Raises DomainError naming the offending subtree for division by
    zero, log/sqrt outside their domains, fractional powers of negative
    numbers, and overflow.
    """
    memo: dict[int, float] = {}
    stack = [e]
    while stack:
        node = stack[-1]
        key = id(node)
        if key in memo:
            stack.pop()
            continue
        if isinstance(node, Const):
            memo[key] = node.value
            stack.pop()
            continue
        if isinstance(node, Var):
            if node.index > len(point):
                raise DomainError(
                    f"point has {len(point)} coordinates, expression uses x{node.index}",
                    node,
                    point,
                )
            memo[key] = _check_finite(float(point[node.index - 1]), node, point)
            stack.pop()
            continue
        if isinstance(node, Unary):
            aid = id(node.arg)
            if aid not in memo:
                stack.append(node.arg)
                continue
            a = memo[aid]
            if node.op == "neg":
                memo[key] = -a
            elif node.op == "log":
                if a <= 0.0:
                    raise DomainError("log of a non-positive number", node, point)
                memo[key] = math.log(a)
            elif node.op == "sqrt":
                if a < 0.0:
                    raise DomainError("sqrt of a negative number", node, point)
                memo[key] = math.sqrt(a)
            else:  # exp, sin, cos
                try:
                    memo[key] = _check_finite(getattr(math, node.op)(a), node, point)
                except OverflowError:
                    raise DomainError("overflow", node, point) from None
            stack.pop()
            continue
        # Binary
        lid, rid = id(node.left), id(node.right)
        if lid not in memo:
            stack.append(node.left)
            continue
        if rid not in memo:
            stack.append(node.right)
            continue
        a, b = memo[lid], memo[rid]
        op = node.op
        if op == "+":
            v = a + b
        elif op == "-":
            v = a - b
        elif op == "*":
            v = a * b
        elif op == "/":
            if b == 0.0:
                raise DomainError("division by zero", node, point)
            v = a / b
        else:  # '^'
            if a == 0.0 and b < 0.0:
                raise DomainError("zero raised to a negative power", node, point)
            if a < 0.0 and b != math.floor(b):
                raise DomainError(
                    "negative number raised to a fractional power", node, point
                )
            try:
                v = a ** b
            except OverflowError:
                raise DomainError("overflow", node, point) from None
        memo[key] = _check_finite(v, node, point)
        stack.pop()
    return memo[id(e)]


# ---------------------------------------------------------------------------
# Differentiation (memoised structural rules)
# ---------------------------------------------------------------------------

_DIFF_CACHE: dict[tuple[int, int], ScalarExpression] = {}


def differentiate(e: ScalarExpression, i: int) -> ScalarExpression:
    """Exact symbolic partial derivative with respect to x_i (1-based)."""
    if not 1 <= i <= MAX_VARIABLES:
        raise ValueError(f"coordinate index must be 1..{MAX_VARIABLES}, got {i}")
    key = (id(e), i)
    cached = _DIFF_CACHE.get(key)
    if cached is not None:
        return cached
    if isinstance(e, Const):
        d = ZERO
    elif isinstance(e, Var):
        d = ONE if e.index == i else ZERO
    elif isinstance(e, Unary):
        da = differentiate(e.arg, i)
        a = e.arg
        if e.op == "neg":
            d = neg(da)
        elif e.op == "exp":
            d = mul(e, da)
        elif e.op == "log":
            d = div(da, a)
        elif e.op == "sin":
            d = mul(func("cos", a), da)
        elif e.op == "cos":
            d = neg(mul(func("sin", a), da))
        else:  # sqrt
            d = div(da, mul(const(2.0), e))
    else:
        a, b = e.left, e.right
        da = differentiate(a, i)
        if e.op == "+":
            d = add(da, differentiate(b, i))
        elif e.op == "-":
            d = sub(da, differentiate(b, i))
        elif e.op == "*":
            d = add(mul(da, b), mul(a, differentiate(b, i)))
        elif e.op == "/":
            db = differentiate(b, i)
            d = div(sub(mul(da, b), mul(a, db)), mul(b, b))
        else:  # '^'
            if isinstance(b, Const):
                c = b.value
                d = mul(mul(b, pow_(a, const(c - 1.0))), da)
            else:
                # f^g = exp(g log f); valid where f > 0
                db = differentiate(b, i)
                d = mul(e, add(mul(db, func("log", a)), mul(b, div(da, a))))
    _DIFF_CACHE[key] = d
    return d


# ---------------------------------------------------------------------------
# Printing (emits text that reparses to an equivalent expression)
# ---------------------------------------------------------------------------

# precedence: 1 additive, 2 multiplicative, 3 power, 4 base/atom


def _fmt_const(v: float) -> str:
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def to_string(e: ScalarExpression) -> str:
    memo: dict[int, tuple[str, int]] = {}  # id -> (text, precedence)
    stack = [e]
    while stack:
        node = stack[-1]
        key = id(node)
        if key in memo:
            stack.pop()
            continue
        if isinstance(node, Const):
            if node.value < 0:
                memo[key] = ("-" + _fmt_const(-node.value), 4)
            else:
                memo[key] = (_fmt_const(node.value), 4)
            stack.pop()
            continue
        if isinstance(node, Var):
            memo[key] = (f"x{node.index}", 4)
            stack.pop()
            continue
        if isinstance(node, Unary):
            aid = id(node.arg)
            if aid not in memo:
                stack.append(node.arg)
                continue
            text, prec = memo[aid]
            if node.op == "neg":
                # '-' binds at base level; parenthesise non-atoms
                inner = text if prec >= 4 else f"({text})"
                memo[key] = ("-" + inner, 4)
            else:
                memo[key] = (f"{node.op}({text})", 4)
            stack.pop()
            continue
        lid, rid = id(node.left), id(node.right)
        if lid not in memo:
            stack.append(node.left)
            continue
        if rid not in memo:
            stack.append(node.right)
            continue
        lt, lp = memo[lid]
        rt, rp = memo[rid]
        op = node.op
        if op in ("+", "-"):
            left = lt if lp >= 1 else f"({lt})"
            right = rt if rp >= 2 else f"({rt})"  # right operand must be a term
            memo[key] = (f"{left} {op} {right}", 1)
        elif op in ("*", "/"):
            left = lt if lp >= 2 else f"({lt})"
            right = rt if rp >= 3 else f"({rt})"  # right operand must be a factor
            memo[key] = (f"{left}{op}{right}", 2)
        else:  # '^': base must be a base, exponent a factor (right assoc)
            left = lt if lp >= 4 else f"({lt})"
            right = rt if rp >= 3 else f"({rt})"
            memo[key] = (f"{left}^{right}", 3)
        stack.pop()
    return memo[id(e)][0]


# ---------------------------------------------------------------------------
# Compilation to plain Python callables
# ---------------------------------------------------------------------------

_COMPILE_CACHE: dict[int, object] = {}


def _real_pow(a: float, b: float) -> float:
    if a < 0.0 and b != math.floor(b):
        raise ValueError("negative number raised to a fractional power")
    return a ** b


def _topo_order(e: ScalarExpression):
    order, seen = [], set()
    stack = [(e, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if isinstance(node, Unary):
            stack.append((node.arg, False))
        elif isinstance(node, Binary):
            stack.append((node.right, False))
            stack.append((node.left, False))
    return order


def compile_expr(e: ScalarExpression):
    """Compile to a callable f(point) -> float.

    The compiled function raises the usual arithmetic exceptions
    (ZeroDivisionError, ValueError, OverflowError) on domain failures;
    use evaluate() when precise subtree reporting matters. Results are
    cached per node, so repeated compilation is free.
    """
    cached = _COMPILE_CACHE.get(id(e))
    if cached is not None:
        return cached
    order = _topo_order(e)
    names = {id(node): f"t{k}" for k, node in enumerate(order)}
    lines = []
    for node in order:
        name = names[id(node)]
        if isinstance(node, Const):
            lines.append(f"    {name} = {node.value!r}")
        elif isinstance(node, Var):
            # plain floats keep real-arithmetic error semantics (numpy
            # scalars would turn 1/0 into inf) and are faster besides
            lines.append(f"    {name} = float(x[{node.index - 1}])")
        elif isinstance(node, Unary):
            a = names[id(node.arg)]
            if node.op == "neg":
                lines.append(f"    {name} = -{a}")
            else:
                lines.append(f"    {name} = _{node.op}({a})")
        elif node.op == "^":
            a, b = names[id(node.left)], names[id(node.right)]
            if isinstance(node.right, Const) and node.right.value == int(node.right.value):
                lines.append(f"    {name} = {a} ** {b}")
            else:
                lines.append(f"    {name} = _pow({a}, {b})")
        else:
            a, b = names[id(node.left)], names[id(node.right)]
            lines.append(f"    {name} = {a} {node.op} {b}")
    result = names[id(e)]
    src = "def _compiled(x):\n" + "\n".join(lines) + (
        f"\n    if not _isfinite({result}):"
        "\n        raise ValueError('non-finite value')"
        f"\n    return {result}\n"
    )
    namespace = {
        "_exp": math.exp,
        "_log": math.log,
        "_sin": math.sin,
        "_cos": math.cos,
        "_sqrt": math.sqrt,
        "_isfinite": math.isfinite,
        "_pow": _real_pow,
    }
    exec(src, namespace)  # noqa: S102 - source is generated from the AST only
    fn = namespace["_compiled"]
    _COMPILE_CACHE[id(e)] = fn
    return fn


def variables(e: ScalarExpression) -> set[int]:
    """Set of coordinate indices (1-based) the expression mentions."""
    out: set[int] = set()
    for node in _topo_order(e):
        if isinstance(node, Var):
            out.add(node.index)
    return out
