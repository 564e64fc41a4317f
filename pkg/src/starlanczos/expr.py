"""Expressions in the two time variables ``tp`` (left time t') and ``t`` (right time).

Expressions are immutable trees. They are parsed from text, printed back in
the same grammar, evaluated on numpy arrays and differentiated exactly.
Builders fold constants and drop identities (``x + 0``, ``x * 1``, ...);
no other simplification is attempted.
"""

import math
import re

import numpy as np

from .errors import ExprDomainError, ExprSyntaxError, UnknownIdentifierError

VARIABLES = ("tp", "t")
FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")
CONSTANTS = {"pi": math.pi}


class TimeExpr:
    """Base class of expression nodes."""

    __slots__ = ("children", "_hash", "free_vars")
    precedence = 5

    def _setup(self, children, key):
        self.children = children
        self._hash = hash((type(self).__name__, key) + tuple(c._hash for c in children))
        fv = frozenset()
        for c in children:
            fv = fv | c.free_vars
        self.free_vars = fv

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if type(self) is not type(other) or self._hash != other._hash:
            return False
        return self._key() == other._key() and all(
            a == b for a, b in zip(self.children, other.children)
        )

    def _key(self):
        return None

    def __str__(self):
        return to_text(self)

    def __repr__(self):
        return f"TimeExpr({to_text(self)!r})"

    # builders, so that expressions can be combined with ordinary operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __pow__(self, other):
        return power(self, other)

    def __neg__(self):
        return neg(self)


class Const(TimeExpr):
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = float(value)
        self._setup((), self.value)

    def _key(self):
        return self.value

    @property
    def precedence(self):
        return 3 if self.value < 0 else 5


class Var(TimeExpr):
    __slots__ = ("name",)

    def __init__(self, name):
        self.name = name
        self._setup((), name)
        self.free_vars = frozenset([name])

    def _key(self):
        return self.name


class Neg(TimeExpr):
    __slots__ = ()
    precedence = 3

    def __init__(self, arg):
        self._setup((arg,), None)


class _Binary(TimeExpr):
    __slots__ = ()
    symbol = "?"

    def __init__(self, left, right):
        self._setup((left, right), None)


class Add(_Binary):
    __slots__ = ()
    precedence = 1
    symbol = "+"


class Sub(_Binary):
    __slots__ = ()
    precedence = 1
    symbol = "-"


class Mul(_Binary):
    __slots__ = ()
    precedence = 2
    symbol = "*"


class Div(_Binary):
    __slots__ = ()
    precedence = 2
    symbol = "/"


class Pow(_Binary):
    __slots__ = ()
    precedence = 4
    symbol = "^"


class Func(TimeExpr):
    __slots__ = ("name",)

    def __init__(self, name, arg):
        self.name = name
        self._setup((arg,), name)

    def _key(self):
        return self.name


# ---------------------------------------------------------------- builders

def as_expr(x):
    if isinstance(x, TimeExpr):
        return x
    if isinstance(x, str):
        return parse(x)
    return Const(x)


def _const(e):
    return e.value if isinstance(e, Const) else None


def add(a, b):
    a, b = as_expr(a), as_expr(b)
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None:
        return Const(ca + cb)
    if ca == 0.0:
        return b
    if cb == 0.0:
        return a
    return Add(a, b)


def sub(a, b):
    a, b = as_expr(a), as_expr(b)
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None:
        return Const(ca - cb)
    if cb == 0.0:
        return a
    if ca == 0.0:
        return neg(b)
    if a == b:
        return Const(0.0)
    return Sub(a, b)


def mul(a, b):
    a, b = as_expr(a), as_expr(b)
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None:
        return Const(ca * cb)
    if ca == 0.0 or cb == 0.0:
        return Const(0.0)
    if ca == 1.0:
        return b
    if cb == 1.0:
        return a
    if ca == -1.0:
        return neg(b)
    if cb == -1.0:
        return neg(a)
    return Mul(a, b)


def div(a, b):
    a, b = as_expr(a), as_expr(b)
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None and cb != 0.0:
        return Const(ca / cb)
    if ca == 0.0 and cb != 0.0:
        return Const(0.0)
    if cb == 1.0:
        return a
    return Div(a, b)


def power(a, b):
    a, b = as_expr(a), as_expr(b)
    ca, cb = _const(a), _const(b)
    if cb == 0.0:
        return Const(1.0)
    if cb == 1.0:
        return a
    if ca == 1.0:
        return Const(1.0)
    if ca is not None and cb is not None:
        try:
            value = ca ** cb
        except (ZeroDivisionError, OverflowError):
            value = None
        if isinstance(value, float) and math.isfinite(value):
            return Const(value)
    return Pow(a, b)


def neg(a):
    a = as_expr(a)
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.children[0]
    return Neg(a)


_FOLD = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "log": lambda x: math.log(x) if x > 0 else None,
    "sqrt": lambda x: math.sqrt(x) if x >= 0 else None,
}


def func(name, a):
    if name not in FUNCTIONS:
        raise ValueError(f"unknown function {name!r}")
    a = as_expr(a)
    if isinstance(a, Const):
        try:
            value = _FOLD[name](a.value)
        except OverflowError:
            value = None
        if value is not None and math.isfinite(value):
            return Const(value)
    return Func(name, a)


def sin(a):
    return func("sin", a)


def cos(a):
    return func("cos", a)


def exp(a):
    return func("exp", a)


def log(a):
    return func("log", a)


def sqrt(a):
    return func("sqrt", a)


TP = Var("tp")
T = Var("t")


def is_zero(e):
    return isinstance(e, Const) and e.value == 0.0


# ----------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)


def _tokenize(text):
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {text[bad]!r}", _byte_offset(text, bad))
        kind = m.lastgroup
        start = m.start(kind)
        value = m.group(kind)
        if kind == "op" and value == "**":
            value = "^"
        tokens.append((kind, value, start))
        pos = m.end()
    tokens.append(("end", None, n))
    return tokens


def _byte_offset(text, index):
    return len(text[:index].encode("utf-8"))


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, message, tok=None):
        tok = tok or self.peek()
        raise ExprSyntaxError(message, _byte_offset(self.text, tok[2]))

    def expect(self, op):
        tok = self.peek()
        if tok[0] != "op" or tok[1] != op:
            self.fail(f"expected {op!r}")
        return self.take()

    def parse(self):
        e = self.expression()
        if self.peek()[0] != "end":
            self.fail("unexpected token")
        return e

    def expression(self):
        e = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            r = self.term()
            e = Add(e, r) if op == "+" else Sub(e, r)
        return e

    def term(self):
        e = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            r = self.unary()
            e = Mul(e, r) if op == "*" else Div(e, r)
        return e

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] in "+-":
            self.take()
            arg = self.unary()
            if tok[1] == "+":
                return arg
            if isinstance(arg, Const):
                return Const(-arg.value)
            return Neg(arg)
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return Pow(base, self.unary())
        return base

    def atom(self):
        tok = self.take()
        kind, value, _ = tok
        if kind == "num":
            return Const(float(value))
        if kind == "name":
            if value in VARIABLES:
                return Var(value)
            if value in CONSTANTS:
                return Const(CONSTANTS[value])
            if value in FUNCTIONS:
                self.expect("(")
                arg = self.expression()
                self.expect(")")
                return Func(value, arg)
            raise UnknownIdentifierError(
                f"unknown identifier {value!r}", _byte_offset(self.text, tok[2])
            )
        if kind == "op" and value == "(":
            e = self.expression()
            self.expect(")")
            return e
        if kind == "end":
            self.fail("unexpected end of input", tok)
        self.fail(f"unexpected token {value!r}", tok)


def parse(text):
    """Parse expression text into a TimeExpr.

    Grammar: ``+ - * /``, ``^`` (or ``**``, right associative), unary minus,
    parentheses, numbers, the variables ``tp`` and ``t``, the constant
    ``pi`` and the functions sin, cos, exp, log, sqrt.

    Raises
    ------
    ExprSyntaxError
        With ``offset`` set to the byte offset of the fault.
    """
    if not isinstance(text, str) or text.strip() == "":
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(text).parse()


# ---------------------------------------------------------------- printing

def _number_text(v):
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def to_text(e):
    """Canonical text of an expression; ``parse(to_text(e)) == e`` for parsed trees."""
    if isinstance(e, Const):
        return _number_text(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Func):
        return f"{e.name}({to_text(e.children[0])})"
    if isinstance(e, Neg):
        arg = e.children[0]
        inner = to_text(arg)
        if arg.precedence < 3:
            inner = f"({inner})"
        return f"-{inner}"
    left, right = e.children
    p = e.precedence
    lt, rt = to_text(left), to_text(right)
    if isinstance(e, Pow):
        if left.precedence <= 4:
            lt = f"({lt})"
        if right.precedence < 4:
            rt = f"({rt})"
        return f"{lt}^{rt}"
    if left.precedence < p:
        lt = f"({lt})"
    if right.precedence <= p:
        rt = f"({rt})"
    return f"{lt} {e.symbol} {rt}"


# -------------------------------------------------------------- evaluation

def evaluate(e, tp, t, strict=True):
    """Evaluate ``e`` at ``(tp, t)``; scalars or broadcastable arrays.

    With ``strict`` a domain fault raises ExprDomainError naming the
    sub-expression; otherwise faulty points come back as NaN.
    """
    tp_arr = np.asarray(tp, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    shape = np.broadcast_shapes(tp_arr.shape, t_arr.shape)
    memo = {}
    with np.errstate(all="ignore"):
        out = _eval(e, tp_arr, t_arr, memo, strict)
    out = np.broadcast_to(np.asarray(out, dtype=float), shape)
    if shape == ():
        return float(out)
    return np.array(out)


def _fault(strict, mask, message, node):
    if strict and np.any(mask):
        raise ExprDomainError(message, to_text(node))


def _eval(e, tp, t, memo, strict):
    key = id(e)
    if key in memo:
        return memo[key]
    if isinstance(e, Const):
        r = e.value
    elif isinstance(e, Var):
        r = tp if e.name == "tp" else t
    else:
        args = [_eval(c, tp, t, memo, strict) for c in e.children]
        if isinstance(e, Neg):
            r = -args[0]
        elif isinstance(e, Add):
            r = args[0] + args[1]
        elif isinstance(e, Sub):
            r = args[0] - args[1]
        elif isinstance(e, Mul):
            r = args[0] * args[1]
        elif isinstance(e, Div):
            den = np.asarray(args[1])
            _fault(strict, den == 0, "division by zero", e)
            r = np.where(den == 0, np.nan, args[0] / np.where(den == 0, 1.0, den))
        elif isinstance(e, Pow):
            base, ex = np.asarray(args[0]), np.asarray(args[1])
            integral = ex == np.round(ex)
            bad = ((base < 0) & ~integral) | ((base == 0) & (ex < 0))
            _fault(strict, bad, "power outside its domain", e)
            r = np.where(bad, np.nan, np.power(np.where(bad, 1.0, base), ex))
        elif isinstance(e, Func):
            x = np.asarray(args[0])
            if e.name == "sin":
                r = np.sin(x)
            elif e.name == "cos":
                r = np.cos(x)
            elif e.name == "exp":
                r = np.exp(x)
            elif e.name == "log":
                _fault(strict, x <= 0, "log of a non-positive value", e)
                r = np.where(x <= 0, np.nan, np.log(np.where(x <= 0, 1.0, x)))
            else:
                _fault(strict, x < 0, "sqrt of a negative value", e)
                r = np.where(x < 0, np.nan, np.sqrt(np.where(x < 0, 0.0, x)))
        else:
            raise TypeError(f"not an expression node: {e!r}")
    memo[key] = r
    return r


# --------------------------------------------------------- differentiation

def differentiate(e, var, order=1):
    """Exact derivative of ``e`` of the given order with respect to ``var``."""
    if var not in VARIABLES:
        raise ValueError(f"unknown variable {var!r}")
    if order < 0:
        raise ValueError("order must be non-negative")
    e = as_expr(e)
    for _ in range(order):
        e = _diff(e, var, {})
    return e


def _diff(e, var, memo):
    if var not in e.free_vars:
        return Const(0.0)
    key = id(e)
    if key in memo:
        return memo[key]
    if isinstance(e, Var):
        r = Const(1.0)
    elif isinstance(e, Neg):
        r = neg(_diff(e.children[0], var, memo))
    elif isinstance(e, Add):
        r = add(_diff(e.children[0], var, memo), _diff(e.children[1], var, memo))
    elif isinstance(e, Sub):
        r = sub(_diff(e.children[0], var, memo), _diff(e.children[1], var, memo))
    elif isinstance(e, Mul):
        a, b = e.children
        r = add(mul(_diff(a, var, memo), b), mul(a, _diff(b, var, memo)))
    elif isinstance(e, Div):
        a, b = e.children
        da, db = _diff(a, var, memo), _diff(b, var, memo)
        r = sub(div(da, b), div(mul(a, db), power(b, 2)))
    elif isinstance(e, Pow):
        u, v = e.children
        du = _diff(u, var, memo)
        if var not in v.free_vars:
            r = mul(mul(v, power(u, sub(v, 1))), du)
        elif var not in u.free_vars:
            r = mul(mul(e, log(u)), _diff(v, var, memo))
        else:
            dv = _diff(v, var, memo)
            r = mul(e, add(mul(dv, log(u)), div(mul(v, du), u)))
    elif isinstance(e, Func):
        u = e.children[0]
        du = _diff(u, var, memo)
        if e.name == "sin":
            r = mul(cos(u), du)
        elif e.name == "cos":
            r = neg(mul(sin(u), du))
        elif e.name == "exp":
            r = mul(e, du)
        elif e.name == "log":
            r = div(du, u)
        else:
            r = div(du, mul(2, e))
    else:
        raise TypeError(f"not an expression node: {e!r}")
    memo[key] = r
    return r


def substitute(e, mapping):
    """Replace variables by expressions, e.g. ``{"t": TP}`` restricts to the diagonal."""
    mapping = {k: as_expr(v) for k, v in mapping.items()}
    memo = {}

    def walk(node):
        if not (node.free_vars & mapping.keys()):
            return node
        key = id(node)
        if key in memo:
            return memo[key]
        if isinstance(node, Var):
            r = mapping[node.name]
        elif isinstance(node, Neg):
            r = neg(walk(node.children[0]))
        elif isinstance(node, Func):
            r = func(node.name, walk(node.children[0]))
        else:
            a, b = (walk(c) for c in node.children)
            r = {Add: add, Sub: sub, Mul: mul, Div: div, Pow: power}[type(node)](a, b)
        memo[key] = r
        return r

    return walk(e)


def diagonal(e):
    """The single-variable function s -> e(s, s), written in ``tp``."""
    return substitute(e, {"t": TP})


def as_left_variable(e):
    """Bind a one-variable expression to the left time.

    A function of a single time is treated as a function of t'; expressions
    written in ``t`` alone are rewritten in ``tp``.
    """
    e = as_expr(e)
    if "tp" in e.free_vars and "t" in e.free_vars:
        raise ValueError(f"expected a function of one time variable, got '{e}'")
    if "t" in e.free_vars:
        return substitute(e, {"t": TP})
    return e
