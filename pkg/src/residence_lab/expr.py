"""Arithmetic expression DSL for drift, diffusion and certificate functions.

Expressions are written over the time variable ``t``, state variables
``x1..xn`` and named constants, with binary operators ``+ - * / ^``
(``^`` right-associative, binding tighter than unary minus), unary minus,
and the functions ``sin cos exp log sqrt abs min max pow``.

Grammar (EBNF, also in docs/grammar.md)::

    expr    = term { ("+" | "-") term } ;
    term    = factor { ("*" | "/") factor } ;
    factor  = "-" factor | power ;
    power   = atom [ "^" factor ] ;
    atom    = number | identifier | identifier "(" expr { "," expr } ")"
            | "(" expr ")" ;

so ``-x1^2`` parses as ``-(x1^2)`` and ``2^3^2`` as ``2^(3^2)``.

Evaluation accepts scalars or numpy arrays for ``t`` and the state
variables and reports domain violations (log of a nonpositive value, sqrt
of a negative, division by zero, fractional powers of negatives, overflow)
as :class:`EvalDomainError` instead of propagating NaN/inf.
"""

import math
import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Expr", "Num", "Var", "Neg", "Bin", "Call",
    "ExprError", "ParseError", "EvalDomainError",
    "parse", "eval_expr", "eval_relaxed", "grad_hess", "to_source",
]

_FUNCTIONS = {
    "sin": 1, "cos": 1, "exp": 1, "log": 1, "sqrt": 1, "abs": 1,
    "min": 2, "max": 2, "pow": 2,
}

_VAR_RE = re.compile(r"x([1-9][0-9]*)$")


class ExprError(Exception):
    """Base class for expression failures."""


class ParseError(ExprError):
    def __init__(self, message, position, expected=()):
        super().__init__(f"{message} at offset {position}")
        self.position = position
        self.expected = tuple(expected)


class EvalDomainError(ExprError):
    def __init__(self, message, t=None, x=None, kind="domain"):
        if t is not None:
            message = f"{message} (at t={t!r}, x={x!r})"
        super().__init__(message)
        self.t = t
        self.x = x
        self.kind = kind  # "domain" or "overflow"


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class Bin:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Expr = (Num, Var, Neg, Bin, Call)


# ---------------------------------------------------------------------------
# Tokenizer / parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][+-]?[0-9]+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(source):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            stripped = source[pos:].lstrip()
            if not stripped:
                break
            at = len(source) - len(stripped)
            raise ParseError(f"unexpected character {stripped[0]!r}", at,
                             expected=("number", "identifier", "operator"))
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


# Binding powers: +,- = 10; *,/ = 20; unary minus = 25; ^ = 30 (right-assoc).
_BIN_BP = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 30}
_UNARY_BP = 25


class _Parser:
    def __init__(self, tokens, dim, constants):
        self.tokens = tokens
        self.i = 0
        self.dim = dim
        self.constants = frozenset(constants)
        self.max_index = 0
        self.used_constants = set()

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, text, pos = self.peek()
        if kind != "op" or text != op:
            raise ParseError(f"expected {op!r}, found {text or 'end of input'!r}",
                             pos, expected=(op,))
        return self.advance()

    def parse_expression(self, min_bp=0):
        node = self.parse_prefix()
        while True:
            kind, text, pos = self.peek()
            if kind != "op" or text not in _BIN_BP:
                break
            bp = _BIN_BP[text]
            if bp <= min_bp:
                break
            self.advance()
            # right-associative ^ parses its right side at bp-1
            rhs_bp = bp - 1 if text == "^" else bp
            right = self.parse_expression(rhs_bp)
            node = Bin(text, node, right)
        return node

    def parse_prefix(self):
        kind, text, pos = self.advance()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            nkind, ntext, _ = self.peek()
            if nkind == "op" and ntext == "(":
                return self.parse_call(text, pos)
            return self.resolve_name(text, pos)
        if kind == "op" and text == "-":
            return Neg(self.parse_expression(_UNARY_BP))
        if kind == "op" and text == "+":
            return self.parse_expression(_UNARY_BP)
        if kind == "op" and text == "(":
            node = self.parse_expression(0)
            self.expect_op(")")
            return node
        raise ParseError(f"unexpected {text or 'end of input'!r}", pos,
                         expected=("number", "identifier", "(", "-"))

    def parse_call(self, name, pos):
        if name not in _FUNCTIONS:
            raise ParseError(f"unknown function {name!r}", pos,
                             expected=tuple(sorted(_FUNCTIONS)))
        self.expect_op("(")
        args = [self.parse_expression(0)]
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text == ",":
                self.advance()
                args.append(self.parse_expression(0))
            else:
                break
        self.expect_op(")")
        arity = _FUNCTIONS[name]
        if len(args) != arity:
            raise ParseError(f"{name} takes {arity} argument(s), got {len(args)}", pos)
        return Call(name, tuple(args))

    def resolve_name(self, name, pos):
        if name == "t":
            return Var("t")
        m = _VAR_RE.match(name)
        if m:
            index = int(m.group(1))
            if self.dim is not None and index > self.dim:
                raise ParseError(
                    f"state variable {name!r} exceeds declared dimension {self.dim}", pos)
            self.max_index = max(self.max_index, index)
            return Var(name)
        if name in self.constants:
            self.used_constants.add(name)
            return Var(name)
        raise ParseError(f"unknown identifier {name!r}", pos,
                         expected=("t", "x<k>") + tuple(sorted(self.constants)))


def parse(source, dim=None, constants=()):
    """Parse ``source`` into an expression tree.

    Parameters
    ----------
    source : str
        Expression text.
    dim : int, optional
        Declared state dimension; references to ``x<k>`` with k > dim are
        rejected.  When omitted, the arity is inferred from the largest
        index used.
    constants : iterable of str, optional
        Named constants allowed to appear; anything else is an unknown
        identifier.

    Returns
    -------
    expr : Expr node
    """
    if not source or not source.strip():
        raise ParseError("empty expression", 0)
    parser = _Parser(_tokenize(source), dim, constants)
    node = parser.parse_expression(0)
    kind, text, pos = parser.peek()
    if kind != "end":
        raise ParseError(f"trailing input {text!r}", pos, expected=("end of input",))
    return node


def arity(e):
    """Largest state-variable index referenced by ``e`` (0 if none)."""
    if isinstance(e, Var):
        m = _VAR_RE.match(e.name)
        return int(m.group(1)) if m else 0
    if isinstance(e, Neg):
        return arity(e.operand)
    if isinstance(e, Bin):
        return max(arity(e.left), arity(e.right))
    if isinstance(e, Call):
        return max((arity(a) for a in e.args), default=0)
    return 0


def constants_used(e):
    """Set of named constants referenced by ``e``."""
    if isinstance(e, Var):
        if e.name != "t" and not _VAR_RE.match(e.name):
            return {e.name}
        return set()
    if isinstance(e, Neg):
        return constants_used(e.operand)
    if isinstance(e, Bin):
        return constants_used(e.left) | constants_used(e.right)
    if isinstance(e, Call):
        out = set()
        for a in e.args:
            out |= constants_used(a)
        return out
    return set()


# ---------------------------------------------------------------------------
# Pretty printer (round-trip stable)
# ---------------------------------------------------------------------------

def _prec(e):
    if isinstance(e, Bin):
        return _BIN_BP[e.op]
    if isinstance(e, Neg):
        return _UNARY_BP
    return 100


def to_source(e):
    """Render ``e`` as text; ``parse(to_source(e))`` returns an equal tree."""
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        inner = to_source(e.operand)
        if _prec(e.operand) < _UNARY_BP:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, Call):
        return f"{e.func}({', '.join(to_source(a) for a in e.args)})"
    if isinstance(e, Bin):
        op, bp = e.op, _BIN_BP[e.op]
        left = to_source(e.left)
        right = to_source(e.right)
        if op == "^":
            # right-associative: parenthesise left at equal precedence
            if _prec(e.left) <= bp:
                left = f"({left})"
            if _prec(e.right) < bp:
                right = f"({right})"
        else:
            if _prec(e.left) < bp:
                left = f"({left})"
            # -, / are left-associative: parenthesise right at equal precedence
            if _prec(e.right) < bp or (_prec(e.right) == bp and op in ("-", "/")):
                right = f"({right})"
            if op in ("+", "*") and _prec(e.right) == bp:
                right = f"({right})"
        return f"{left} {op} {right}"
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _check_finite(value, what, t, x):
    if isinstance(value, np.ndarray):
        if not np.all(np.isfinite(value)):
            raise EvalDomainError(f"overflow in {what}", t, x, kind="overflow")
    elif not math.isfinite(value):
        raise EvalDomainError(f"overflow in {what}", t, x, kind="overflow")
    return value


def _is_integer_valued(v):
    if isinstance(v, np.ndarray):
        return np.all(v == np.floor(v))
    return float(v) == math.floor(v)


def eval_expr(e, t, x, constants=None):
    """Evaluate ``e`` at time ``t`` and state ``x``.

    ``t`` may be a scalar or array; ``x`` is a sequence whose k-th entry is
    the value of ``x{k+1}`` (scalars or arrays of a common shape).  Named
    constants are looked up in ``constants``.  Domain violations raise
    :class:`EvalDomainError`.
    """
    env = {} if constants is None else constants
    with np.errstate(all="ignore"):
        return _eval(e, t, x, env)


def _eval(e, t, x, env):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        name = e.name
        if name == "t":
            return t
        m = _VAR_RE.match(name)
        if m:
            index = int(m.group(1))
            if index > len(x):
                raise EvalDomainError(
                    f"state variable {name} out of range for dimension {len(x)}", t, x)
            return x[index - 1]
        try:
            return env[name]
        except KeyError:
            raise EvalDomainError(f"undefined constant {name!r}", t, x) from None
    if isinstance(e, Neg):
        return -_eval(e.operand, t, x, env)
    if isinstance(e, Bin):
        a = _eval(e.left, t, x, env)
        b = _eval(e.right, t, x, env)
        op = e.op
        if op == "+":
            return _check_finite(a + b, "+", t, x)
        if op == "-":
            return _check_finite(a - b, "-", t, x)
        if op == "*":
            return _check_finite(a * b, "*", t, x)
        if op == "/":
            if np.any(b == 0):
                raise EvalDomainError("division by zero", t, x)
            return _check_finite(a / b, "/", t, x)
        return _pow(a, b, t, x)
    if isinstance(e, Call):
        args = [_eval(a, t, x, env) for a in e.args]
        return _call(e.func, args, t, x)
    raise TypeError(f"not an expression node: {e!r}")


def _pow(a, b, t, x):
    if not _is_integer_valued(b):
        if np.any(np.asarray(a) < 0):
            raise EvalDomainError("fractional power of a negative base", t, x)
    if np.any(np.asarray(b) < 0) and np.any(np.asarray(a) == 0):
        raise EvalDomainError("zero raised to a negative power", t, x)
    return _check_finite(np.power(np.asarray(a, dtype=float), b)
                         if isinstance(a, np.ndarray) or isinstance(b, np.ndarray)
                         else float(a) ** float(b), "^", t, x)


def _call(func, args, t, x):
    a = args[0]
    if func == "sin":
        return np.sin(a)
    if func == "cos":
        return np.cos(a)
    if func == "exp":
        return _check_finite(np.exp(a), "exp", t, x)
    if func == "log":
        if np.any(np.asarray(a) <= 0):
            raise EvalDomainError("log of a nonpositive value", t, x)
        return np.log(a)
    if func == "sqrt":
        if np.any(np.asarray(a) < 0):
            raise EvalDomainError("sqrt of a negative value", t, x)
        return np.sqrt(a)
    if func == "abs":
        return np.abs(a)
    b = args[1]
    if func == "min":
        return np.minimum(a, b)
    if func == "max":
        return np.maximum(a, b)
    if func == "pow":
        return _pow(a, b, t, x)
    raise EvalDomainError(f"unknown function {func!r}", t, x)


def eval_relaxed(e, t, x, constants=None):
    """Evaluate ``e`` with plain IEEE semantics: no domain checks, NaN and
    inf propagate silently.

    Used by the vectorised path engines, where a single bad path must not
    abort the batch: non-finite states there are mapped to escape status.
    """
    env = {} if constants is None else constants
    with np.errstate(all="ignore"):
        return _eval_relaxed(e, t, x, env)


def _eval_relaxed(e, t, x, env):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        name = e.name
        if name == "t":
            return t
        m = _VAR_RE.match(name)
        if m:
            return x[int(m.group(1)) - 1]
        return env[name]
    if isinstance(e, Neg):
        return -_eval_relaxed(e.operand, t, x, env)
    if isinstance(e, Bin):
        a = _eval_relaxed(e.left, t, x, env)
        b = _eval_relaxed(e.right, t, x, env)
        op = e.op
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            return np.divide(a, b)
        return np.power(np.asarray(a, dtype=float), b)
    if isinstance(e, Call):
        args = [_eval_relaxed(a, t, x, env) for a in e.args]
        func = e.func
        a = np.asarray(args[0], dtype=float)
        if func == "sin":
            return np.sin(a)
        if func == "cos":
            return np.cos(a)
        if func == "exp":
            return np.exp(a)
        if func == "log":
            return np.log(a)
        if func == "sqrt":
            return np.sqrt(a)
        if func == "abs":
            return np.abs(a)
        b = args[1]
        if func == "min":
            return np.minimum(a, b)
        if func == "max":
            return np.maximum(a, b)
        if func == "pow":
            return np.power(a, b)
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# Finite-difference derivatives
# ---------------------------------------------------------------------------

def _fd_step(value, h):
    if h is not None:
        return h
    return max(1e-5, 1e-5 * abs(float(value)))


def grad_hess(e, t, x, h=None, constants=None):
    """Value, gradient, Hessian and time derivative of ``e`` at ``(t, x)``.

    Central finite differences, O(h^2) accurate; the Hessian is symmetrised
    as (H + H^T)/2.  The step is ``h`` when given, otherwise
    ``max(1e-5, 1e-5*|x_i|)`` per coordinate.

    Returns
    -------
    value : float
    grad : ndarray, shape (n,)
    hess : ndarray, shape (n, n)
    dt : float
        Central-difference time derivative.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    ev = lambda tt, xx: float(eval_expr(e, tt, xx, constants))
    value = ev(t, x)

    steps = np.array([_fd_step(x[i], h) for i in range(n)])
    grad = np.zeros(n)
    hess = np.zeros((n, n))

    plus = np.empty(n)
    minus = np.empty(n)
    for i in range(n):
        xp = x.copy(); xp[i] += steps[i]
        xm = x.copy(); xm[i] -= steps[i]
        plus[i] = ev(t, xp)
        minus[i] = ev(t, xm)
        grad[i] = (plus[i] - minus[i]) / (2.0 * steps[i])
        hess[i, i] = (plus[i] - 2.0 * value + minus[i]) / steps[i] ** 2

    for i in range(n):
        for j in range(i + 1, n):
            xpp = x.copy(); xpp[i] += steps[i]; xpp[j] += steps[j]
            xpm = x.copy(); xpm[i] += steps[i]; xpm[j] -= steps[j]
            xmp = x.copy(); xmp[i] -= steps[i]; xmp[j] += steps[j]
            xmm = x.copy(); xmm[i] -= steps[i]; xmm[j] -= steps[j]
            hess[i, j] = (ev(t, xpp) - ev(t, xpm) - ev(t, xmp) + ev(t, xmm)) \
                / (4.0 * steps[i] * steps[j])
            hess[j, i] = hess[i, j]

    hess = 0.5 * (hess + hess.T)

    ht = _fd_step(t, h)
    dt = (ev(t + ht, x) - ev(t - ht, x)) / (2.0 * ht)
    return value, grad, hess, dt
