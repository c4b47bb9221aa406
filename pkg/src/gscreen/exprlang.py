"""Closed-form scalar expressions with exact first and second derivatives.

Expressions are written in the variables ``x1..xm``, ``y1..yn`` and ``z``::

    >>> e = parse("x1*y1 - z")
    >>> e.variables
    ('x1', 'y1', 'z')
    >>> jet = eval_jet2(e, [2.0, 3.0, 1.0])
    >>> jet.value, jet.gradient.tolist()
    (5.0, [3.0, 2.0, -1.0])

Values and derivatives are computed by forward-mode propagation of second
order jets, vectorized over a leading batch axis.  Derivatives of order three
and four are obtained by central differences of the exact Hessians
(:func:`eval_deriv_fd`).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import ArityError, DomainError, ExprSyntaxError, NonFinite, UnknownVariable

__all__ = [
    "Expr",
    "Jet2",
    "parse",
    "eval_jet2",
    "eval_deriv_fd",
    "canonical_variables",
    "FUNCTIONS",
]

FUNCTIONS = ("exp", "log", "sqrt", "sin", "cos", "abs")

_VAR_RE = re.compile(r"^(?:[xy][1-9][0-9]*|z)$")


# --------------------------------------------------------------------------
# syntax tree


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple


Node = Union[Num, Var, Neg, BinOp, Call]

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}
_ATOM = 5


def _prec(node):
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC["neg"]
    return _ATOM


def _fmt_num(v):
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def _to_source(node):
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.fn}({', '.join(_to_source(a) for a in node.args)})"
    if isinstance(node, Neg):
        inner = _to_source(node.arg)
        # keep "--x" from reading as one token in other tools
        if _prec(node.arg) < _PREC["neg"] or isinstance(node.arg, Neg):
            inner = f"({inner})"
        return f"-{inner}"
    p = _PREC[node.op]
    left, right = _to_source(node.left), _to_source(node.right)
    if node.op == "^":
        if _prec(node.left) <= p:
            left = f"({left})"
        if _prec(node.right) < p:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(node.left) < p:
        left = f"({left})"
    if _prec(node.right) <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}"


def _walk(node):
    yield node
    if isinstance(node, Neg):
        yield from _walk(node.arg)
    elif isinstance(node, BinOp):
        yield from _walk(node.left)
        yield from _walk(node.right)
    elif isinstance(node, Call):
        for a in node.args:
            yield from _walk(a)


# --------------------------------------------------------------------------
# tokenizer and recursive-descent parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


def _tokenize(source):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("eof", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source):
        self.tokens = _tokenize(source)
        self.i = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def advance(self):
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, text):
        kind, value, pos = self.tok
        if value != text or kind == "eof":
            found = "end of input" if kind == "eof" else repr(value)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", pos)
        return self.advance()

    def parse(self):
        node = self.expr()
        kind, value, pos = self.tok
        if kind != "eof":
            raise ExprSyntaxError(f"unexpected {value!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.tok[1] in ("+", "-") and self.tok[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.tok[1] in ("*", "/") and self.tok[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.tok[0] == "op" and self.tok[1] == "-":
            self.advance()
            return Neg(self.unary())
        if self.tok[0] == "op" and self.tok[1] == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.tok[0] == "op" and self.tok[1] == "^":
            self.advance()
            # right associative: a^b^c == a^(b^c)
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, value, pos = self.tok
        if kind == "num":
            self.advance()
            return Num(float(value))
        if kind == "name":
            self.advance()
            if self.tok[1] == "(" and self.tok[0] == "op":
                if value not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {value!r}", pos)
                self.advance()
                args = [self.expr()]
                while self.tok[1] == "," and self.tok[0] == "op":
                    self.advance()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != 1:
                    raise ArityError(f"{value}() takes 1 argument, got {len(args)} (at offset {pos})")
                return Call(value, tuple(args))
            if value in FUNCTIONS:
                raise ExprSyntaxError(f"function {value!r} needs an argument list", pos)
            return _VarAt(value, pos)
        if kind == "op" and value == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "eof" else repr(value)
        raise ExprSyntaxError(f"unexpected {found}", pos)


@dataclass(frozen=True)
class _VarAt(Var):
    # parser-only subclass remembering where the name appeared
    offset: int = field(default=0, compare=False)

    def __init__(self, name, offset):
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "offset", offset)


def _strip_offsets(node):
    if isinstance(node, Var):
        return Var(node.name)
    if isinstance(node, Neg):
        return Neg(_strip_offsets(node.arg))
    if isinstance(node, BinOp):
        return BinOp(node.op, _strip_offsets(node.left), _strip_offsets(node.right))
    if isinstance(node, Call):
        return Call(node.fn, tuple(_strip_offsets(a) for a in node.args))
    return node


def _var_key(name):
    if name == "z":
        return (2, 0)
    return (0 if name[0] == "x" else 1, int(name[1:]))


def canonical_variables(m, n):
    """Variable names ``(x1..xm, y1..yn, z)`` in their canonical order."""
    return tuple([f"x{i + 1}" for i in range(m)] + [f"y{j + 1}" for j in range(n)] + ["z"])


# --------------------------------------------------------------------------
# jets


@dataclass
class Jet2:
    """Value, gradient and Hessian of an expression at one point or a batch.

    For a single point ``value`` is a float, ``gradient`` has shape ``(k,)``
    and ``hessian`` ``(k, k)``; for a batch of ``B`` points a leading axis of
    length ``B`` is added to each.
    """

    value: np.ndarray
    gradient: np.ndarray
    hessian: np.ndarray


class _J:
    """Batch jet used internally: v (B,), g (B,k), h (B,k,k) or None."""

    __slots__ = ("v", "g", "h")

    def __init__(self, v, g, h):
        self.v, self.g, self.h = v, g, h


def _outer(a, b):
    return a[:, :, None] * b[:, None, :]


def _chain(a, f, f1, f2):
    g = f1[:, None] * a.g
    h = None
    if a.h is not None:
        h = f1[:, None, None] * a.h + f2[:, None, None] * _outer(a.g, a.g)
    return _J(f, g, h)


def _add(a, b, sign=1.0):
    h = None if a.h is None else (a.h + b.h if sign > 0 else a.h - b.h)
    if sign > 0:
        return _J(a.v + b.v, a.g + b.g, h)
    return _J(a.v - b.v, a.g - b.g, h)


def _mul(a, b):
    g = a.v[:, None] * b.g + b.v[:, None] * a.g
    h = None
    if a.h is not None:
        h = a.v[:, None, None] * b.h + b.v[:, None, None] * a.h + (_outer(a.g, b.g) + _outer(b.g, a.g))
    return _J(a.v * b.v, g, h)


def _recip(a):
    v = a.v
    if np.any(v == 0.0):
        raise DomainError("division by zero")
    inv = 1.0 / v
    return _chain(a, inv, -inv * inv, 2.0 * inv * inv * inv)


def _powc(a, p):
    v = a.v
    if p == 0.0:
        return _J(np.ones_like(v), np.zeros_like(a.g), None if a.h is None else np.zeros_like(a.h))
    if p == 1.0:
        return a
    integral = p == int(p)
    if integral:
        ip = int(p)
        if ip < 0 and np.any(v == 0.0):
            raise DomainError("zero raised to a negative power")
        f = v**ip
        f1 = ip * v ** (ip - 1) if ip != 1 else np.ones_like(v)
        if ip == 2:
            f2 = np.full_like(v, 2.0)
        else:
            f2 = ip * (ip - 1) * v ** (ip - 2)
        return _chain(a, f, f1, f2)
    if np.any(v <= 0.0):
        raise DomainError(f"non-integer power {p} of a non-positive base")
    f = v**p
    return _chain(a, f, p * v ** (p - 1.0), p * (p - 1.0) * v ** (p - 2.0))


def _apply(fn, a):
    v = a.v
    if fn == "exp":
        e = np.exp(v)
        return _chain(a, e, e, e)
    if fn == "log":
        if np.any(v <= 0.0):
            raise DomainError("log of a non-positive number")
        inv = 1.0 / v
        return _chain(a, np.log(v), inv, -inv * inv)
    if fn == "sqrt":
        if np.any(v < 0.0):
            raise DomainError("sqrt of a negative number")
        s = np.sqrt(v)
        with np.errstate(divide="ignore"):
            f1 = 0.5 / s
            f2 = -0.25 / (s * v)
        return _chain(a, s, f1, f2)
    if fn == "sin":
        return _chain(a, np.sin(v), np.cos(v), -np.sin(v))
    if fn == "cos":
        return _chain(a, np.cos(v), -np.sin(v), -np.cos(v))
    if fn == "abs":
        return _chain(a, np.abs(v), np.sign(v), np.zeros_like(v))
    raise AssertionError(fn)


# --------------------------------------------------------------------------
# plain value evaluation


def _val(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -_val(node.arg, env)
    if isinstance(node, Call):
        v = _val(node.args[0], env)
        fn = node.fn
        if fn == "log":
            if np.any(np.asarray(v) <= 0.0):
                raise DomainError("log of a non-positive number")
            return np.log(v)
        if fn == "sqrt":
            if np.any(np.asarray(v) < 0.0):
                raise DomainError("sqrt of a negative number")
            return np.sqrt(v)
        return getattr(np, fn)(v)
    a = _val(node.left, env)
    op = node.op
    if op == "^" and _is_constant(node.right):
        p = _val(node.right, {})
        if p != int(p):
            if np.any(np.asarray(a) <= 0.0):
                raise DomainError(f"non-integer power {p} of a non-positive base")
        elif p < 0 and np.any(np.asarray(a) == 0.0):
            raise DomainError("zero raised to a negative power")
        return np.power(a, int(p) if p == int(p) else p) if not np.isscalar(a) else a ** (int(p) if p == int(p) else p)
    b = _val(node.right, env)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if np.any(np.asarray(b) == 0.0):
            raise DomainError("division by zero")
        return a / b
    if np.any(np.asarray(a) <= 0.0):
        raise DomainError("variable exponent requires a positive base")
    return np.exp(b * np.log(a))


def _is_constant(node):
    return not any(isinstance(n, Var) for n in _walk(node))


# --------------------------------------------------------------------------
# the public expression type


class Expr:
    """A parsed expression over an ordered tuple of declared variables."""

    def __init__(self, root, variables):
        self.root = root
        self.variables = tuple(variables)
        self._index = {name: i for i, name in enumerate(self.variables)}
        missing = sorted(self.referenced() - set(self.variables), key=_var_key)
        if missing:
            raise UnknownVariable(missing[0])

    def __str__(self):
        return _to_source(self.root)

    def __repr__(self):
        return f"Expr({str(self)!r}, variables={self.variables})"

    def __eq__(self, other):
        return isinstance(other, Expr) and self.root == other.root and self.variables == other.variables

    def __hash__(self):
        return hash((self.root, self.variables))

    def referenced(self):
        """Names of the variables that actually occur in the expression."""
        return {n.name for n in _walk(self.root) if isinstance(n, Var)}

    def depends_on(self, name):
        return name in self.referenced()

    def redeclare(self, variables):
        """The same expression over a different (typically larger) variable list."""
        return Expr(self.root, variables)

    # -- evaluation ------------------------------------------------------

    def _points(self, points):
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        if p.shape[-1] != len(self.variables):
            raise ValueError(
                f"point has dimension {p.shape[-1]}, expression declares {len(self.variables)} variables"
            )
        return p, single

    def evaluate(self, points):
        """Values at one point ``(k,)`` or a batch ``(B, k)``."""
        p, single = self._points(points)
        env = {name: p[:, i] for i, name in enumerate(self.variables)}
        with np.errstate(all="ignore"):
            out = np.broadcast_to(np.asarray(_val(self.root, env), dtype=float), (p.shape[0],)).copy()
        if not np.all(np.isfinite(out)):
            raise NonFinite(f"non-finite value of {self}")
        return float(out[0]) if single else out

    def jet(self, points, order=2):
        """Forward-mode jet (value, gradient and, for ``order=2``, Hessian)."""
        p, single = self._points(points)
        b, k = p.shape
        eye = np.eye(k)
        leaves = {}
        for i, name in enumerate(self.variables):
            g = np.broadcast_to(eye[i], (b, k)).copy()
            h = np.zeros((b, k, k)) if order >= 2 else None
            leaves[name] = _J(p[:, i].copy(), g, h)
        with np.errstate(all="ignore"):
            j = self._jet(self.root, leaves, b, k, order)
        hess = j.h if j.h is not None else np.zeros((b, k, k))
        if not (np.all(np.isfinite(j.v)) and np.all(np.isfinite(j.g)) and np.all(np.isfinite(hess))):
            raise NonFinite(f"non-finite derivative of {self}")
        if single:
            return Jet2(float(j.v[0]), j.g[0], hess[0])
        return Jet2(j.v, j.g, hess)

    def _jet(self, node, leaves, b, k, order):
        if isinstance(node, Num):
            return _J(np.full(b, node.value), np.zeros((b, k)), np.zeros((b, k, k)) if order >= 2 else None)
        if isinstance(node, Var):
            return leaves[node.name]
        if isinstance(node, Neg):
            a = self._jet(node.arg, leaves, b, k, order)
            return _J(-a.v, -a.g, None if a.h is None else -a.h)
        if isinstance(node, Call):
            return _apply(node.fn, self._jet(node.args[0], leaves, b, k, order))
        a = self._jet(node.left, leaves, b, k, order)
        if node.op == "^":
            if _is_constant(node.right):
                return _powc(a, float(_val(node.right, {})))
            if np.any(a.v <= 0.0):
                raise DomainError("variable exponent requires a positive base")
            e = self._jet(node.right, leaves, b, k, order)
            return _apply("exp", _mul(e, _apply("log", a)))
        c = self._jet(node.right, leaves, b, k, order)
        if node.op == "+":
            return _add(a, c)
        if node.op == "-":
            return _add(a, c, -1.0)
        if node.op == "*":
            return _mul(a, c)
        return _mul(a, _recip(c))


def parse(source, variables=None):
    """Parse ``source`` into an :class:`Expr`.

    With ``variables=None`` the declared variables are the referenced ones, in
    canonical order; names other than ``x<i>``, ``y<j>`` and ``z`` are rejected.
    With an explicit ``variables`` sequence any other name is an
    :class:`UnknownVariable`.
    """
    if not isinstance(source, str) or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    raw = _Parser(source).parse()
    names = [n for n in _walk(raw) if isinstance(n, Var)]
    if variables is None:
        for v in names:
            if not _VAR_RE.match(v.name):
                raise UnknownVariable(v.name, getattr(v, "offset", None))
        variables = sorted({v.name for v in names}, key=_var_key)
    else:
        declared = set(variables)
        for v in names:
            if v.name not in declared:
                raise UnknownVariable(v.name, getattr(v, "offset", None))
    return Expr(_strip_offsets(raw), variables)


def eval_jet2(e: Expr, point) -> Jet2:
    """Exact value, gradient and Hessian of ``e`` at ``point`` (or a batch)."""
    return e.jet(point, order=2)


def fd_step(order, coordinate):
    """Difference step used on top of exact Hessians for derivatives of ``order``."""
    eps = np.finfo(float).eps
    return max(1e-4, eps ** (1.0 / order)) * max(1.0, abs(float(coordinate)))


def eval_deriv_fd(e: Expr, point, multi_index: Sequence) -> float:
    """Third- or fourth-order partial derivative by central differences of exact Hessians.

    ``multi_index`` lists variable positions (or names), e.g. ``("z", "z", "z")``.
    The truncation error is O(h^2) with ``h`` from :func:`fd_step`.
    """
    idx = [e.variables.index(i) if isinstance(i, str) else int(i) for i in multi_index]
    order = len(idx)
    if order not in (3, 4):
        raise ValueError("eval_deriv_fd handles derivatives of order 3 or 4")
    p = np.asarray(point, dtype=float)
    j, k = idx[-2], idx[-1]
    if order == 3:
        i = idx[0]
        h = fd_step(3, p[i])
        shifts = np.array([p, p])
        shifts[0, i] += h
        shifts[1, i] -= h
        hs = e.jet(shifts).hessian
        return float((hs[0, j, k] - hs[1, j, k]) / (2.0 * h))
    a, b = idx[0], idx[1]
    ha, hb = fd_step(4, p[a]), fd_step(4, p[b])
    if a == b:
        pts = np.array([p, p, p])
        pts[0, a] += ha
        pts[2, a] -= ha
        hs = e.jet(pts).hessian
        return float((hs[0, j, k] - 2.0 * hs[1, j, k] + hs[2, j, k]) / (ha * ha))
    pts = np.array([p, p, p, p])
    pts[0, a] += ha
    pts[0, b] += hb
    pts[1, a] += ha
    pts[1, b] -= hb
    pts[2, a] -= ha
    pts[2, b] += hb
    pts[3, a] -= ha
    pts[3, b] -= hb
    hs = e.jet(pts).hessian
    return float((hs[0, j, k] - hs[1, j, k] - hs[2, j, k] + hs[3, j, k]) / (4.0 * ha * hb))


def hessian_slope(e: Expr, points, axis: int) -> np.ndarray:
    """Central difference of the exact Hessian along variable ``axis``.

    Returns ``d/d(var_axis) Hess e`` at each point of the batch, shape ``(B, k, k)``.
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    h = np.array([fd_step(3, c) for c in p[:, axis]])
    plus, minus = p.copy(), p.copy()
    plus[:, axis] += h
    minus[:, axis] -= h
    hs = e.jet(np.concatenate([plus, minus])).hessian
    b = p.shape[0]
    return (hs[:b] - hs[b:]) / (2.0 * h)[:, None, None]

