"""Noncommutative rational expressions.

An expression is a purely formal tree over constants, variables x1..xg, the
binary operations + and *, inversion, and the adjoint.  Nothing is simplified
at construction (inv(0) is a valid tree); every semantic question is answered
by evaluation against a concrete matrix tuple, where non-invertible inverses
surface as DomainError.

Subtraction and unary minus exist only in the parser, which rewrites
a - b into a + (-1)*b.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from . import linalg
from .errors import ArityError, DomainError, ExprSyntaxError, NotRegularAtZero

__all__ = [
    "NcExpr", "Const", "Var", "Add", "Mul", "Inv", "Adj", "MatNcExpr",
    "SeriesTable", "EquivVerdict", "parse_expr", "to_text", "eval_expr",
    "eval_mat_expr", "adjoint_expr", "series_expand", "value_at_zero",
    "matrix_equiv", "arity_of", "random_tuple",
]


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: complex


@dataclass(frozen=True)
class Var:
    index: int  # 1-based

    def __post_init__(self):
        if self.index < 1:
            raise ArityError(f"variable index must be >= 1, got {self.index}")


@dataclass(frozen=True)
class Add:
    left: "NcExpr"
    right: "NcExpr"


@dataclass(frozen=True)
class Mul:
    left: "NcExpr"
    right: "NcExpr"


@dataclass(frozen=True)
class Inv:
    child: "NcExpr"


@dataclass(frozen=True)
class Adj:
    child: "NcExpr"

    def __new__(cls, child):
        # normalize adj(adj(r)) -> r at construction
        if isinstance(child, Adj):
            return child.child
        return super().__new__(cls)


NcExpr = Union[Const, Var, Add, Mul, Inv, Adj]


def arity_of(expr: NcExpr) -> int:
    """Largest variable index occurring in the tree (0 for constant trees)."""
    if isinstance(expr, Const):
        return 0
    if isinstance(expr, Var):
        return expr.index
    if isinstance(expr, (Add, Mul)):
        return max(arity_of(expr.left), arity_of(expr.right))
    return arity_of(expr.child)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<imag>(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?i|i)
  | (?P<num>(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?)
  | (?P<var>x\{\d+\}|x\d+)
  | (?P<name>[A-Za-z_]\w*)
  | (?P<op>[+\-*()])
""", re.VERBOSE)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(pos, f"unexpected character {text[pos]!r}")
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, arity: int):
        self.tokens = _tokenize(text)
        self.arity = arity
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.next()
        if text != value:
            raise ExprSyntaxError(pos, f"expected {value!r}, found {text!r}")

    def parse(self) -> NcExpr:
        e = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(pos, f"unexpected trailing input {text!r}")
        return e

    def expr(self) -> NcExpr:
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.next()[1]
            rhs = self.term()
            if op == "-":
                rhs = Mul(Const(-1.0 + 0j), rhs)
            e = Add(e, rhs)
        return e

    def term(self) -> NcExpr:
        e = self.unary()
        while self.peek()[1] == "*":
            self.next()
            e = Mul(e, self.unary())
        return e

    def unary(self) -> NcExpr:
        if self.peek()[1] == "-":
            self.next()
            inner = self.unary()
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Mul(Const(-1.0 + 0j), inner)
        return self.primary()

    def primary(self) -> NcExpr:
        kind, text, pos = self.next()
        if kind == "num":
            return Const(complex(float(text)))
        if kind == "imag":
            mag = 1.0 if text == "i" else float(text[:-1])
            return Const(complex(0.0, mag))
        if kind == "var":
            idx = int(text[2:-1]) if text[1] == "{" else int(text[1:])
            if idx < 1 or idx > self.arity:
                raise ArityError(f"variable x{idx} exceeds declared arity {self.arity}")
            return Var(idx)
        if kind == "name" and text in ("inv", "adj"):
            self.expect("(")
            inner = self.expr()
            self.expect(")")
            return Inv(inner) if text == "inv" else Adj(inner)
        if text == "(":
            inner = self.expr()
            self.expect(")")
            return inner
        raise ExprSyntaxError(pos, f"unexpected token {text!r}")


def parse_expr(text: str, arity: int) -> NcExpr:
    """Parse an expression over variables x1..x{arity}."""
    return _Parser(text, arity).parse()


def _fmt_real(x: float) -> str:
    if x == int(x) and abs(x) < 1e16:
        return str(int(x))
    return repr(x)


def to_text(expr: NcExpr) -> str:
    """Fully parenthesized normal form; reparsing yields an identical tree
    whenever the tree itself came from the parser."""
    if isinstance(expr, Const):
        c = expr.value
        if c.imag == 0:
            return _fmt_real(c.real)
        if c.real == 0:
            return ("-" + _fmt_real(-c.imag) if c.imag < 0 else _fmt_real(c.imag)) + "i"
        im = _fmt_real(abs(c.imag)) + "i"
        return f"({_fmt_real(c.real)} {'+' if c.imag >= 0 else '-'} {im})"
    if isinstance(expr, Var):
        return f"x{expr.index}" if expr.index <= 9 else f"x{{{expr.index}}}"
    if isinstance(expr, Add):
        return f"({to_text(expr.left)} + {to_text(expr.right)})"
    if isinstance(expr, Mul):
        return f"({to_text(expr.left)} * {to_text(expr.right)})"
    if isinstance(expr, Inv):
        return f"inv({to_text(expr.child)})"
    if isinstance(expr, Adj):
        return f"adj({to_text(expr.child)})"
    raise TypeError(f"not an expression node: {expr!r}")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _check_tuple(x: Sequence[np.ndarray]) -> list[np.ndarray]:
    mats = [linalg.as_matrix(m) for m in x]
    if not mats:
        return mats
    n = mats[0].shape[0]
    for m in mats:
        if m.shape != (n, n):
            raise ValueError("matrix tuple entries must be square and uniformly sized")
    return mats


def eval_expr(expr: NcExpr, x: Sequence[np.ndarray]) -> np.ndarray:
    """Evaluate at a tuple of square matrices of a common size.

    Raises DomainError (carrying the path to the failing Inv node) when an
    inverse fails the invertibility test, and ArityError when the tree uses
    more variables than the tuple provides.
    """
    mats = _check_tuple(x)
    n = mats[0].shape[0] if mats else 1
    if arity_of(expr) > len(mats):
        raise ArityError(f"expression uses x{arity_of(expr)} but only "
                         f"{len(mats)} matrices were given")
    return _eval(expr, mats, n, ())


def _eval(expr, mats, n, path):
    if isinstance(expr, Const):
        return expr.value * np.eye(n, dtype=complex)
    if isinstance(expr, Var):
        return mats[expr.index - 1]
    if isinstance(expr, Add):
        return _eval(expr.left, mats, n, path + (0,)) + _eval(expr.right, mats, n, path + (1,))
    if isinstance(expr, Mul):
        return _eval(expr.left, mats, n, path + (0,)) @ _eval(expr.right, mats, n, path + (1,))
    if isinstance(expr, Inv):
        v = _eval(expr.child, mats, n, path + (0,))
        if not linalg.is_invertible(v):
            raise DomainError(path, f"inverse fails rtol {linalg.INVERT_RTOL:.0e}")
        return np.linalg.inv(v)
    if isinstance(expr, Adj):
        star = [m.conj().T for m in mats]
        return _eval(expr.child, star, n, path + (0,)).conj().T
    raise TypeError(f"not an expression node: {expr!r}")


def adjoint_expr(expr: NcExpr) -> NcExpr:
    """Structural adjoint: variables fixed, constants conjugated,
    products reversed, inverses and sums preserved."""
    if isinstance(expr, Const):
        return Const(np.conj(expr.value))
    if isinstance(expr, Var):
        return expr
    if isinstance(expr, Add):
        return Add(adjoint_expr(expr.left), adjoint_expr(expr.right))
    if isinstance(expr, Mul):
        return Mul(adjoint_expr(expr.right), adjoint_expr(expr.left))
    if isinstance(expr, Inv):
        return Inv(adjoint_expr(expr.child))
    if isinstance(expr, Adj):
        return expr.child
    raise TypeError(f"not an expression node: {expr!r}")


def symmetrize(expr: NcExpr) -> NcExpr:
    """(r + adj(r)) / 2; exact, and idempotent in value on selfadjoint r."""
    return Mul(Const(0.5 + 0j), Add(expr, adjoint_expr(expr)))


# ---------------------------------------------------------------------------
# Matrices of expressions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MatNcExpr:
    """A d1 x d2 grid of scalar expressions, evaluated blockwise."""

    entries: tuple

    def __init__(self, entries: Iterable[Iterable[NcExpr]]):
        rows = tuple(tuple(row) for row in entries)
        if not rows or not rows[0]:
            raise ValueError("matrix of expressions must be non-empty")
        d2 = len(rows[0])
        if any(len(r) != d2 for r in rows):
            raise ValueError("ragged grid of expressions")
        object.__setattr__(self, "entries", rows)

    @property
    def shape(self):
        return len(self.entries), len(self.entries[0])


def eval_mat_expr(ur: MatNcExpr, x: Sequence[np.ndarray]) -> np.ndarray:
    """Blockwise evaluation; the domain is the intersection over entries."""
    mats = _check_tuple(x)
    n = mats[0].shape[0] if mats else 1
    d1, d2 = ur.shape
    out = np.zeros((d1 * n, d2 * n), dtype=complex)
    for i in range(d1):
        for j in range(d2):
            try:
                out[i * n:(i + 1) * n, j * n:(j + 1) * n] = _eval(ur.entries[i][j], mats, n, ())
            except DomainError as exc:
                raise DomainError(((i, j),) + exc.path, "entry out of domain") from exc
    return out


# ---------------------------------------------------------------------------
# Power series at 0
# ---------------------------------------------------------------------------

@dataclass
class SeriesTable:
    """Truncated formal power series: word (tuple of variable indices) ->
    coefficient, keeping every word up to total degree `degree`."""

    degree: int
    terms: dict

    def coeff(self, word: tuple) -> complex:
        return self.terms.get(tuple(word), 0.0 + 0j)

    def cleaned(self, tol: float = 0.0) -> "SeriesTable":
        return SeriesTable(self.degree,
                           {w: c for w, c in self.terms.items() if abs(c) > tol})


def value_at_zero(expr: NcExpr, path=()) -> complex:
    """r(0) per the regular-at-zero recursion; raises NotRegularAtZero with
    the path to the first inverse whose child vanishes at 0."""
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Var):
        return 0.0 + 0j
    if isinstance(expr, Add):
        return value_at_zero(expr.left, path + (0,)) + value_at_zero(expr.right, path + (1,))
    if isinstance(expr, Mul):
        return value_at_zero(expr.left, path + (0,)) * value_at_zero(expr.right, path + (1,))
    if isinstance(expr, Inv):
        c = value_at_zero(expr.child, path + (0,))
        if abs(c) < 1e-14:
            raise NotRegularAtZero(path)
        return 1.0 / c
    if isinstance(expr, Adj):
        return np.conj(value_at_zero(expr.child, path + (0,)))
    raise TypeError(f"not an expression node: {expr!r}")


def _series_add(a, b, d):
    out = dict(a)
    for w, c in b.items():
        out[w] = out.get(w, 0.0 + 0j) + c
    return out


def _series_mul(a, b, d):
    out = {}
    for wa, ca in a.items():
        la = len(wa)
        for wb, cb in b.items():
            if la + len(wb) > d:
                continue
            w = wa + wb
            out[w] = out.get(w, 0.0 + 0j) + ca * cb
    return out


def series_expand(expr: NcExpr, degree: int) -> SeriesTable:
    """Formal power series of `expr` around 0, truncated at total degree.

    Inverses use the geometric-series rule around the (necessarily nonzero)
    constant term; NotRegularAtZero reports the failing inverse.
    """
    if degree < 0:
        raise ValueError("degree must be >= 0")
    terms = _series(expr, degree, ())
    return SeriesTable(degree, {w: c for w, c in terms.items() if c != 0})


def _series(expr, d, path):
    if isinstance(expr, Const):
        return {(): complex(expr.value)}
    if isinstance(expr, Var):
        return {(expr.index,): 1.0 + 0j} if d >= 1 else {}
    if isinstance(expr, Add):
        return _series_add(_series(expr.left, d, path + (0,)),
                           _series(expr.right, d, path + (1,)), d)
    if isinstance(expr, Mul):
        return _series_mul(_series(expr.left, d, path + (0,)),
                           _series(expr.right, d, path + (1,)), d)
    if isinstance(expr, Adj):
        inner = _series(expr.child, d, path + (0,))
        return {tuple(reversed(w)): np.conj(c) for w, c in inner.items()}
    if isinstance(expr, Inv):
        s = _series(expr.child, d, path + (0,))
        c0 = s.get((), 0.0 + 0j)
        if abs(c0) < 1e-14:
            raise NotRegularAtZero(path)
        # s = c0 - q with q(0) = 0; s^-1 = (1/c0) sum_k (q/c0)^k
        m = {w: -c / c0 for w, c in s.items() if w != ()}
        out = {(): 1.0 / c0}
        power = {(): 1.0 + 0j}
        for _ in range(d):
            power = _series_mul(power, m, d)
            if not power:
                break
            for w, c in power.items():
                out[w] = out.get(w, 0.0 + 0j) + c / c0
        return out
    raise TypeError(f"not an expression node: {expr!r}")


# ---------------------------------------------------------------------------
# Matrix-evaluation equivalence testing
# ---------------------------------------------------------------------------

@dataclass
class EquivVerdict:
    kind: str                      # "equivalent" | "distinguished" | "inconclusive"
    witness: Optional[tuple]       # matrix tuple distinguishing r1 from r2
    witness_size: Optional[int]
    in_domain: int                 # trials landing in both domains
    trials: int

    def __bool__(self):
        return self.kind == "equivalent"


def random_tuple(rng: np.random.Generator, g: int, n: int) -> tuple:
    """Tuple of g independent n x n standard complex Gaussian matrices."""
    return tuple(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
                 for _ in range(g))


def matrix_equiv(r1: NcExpr, r2: NcExpr, sizes=(1, 2, 3, 4), trials: int = 100,
                 tol: float = 1e-9, rng_seed: int = 0) -> EquivVerdict:
    """Probe whether r1 and r2 agree on their common matrix domain.

    Samples `trials` random tuples per size (i.i.d. standard complex Gaussian
    entries; the domain of a non-degenerate expression is generically hit).
    Returns Distinguished with a witness the moment the values differ by more
    than tol * (1 + |r1(X)|_max), Equivalent if every in-domain sample agreed,
    and Inconclusive if no sample landed in both domains.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    g = max(arity_of(r1), arity_of(r2), 1)
    in_domain = 0
    total = 0
    for n in sizes:
        for trial in range(trials):
            ss = np.random.SeedSequence(entropy=rng_seed, spawn_key=(n, trial))
            x = random_tuple(np.random.default_rng(ss), g, n)
            total += 1
            try:
                v1 = eval_expr(r1, x)
                v2 = eval_expr(r2, x)
            except DomainError:
                continue
            in_domain += 1
            if linalg.max_norm(v1 - v2) > tol * (1.0 + linalg.max_norm(v1)):
                return EquivVerdict("distinguished", x, n, in_domain, total)
    if in_domain == 0:
        return EquivVerdict("inconclusive", None, None, 0, total)
    return EquivVerdict("equivalent", None, None, in_domain, total)
