"""Formal linear representations (FLRs) of rational expressions.

An FLR (u, Q, v) certifies r(X) = -u Q(X)^-1 v with Q an affine pencil whose
evaluation is invertible everywhere r is defined.  The constructors below
combine FLRs along the expression tree; affine subtrees collapse into a
single size-2 block, every other node costs the size of its children
(+1 for an inverse).  Selfadjoint doubling and hermitization produce the
Hermitian-coefficient variants the free-probability pipelines consume.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import linalg, ncexpr
from .errors import DomainError, ShapeMismatch, SingularQ0
from .ncexpr import Add, Adj, Const, Inv, MatNcExpr, Mul, NcExpr, Var
from .pencil import LinearPencil, matrix_from_json, matrix_to_json
from .realization import Realization


@dataclass(frozen=True)
class Flr:
    """Formal linear representation: r(X) = -u Q(X)^-1 v on dom(r)."""

    u: np.ndarray
    pencil: LinearPencil
    v: np.ndarray

    def __init__(self, u, pencil: LinearPencil, v):
        u = linalg.as_matrix(u)
        v = linalg.as_matrix(v)
        if pencil.rows != pencil.cols:
            raise ShapeMismatch("FLR pencil must be square")
        if u.shape[1] != pencil.rows or v.shape[0] != pencil.rows:
            raise ShapeMismatch("u/Q/v shapes do not compose")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "pencil", pencil)
        object.__setattr__(self, "v", v)

    @property
    def size(self) -> int:
        return self.pencil.rows

    @property
    def out_shape(self):
        return self.u.shape[0], self.v.shape[1]

    def eval(self, x: Sequence[np.ndarray]) -> np.ndarray:
        q = self.pencil(x)
        if not linalg.is_invertible(q):
            raise DomainError(("Q",), "pencil evaluation not invertible")
        n = x[0].shape[0] if len(x) else 1
        un = np.kron(self.u, np.eye(n, dtype=complex))
        vn = np.kron(self.v, np.eye(n, dtype=complex))
        return -un @ np.linalg.solve(q, vn)

    def to_json(self) -> dict:
        return {"u": matrix_to_json(self.u), "pencil": self.pencil.to_json(),
                "v": matrix_to_json(self.v)}

    @staticmethod
    def from_json(data: dict) -> "Flr":
        return Flr(matrix_from_json(data["u"]), LinearPencil.from_json(data["pencil"]),
                   matrix_from_json(data["v"]))


@dataclass(frozen=True)
class SaFlr:
    """Selfadjoint FLR (Q, v): r(X) = -v* Q(X)^-1 v on Hermitian tuples,
    with every pencil coefficient Hermitian."""

    pencil: LinearPencil
    v: np.ndarray

    def __init__(self, pencil: LinearPencil, v):
        v = linalg.as_matrix(v)
        if not pencil.is_hermitian():
            raise ShapeMismatch("SaFlr pencil coefficients must be Hermitian")
        if v.shape[0] != pencil.rows:
            raise ShapeMismatch("v height must match the pencil size")
        object.__setattr__(self, "pencil", pencil)
        object.__setattr__(self, "v", v)

    @property
    def size(self) -> int:
        return self.pencil.rows

    @property
    def out_dim(self) -> int:
        return self.v.shape[1]

    def eval(self, x: Sequence[np.ndarray]) -> np.ndarray:
        q = self.pencil(x)
        if not linalg.is_invertible(q):
            raise DomainError(("Q",), "pencil evaluation not invertible")
        n = x[0].shape[0] if len(x) else 1
        vn = np.kron(self.v, np.eye(n, dtype=complex))
        return -vn.conj().T @ np.linalg.solve(q, vn)

    def to_json(self) -> dict:
        return {"pencil": self.pencil.to_json(), "v": matrix_to_json(self.v)}

    @staticmethod
    def from_json(data: dict) -> "SaFlr":
        return SaFlr(LinearPencil.from_json(data["pencil"]), matrix_from_json(data["v"]))


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------

def flr_affine(coeffs, shape=(1, 1)) -> Flr:
    """FLR of an affine pencil L(x) = c0 + c1 x1 + ... + cg xg.

    Scalar coefficients give the classical 2x2 block; matrix coefficients of
    shape d1 x d2 give the rectangular-identity analogue.  The resulting FLR
    is defined everywhere.
    """
    d1, d2 = shape
    mats = []
    for c in coeffs:
        c = np.asarray(c, dtype=complex)
        mats.append(c * np.ones((d1, d2)) if c.ndim == 0 else linalg.as_matrix(c))
    if any(m.shape != (d1, d2) for m in mats):
        raise ShapeMismatch("affine coefficients must share the target shape")
    i1 = np.eye(d1, dtype=complex)
    i2 = np.eye(d2, dtype=complex)
    z12 = np.zeros((d1, d2), dtype=complex)
    z21 = np.zeros((d2, d1), dtype=complex)
    q0 = np.block([[mats[0], -i1], [-i2, z21]])
    qj = [np.block([[m, np.zeros((d1, d1), dtype=complex)],
                    [np.zeros((d2, d2), dtype=complex), z21]])
          for m in mats[1:]]
    u = np.hstack([z12, i1])
    v = np.vstack([z12, i2])
    return Flr(u, LinearPencil([q0] + qj), v)


def _pad_arity(p1: LinearPencil, p2: LinearPencil):
    g = max(p1.arity, p2.arity)
    def pad(p):
        if p.arity == g:
            return p
        z = np.zeros((p.rows, p.cols), dtype=complex)
        return LinearPencil(list(p.coeffs) + [z] * (g - p.arity))
    return pad(p1), pad(p2)


def flr_add(rho1: Flr, rho2: Flr) -> Flr:
    """Block-diagonal sum; size n1 + n2."""
    if rho1.out_shape != rho2.out_shape:
        raise ShapeMismatch(f"cannot add {rho1.out_shape} and {rho2.out_shape} FLRs")
    p1, p2 = _pad_arity(rho1.pencil, rho2.pencil)
    coeffs = [linalg.block_diag(a, b) for a, b in zip(p1.coeffs, p2.coeffs)]
    u = np.hstack([rho1.u, rho2.u])
    v = np.vstack([rho1.v, rho2.v])
    return Flr(u, LinearPencil(coeffs), v)


def flr_mul(rho1: Flr, rho2: Flr) -> Flr:
    """Product coupling through the v1 u2 corner; size n1 + n2."""
    if rho1.out_shape[1] != rho2.out_shape[0]:
        raise ShapeMismatch(f"inner dimensions {rho1.out_shape} x {rho2.out_shape}")
    p1, p2 = _pad_arity(rho1.pencil, rho2.pencil)
    n1, n2 = p1.rows, p2.rows
    vu = rho1.v @ rho2.u
    coeffs = [np.block([[vu if k == 0 else np.zeros((n1, n2), dtype=complex), a],
                        [b, np.zeros((n2, n1), dtype=complex)]])
              for k, (a, b) in enumerate(zip(p1.coeffs, p2.coeffs))]
    u = np.hstack([np.zeros((rho1.u.shape[0], n2), dtype=complex), rho1.u])
    v = np.vstack([np.zeros((n1, rho2.v.shape[1]), dtype=complex), rho2.v])
    return Flr(u, LinearPencil(coeffs), v)


def flr_inv(rho: Flr) -> Flr:
    """Bordered pencil for the inverse; size n + d."""
    d1, d2 = rho.out_shape
    if d1 != d2:
        raise ShapeMismatch("can only invert square-valued FLRs")
    n = rho.size
    idd = np.eye(d1, dtype=complex)
    coeffs = [np.block([[np.zeros((d1, d1), dtype=complex),
                         rho.u if k == 0 else np.zeros_like(rho.u)],
                        [rho.v if k == 0 else np.zeros_like(rho.v), -q]])
              for k, q in enumerate(rho.pencil.coeffs)]
    u = np.hstack([idd, np.zeros((d1, n), dtype=complex)])
    v = np.vstack([idd, np.zeros((n, d1), dtype=complex)])
    return Flr(u, LinearPencil(coeffs), v)


def flr_adjoint(rho: Flr) -> Flr:
    """(v*, Q*, u*): the FLR of the adjoint expression."""
    return Flr(rho.v.conj().T, rho.pencil.adjoint(), rho.u.conj().T)


def _affine_coeffs(expr: NcExpr, g: int) -> Optional[np.ndarray]:
    """Coefficient vector (c0..cg) if the subtree is an affine polynomial."""
    if isinstance(expr, Const):
        out = np.zeros(g + 1, dtype=complex)
        out[0] = expr.value
        return out
    if isinstance(expr, Var):
        out = np.zeros(g + 1, dtype=complex)
        out[expr.index] = 1.0
        return out
    if isinstance(expr, Add):
        a = _affine_coeffs(expr.left, g)
        b = _affine_coeffs(expr.right, g)
        return None if a is None or b is None else a + b
    if isinstance(expr, Mul):
        a = _affine_coeffs(expr.left, g)
        b = _affine_coeffs(expr.right, g)
        if a is None or b is None:
            return None
        if not np.any(a[1:]):
            return a[0] * b
        if not np.any(b[1:]):
            return b[0] * a
        return None
    if isinstance(expr, Adj):
        a = _affine_coeffs(expr.child, g)
        return None if a is None else np.conj(a)
    return None


def build_flr(expr, arity: Optional[int] = None) -> Flr:
    """FLR of an expression or matrix of expressions by structural recursion.

    Affine subtrees become single flr_affine blocks; Add/Mul/Inv/Adj apply
    the corresponding coupling rule.  Degenerate expressions (empty domain)
    still produce a valid FLR.  A MatNcExpr is assembled as the sum of
    E_ij-embedded entry representations.
    """
    if isinstance(expr, MatNcExpr):
        return _build_matrix_flr(expr, arity)
    g = arity if arity is not None else ncexpr.arity_of(expr)
    return _build(expr, g)


def _build(expr: NcExpr, g: int) -> Flr:
    coeffs = _affine_coeffs(expr, g)
    if coeffs is not None:
        return flr_affine(coeffs)
    if isinstance(expr, Add):
        return flr_add(_build(expr.left, g), _build(expr.right, g))
    if isinstance(expr, Mul):
        return flr_mul(_build(expr.left, g), _build(expr.right, g))
    if isinstance(expr, Inv):
        return flr_inv(_build(expr.child, g))
    if isinstance(expr, Adj):
        return flr_adjoint(_build(expr.child, g))
    raise TypeError(f"not an expression node: {expr!r}")


def _build_matrix_flr(ur: MatNcExpr, arity: Optional[int]) -> Flr:
    d1, d2 = ur.shape
    g = arity
    if g is None:
        g = max(max(ncexpr.arity_of(e) for e in row) for row in ur.entries)
    total: Optional[Flr] = None
    for i in range(d1):
        for j in range(d2):
            rho = _build(ur.entries[i][j], g)
            ei = np.zeros((d1, 1), dtype=complex)
            ei[i, 0] = 1.0
            ej = np.zeros((1, d2), dtype=complex)
            ej[0, j] = 1.0
            embedded = Flr(ei @ rho.u, rho.pencil, rho.v @ ej)
            total = embedded if total is None else flr_add(total, embedded)
    return total


# ---------------------------------------------------------------------------
# Selfadjoint doubling and hermitization
# ---------------------------------------------------------------------------

def make_selfadjoint_flr(rho: Flr, normalize_q0: bool = False) -> SaFlr:
    """Double (u, Q, v) into the Hermitian pencil [[0, Q*], [Q, 0]] with
    v' = (u*/2, v); on Hermitian tuples it evaluates to (r + r*)/2, i.e. to
    r itself when r is selfadjoint.

    With normalize_q0, Q is first preconditioned to Q0 = I (requires the
    expression to be regular at 0); the doubled constant coefficient is then
    an involution, which sa_flr_to_realization needs.
    """
    d1, d2 = rho.out_shape
    if d1 != d2:
        raise ShapeMismatch("selfadjoint doubling needs a square-valued FLR")
    u, v, p = rho.u, rho.v, rho.pencil
    if normalize_q0:
        q0 = p.coeffs[0]
        if not linalg.is_invertible(q0):
            raise SingularQ0("Q0 fails the invertibility test; expression not regular at 0")
        q0_inv = np.linalg.inv(q0)
        p = p.scaled_left(q0_inv)
        v = q0_inv @ v
    n = p.rows
    z = np.zeros((n, n), dtype=complex)
    coeffs = [np.block([[z, q.conj().T], [q, z]]) for q in p.coeffs]
    v2 = np.vstack([0.5 * u.conj().T, v])
    return SaFlr(LinearPencil(coeffs), v2)


def hermitize_flr(rho: Flr) -> SaFlr:
    """SaFlr of [[0, r], [r*, 0]] built from a scalar FLR of r."""
    if rho.out_shape != (1, 1):
        raise ShapeMismatch("hermitization is defined for scalar-valued FLRs")
    n = rho.size
    z = np.zeros((n, n), dtype=complex)
    coeffs = [np.block([[z, q], [q.conj().T, z]]) for q in rho.pencil.coeffs]
    zc = np.zeros((n, 1), dtype=complex)
    v2 = np.block([[zc, rho.v], [rho.u.conj().T, zc]])
    return SaFlr(LinearPencil(coeffs), v2)


# ---------------------------------------------------------------------------
# Conversion to descriptor realizations
# ---------------------------------------------------------------------------

def flr_to_realization(rho: Flr, d: np.ndarray) -> Realization:
    """Monic realization D + C (I - L_A(x))^-1 B from an FLR of r - D.

    C = -u, B = Q0^-1 v, A_j = -Q0^-1 Q_j; requires Q0 invertible (r regular
    at 0 up to the feed-through shift).
    """
    d = linalg.as_matrix(d)
    d1, d2 = rho.out_shape
    if d.shape != (d1, d2):
        raise ShapeMismatch(f"feed-through must be {d1} x {d2}")
    q0 = rho.pencil.coeffs[0]
    if not linalg.is_invertible(q0):
        raise SingularQ0("Q0 fails the invertibility test")
    q0_inv = np.linalg.inv(q0)
    c = -rho.u
    b = q0_inv @ rho.v
    a = [-q0_inv @ q for q in rho.pencil.coeffs[1:]]
    return Realization(d, c, np.eye(rho.size, dtype=complex), a, b)


def sa_flr_to_realization(rho: SaFlr, delta: np.ndarray) -> Realization:
    """Selfadjoint realization Delta + Xi* (M0 - L_M(x))^-1 Xi from a SaFlr
    whose constant coefficient is an involution (built with normalize_q0)."""
    delta = linalg.as_matrix(delta)
    k = rho.out_dim
    if delta.shape != (k, k):
        raise ShapeMismatch(f"feed-through must be {k} x {k}")
    if not linalg.is_hermitian(delta):
        raise ShapeMismatch("feed-through of a selfadjoint realization must be Hermitian")
    m0 = -rho.pencil.coeffs[0]
    return Realization(delta, rho.v.conj().T, m0, list(rho.pencil.coeffs[1:]), rho.v)


# ---------------------------------------------------------------------------
# Structural pruning
# ---------------------------------------------------------------------------

def _closure_rows(pattern: np.ndarray, start: np.ndarray) -> np.ndarray:
    """Smallest K containing `start` with: column j in K and pattern[i, j]
    nonzero implies row i in K."""
    keep = start.copy()
    while True:
        grown = keep | pattern[:, keep].any(axis=1)
        if grown.sum() == keep.sum():
            return keep
        keep = grown


def prune_flr(rho: Flr, samples: int = 50, seed: int = 715) -> Flr:
    """Drop pencil states that are structurally unreachable from v or not
    co-reachable from u, using only the joint zero pattern of the
    coefficients (no numerical row operations).

    The reduced FLR is validated against the original on random in-domain
    samples and the whole reduction is rolled back on any disagreement.
    """
    pruned = rho
    while True:
        n = pruned.size
        if n == 0:
            break
        pattern = np.zeros((n, n), dtype=bool)
        for q in pruned.pencil.coeffs:
            pattern |= q != 0
        keep_v = _closure_rows(pattern, np.abs(pruned.v).sum(axis=1) > 0)
        keep_u = _closure_rows(pattern.T, np.abs(pruned.u).sum(axis=0) > 0)
        keep = keep_v & keep_u
        if keep.all():
            break
        idx = np.where(keep)[0]
        coeffs = [q[np.ix_(idx, idx)] for q in pruned.pencil.coeffs]
        pruned = Flr(pruned.u[:, idx], LinearPencil(coeffs), pruned.v[idx, :])
    if pruned.size == rho.size:
        return rho
    if not _prune_agrees(rho, pruned, samples, seed):
        return rho
    return pruned


def _prune_agrees(rho: Flr, pruned: Flr, samples: int, seed: int) -> bool:
    rng = np.random.default_rng(seed)
    g = rho.pencil.arity
    checked = 0
    for attempt in range(4 * samples):
        if checked >= samples:
            break
        n = 1 + attempt % 2
        x = ncexpr.random_tuple(rng, g, n)
        try:
            a = rho.eval(x)
        except DomainError:
            continue
        try:
            b = pruned.eval(x)
        except DomainError:
            return False
        if linalg.max_norm(a - b) > 1e-10 * (1.0 + linalg.max_norm(a)):
            return False
        checked += 1
    return True
