"""Descriptor realizations D + C (J - L_A(x))^-1 B and their calculus.

J is a signature matrix (J = J*, J^2 = I); monic means J = I.  Minimality
(controllable and observable) is obtained by Kalman-style cut-down over the
word-indexed Krylov spans; state-space similarity of minimal monic
realizations is verified by solving the intertwining equations directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import linalg
from .errors import DimensionMismatch, DomainError, NotSignature
from .pencil import LinearPencil, matrix_from_json, matrix_to_json

SIGNATURE_TOL = 1e-10


@dataclass(frozen=True)
class Realization:
    """Descriptor realization data (D, C, J, A_1..A_g, B)."""

    d: np.ndarray
    c: np.ndarray
    j: np.ndarray
    a: tuple
    b: np.ndarray

    def __init__(self, d, c, j, a, b):
        d = linalg.as_matrix(d)
        c = linalg.as_matrix(c)
        j = linalg.as_matrix(j)
        a = tuple(linalg.as_matrix(m) for m in a)
        b = linalg.as_matrix(b)
        dim = j.shape[0]
        if j.shape != (dim, dim) or any(m.shape != (dim, dim) for m in a):
            raise DimensionMismatch("J and A_j must be square of the state dimension")
        if c.shape[1] != dim or b.shape[0] != dim:
            raise DimensionMismatch("C/B do not match the state dimension")
        if d.shape != (c.shape[0], b.shape[1]):
            raise DimensionMismatch("feed-through shape must be d1 x d2")
        scale = max(linalg.max_norm(j), 1.0)
        if linalg.max_norm(j - j.conj().T) > SIGNATURE_TOL * scale or \
           linalg.max_norm(j @ j - np.eye(dim)) > SIGNATURE_TOL * max(scale * scale, 1.0):
            raise NotSignature("J must satisfy J = J* and J^2 = I")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "j", j)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def state_dim(self) -> int:
        return self.j.shape[0]

    @property
    def arity(self) -> int:
        return len(self.a)

    @property
    def out_shape(self):
        return self.d.shape

    @property
    def monic(self) -> bool:
        return linalg.max_norm(self.j - np.eye(self.state_dim)) <= SIGNATURE_TOL

    @property
    def selfadjoint(self) -> bool:
        tol = 1e-10
        ok = linalg.max_norm(self.d - self.d.conj().T) <= tol * (1 + linalg.max_norm(self.d))
        ok &= linalg.max_norm(self.b - self.c.conj().T) <= tol * (1 + linalg.max_norm(self.b))
        for m in self.a:
            ok &= linalg.max_norm(m - m.conj().T) <= tol * (1 + linalg.max_norm(m))
        return bool(ok)

    def to_json(self) -> dict:
        return {"D": matrix_to_json(self.d), "C": matrix_to_json(self.c),
                "J": matrix_to_json(self.j), "A": [matrix_to_json(m) for m in self.a],
                "B": matrix_to_json(self.b),
                "flags": {"monic": self.monic, "selfadjoint": self.selfadjoint}}

    @staticmethod
    def from_json(data: dict) -> "Realization":
        return Realization(matrix_from_json(data["D"]), matrix_from_json(data["C"]),
                           matrix_from_json(data["J"]),
                           [matrix_from_json(m) for m in data["A"]],
                           matrix_from_json(data["B"]))


def monic_form(r: Realization) -> Realization:
    """(D, C, I, JA_1..JA_g, JB); same evaluation wherever defined."""
    if r.monic:
        return r
    return Realization(r.d, r.c, np.eye(r.state_dim, dtype=complex),
                       [r.j @ m for m in r.a], r.j @ r.b)


def sys_matrix(r: Realization) -> LinearPencil:
    """The bordered pencil [[J - L_A(x), B], [C, -D]]."""
    d1, d2 = r.out_shape
    dim = r.state_dim
    q0 = np.block([[r.j, r.b], [r.c, -r.d]])
    qs = [np.block([[-m, np.zeros((dim, d2), dtype=complex)],
                    [np.zeros((d1, dim), dtype=complex), np.zeros((d1, d2), dtype=complex)]])
          for m in r.a]
    return LinearPencil([q0] + qs)


def _krylov_span(ops: Sequence[np.ndarray], seed: np.ndarray) -> np.ndarray:
    """Orthonormal basis of span{ op_w ... op_1 seed : words }, grown until
    the rank stabilizes (at most state-dim iterations)."""
    v = linalg.orth_basis(seed)
    dim = seed.shape[0]
    for _ in range(dim):
        if v.shape[1] in (0, dim):
            break
        grown = np.hstack([v] + [op @ v for op in ops])
        nv = linalg.orth_basis(grown)
        if nv.shape[1] == v.shape[1]:
            break
        v = nv
    return v


def _orth_complement(basis: np.ndarray, dim: int) -> np.ndarray:
    if basis.shape[1] == 0:
        return np.eye(dim, dtype=complex)
    u, s, _ = np.linalg.svd(basis, full_matrices=True)
    rank = int(np.sum(s > linalg.RANK_RTOL * s.max())) if s.size else 0
    return u[:, rank:]


def controllable_space(r: Realization) -> np.ndarray:
    """Orthonormal basis of span{ (JA)^w JB }."""
    ja = [r.j @ m for m in r.a]
    return _krylov_span(ja, r.j @ r.b)


def unobservable_space(r: Realization) -> np.ndarray:
    """Orthonormal basis of { v : C (JA)^w v = 0 for all words w }, computed
    as the orthogonal complement of the controllable space of the adjoint
    system."""
    ja_star = [(r.j @ m).conj().T for m in r.a]
    observable = _krylov_span(ja_star, r.c.conj().T)
    return _orth_complement(observable, r.state_dim)


def cut_down(r: Realization) -> Realization:
    """Kalman cut-down to a minimal monic realization: restrict to the
    controllable space, then to the complement of the (restricted system's)
    unobservable space; repeated until both rank conditions hold."""
    cur = monic_form(r)
    for _ in range(r.state_dim + 1):
        v = controllable_space(cur)
        if v.shape[1] < cur.state_dim:
            cur = _restrict(cur, v)
        q = unobservable_space(cur)
        if q.shape[1] > 0:
            w = _orth_complement(q, cur.state_dim)
            cur = _restrict(cur, w)
        if controllable_space(cur).shape[1] == cur.state_dim and \
           unobservable_space(cur).shape[1] == 0:
            break
    return cur


def _restrict(r: Realization, basis: np.ndarray) -> Realization:
    # orthonormal-basis compression of a monic system
    a = [basis.conj().T @ m @ basis for m in r.a]
    return Realization(r.d, r.c @ basis, np.eye(basis.shape[1], dtype=complex),
                       a, basis.conj().T @ r.b)


def realization_series_coeff(r: Realization, word: Sequence[int]) -> np.ndarray:
    """Power-series coefficient of x^word: D + C J B for the empty word and
    C (JA_j1) ... (JA_jk) (JB) for word (j1, .., jk); letters act left to
    right, matching the series of the expression the realization represents."""
    m = monic_form(r)
    acc = m.c.copy()
    for j in word:
        if not 1 <= j <= m.arity:
            raise ValueError(f"word letter {j} outside 1..{m.arity}")
        acc = acc @ m.a[j - 1]
    coeff = acc @ m.b
    if len(word) == 0:
        coeff = coeff + m.d
    return coeff


def eval_realization(r: Realization, x: Sequence[np.ndarray]) -> np.ndarray:
    """D (x) I + (C (x) I) [J (x) I - L_A(X)]^-1 (B (x) I)."""
    mats = [linalg.as_matrix(m) for m in x]
    if len(mats) != r.arity:
        raise ValueError(f"realization arity {r.arity} vs tuple length {len(mats)}")
    n = mats[0].shape[0] if mats else 1
    res = np.kron(r.j, np.eye(n, dtype=complex))
    for m, xj in zip(r.a, mats):
        res -= np.kron(m, xj)
    if not linalg.is_invertible(res):
        raise DomainError(("resolvent",), "J (x) 1 - L_A(X) not invertible")
    cn = np.kron(r.c, np.eye(n, dtype=complex))
    bn = np.kron(r.b, np.eye(n, dtype=complex))
    return np.kron(r.d, np.eye(n, dtype=complex)) + cn @ np.linalg.solve(res, bn)


def _vec(m: np.ndarray) -> np.ndarray:
    return np.reshape(m, (-1,), order="F")


def check_similarity(r1: Realization, r2: Realization,
                     tol: float = 1e-8) -> Optional[np.ndarray]:
    """Unique similarity S with S A_j = A~_j S, S B = B~, C = C~ S between
    minimal monic realizations sharing the feed-through term.

    Returns S when the joint linear system is solvable with residuals below
    tol * (1 + data norms) and S passes the invertibility test; None when the
    system is infeasible.  Raises DimensionMismatch for unequal state
    dimensions (then the systems cannot be similar).
    """
    if r1.state_dim != r2.state_dim:
        raise DimensionMismatch(f"state dimensions {r1.state_dim} vs {r2.state_dim}")
    if r1.arity != r2.arity or r1.out_shape != r2.out_shape:
        raise DimensionMismatch("incompatible realizations")
    m1, m2 = monic_form(r1), monic_form(r2)
    dim = m1.state_dim
    eye = np.eye(dim, dtype=complex)
    blocks = []
    rhs = []
    for a1, a2 in zip(m1.a, m2.a):
        blocks.append(np.kron(a1.T, eye) - np.kron(eye, a2))
        rhs.append(np.zeros(dim * dim, dtype=complex))
    blocks.append(np.kron(m1.b.T, eye))
    rhs.append(_vec(m2.b))
    blocks.append(np.kron(eye, m2.c))
    rhs.append(_vec(m1.c))
    lhs = np.vstack(blocks)
    target = np.concatenate(rhs)
    sol, *_ = np.linalg.lstsq(lhs, target, rcond=None)
    s = np.reshape(sol, (dim, dim), order="F")
    scale = 1.0 + max(linalg.max_norm(m) for m in (list(m1.a) + list(m2.a) + [m1.b, m2.b, m1.c, m2.c])
                      ) + linalg.max_norm(s)
    residual = max(
        max((linalg.max_norm(s @ a1 - a2 @ s) for a1, a2 in zip(m1.a, m2.a)), default=0.0),
        linalg.max_norm(s @ m1.b - m2.b),
        linalg.max_norm(m1.c - m2.c @ s),
    )
    if residual > tol * scale or not linalg.is_invertible(s):
        return None
    return s
