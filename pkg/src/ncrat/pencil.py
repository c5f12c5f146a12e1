"""Affine linear pencils Q(x) = Q0 + Q1 x1 + ... + Qg xg and their evaluation.

Evaluation follows the Kronecker convention: at a tuple X of n x n matrices,
Q(X) = Q0 (x) I_n + sum_j Qj (x) Xj, an (rows*n) x (cols*n) matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import linalg


@dataclass(frozen=True)
class LinearPencil:
    """Coefficient list (Q0, Q1, .., Qg) of equally shaped complex matrices."""

    coeffs: tuple

    def __init__(self, coeffs: Sequence[np.ndarray]):
        mats = tuple(linalg.as_matrix(c) for c in coeffs)
        if not mats:
            raise ValueError("a pencil needs at least the constant coefficient")
        shape = mats[0].shape
        if any(m.shape != shape for m in mats):
            raise ValueError("pencil coefficients must share one shape")
        object.__setattr__(self, "coeffs", mats)

    @property
    def arity(self) -> int:
        return len(self.coeffs) - 1

    @property
    def rows(self) -> int:
        return self.coeffs[0].shape[0]

    @property
    def cols(self) -> int:
        return self.coeffs[0].shape[1]

    def __call__(self, x: Sequence[np.ndarray]) -> np.ndarray:
        return eval_pencil(self, x)

    def is_hermitian(self) -> bool:
        return (self.rows == self.cols
                and all(linalg.is_hermitian(c) for c in self.coeffs))

    def adjoint(self) -> "LinearPencil":
        return LinearPencil([c.conj().T for c in self.coeffs])

    def scaled_left(self, s: np.ndarray) -> "LinearPencil":
        return LinearPencil([s @ c for c in self.coeffs])

    def to_json(self) -> dict:
        return {"arity": self.arity, "rows": self.rows, "cols": self.cols,
                "coeffs": [matrix_to_json(c) for c in self.coeffs]}

    @staticmethod
    def from_json(data: dict) -> "LinearPencil":
        p = LinearPencil([matrix_from_json(c) for c in data["coeffs"]])
        if p.arity != data["arity"] or p.rows != data["rows"] or p.cols != data["cols"]:
            raise ValueError("pencil JSON header disagrees with coefficients")
        return p


def eval_pencil(pencil: LinearPencil, x: Sequence[np.ndarray]) -> np.ndarray:
    """Q0 (x) I + sum_j Qj (x) Xj at a tuple of uniformly sized matrices."""
    mats = [linalg.as_matrix(m) for m in x]
    if len(mats) != pencil.arity:
        raise ValueError(f"pencil arity {pencil.arity} vs tuple of length {len(mats)}")
    n = mats[0].shape[0] if mats else 1
    out = np.kron(pencil.coeffs[0], np.eye(n, dtype=complex))
    for q, xj in zip(pencil.coeffs[1:], mats):
        out += np.kron(q, xj)
    return out


def matrix_to_json(m: np.ndarray) -> list:
    m = np.asarray(m, dtype=complex)
    return [[[float(v.real), float(v.imag)] for v in row] for row in m]


def matrix_from_json(rows: list) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in rows],
                    dtype=complex) if rows else np.zeros((0, 0), dtype=complex)
