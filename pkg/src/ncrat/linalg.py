"""Dense complex-matrix substrate.

Everything downstream works with plain ``numpy`` arrays of dtype complex128;
this module centralizes the numerical policy decisions: the single relative
threshold deciding "numerically invertible", Hermiticity tests, half-plane
membership, Schur-complement block inversion, and eigen/SVD wrappers.

Most helpers accept stacked inputs (leading batch dimensions) because the
free-probability solvers evaluate whole grids of matrices at once.
"""

from __future__ import annotations

import numpy as np

from .errors import ConvergenceFailure, NotHermitian, SingularBlock

# One knob for every domain-membership question: a matrix counts as invertible
# when its smallest singular value exceeds INVERT_RTOL times its largest.
INVERT_RTOL = 1e-10

# SVD rank decisions (cut-down, Krylov spans) use the same relative tolerance.
RANK_RTOL = 1e-10

HERM_RTOL = 1e-10


def as_matrix(a) -> np.ndarray:
    """Coerce to a finite complex 2-D array (the package's MatC)."""
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    return m


def max_norm(a) -> float:
    a = np.asarray(a)
    return float(np.abs(a).max()) if a.size else 0.0


def is_invertible(a, rtol: float = INVERT_RTOL) -> bool:
    """Numerical invertibility test: smallest/largest singular value > rtol."""
    a = np.asarray(a, dtype=complex)
    if a.shape[-1] != a.shape[-2]:
        return False
    if a.shape[-1] == 0:
        return True
    s = np.linalg.svd(a, compute_uv=False)
    return bool(s.min() > rtol * max(s.max(), np.finfo(float).tiny))


def invertible_mask(a, rtol: float = INVERT_RTOL) -> np.ndarray:
    """Batched invertibility test over leading dimensions."""
    a = np.asarray(a, dtype=complex)
    s = np.linalg.svd(a, compute_uv=False)
    smax = np.maximum(s.max(axis=-1), np.finfo(float).tiny)
    return s.min(axis=-1) > rtol * smax


def svd_rank(a, rtol: float = RANK_RTOL) -> int:
    a = np.asarray(a, dtype=complex)
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    return int(np.sum(s > rtol * s.max())) if s.max() > 0 else 0


def orth_basis(a, rtol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal basis for the column span of ``a`` (d x k, k = rank)."""
    a = np.asarray(a, dtype=complex)
    if a.size == 0:
        return np.zeros((a.shape[0], 0), dtype=complex)
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s.max() == 0.0:
        return np.zeros((a.shape[0], 0), dtype=complex)
    k = int(np.sum(s > rtol * s.max()))
    return u[:, :k]


def herm_part(b) -> np.ndarray:
    """Im(B) = (B - B*)/(2i), Hermitian by construction."""
    b = np.asarray(b, dtype=complex)
    return (b - np.conj(np.swapaxes(b, -1, -2))) / 2j


def is_hermitian(a, rtol: float = HERM_RTOL) -> bool:
    a = np.asarray(a, dtype=complex)
    scale = max(max_norm(a), 1.0)
    return max_norm(a - a.conj().T) <= rtol * scale


def in_upper_half_plane(b, eps: float) -> bool:
    """True iff the smallest eigenvalue of Im(B) is >= eps."""
    b = np.asarray(b, dtype=complex)
    if b.shape[-1] != b.shape[-2]:
        raise ValueError("half-plane test needs a square matrix")
    if b.shape[-1] == 0:
        return True
    w = np.linalg.eigvalsh(herm_part(b))
    return bool(w.min() >= eps)


def min_imag_eig(b) -> float:
    """Smallest eigenvalue of Im(B); the margin of half-plane membership."""
    b = np.asarray(b, dtype=complex)
    return float(np.linalg.eigvalsh(herm_part(b)).min())


def hermitian_eig(a):
    """Eigendecomposition of a Hermitian matrix.

    Returns (eigenvalues ascending, unitary eigenvector matrix); raises
    NotHermitian when the input fails the Hermiticity tolerance.
    """
    a = as_matrix(a)
    scale = max(max_norm(a), 1.0)
    if max_norm(a - a.conj().T) > HERM_RTOL * scale:
        raise NotHermitian(f"deviation {max_norm(a - a.conj().T):.3e} exceeds "
                           f"{HERM_RTOL:.0e} * {scale:.3e}")
    w, u = np.linalg.eigh(a)
    return w, u


def general_eigenvalues(a) -> np.ndarray:
    """Eigenvalues (with multiplicity) of an arbitrary square matrix."""
    a = as_matrix(a)
    try:
        return np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise ConvergenceFailure(str(exc)) from exc


def schur_inverse(a, b, c, d) -> np.ndarray:
    """Inverse of the block matrix [[A, B], [C, D]] via the Schur complement.

    Requires D and the Schur complement A - B D^-1 C to pass the
    invertibility test; raises SingularBlock naming the failing block.
    """
    a, b, c, d = as_matrix(a), as_matrix(b), as_matrix(c), as_matrix(d)
    k, l = a.shape[0], d.shape[0]
    if a.shape != (k, k) or d.shape != (l, l) or b.shape != (k, l) or c.shape != (l, k):
        raise ValueError("inconsistent block shapes")
    if not is_invertible(d):
        raise SingularBlock("D", f"rtol {INVERT_RTOL:.0e}")
    d_inv = np.linalg.inv(d)
    s = a - b @ d_inv @ c
    if not is_invertible(s):
        raise SingularBlock("schur_complement", f"rtol {INVERT_RTOL:.0e}")
    s_inv = np.linalg.inv(s)
    top = np.hstack([s_inv, -s_inv @ b @ d_inv])
    bottom = np.hstack([-d_inv @ c @ s_inv, d_inv + d_inv @ c @ s_inv @ b @ d_inv])
    return np.vstack([top, bottom])


def hermitization(a) -> np.ndarray:
    """[[0, A], [A*, 0]]; its spectrum is +/- the singular values of A."""
    a = as_matrix(a)
    m, n = a.shape
    return np.block([[np.zeros((m, m), dtype=complex), a],
                     [a.conj().T, np.zeros((n, n), dtype=complex)]])


def block_diag(*mats) -> np.ndarray:
    mats = [np.asarray(m, dtype=complex) for m in mats]
    rows = sum(m.shape[0] for m in mats)
    cols = sum(m.shape[1] for m in mats)
    out = np.zeros((rows, cols), dtype=complex)
    i = j = 0
    for m in mats:
        out[i:i + m.shape[0], j:j + m.shape[1]] = m
        i += m.shape[0]
        j += m.shape[1]
    return out
