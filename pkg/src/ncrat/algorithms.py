"""End-to-end pipelines: analytic distributions and Brown measures of
rational expressions in free variables.

The route is always the same: linearize the expression into a selfadjoint
generalized realization, border it into the shifted Hermitian pencil, push
the pencil sum through operator-valued subordination, take the corner
compression down theeps -> 0 boundary limit, and invert the resulting
Cauchy transform (Stieltjes on the real line, d/dz-bar on the plane).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import linalg, ncexpr
from .errors import BoundaryLimitUnstable, NotSelfadjointInput, SingularQ0
from .freeprob import FP_MAX_ITER, FP_TOL, Law, TensorTransform, _fixed_point
from .linrep import (Flr, SaFlr, build_flr, flr_to_realization, hermitize_flr,
                     make_selfadjoint_flr, prune_flr, sa_flr_to_realization)
from .ncexpr import Const, MatNcExpr, NcExpr
from .pencil import LinearPencil
from .realization import Realization, cut_down

# Corner boundary limit: geometric schedule, acceptance once two successive
# corner values agree to CORNER_ACCEPT; the accepted value is the first-order
# Richardson extrapolant of the last two levels.
CORNER_EPS_START = 0.1
CORNER_EPS_FLOOR = 1e-7
CORNER_ACCEPT = 1e-6
CORNER_FORCED = 1e-4
# Per-level iteration budget: healthy levels converge in well under this;
# boundary stragglers that cannot converge at a depth fall back to their
# last completed extrapolant instead of burning the full fixed-point budget.
CORNER_LEVEL_MAX_ITER = 4000
DEFAULT_ETA = 1e-3
BROWN_CORNER_FACTOR = 1e-3


def default_eps_schedule(floor: float = CORNER_EPS_FLOOR) -> list:
    out = []
    eps = CORNER_EPS_START
    while eps >= floor:
        out.append(eps)
        eps /= 2.0
    return out


# ---------------------------------------------------------------------------
# Realizing an expression at free arguments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeneralizedRealization:
    """Delta + Xi* Lambda(x)^-1 Xi with Hermitian pencil coefficients."""

    delta: np.ndarray
    xi: np.ndarray
    pencil: LinearPencil

    def __init__(self, delta, xi, pencil: LinearPencil):
        delta = linalg.as_matrix(delta)
        xi = linalg.as_matrix(xi)
        if pencil.rows != pencil.cols or xi.shape[0] != pencil.rows \
                or delta.shape != (xi.shape[1], xi.shape[1]):
            raise ValueError("inconsistent generalized realization shapes")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "pencil", pencil)

    @property
    def corner_dim(self) -> int:
        return self.delta.shape[0]

    @property
    def state_dim(self) -> int:
        return self.pencil.rows

    def eval(self, x: Sequence[np.ndarray]) -> np.ndarray:
        n = x[0].shape[0] if len(x) else 1
        lam = self.pencil(x)
        xin = np.kron(self.xi, np.eye(n, dtype=complex))
        return np.kron(self.delta, np.eye(n, dtype=complex)) \
            + xin.conj().T @ np.linalg.solve(lam, xin)

    def is_selfadjoint(self, tol: float = 1e-10) -> bool:
        ok = linalg.max_norm(self.delta - self.delta.conj().T) <= tol * (1 + linalg.max_norm(self.delta))
        return bool(ok and self.pencil.is_hermitian())


def _from_sa_flr(sa: SaFlr) -> GeneralizedRealization:
    k = sa.out_dim
    pencil = LinearPencil([-c for c in sa.pencil.coeffs])
    return GeneralizedRealization(np.zeros((k, k), dtype=complex), sa.v, pencil)


def _from_selfadjoint_realization(r: Realization) -> GeneralizedRealization:
    coeffs = [r.j] + [-m for m in r.a]
    return GeneralizedRealization(r.d, r.b, LinearPencil(coeffs))


def realize_at(r, arity: int, path: str = "saflr") -> GeneralizedRealization:
    """Selfadjoint generalized realization of a selfadjoint-asserted
    expression (or matrix of expressions).

    "saflr": doubled formal linear representation; valid at every Hermitian
    in-domain point, no regularity needed.  "minimal": selfadjoint
    realization with Q0-normalization followed by a Kalman cut-down; the cut
    system is used only when it stays selfadjoint, otherwise the uncut
    selfadjoint realization is returned.
    """
    if path not in ("saflr", "minimal"):
        raise ValueError(f"unknown realization path {path!r}")
    rho = prune_flr(build_flr(r, arity=arity))
    if path == "saflr":
        return _from_sa_flr(make_selfadjoint_flr(rho))
    # minimal path: feed-through r(0), pencil normalized so M0^2 = I
    if isinstance(r, MatNcExpr):
        d1, d2 = r.shape
        vals = np.array([[ncexpr.value_at_zero(e) for e in row] for row in r.entries])
        shifted = MatNcExpr([[ncexpr.Add(e, Const(-vals[i][j]))
                              for j, e in enumerate(row)] for i, row in enumerate(r.entries)])
        delta = (vals + vals.conj().T) / 2
    else:
        v0 = ncexpr.value_at_zero(r)
        shifted = ncexpr.Add(r, Const(-v0))
        delta = np.array([[complex(v0.real)]])
    rho = prune_flr(build_flr(shifted, arity=arity))
    sa = make_selfadjoint_flr(rho, normalize_q0=True)
    full = sa_flr_to_realization(sa, delta)
    cut = cut_down(full)
    if cut.selfadjoint:
        return _from_selfadjoint_realization(cut)
    return _from_selfadjoint_realization(full)


# ---------------------------------------------------------------------------
# Shifted pencil and the corner boundary limit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShiftedPencil:
    """Hermitian bordered pencil [[Delta, Xi*], [Xi, -Lambda(x)]]."""

    pencil: LinearPencil
    corner: int

    @property
    def size(self) -> int:
        return self.pencil.rows

    @property
    def interior(self) -> int:
        return self.size - self.corner


def build_shifted_pencil(real) -> ShiftedPencil:
    """Border a selfadjoint generalized realization (or selfadjoint
    Realization) into the shifted pencil feeding the subordination solver."""
    if isinstance(real, Realization):
        if not real.selfadjoint:
            raise NotSelfadjointInput("realization lacks the selfadjoint structure")
        real = _from_selfadjoint_realization(real)
    if not isinstance(real, GeneralizedRealization) or not real.is_selfadjoint():
        raise NotSelfadjointInput("shifted pencils need Hermitian Delta and pencil coefficients")
    k, n = real.corner_dim, real.state_dim
    zk = np.zeros((k, k), dtype=complex)
    zkn = np.zeros((k, n), dtype=complex)
    coeffs = [np.block([[real.delta, real.xi.conj().T], [real.xi, -real.pencil.coeffs[0]]])]
    for c in real.pencil.coeffs[1:]:
        coeffs.append(np.block([[zk, zkn], [zkn.conj().T, -c]]))
    return ShiftedPencil(LinearPencil(coeffs), k)


@dataclass
class CornerResult:
    value: np.ndarray            # (batch, k, k) accepted corner values
    eps_used: np.ndarray         # (batch,) last eps level entering each value
    gaps: np.ndarray             # (batch,) True where no stable value exists
    iterations_max: int
    last_deltas: np.ndarray      # (batch,) final corner increments


class CornerSolver:
    """Evaluates B |-> lim_{eps->0} corner of G_{pencil(X)}(diag(B, i eps I))
    for a whole batch of corner arguments at once.

    The subordination fixed point is warm-started from the previous eps
    level; each point is accepted independently once its corner value moves
    by less than CORNER_ACCEPT between levels, and the returned value is the
    two-level Richardson extrapolant.
    """

    def __init__(self, shifted: ShiftedPencil, laws: Sequence[Law],
                 tol: float = FP_TOL, max_iter: int = FP_MAX_ITER):
        if len(laws) != shifted.pencil.arity:
            raise ValueError(f"pencil arity {shifted.pencil.arity} vs {len(laws)} laws")
        self.shifted = shifted
        self.lam0 = shifted.pencil.coeffs[0]
        self.transforms = [TensorTransform(c, law)
                           for c, law in zip(shifted.pencil.coeffs[1:], laws)]
        self.live = [t for t in self.transforms if t.rank > 0]
        self.tol = tol
        self.max_iter = max_iter

    def _g_sum(self, c: np.ndarray, warm: Optional[np.ndarray]):
        """G of the live pencil sum at shifted points c; returns (G, omega,
        converged, iterations)."""
        live = self.live
        if not live:
            return np.linalg.inv(c), c, np.ones(c.shape[:-2], dtype=bool), 0
        if len(live) == 1:
            return live[0].cauchy(c), c, np.ones(c.shape[:-2], dtype=bool), 0
        if len(live) == 2:
            h1, h2 = live[0].h, live[1].h
        else:
            from .freeprob import _FoldedTransform
            h_acc = live[0].h
            for mid in live[1:-1]:
                h_acc = _FoldedTransform(h_acc, mid.h, self.tol, self.max_iter).h
            h1, h2 = h_acc, live[-1].h
        budget = min(self.max_iter, CORNER_LEVEL_MAX_ITER)
        w, iters, converged, _ = _fixed_point(h1, h2, c, warm, self.tol, budget)
        hx = h1(w)
        g = np.linalg.inv(hx + w)
        return g, w, converged, iters

    def corner(self, b: np.ndarray, eps_schedule: Optional[Sequence[float]] = None) -> CornerResult:
        sched = list(eps_schedule) if eps_schedule is not None else default_eps_schedule()
        b = np.asarray(b, dtype=complex)
        if b.ndim == 2:
            b = b[None]
        k = self.shifted.corner
        total = self.shifted.size
        npts = b.shape[0]
        # the raw corner value at level eps carries an O(eps) error, halving
        # along the schedule; the first-order Richardson extrapolant
        # 2 v_k - v_{k-1} cancels it, and a point is accepted once two
        # successive extrapolants agree to CORNER_ACCEPT
        out = np.full((npts, k, k), np.nan, dtype=complex)
        prev = np.zeros((npts, k, k), dtype=complex)
        extrap = np.zeros((npts, k, k), dtype=complex)
        seen = np.zeros(npts, dtype=int)       # raw values seen so far
        accepted = np.zeros(npts, dtype=bool)
        failed = np.zeros(npts, dtype=bool)
        eps_used = np.full(npts, np.nan)
        last_deltas = np.full(npts, np.inf)
        warm = None
        iters_max = 0
        for eps in sched:
            todo = ~(accepted | failed)
            if not todo.any():
                break
            big = np.zeros((int(todo.sum()), total, total), dtype=complex)
            big[:, :k, :k] = b[todo]
            idx_int = np.arange(k, total)
            big[:, idx_int, idx_int] = 1j * eps
            c = big - self.lam0
            w0 = warm[todo] if warm is not None else None
            g, w, converged, iters = self._g_sum(c, w0)
            iters_max = max(iters_max, iters)
            if warm is None:
                warm = np.zeros((npts, total, total), dtype=complex)
            warm[todo] = w
            idx = np.where(todo)[0]
            bad = ~np.asarray(converged).reshape(-1)
            if bad.any():
                # the fixed point stalled at this depth: fall back to the
                # point's last completed level if it passes the loose gate
                bi = idx[bad]
                ok_fallback = (seen[bi] >= 2) & (last_deltas[bi] < CORNER_FORCED)
                out[bi[ok_fallback]] = extrap[bi[ok_fallback]]
                eps_used[bi[ok_fallback]] = eps
                accepted[bi[ok_fallback]] = True
                failed[bi[~ok_fallback]] = True
            oi = idx[~bad]
            if oi.size == 0:
                continue
            cv = g[:, :k, :k][~bad]
            new_extrap = 2 * cv - prev[oi]
            delta = np.abs(new_extrap - extrap[oi]).reshape(cv.shape[0], -1).max(axis=1)
            ready = seen[oi] >= 2
            accept_now = ready & (delta < CORNER_ACCEPT)
            ai = oi[accept_now]
            out[ai] = new_extrap[accept_now]
            accepted[ai] = True
            eps_used[ai] = eps
            last_deltas[oi[ready]] = delta[ready]
            extrap[oi] = np.where((seen[oi] >= 1)[:, None, None], new_extrap, cv)
            prev[oi] = cv
            seen[oi] += 1
        # schedule exhausted: accept still-drifting points only inside the
        # loose gate, everything else becomes a gap
        rest = ~(accepted | failed)
        if rest.any():
            loose = rest & (last_deltas < CORNER_FORCED) & (seen >= 2)
            out[loose] = extrap[loose]
            eps_used[loose] = sched[-1]
            accepted[loose] = True
            failed[rest & ~loose] = True
        return CornerResult(out, eps_used, ~accepted, iters_max, last_deltas)


def cauchy_of_expr(shifted: ShiftedPencil, laws: Sequence[Law], b: np.ndarray,
                   eps_schedule: Optional[Sequence[float]] = None) -> np.ndarray:
    """Corner-compressed Cauchy transform of the realized expression at a
    single B with Im B > 0; raises BoundaryLimitUnstable when the eps
    schedule fails to settle."""
    b = linalg.as_matrix(b)
    if not linalg.in_upper_half_plane(b, 0.0) or linalg.min_imag_eig(b) <= 0:
        raise ValueError("corner argument must lie strictly in the upper half-plane")
    res = CornerSolver(shifted, laws).corner(b[None], eps_schedule)
    if res.gaps[0]:
        raise BoundaryLimitUnstable([float(res.last_deltas[0])])
    return res.value[0]


# ---------------------------------------------------------------------------
# Stieltjes inversion and the distribution pipeline
# ---------------------------------------------------------------------------

@dataclass
class DensityGrid:
    t: np.ndarray
    density: np.ndarray
    meta: dict = field(default_factory=dict)

    def mass(self) -> float:
        good = np.isfinite(self.density)
        return float(np.trapezoid(np.where(good, self.density, 0.0), self.t))


@dataclass
class BrownGrid:
    x: np.ndarray
    y: np.ndarray
    density: np.ndarray          # shape (len(y), len(x))
    meta: dict = field(default_factory=dict)

    def mass(self) -> float:
        good = np.isfinite(self.density)
        dens = np.where(good, self.density, 0.0)
        return float(np.trapezoid(np.trapezoid(dens, self.x, axis=1), self.y))


def stieltjes_invert(t_grid: np.ndarray, g_values: np.ndarray, eta: float,
                     extra_meta: Optional[dict] = None) -> DensityGrid:
    """density(t) = -Im G(t + i eta) / pi, clipped at 0; the clipped mass and
    the trapezoid total are recorded in the metadata."""
    t_grid = np.asarray(t_grid, dtype=float)
    g_values = np.asarray(g_values, dtype=complex)
    raw = -g_values.imag / np.pi
    density = np.where(np.isnan(raw), np.nan, np.maximum(raw, 0.0))
    clipped = np.where(np.isnan(raw), 0.0, np.maximum(-raw, 0.0))
    meta = {"eta": eta,
            "mass": float(np.trapezoid(np.where(np.isfinite(density), density, 0.0), t_grid)),
            "clipped_mass": float(np.trapezoid(clipped, t_grid))}
    if extra_meta:
        meta.update(extra_meta)
    return DensityGrid(t_grid, density, meta)


def compute_distribution(r, laws: Sequence[Law], t_grid: np.ndarray,
                         eta: float = DEFAULT_ETA,
                         eps_schedule: Optional[Sequence[float]] = None,
                         path: str = "saflr") -> DensityGrid:
    """Analytic distribution of a selfadjoint-asserted expression evaluated
    in free variables with the given laws.

    Grid points are processed as one batch; per-point boundary-limit
    failures are recorded as NaN gaps rather than aborting the run.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    real = realize_at(r, arity=len(laws), path=path)
    shifted = build_shifted_pencil(real)
    solver = CornerSolver(shifted, laws)
    b = (t_grid + 1j * eta).reshape(-1, 1, 1)
    res = solver.corner(b, eps_schedule)
    g = res.value[:, 0, 0].copy()
    g[res.gaps] = np.nan
    meta = {"iterations_max_seen": res.iterations_max,
            "eps_final": float(np.nanmin(res.eps_used)) if np.isfinite(res.eps_used).any() else None,
            "gaps": int(res.gaps.sum()),
            "pencil_size": shifted.size,
            "path": path}
    return stieltjes_invert(t_grid, g, eta, meta)


# ---------------------------------------------------------------------------
# Hermitization and the Brown pipeline
# ---------------------------------------------------------------------------

def hermitized_pencil(r: NcExpr, arity: int) -> ShiftedPencil:
    """Shifted pencil of [[0, r], [r*, 0]] from the hermitized FLR."""
    rho = prune_flr(build_flr(r, arity=arity))
    sa = hermitize_flr(rho)
    return build_shifted_pencil(_from_sa_flr(sa))


def _lambda_eps(z: np.ndarray, eps: float) -> np.ndarray:
    z = np.asarray(z, dtype=complex).ravel()
    out = np.zeros((z.size, 2, 2), dtype=complex)
    out[:, 0, 0] = 1j * eps
    out[:, 1, 1] = 1j * eps
    out[:, 0, 1] = z
    out[:, 1, 0] = np.conj(z)
    return out


def hermitized_cauchy(r: NcExpr, laws: Sequence[Law], z: complex, eps: float,
                      eps_schedule: Optional[Sequence[float]] = None) -> complex:
    """Regularized Cauchy transform of r(X) at z: the (2,1) corner entry of
    the hermitized pencil's Cauchy transform at Lambda_eps(z)."""
    shifted = hermitized_pencil(r, arity=len(laws))
    if eps_schedule is None:
        eps_schedule = default_eps_schedule(max(CORNER_EPS_FLOOR, BROWN_CORNER_FACTOR * eps))
    res = CornerSolver(shifted, laws).corner(_lambda_eps(np.array([z]), eps), eps_schedule)
    if res.gaps[0]:
        raise BoundaryLimitUnstable([float(res.last_deltas[0])])
    return complex(res.value[0, 1, 0])


def compute_brown(r: NcExpr, laws: Sequence[Law], x_grid: np.ndarray,
                  y_grid: np.ndarray, eps: float = 0.01,
                  eps_schedule: Optional[Sequence[float]] = None) -> BrownGrid:
    """Regularized Brown measure density of r(X) on a rectangular grid.

    The regularized Cauchy transform is evaluated on the grid, d/dz-bar is
    taken by central differences (one-sided at the edges), and the density
    is (1/pi) Re of the result, clipped at 0; the largest imaginary residue
    is recorded as a discretization diagnostic.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    y_grid = np.asarray(y_grid, dtype=float)
    shifted = hermitized_pencil(r, arity=len(laws))
    if eps_schedule is None:
        eps_schedule = default_eps_schedule(max(CORNER_EPS_FLOOR, BROWN_CORNER_FACTOR * eps))
    zz = x_grid[None, :] + 1j * y_grid[:, None]
    solver = CornerSolver(shifted, laws)
    res = solver.corner(_lambda_eps(zz, eps), eps_schedule)
    g = res.value[:, 1, 0].reshape(zz.shape).copy()
    g[res.gaps.reshape(zz.shape)] = np.nan
    dx = np.gradient(g, x_grid, axis=1)
    dy = np.gradient(g, y_grid, axis=0)
    dbar = 0.5 * (dx + 1j * dy)
    raw = dbar.real / np.pi
    density = np.where(np.isnan(raw), np.nan, np.maximum(raw, 0.0))
    clipped = np.where(np.isnan(raw), 0.0, np.maximum(-raw, 0.0))
    meta = {
        "epsilon": eps,
        "iterations_max_seen": res.iterations_max,
        "gaps": int(res.gaps.sum()),
        "imag_residual_max": float(np.nanmax(np.abs(dbar.imag) / np.pi)) if np.isfinite(dbar.imag).any() else None,
        "pencil_size": shifted.size,
    }
    grid = BrownGrid(x_grid, y_grid, density, meta)
    meta["mass"] = grid.mass()
    meta["clipped_mass"] = float(np.trapezoid(np.trapezoid(clipped, x_grid, axis=1), y_grid))
    return grid


# ---------------------------------------------------------------------------
# CSV / JSON artifacts
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.17g}"


def density_to_csv(grid: DensityGrid, path: str, meta_path: Optional[str] = None):
    with open(path, "w") as fh:
        fh.write("t,density\n")
        for t, d in zip(grid.t, grid.density):
            fh.write(f"{_fmt(t)},{_fmt(d)}\n")
    if meta_path:
        with open(meta_path, "w") as fh:
            json.dump(grid.meta, fh, indent=2, sort_keys=True)
            fh.write("\n")


def brown_to_csv(grid: BrownGrid, path: str, meta_path: Optional[str] = None):
    with open(path, "w") as fh:
        fh.write("x,y,density\n")
        for iy, yv in enumerate(grid.y):
            for ix, xv in enumerate(grid.x):
                fh.write(f"{_fmt(xv)},{_fmt(yv)},{_fmt(grid.density[iy, ix])}\n")
    if meta_path:
        with open(meta_path, "w") as fh:
            json.dump(grid.meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
