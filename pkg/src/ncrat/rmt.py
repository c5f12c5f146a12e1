"""Random-matrix verification harness.

Samples GUE / Wishart / law-driven ensembles whose empirical spectra
converge to the package's input laws, evaluates expressions on the sampled
tuples, and quantifies agreement between computed densities and eigenvalue
pools.  Streams are keyed by (seed, rep, variable index) so repetitions are
reproducible and independent of scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import linalg, ncexpr
from .algorithms import BrownGrid, DensityGrid
from .errors import DomainError, DomainStarved, EmptyPool
from .freeprob import Law


@dataclass(frozen=True)
class Ensemble:
    """Random Hermitian matrix family with a deterministic seed.

    kinds: "gue" (param = variance), "wishart" (param = aspect ratio n/m),
    "from_law" (diagonal of i.i.d. law samples in a Haar-random basis).
    """

    kind: str
    n: int
    param: float = 1.0
    law: Optional[Law] = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gue", "wishart", "from_law"):
            raise ValueError(f"unknown ensemble kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("dimension must be >= 1")
        if self.kind == "from_law" and self.law is None:
            raise ValueError("from_law ensembles need a Law")


def _rng_for(ens: Ensemble, rep: int, var_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=ens.seed, spawn_key=(rep, var_index)))


def sample(ens: Ensemble, rng: np.random.Generator) -> np.ndarray:
    """One Hermitian draw.

    GUE is normalized so the spectrum converges to semicircle(0, variance);
    Wishart is (1/m) W W* with W an n x m standard complex Gaussian and
    m = round(n / aspect), converging to the free Poisson law of rate
    m/n ~ 1/aspect (aspect 1 gives Marchenko-Pastur rate 1); from_law
    conjugates a diagonal of i.i.d. law samples by a Haar unitary.
    """
    n = ens.n
    if ens.kind == "gue":
        a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        h = (a + a.conj().T) / 2 * np.sqrt(ens.param / n)
        return h
    if ens.kind == "wishart":
        m = max(1, round(n / ens.param))
        w = (rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))) / np.sqrt(2)
        return (w @ w.conj().T) / m
    samples = ens.law.sample(rng, n)
    u = _haar_unitary(rng, n)
    return u @ np.diag(samples.astype(complex)) @ u.conj().T


def _haar_unitary(rng: np.random.Generator, n: int) -> np.ndarray:
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def sample_tuple(ensembles: Sequence[Ensemble], rep: int) -> tuple:
    """Hermitian tuple with per-(rep, variable) substreams."""
    return tuple(sample(e, _rng_for(e, rep, j)) for j, e in enumerate(ensembles))


def empirical_spectrum(r: ncexpr.NcExpr, ensembles: Sequence[Ensemble],
                       reps: int = 1, selfadjoint: bool = True) -> np.ndarray:
    """Pooled eigenvalues of r evaluated on sampled tuples.

    For selfadjoint-asserted r the evaluation is symmetrized and passed to
    the Hermitian solver (sorted real pool); otherwise general eigenvalues
    are pooled (complex).  Out-of-domain draws are discarded and counted;
    more than 50% discards raises DomainStarved.
    """
    pools = []
    discarded = 0
    for rep in range(reps):
        x = sample_tuple(ensembles, rep)
        try:
            val = ncexpr.eval_expr(r, x)
        except DomainError:
            discarded += 1
            continue
        if selfadjoint:
            w, _ = linalg.hermitian_eig((val + val.conj().T) / 2)
            pools.append(w)
        else:
            pools.append(linalg.general_eigenvalues(val))
    if discarded * 2 > reps:
        raise DomainStarved(discarded, reps)
    if not pools:
        raise DomainStarved(discarded, reps)
    pool = np.concatenate(pools)
    return np.sort(pool) if selfadjoint else pool


def compare_density(grid: DensityGrid, eigenvalues: np.ndarray, bins: int = 60) -> dict:
    """L1 and Kolmogorov distances between a computed density and an
    eigenvalue pool, binned over the union of both ranges."""
    pool = np.asarray(eigenvalues, dtype=float)
    if pool.size == 0:
        raise EmptyPool("no eigenvalues to compare against")
    lo = min(float(grid.t.min()), float(pool.min()))
    hi = max(float(grid.t.max()), float(pool.max()))
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    hist = np.histogram(pool, bins=edges)[0] / pool.size
    dens = np.where(np.isfinite(grid.density), grid.density, 0.0)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid.t))])
    cum_at = np.interp(edges, grid.t, cum, left=0.0, right=cum[-1])
    dens_mass = np.diff(cum_at)
    l1 = float(np.abs(hist - dens_mass).sum())
    ks = float(np.abs(np.cumsum(hist) - np.cumsum(dens_mass)).max())
    return {"l1": l1, "ks": ks}


def brown_coverage(grid: BrownGrid, eigenvalues: np.ndarray,
                   density_threshold_quantile: float = 0.05) -> float:
    """Fraction of complex eigenvalues landing in grid cells whose density
    exceeds the given quantile of the positive density values."""
    pool = np.asarray(eigenvalues, dtype=complex)
    if pool.size == 0:
        raise EmptyPool("no eigenvalues to compare against")
    dens = np.where(np.isfinite(grid.density), grid.density, 0.0)
    positive = dens[dens > 0]
    if positive.size == 0:
        return 0.0
    threshold = float(np.quantile(positive, density_threshold_quantile))
    ix = np.searchsorted(_cell_edges(grid.x), pool.real) - 1
    iy = np.searchsorted(_cell_edges(grid.y), pool.imag) - 1
    inside = (ix >= 0) & (ix < grid.x.size) & (iy >= 0) & (iy < grid.y.size)
    hits = np.zeros(pool.shape, dtype=bool)
    hits[inside] = dens[iy[inside], ix[inside]] > threshold
    return float(hits.mean())


def _cell_edges(axis: np.ndarray) -> np.ndarray:
    mid = 0.5 * (axis[1:] + axis[:-1])
    first = axis[0] - (axis[1] - axis[0]) / 2
    last = axis[-1] + (axis[-1] - axis[-2]) / 2
    return np.concatenate([[first], mid, [last]])


def ensembles_for_laws(laws: Sequence[Law], n: int, seed: int = 0) -> list:
    """Matrix ensembles whose large-n spectra reproduce the given laws:
    centered semicircle -> GUE, unit-scale free Poisson -> Wishart,
    everything else -> law-sampled diagonal in a Haar-random basis."""
    out = []
    for j, law in enumerate(laws):
        if law.kind == "semicircle" and law.params.get("mean", 0.0) == 0.0:
            out.append(Ensemble("gue", n, law.params["variance"], seed=seed + j))
        elif law.kind == "marchenko_pastur" and law.params.get("scale", 1.0) == 1.0:
            out.append(Ensemble("wishart", n, 1.0 / law.params["lambda"], seed=seed + j))
        else:
            out.append(Ensemble("from_law", n, law=law, seed=seed + j))
    return out


def pool_to_csv(pool: np.ndarray, path: str):
    pool = np.asarray(pool)
    with open(path, "w") as fh:
        if np.iscomplexobj(pool):
            fh.write("re,im\n")
            for v in pool:
                fh.write(f"{v.real:.17g},{v.imag:.17g}\n")
        else:
            fh.write("value\n")
            for v in pool:
                fh.write(f"{v:.17g}\n")
