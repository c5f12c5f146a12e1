"""Command-line entry point.

Subcommands: linearize | realize | dist | brown | rmt-compare | equiv |
series.  Inputs are expression strings (or files; a leading '[' means a JSON
array-of-arrays of expression strings) and a JSON list of laws; outputs are
CSV/JSON artifacts in --out.  Failures print one machine-readable JSON error
object on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import algorithms, linrep, ncexpr, rmt
from .errors import ConfigError, NcratError
from .freeprob import law_from_json
from .linrep import build_flr, flr_to_realization, prune_flr
from .realization import cut_down


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ncrat", description=__doc__)
    sub = p.add_subparsers(dest="mode", required=True)

    def common(sp, laws=False, second=False):
        sp.add_argument("--expr", help="inline expression")
        sp.add_argument("--expr-file", help="file with an expression or a JSON matrix of expressions")
        if second:
            sp.add_argument("--expr2", help="second inline expression")
            sp.add_argument("--expr2-file", help="file with the second expression")
        sp.add_argument("--arity", type=int, help="number of variables (default: inferred)")
        if laws:
            sp.add_argument("--laws", required=True,
                            help="JSON list of laws, inline or a file path")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--workers", type=int, default=os.cpu_count() or 1)
        sp.add_argument("--tol", type=float, default=1e-11, help="fixed-point tolerance")

    sp = sub.add_parser("linearize", help="emit the formal linear representation as JSON")
    common(sp)

    sp = sub.add_parser("realize", help="emit a monic descriptor realization as JSON")
    common(sp)
    sp.add_argument("--cut", action="store_true", help="cut down to a minimal realization")

    sp = sub.add_parser("dist", help="compute the analytic distribution density")
    common(sp, laws=True)
    sp.add_argument("--grid", help="t grid as lo:hi:n (default: auto-ranged)")
    sp.add_argument("--eta", type=float, default=algorithms.DEFAULT_ETA)
    sp.add_argument("--eps-final", type=float, default=algorithms.CORNER_EPS_FLOOR)
    sp.add_argument("--path", choices=("saflr", "minimal"), default="saflr")

    sp = sub.add_parser("brown", help="compute the regularized Brown measure density")
    common(sp, laws=True)
    sp.add_argument("--grid", help="grid as xlo:xhi:nx,ylo:yhi:ny (default: auto-ranged)")
    sp.add_argument("--brown-eps", type=float, default=0.01, help="regularization epsilon")
    sp.add_argument("--eps-final", type=float, default=None,
                    help="corner schedule floor (default: 1e-3 * brown eps)")

    sp = sub.add_parser("rmt-compare", help="compare a computed density against simulated spectra")
    common(sp, laws=True)
    sp.add_argument("--against", required=True, help="density.csv or brown.csv artifact")
    sp.add_argument("--n", type=int, default=1000, help="matrix dimension")
    sp.add_argument("--reps", type=int, default=5)
    sp.add_argument("--bins", type=int, default=60)
    sp.add_argument("--quantile", type=float, default=0.05,
                    help="density threshold quantile for Brown coverage")

    sp = sub.add_parser("equiv", help="random-matrix equivalence verdict for two expressions")
    common(sp, second=True)
    sp.add_argument("--sizes", default="1,2,3,4")
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--equiv-tol", type=float, default=1e-9)

    sp = sub.add_parser("series", help="truncated power series expansion as JSON")
    common(sp)
    sp.add_argument("--degree", type=int, default=6)
    return p


def _load_expr(args, attr="expr"):
    inline = getattr(args, attr, None)
    path = getattr(args, f"{attr}_file", None)
    if inline is None and path is None:
        raise ConfigError(f"one of --{attr.replace('_', '-')} / --{attr.replace('_', '-')}-file is required")
    text = inline if inline is not None else open(path).read().strip()
    if text.startswith("["):
        rows = json.loads(text)
        arity = args.arity or max(ncexpr.arity_of(ncexpr.parse_expr(e, 99)) for row in rows for e in row)
        return ncexpr.MatNcExpr([[ncexpr.parse_expr(e, arity) for e in row] for row in rows]), arity
    arity = args.arity or ncexpr.arity_of(ncexpr.parse_expr(text, 99))
    return ncexpr.parse_expr(text, max(arity, 1)), max(arity, 1)


def _load_laws(args):
    raw = args.laws
    base = "."
    if not raw.lstrip().startswith(("[", "{")):
        base = os.path.dirname(raw) or "."
        raw = open(raw).read()
    data = json.loads(raw)
    if isinstance(data, dict):
        data = [data]
    return [law_from_json(d, base) for d in data]


def _parse_axis(spec: str):
    lo, hi, num = spec.split(":")
    return np.linspace(float(lo), float(hi), int(num))


def _auto_range_1d(expr, laws, seed, points=600):
    ens = rmt.ensembles_for_laws(laws, 200, seed)
    pool = rmt.empirical_spectrum(expr, ens, reps=1, selfadjoint=True)
    lo, hi = float(pool.min()), float(pool.max())
    margin = 0.1 * max(hi - lo, 1.0)
    return np.linspace(lo - margin, hi + margin, points)


def _auto_range_2d(expr, laws, seed, points=101):
    ens = rmt.ensembles_for_laws(laws, 200, seed)
    pool = rmt.empirical_spectrum(expr, ens, reps=1, selfadjoint=False)
    xlo, xhi = float(pool.real.min()), float(pool.real.max())
    ylo, yhi = float(pool.imag.min()), float(pool.imag.max())
    mx = 0.1 * max(xhi - xlo, 0.5)
    my = 0.1 * max(yhi - ylo, 0.5)
    return (np.linspace(xlo - mx, xhi + mx, points),
            np.linspace(ylo - my, yhi + my, points))


def _chunked_corner(solver, b, eps_schedule, workers):
    """Run the batched corner solve in contiguous chunks across threads;
    the merge is deterministic regardless of scheduling."""
    npts = b.shape[0]
    workers = max(1, min(workers, npts))
    bounds = np.linspace(0, npts, workers + 1).astype(int)
    chunks = [(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    if len(chunks) == 1:
        return solver.corner(b, eps_schedule)
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(lambda c: solver.corner(b[c[0]:c[1]], eps_schedule), chunks))
    value = np.concatenate([p.value for p in parts])
    eps_used = np.concatenate([p.eps_used for p in parts])
    gaps = np.concatenate([p.gaps for p in parts])
    deltas = np.concatenate([p.last_deltas for p in parts])
    iters = max(p.iterations_max for p in parts)
    return algorithms.CornerResult(value, eps_used, gaps, iters, deltas)


def _cmd_linearize(args):
    expr, arity = _load_expr(args)
    rho = prune_flr(build_flr(expr, arity=arity))
    _write_json(args, "flr.json", rho.to_json())
    return {"pencil_size": rho.size, "arity": arity}


def _cmd_realize(args):
    expr, arity = _load_expr(args)
    if isinstance(expr, ncexpr.MatNcExpr):
        raise ConfigError("realize currently handles scalar expressions; "
                          "wrap matrices through linearize instead")
    v0 = ncexpr.value_at_zero(expr)
    shifted = ncexpr.Add(expr, ncexpr.Const(-v0))
    rho = prune_flr(build_flr(shifted, arity=arity))
    real = flr_to_realization(rho, np.array([[v0]]))
    if args.cut:
        real = cut_down(real)
    _write_json(args, "realization.json", real.to_json())
    return {"state_dim": real.state_dim, "cut": bool(args.cut)}


def _cmd_dist(args):
    expr, arity = _load_expr(args)
    laws = _load_laws(args)
    if len(laws) < arity:
        raise ConfigError(f"{arity} variables but only {len(laws)} laws")
    grid = _parse_axis(args.grid) if args.grid else _auto_range_1d(expr, laws, args.seed)
    real = algorithms.realize_at(expr, arity=len(laws), path=args.path)
    shifted = algorithms.build_shifted_pencil(real)
    solver = algorithms.CornerSolver(shifted, laws, tol=args.tol)
    sched = algorithms.default_eps_schedule(args.eps_final)
    b = (grid + 1j * args.eta).reshape(-1, 1, 1)
    res = _chunked_corner(solver, b, sched, args.workers)
    g = res.value[:, 0, 0].copy()
    g[res.gaps] = np.nan
    dens = algorithms.stieltjes_invert(grid, g, args.eta,
                                       {"iterations_max_seen": res.iterations_max,
                                        "gaps": int(res.gaps.sum()), "path": args.path})
    algorithms.density_to_csv(dens, os.path.join(args.out, "density.csv"),
                              os.path.join(args.out, "density_meta.json"))
    return {"mass": dens.meta["mass"], "gaps": dens.meta["gaps"],
            "files": ["density.csv", "density_meta.json"]}


def _cmd_brown(args):
    expr, arity = _load_expr(args)
    laws = _load_laws(args)
    if len(laws) < arity:
        raise ConfigError(f"{arity} variables but only {len(laws)} laws")
    if args.grid:
        xspec, yspec = args.grid.split(",")
        x, y = _parse_axis(xspec), _parse_axis(yspec)
    else:
        x, y = _auto_range_2d(expr, laws, args.seed)
    floor = args.eps_final if args.eps_final is not None else \
        max(algorithms.CORNER_EPS_FLOOR, algorithms.BROWN_CORNER_FACTOR * args.brown_eps)
    shifted = algorithms.hermitized_pencil(expr, arity=len(laws))
    solver = algorithms.CornerSolver(shifted, laws, tol=args.tol)
    zz = x[None, :] + 1j * y[:, None]
    res = _chunked_corner(solver, algorithms._lambda_eps(zz, args.brown_eps),
                          algorithms.default_eps_schedule(floor), args.workers)
    g = res.value[:, 1, 0].reshape(zz.shape).copy()
    g[res.gaps.reshape(zz.shape)] = np.nan
    dx = np.gradient(g, x, axis=1)
    dy = np.gradient(g, y, axis=0)
    raw = (0.5 * (dx + 1j * dy)).real / np.pi
    density = np.where(np.isnan(raw), np.nan, np.maximum(raw, 0.0))
    grid = algorithms.BrownGrid(x, y, density,
                                {"epsilon": args.brown_eps,
                                 "iterations_max_seen": res.iterations_max,
                                 "gaps": int(res.gaps.sum())})
    grid.meta["mass"] = grid.mass()
    algorithms.brown_to_csv(grid, os.path.join(args.out, "brown.csv"),
                            os.path.join(args.out, "brown_meta.json"))
    return {"mass": grid.meta["mass"], "gaps": grid.meta["gaps"],
            "files": ["brown.csv", "brown_meta.json"]}


def _cmd_rmt_compare(args):
    expr, arity = _load_expr(args)
    laws = _load_laws(args)
    ens = rmt.ensembles_for_laws(laws, args.n, args.seed)
    with open(args.against) as fh:
        header = fh.readline().strip()
    if header.startswith("x,y"):
        grid = _read_brown_csv(args.against)
        pool = rmt.empirical_spectrum(expr, ens, reps=args.reps, selfadjoint=False)
        metrics = {"coverage": rmt.brown_coverage(grid, pool, args.quantile)}
    else:
        grid = _read_density_csv(args.against)
        pool = rmt.empirical_spectrum(expr, ens, reps=args.reps, selfadjoint=True)
        metrics = rmt.compare_density(grid, pool, args.bins)
    _write_json(args, "metrics.json", metrics)
    return metrics


def _cmd_equiv(args):
    e1, a1 = _load_expr(args, "expr")
    e2, a2 = _load_expr(args, "expr2")
    sizes = tuple(int(s) for s in args.sizes.split(","))
    verdict = ncexpr.matrix_equiv(e1, e2, sizes=sizes, trials=args.trials,
                                  tol=args.equiv_tol, rng_seed=args.seed)
    payload = {"verdict": verdict.kind, "in_domain": verdict.in_domain,
               "trials": verdict.trials}
    if verdict.witness is not None:
        payload["witness_size"] = verdict.witness_size
    _write_json(args, "verdict.json", payload)
    return payload


def _cmd_series(args):
    expr, arity = _load_expr(args)
    table = ncexpr.series_expand(expr, args.degree)
    terms = [{"word": list(w), "re": c.real, "im": c.imag}
             for w, c in sorted(table.terms.items(), key=lambda kv: (len(kv[0]), kv[0]))]
    payload = {"degree": table.degree, "terms": terms}
    _write_json(args, "series.json", payload)
    return {"degree": args.degree, "nonzero_terms": len(terms)}


def _read_density_csv(path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    return algorithms.DensityGrid(np.atleast_1d(data["t"]), np.atleast_1d(data["density"]), {})


def _read_brown_csv(path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    x = np.unique(data["x"])
    y = np.unique(data["y"])
    dens = np.full((y.size, x.size), np.nan)
    ix = np.searchsorted(x, data["x"])
    iy = np.searchsorted(y, data["y"])
    dens[iy, ix] = data["density"]
    return algorithms.BrownGrid(x, y, dens, {})


def _write_json(args, name, payload):
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, name), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


_COMMANDS = {
    "linearize": _cmd_linearize,
    "realize": _cmd_realize,
    "dist": _cmd_dist,
    "brown": _cmd_brown,
    "rmt-compare": _cmd_rmt_compare,
    "equiv": _cmd_equiv,
    "series": _cmd_series,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        os.makedirs(args.out, exist_ok=True)
        summary = _COMMANDS[args.mode](args)
        json.dump({"mode": args.mode, **summary}, sys.stdout, sort_keys=True)
        sys.stdout.write("\n")
        return 0
    except (NcratError, ValueError, OSError, json.JSONDecodeError) as exc:
        payload = {"error": type(exc).__name__, "message": str(exc), "mode": args.mode}
        json.dump(payload, sys.stderr, sort_keys=True)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
