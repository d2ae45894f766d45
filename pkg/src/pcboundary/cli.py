"""Command-line interface: ``pcboundary <command> [flags]``.

Exit status is 0 on success, 2 on usage errors and 1 when a computation
fails. Each run prints its fully resolved configuration to stderr as JSON and
writes the same JSON as the first ``#`` line of every CSV it produces (the
worker count is left out of the file so outputs do not depend on it).
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import boundary as bd
from . import experiments as ex
from . import graphpde as gp
from .normals import first_order_normals, second_order_normals
from .pointcloud import Annulus, Ball, Box, ParseError, Sinusoidal, Uniform, load, sample, save_binary
from .spatial import SpatialIndex

__all__ = ["main", "build_parser"]


class CliError(Exception):
    """A failure worth reporting with exit status 1."""


# ---------------------------------------------------------------------------
# shared flag groups
# ---------------------------------------------------------------------------


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _add_domain(p, required=False):
    g = p.add_argument_group("domain")
    g.add_argument("--domain", choices=["ball", "annulus", "box"], required=required,
                   help="synthetic domain (also enables true distances in reports)")
    g.add_argument("--dim", type=int, default=2, help="dimension d (count, default 2)")
    g.add_argument("--radius", type=float, default=0.5, help="ball radius (length, default 0.5)")
    g.add_argument("--inner", type=float, default=0.5, help="annulus inner radius (length, default 0.5)")
    g.add_argument("--outer", type=float, default=0.8, help="annulus outer radius (length, default 0.8)")
    g.add_argument("--annulus-boundary", choices=["inner", "both"], default="inner",
                   help="which annulus spheres count as boundary (default inner)")
    g.add_argument("--lower", type=_floats, default=None, help="box lower corner, comma separated (lengths, default 0,...)")
    g.add_argument("--upper", type=_floats, default=None, help="box upper corner, comma separated (lengths, default 1,...)")


def _add_density(p):
    g = p.add_argument_group("density")
    g.add_argument("--density", choices=["uniform", "sinusoidal"], default="uniform", help="sampling density (default uniform)")
    g.add_argument("--L", type=float, default=2.0, help="sinusoidal Lipschitz parameter (1/length^(d+1), default 2)")


def _domain(args):
    if args.domain is None:
        return None
    if args.domain == "ball":
        return Ball(args.radius, dim=args.dim)
    if args.domain == "annulus":
        return Annulus(args.inner, args.outer, dim=args.dim, boundary=args.annulus_boundary)
    lower = args.lower or (0.0,) * args.dim
    upper = args.upper or (1.0,) * args.dim
    return Box(lower, upper)


def _density(args):
    return Uniform() if args.density == "uniform" else Sinusoidal(args.L)


def _config(args):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "threads")}
    return json.loads(json.dumps(cfg, default=list))


def _echo(args):
    full = dict(_config(args))
    full["threads"] = args.threads
    print(json.dumps({"command": args.command, **full}, sort_keys=True), file=sys.stderr)


def _header(args):
    return "# " + json.dumps({"command": args.command, **_config(args)}, sort_keys=True)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    if isinstance(v, float) and math.isnan(v):
        return ""
    return repr(float(v))


def _write_table(path, header_lines, columns, rows):
    with open(path, "w", newline="\n") as fh:
        for line in header_lines:
            fh.write(line + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _load_cloud(path):
    if not os.path.exists(path):
        raise CliError(f"input file not found: {path}")
    try:
        return load(path)
    except ParseError as err:
        raise CliError(f"pointcloud: cannot parse {path}: {err}") from None


def _read_table(path):
    """Columns of a CSV written by this tool (``#`` lines skipped)."""
    if not os.path.exists(path):
        raise CliError(f"input file not found: {path}")
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#") and not ln.lower().startswith("lambda=")]
    if not lines:
        raise CliError(f"empty table: {path}")
    first = lines[0].split(",")
    try:
        [float(x) for x in first]
        names = [f"c{j}" for j in range(len(first))]
        body = lines
    except ValueError:
        names = [c.strip() for c in first]
        body = lines[1:]
    data = {name: [] for name in names}
    for lineno, ln in enumerate(body, start=2):
        parts = ln.split(",")
        if len(parts) != len(names):
            raise CliError(f"{path}: ragged row at data line {lineno}")
        for name, val in zip(names, parts):
            data[name].append(float(val) if val.strip() else math.nan)
    return {k: np.array(v) for k, v in data.items()}


def _boundary_indices(path, n):
    """Boundary set from a label file (``index``/``label`` columns) or a bare index list."""
    tab = _read_table(path)
    if "label" in tab:
        idx = tab["index"].astype(int) if "index" in tab else np.arange(len(tab["label"]))
        out = idx[tab["label"] > 0.5]
    elif "index" in tab:
        out = tab["index"].astype(int)
    else:
        out = next(iter(tab.values())).astype(int)
    if np.any(out < 0) or np.any(out >= n):
        raise CliError("boundary file refers to indices outside the cloud")
    return np.unique(out), tab


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_sample(args):
    dom = _domain(args)
    cloud = sample(dom, _density(args), args.n, args.seed)
    if args.format == "binary" or (args.format is None and args.out.endswith((".pcb", ".bin"))):
        save_binary(cloud, args.out)
    else:
        cols = [f"x{j + 1}" for j in range(cloud.dim)]
        _write_table(args.out, [_header(args)], cols, cloud.points.tolist())


def _radius(args, index):
    if args.r is not None:
        return args.r
    if getattr(args, "percentile", None) is not None:
        return index.kth_neighbor_distances(args.k)
    return bd.default_radius(index, args.k)


def cmd_boundary(args):
    cloud = _load_cloud(args.input)
    index = SpatialIndex(cloud, workers=args.threads)
    r = _radius(args, index)
    order = "first" if args.order == 1 else "second"
    res = bd.detect_boundary(index, r, eps=args.eps, percentile=args.percentile, order=order,
                             smoothing=args.smoothing, on_isolated="interior")
    dom = _domain(args)
    true = dom.dist(cloud.points) if dom is not None else np.full(cloud.n, math.nan)
    cols = ["index", "d_hat", "label", "true_dist"] + [f"nu_{j + 1}" for j in range(cloud.dim)]
    rows = [[i, res.d_hat[i], bool(res.label[i]), true[i], *res.nu[i]] for i in range(cloud.n)]
    extra = f"# threshold={res.threshold!r} eps={res.eps!r}"
    _write_table(args.out, [_header(args), extra], cols, rows)


def cmd_normals(args):
    cloud = _load_cloud(args.input)
    index = SpatialIndex(cloud, workers=args.threads)
    r = args.r if args.r is not None else bd.default_radius(index, args.k)
    est = first_order_normals(index, r) if args.order == 1 else second_order_normals(index, r)
    cols = ["index", "magnitude"] + [f"nu_{j + 1}" for j in range(cloud.dim)] + ["degenerate"]
    rows = [[i, est.magnitude[i], *est.nu[i], bool(est.degenerate[i])] for i in range(cloud.n)]
    _write_table(args.out, [_header(args)], cols, rows)


def _solution_rows(cloud, u, dom, true_fn=None):
    if dom is None and true_fn is None:
        return ["index", "u"], [[i, u[i]] for i in range(cloud.n)]
    true = true_fn(cloud.points) if true_fn is not None else dom.dist(cloud.points)
    return ["index", "u", "true", "abs_error"], [[i, u[i], true[i], abs(u[i] - true[i])] for i in range(cloud.n)]


def cmd_eikonal(args):
    cloud = _load_cloud(args.input)
    index = SpatialIndex(cloud, workers=args.threads)
    b, _ = _boundary_indices(args.boundary, cloud.n)
    import warnings

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        sol = gp.solve_eikonal(index, args.eps, b)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    cols, rows = _solution_rows(cloud, sol.u, _domain(args))
    _write_table(args.out, [_header(args)], cols, rows)


def _column_or_const(values, const, n, name):
    if values is not None:
        if len(values) != n:
            raise CliError(f"{name} file must have one value per point")
        return values
    return np.full(n, const)


def cmd_poisson(args):
    cloud = _load_cloud(args.input)
    index = SpatialIndex(cloud, workers=args.threads)
    b, tab = _boundary_indices(args.boundary, cloud.n)
    nu_cols = [f"nu_{j + 1}" for j in range(cloud.dim)]
    if all(c in tab for c in nu_cols) and "index" in tab:
        nu_full = np.zeros((cloud.n, cloud.dim))
        nu_full[tab["index"].astype(int)] = np.stack([tab[c] for c in nu_cols], axis=1)
        nu = nu_full[b]
    else:
        r = args.r if args.r is not None else bd.default_radius(index, args.k)
        nu = second_order_normals(index, r).nu[b]
    if np.any(np.linalg.norm(nu, axis=1) < 0.5):
        raise CliError("graphpde: some boundary points have no usable normal")
    rhs = _read_table(args.rhs) if args.rhs else {}
    f = _column_or_const(rhs.get("f"), args.f, cloud.n, "f")
    g = _column_or_const(rhs.get("g"), args.g, cloud.n, "g")
    graph = gp.build_epsilon_graph(index, args.eps)
    bc = gp.BoundaryConditions(b, args.gamma, g, f, nu)
    sol = gp.solve_robin(index, graph, args.eps, bc)
    cols, rows = ["index", "u"], [[i, sol.u[i]] for i in range(cloud.n)]
    _write_table(args.out, [_header(args), f"# residual={sol.residual!r}"], cols, rows)


def cmd_eigen(args):
    cloud = _load_cloud(args.input)
    index = SpatialIndex(cloud, workers=args.threads)
    b, _ = _boundary_indices(args.boundary, cloud.n)
    graph = gp.build_epsilon_graph(index, args.eps)
    sol = gp.solve_dirichlet_eigen(graph, b, eps=args.eps, dim=cloud.dim, normalization=args.normalization)
    cols, rows = ["index", "u"], [[i, sol.u[i]] for i in range(cloud.n)]
    _write_table(args.out, [_header(args), f"lambda={sol.eigenvalue!r}"], cols, rows)


def cmd_depth(args):
    cloud = _load_cloud(args.input)
    index = SpatialIndex(cloud, workers=args.threads)
    res = gp.depth_rank(index, args.k, args.percentile, args.method)
    rows = [[rank, int(i), res.depth[i], bool(res.boundary[i])] for rank, i in enumerate(res.order)]
    _write_table(args.out, [_header(args)], ["rank", "index", "depth", "boundary"], rows)


def cmd_experiment(args):
    dom = _domain(args) or Ball(0.5, dim=args.dim)
    dens = _density(args)
    name = args.name
    if name == "tfr":
        rep = ex.run_tfr_sweep(dom, dens, args.n, args.eps, args.r_grid, trials=args.trials, seed=args.seed)
    elif name == "scaling":
        rep = ex.run_scaling_sweep(dom, dens, args.eps_grid, args.threshold, n_cap=args.n_cap,
                                   trials=args.trials, seed=args.seed, order="first" if args.order == 1 else "second")
    elif name == "scatter":
        rep = ex.run_distance_scatter(dom, dens, args.n, args.eps, args.r_grid[0], seed=args.seed, trials=args.trials)
    elif name == "eikonal":
        rep = ex.run_eikonal_convergence(dom, n_grid=args.n_grid, trials=args.trials, seed=args.seed)
    elif name in ("robin", "eigen"):
        rep = ex.run_secondorder_convergence(name, n_grid=args.n_grid, trials=args.trials, seed=args.seed)
    elif name == "bias":
        rng = np.random.default_rng(args.seed)
        R = dom.reach
        pts = []
        for _ in range(20):
            a = rng.uniform(0, 2 * args.eps)
            th = rng.uniform(0, 2 * math.pi)
            rad = (R - a) if isinstance(dom, Ball) else (dom.inner + a)
            pts.append([rad * math.cos(th), rad * math.sin(th)])
        rep = ex.population_bias_check(dom, dens, args.r_grid, np.array(pts))
    else:  # pragma: no cover - argparse restricts the choices
        raise CliError(f"unknown experiment {name}")
    rep.config = {"cli": _config(args), **rep.config}
    rep.to_csv(args.out)
    for key, fit in rep.fits.items():
        print(f"{key}: slope={fit.slope:.4f} intercept={fit.intercept:.4f} r2={fit.r2:.4f}", file=sys.stderr)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="pcboundary", description="Boundary detection and graph PDE solvers on point clouds.")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker cap for neighbour queries (count; default $PCB_THREADS or 1); results do not depend on it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw a synthetic point cloud")
    _add_domain(p, required=True)
    _add_density(p)
    p.add_argument("--n", type=int, required=True, help="number of points (count)")
    p.add_argument("--seed", type=int, default=0, help="random seed (integer, default 0)")
    p.add_argument("--out", required=True, help="output path (.csv, or .pcb/.bin for binary)")
    p.add_argument("--format", choices=["csv", "binary"], default=None, help="force the output format")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("boundary", help="estimate distances to the boundary and label boundary points")
    p.add_argument("--in", dest="input", required=True, help="input cloud (CSV or binary)")
    p.add_argument("--out", required=True, help="output CSV: index,d_hat,label,true_dist,nu_*")
    p.add_argument("--r", type=float, default=None,
                   help="neighbourhood radius (length); default: k-th neighbour distance per point with --percentile, "
                        "otherwise the smallest radius giving every point k neighbours")
    grp = p.add_mutually_exclusive_group(required=True)
    grp.add_argument("--eps", type=float, help="boundary width (length); label when d_hat < 3 eps / 2")
    grp.add_argument("--percentile", type=float, help="label the lowest p percent of d_hat (percent)")
    p.add_argument("--order", type=int, choices=[1, 2], default=2, help="estimator order (default 2)")
    p.add_argument("--k", type=int, default=10, help="neighbour count for default radii (count, default 10)")
    p.add_argument("--smoothing", type=float, default=None, help="normal smoothing radius (length, optional)")
    _add_domain(p)
    p.set_defaults(func=cmd_boundary)

    p = sub.add_parser("normals", help="estimate inward normals")
    p.add_argument("--in", dest="input", required=True, help="input cloud")
    p.add_argument("--out", required=True, help="output CSV: index,magnitude,nu_*,degenerate")
    p.add_argument("--r", type=float, default=None, help="neighbourhood radius (length; default from --k)")
    p.add_argument("--order", type=int, choices=[1, 2], default=2, help="estimator order (default 2)")
    p.add_argument("--k", type=int, default=10, help="neighbour count for the default radius (count, default 10)")
    p.set_defaults(func=cmd_normals)

    p = sub.add_parser("eikonal", help="graph distance to a boundary set")
    p.add_argument("--in", dest="input", required=True, help="input cloud")
    p.add_argument("--boundary", required=True, help="label CSV from 'boundary' or a list of indices")
    p.add_argument("--eps", type=float, required=True, help="graph connection radius (length)")
    p.add_argument("--out", required=True, help="output CSV: index,u[,true,abs_error]")
    _add_domain(p)
    p.set_defaults(func=cmd_eikonal)

    p = sub.add_parser("poisson", help="graph Poisson equation with Robin boundary rows")
    p.add_argument("--in", dest="input", required=True, help="input cloud")
    p.add_argument("--boundary", required=True, help="label CSV (its nu_* columns supply the normals when present)")
    p.add_argument("--eps", type=float, required=True, help="graph connection radius (length)")
    p.add_argument("--gamma", type=float, default=0.5, help="Robin mixing weight in (0, 1] (dimensionless, default 0.5)")
    p.add_argument("--f", type=float, default=0.0, help="constant interior right-hand side (units of u per length^2, default 0)")
    p.add_argument("--g", type=float, default=0.0, help="constant boundary data (units of u, default 0)")
    p.add_argument("--rhs", default=None, help="CSV with per-point columns f and/or g (overrides the constants)")
    p.add_argument("--r", type=float, default=None, help="normal estimation radius if the label file has no normals (length)")
    p.add_argument("--k", type=int, default=10, help="neighbour count for the default radius (count, default 10)")
    p.add_argument("--out", required=True, help="output CSV: index,u")
    p.set_defaults(func=cmd_poisson)

    p = sub.add_parser("eigen", help="principal Dirichlet eigenvector of the graph Laplacian")
    p.add_argument("--in", dest="input", required=True, help="input cloud")
    p.add_argument("--boundary", required=True, help="label CSV or index list (u = 0 there)")
    p.add_argument("--eps", type=float, required=True, help="graph connection radius (length)")
    p.add_argument("--normalization", choices=["unnormalized", "symmetric"], default="unnormalized", help="Laplacian normalization")
    p.add_argument("--out", required=True, help="output CSV with a 'lambda=<value>' line before the columns")
    p.set_defaults(func=cmd_eigen)

    p = sub.add_parser("depth", help="rank points by data depth")
    p.add_argument("--in", dest="input", required=True, help="input cloud")
    p.add_argument("--k", type=int, default=10, help="neighbours per point (count, default 10)")
    p.add_argument("--percentile", type=float, default=10.0, help="boundary share (percent, default 10)")
    p.add_argument("--method", choices=["eikonal", "eigen"], default="eikonal", help="depth function (default eikonal)")
    p.add_argument("--out", required=True, help="output CSV: rank,index,depth,boundary")
    p.set_defaults(func=cmd_depth)

    p = sub.add_parser("experiment", help="run a convergence experiment and write its report")
    p.add_argument("name", choices=["tfr", "scaling", "scatter", "eikonal", "robin", "eigen", "bias"], help="experiment")
    _add_domain(p)
    _add_density(p)
    p.add_argument("--n", type=int, default=4000, help="points per trial (count, default 4000)")
    p.add_argument("--eps", type=float, default=0.03, help="boundary width (length, default 0.03)")
    p.add_argument("--r-grid", type=_floats, default=(0.18,), help="test radii, comma separated (lengths, default 0.18)")
    p.add_argument("--eps-grid", type=_floats, default=(0.05, 0.04, 0.03), help="boundary widths for 'scaling' (lengths)")
    p.add_argument("--n-grid", type=_ints, default=tuple(2**q for q in range(10, 15)), help="sample sizes (counts)")
    p.add_argument("--threshold", type=float, default=0.005, help="TFR target for 'scaling' (fraction, default 0.005)")
    p.add_argument("--n-cap", type=int, default=20000, help="largest n tried by 'scaling' (count, default 20000)")
    p.add_argument("--order", type=int, choices=[1, 2], default=1, help="test order for 'scaling' (default 1)")
    p.add_argument("--trials", type=int, default=10, help="trials per setting (count, default 10)")
    p.add_argument("--seed", type=int, default=0, help="base seed; trial t uses seed + t (integer, default 0)")
    p.add_argument("--out", required=True, help="report CSV path")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads is not None:
        if args.threads == 0 or args.threads < -1:
            print("error: --threads must be a positive integer or -1", file=sys.stderr)
            return 2
        os.environ["PCB_THREADS"] = str(args.threads)
    _echo(args)
    try:
        args.func(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, ArithmeticError, OSError) as err:
        module = type(err).__module__.rsplit(".", 1)[-1]
        print(f"error: {module}: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
