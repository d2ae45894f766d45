"""Desk-scale convergence experiments and population-level oracles.

Every ``run_*`` function is a pure function of its arguments: trial ``t`` draws
its cloud with seed ``seed + t``. Each returns an :class:`ExperimentReport`
whose CSV form carries the full configuration in a ``#`` header line.
"""
from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import j0, jn_zeros

from . import boundary as bd
from . import graphpde as gp
from .normals import first_order_normals, second_order_normals, unit_ball_volume
from .pointcloud import Annulus, Ball, Box, Uniform, sample
from .spatial import SpatialIndex

__all__ = [
    "LogLogFit",
    "fit_loglog",
    "ExperimentReport",
    "PopulationOracle",
    "run_tfr_sweep",
    "run_scaling_sweep",
    "run_distance_scatter",
    "run_eikonal_convergence",
    "run_secondorder_convergence",
    "run_normal_error_sweep",
    "population_bias_check",
    "metric_mask",
]


# ---------------------------------------------------------------------------
# fitting and reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogLogFit:
    slope: float
    intercept: float
    r2: float

    def __iter__(self):
        return iter((self.slope, self.intercept, self.r2))


def fit_loglog(xs, ys) -> LogLogFit:
    """Ordinary least squares of ``log y`` on ``log x``."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need at least two (x, y) pairs of equal length")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs strictly positive values")
    lx, ly = np.log(x), np.log(y)
    A = np.vstack([lx, np.ones_like(lx)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = slope * lx + intercept
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum((ly - pred) ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return LogLogFit(float(slope), float(intercept), r2)


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (Ball, Annulus, Box)):
        return {"kind": type(v).__name__, **{k: _jsonable(x) for k, x in v.__dict__.items()}}
    if hasattr(v, "__dataclass_fields__"):
        return {"kind": type(v).__name__, **{k: _jsonable(getattr(v, k)) for k in v.__dataclass_fields__}}
    return v


@dataclass
class ExperimentReport:
    """Tabulated results plus everything needed to rerun them."""

    name: str
    config: dict
    columns: list
    rows: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def column(self, name, where=None):
        k = self.columns.index(name)
        return np.array([row[k] for row in self.rows if where is None or where(dict(zip(self.columns, row)))])

    def records(self):
        return [dict(zip(self.columns, row)) for row in self.rows]

    def header(self) -> str:
        meta = {
            "experiment": self.name,
            "config": _jsonable(self.config),
            "seeds": _jsonable(self.seeds),
            "fits": {k: {"slope": f.slope, "intercept": f.intercept, "r2": f.r2} for k, f in self.fits.items()},
        }
        if self.notes:
            meta["notes"] = _jsonable(self.notes)
        return "# " + json.dumps(meta, sort_keys=True)

    def to_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(self.header() + "\n")
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# ---------------------------------------------------------------------------
# population oracle (two dimensions)
# ---------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def _box_rays(x0, e, lo, hi, tmax):
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (lo[None, :] - x0[None, :]) / e
        tb = (hi[None, :] - x0[None, :]) / e
    t0 = np.nanmax(np.where(e == 0, -np.inf, np.minimum(ta, tb)), axis=1)
    t1 = np.nanmin(np.where(e == 0, np.inf, np.maximum(ta, tb)), axis=1)
    return [(np.maximum(t0, 0.0), np.minimum(t1, tmax))]


def _inside(domain, x, tol):
    x = np.atleast_2d(x)
    if isinstance(domain, Ball):
        return np.linalg.norm(x - np.array(domain.center), axis=1) <= domain.radius + tol
    if isinstance(domain, Annulus):
        rr = np.linalg.norm(x, axis=1)
        return (rr >= domain.inner - tol) & (rr <= domain.outer + tol)
    if isinstance(domain, Box):
        return np.all((x >= np.array(domain.lower) - tol) & (x <= np.array(domain.upper) + tol), axis=1)
    raise TypeError("unsupported domain")


def _circle_circle(c1, r1, c2, r2):
    d = np.linalg.norm(c2 - c1)
    if d == 0 or d > r1 + r2 or d < abs(r1 - r2):
        return []
    a = (r1 * r1 - r2 * r2 + d * d) / (2 * d)
    h2 = r1 * r1 - a * a
    h = math.sqrt(max(h2, 0.0))
    u = (c2 - c1) / d
    p = c1 + a * u
    perp = np.array([-u[1], u[0]])
    return [p + h * perp, p - h * perp]


def _circle_line(c, r, axis, value):
    off = value - c[axis]
    if abs(off) > r:
        return []
    s = math.sqrt(r * r - off * off)
    other = 1 - axis
    out = []
    for sign in (1.0, -1.0):
        p = np.empty(2)
        p[axis] = value
        p[other] = c[other] + sign * s
        out.append(p)
    return out


class PopulationOracle:
    """Quadrature evaluation of population-level quantities in two dimensions.

    ``v_bar`` integrates ``(y - x0) rho(y)`` over ``B(x0, r)`` intersected with
    the domain in polar coordinates: Gauss-Legendre along each ray segment
    (exact segment ends from ray/boundary intersection) and the midpoint rule
    in angle, doubling the angular resolution until the direction changes by
    less than ``angle_tol`` radians. ``d_bar1`` is exact: the maximum of a
    linear function over the intersection of a disc with the domain is found
    among finitely many candidate points.
    """

    def __init__(self, domain, density=None, angle_tol=1e-6, m0=256, m_max=2**22):
        if domain.dim != 2:
            raise ValueError("the population oracle is implemented for d = 2 only")
        self.domain = domain
        self.density = Uniform() if density is None else density
        self.angle_tol = angle_tol
        self.m0 = m0
        self.m_max = m_max

    def _segments(self, x0, e, tmax):
        dom = self.domain
        if isinstance(dom, Box):
            return _box_rays(x0, e, np.array(dom.lower), np.array(dom.upper), tmax)
        return dom.ray_intervals(x0, e, tmax)

    def _polar(self, x0, r, m, power, vector):
        phi = (np.arange(m) + 0.5) * (2 * math.pi / m)
        e = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        total = np.zeros(2) if vector else 0.0
        for lo, hi in self._segments(x0, e, r):
            lo = np.nan_to_num(lo, nan=0.0)
            hi = np.nan_to_num(hi, nan=0.0)
            length = np.clip(hi - lo, 0.0, None)
            t = lo[:, None] + (_GL_NODES[None, :] + 1) * 0.5 * length[:, None]
            pts = x0[None, None, :] + t[..., None] * e[:, None, :]
            rho = self.density(pts.reshape(-1, 2), self.domain).reshape(t.shape)
            radial = np.sum(_GL_WEIGHTS[None, :] * rho * t**power, axis=1) * 0.5 * length
            if vector:
                total = total + (radial[:, None] * e).sum(axis=0)
            else:
                total = total + radial.sum()
        return total * (2 * math.pi / m)

    def v_bar(self, x0, r):
        """Returns ``(v_bar, m)`` where ``m`` is the accepted angular resolution."""
        x0 = np.asarray(x0, dtype=np.float64)
        m = self.m0
        prev = self._polar(x0, r, m, 2, True)
        while True:
            m *= 2
            cur = self._polar(x0, r, m, 2, True)
            na, nb = np.linalg.norm(prev), np.linalg.norm(cur)
            if na > 0 and nb > 0:
                ang = math.acos(max(-1.0, min(1.0, float(prev @ cur) / (na * nb))))
                if ang < self.angle_tol:
                    return cur, m
            if m >= self.m_max:
                warnings.warn("angular resolution cap reached in v_bar", RuntimeWarning, stacklevel=2)
                return cur, m
            prev = cur

    def nu_bar(self, x0, r):
        v, _ = self.v_bar(x0, r)
        return v / np.linalg.norm(v)

    def theta(self, x, r):
        """``2^d / (omega_d r^d)`` times the mass of ``B(x, r/2)`` inside the domain."""
        x = np.asarray(x, dtype=np.float64)
        m = self.m0
        prev = self._polar(x, r / 2, m, 1, False)
        while True:
            m *= 2
            cur = self._polar(x, r / 2, m, 1, False)
            if abs(cur - prev) <= 1e-6 * abs(cur) or m >= self.m_max:
                break
            prev = cur
        return 4.0 / (math.pi * r * r) * cur

    def _curves(self):
        dom = self.domain
        if isinstance(dom, Ball):
            return [("circle", np.array(dom.center), dom.radius)], []
        if isinstance(dom, Annulus):
            z = np.zeros(2)
            return [("circle", z, dom.inner), ("circle", z, dom.outer)], []
        lo, hi = np.array(dom.lower), np.array(dom.upper)
        lines = [(0, lo[0]), (0, hi[0]), (1, lo[1]), (1, hi[1])]
        corners = [np.array([a, b]) for a in (lo[0], hi[0]) for b in (lo[1], hi[1])]
        return lines, corners

    def d_bar1(self, x0, r, nu=None):
        """``max (x0 - y) . nu`` over ``y`` in the closure of ``B(x0, r)`` within the domain.

        ``nu`` defaults to ``nu_bar(x0, r)``.
        """
        x0 = np.asarray(x0, dtype=np.float64)
        nu = self.nu_bar(x0, r) if nu is None else np.asarray(nu, dtype=np.float64)
        cand = [x0 - r * nu, x0 + r * nu, x0.copy()]
        curves, extra = self._curves()
        cand.extend(extra)
        for cv in curves:
            if cv[0] == "circle":
                _, c, rad = cv
                cand += [c - rad * nu, c + rad * nu]
                cand += _circle_circle(x0, r, c, rad)
            else:
                axis, value = cv
                cand += _circle_line(x0, r, axis, value)
                # along a line the functional is linear, so its extremes are at
                # the segment ends: circle crossings and box corners, both listed
        cand = np.array(cand)
        tol = 1e-12 * max(1.0, r)
        ok = (np.sum((cand - x0) ** 2, axis=1) <= r * r * (1 + 1e-12)) & _inside(self.domain, cand, tol)
        vals = (x0[None, :] - cand[ok]) @ nu
        return float(vals.max())


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def metric_mask(domain, points, r):
    """Points scored in detection metrics. For an annulus, only ``|x| <= outer - r``."""
    if isinstance(domain, Annulus) and domain.boundary == "inner":
        return np.linalg.norm(points, axis=1) <= domain.outer - r
    return np.ones(len(points), dtype=bool)


def _true_normals(domain, points):
    nu = np.zeros_like(points)
    deg = np.ones(len(points), dtype=bool)
    dist = domain.dist(points)
    ok = dist < domain.reach if domain.reach > 0 else np.ones(len(points), dtype=bool)
    if isinstance(domain, Box):
        fd = domain._face_distances(points)
        ok &= np.sum(fd == fd.min(axis=1, keepdims=True), axis=1) == 1
    if isinstance(domain, (Ball, Annulus)):
        ok &= np.linalg.norm(points - (np.array(domain.center) if isinstance(domain, Ball) else 0.0), axis=1) > 0
    if np.any(ok):
        nu[ok] = domain.normal(points[ok])
        deg[ok] = False
    return nu, deg


def _config(**kw):
    return {k: _jsonable(v) for k, v in kw.items()}


# ---------------------------------------------------------------------------
# boundary-test experiments
# ---------------------------------------------------------------------------


def run_tfr_sweep(domain, density, n, eps, r_grid, orders=("first", "second"), trials=1, seed=0,
                  sources=("estimated", "true")) -> ExperimentReport:
    """Mean FNR/FPR/TFR for every (r, order, normal source) over seeded trials.

    ``sources`` selects estimated normals and/or the exact ones. Points whose
    r-ball holds no other point are scored as interior and counted in
    ``insufficient``.
    """
    seeds = [seed + t for t in range(trials)]
    acc = {}
    for s in seeds:
        cloud = sample(domain, density, n, s)
        index = SpatialIndex(cloud)
        X = cloud.points
        tdist = domain.dist(X)
        tnu, tdeg = _true_normals(domain, X)
        for r in r_grid:
            mask = metric_mask(domain, X, r)
            for order in orders:
                for src in sources:
                    kw = {} if src == "estimated" else {"normals": tnu, "degenerate": tdeg}
                    est = bd.distance_estimates(index, r, order, on_isolated="interior", **kw)
                    lab = bd.boundary_test(est, eps)
                    met = bd.detection_metrics(lab, tdist, eps, mask=mask)
                    key = (float(r), order, src)
                    acc.setdefault(key, []).append((met.FNR, met.FPR, met.TFR, int(est.isolated.sum())))
    rep = ExperimentReport(
        "tfr_sweep",
        _config(domain=domain, density=density, n=n, eps=eps, r_grid=list(r_grid), orders=list(orders), trials=trials, seed=seed, sources=list(sources)),
        ["r", "order", "normals", "FNR", "FPR", "TFR", "insufficient"],
        seeds=seeds,
    )
    for key in sorted(acc, key=lambda k: (k[0], k[1], k[2])):
        a = np.array(acc[key], dtype=float)
        rep.rows.append((key[0], key[1], key[2], a[:, 0].mean(), a[:, 1].mean(), a[:, 2].mean(), int(a[:, 3].sum())))
    return rep


def _mean_tfr(domain, density, n, eps, r, order, trials, seed):
    vals = []
    for t in range(trials):
        cloud = sample(domain, density, n, seed + t)
        index = SpatialIndex(cloud)
        est = bd.distance_estimates(index, r, order, on_isolated="interior")
        lab = bd.boundary_test(est, eps)
        tdist = domain.dist(cloud.points)
        try:
            met = bd.detection_metrics(lab, tdist, eps, mask=metric_mask(domain, cloud.points, r))
            vals.append(met.TFR)
        except bd.NoBoundaryPointsError:
            vals.append(math.inf)
    return float(np.mean(vals))


def run_scaling_sweep(domain, density, eps_grid, tfr_threshold, n_cap=20000, trials=10, seed=0, order="first",
                      n_start=250, rel_resolution=0.05, r_of_eps=None) -> ExperimentReport:
    """Smallest n with mean TFR at or below ``tfr_threshold`` for each eps, and the fitted n-vs-eps slope.

    ``r`` defaults to ``sqrt(eps)``. The search doubles n from ``n_start`` and
    then bisects down to ``rel_resolution``; eps values whose target is not met
    at ``n_cap`` are reported as censored.
    """
    r_of_eps = r_of_eps or math.sqrt
    rep = ExperimentReport(
        "scaling_sweep",
        _config(domain=domain, density=density, eps_grid=list(eps_grid), tfr_threshold=tfr_threshold, n_cap=n_cap,
                trials=trials, seed=seed, order=order, n_start=n_start, rel_resolution=rel_resolution),
        ["eps", "r", "n_min", "tfr_at_n_min", "censored", "evaluations"],
        seeds=[seed + t for t in range(trials)],
    )
    cache = {}

    def tfr(n, eps, r):
        key = (n, eps)
        if key not in cache:
            cache[key] = _mean_tfr(domain, density, n, eps, r, order, trials, seed)
        return cache[key]

    for eps in eps_grid:
        r = r_of_eps(eps)
        evals0 = len(cache)
        lo, hi = None, n_start
        while hi <= n_cap and tfr(hi, eps, r) > tfr_threshold:
            lo, hi = hi, hi * 2
        if hi > n_cap:
            if tfr(n_cap, eps, r) <= tfr_threshold:
                lo, hi = lo, n_cap
            else:
                rep.rows.append((eps, r, n_cap, tfr(n_cap, eps, r), True, len(cache) - evals0))
                continue
        lo = lo if lo is not None else 0
        while hi - lo > max(1, int(rel_resolution * hi)):
            mid = (lo + hi) // 2
            if mid < 2:
                break
            if tfr(mid, eps, r) <= tfr_threshold:
                hi = mid
            else:
                lo = mid
        rep.rows.append((eps, r, hi, tfr(hi, eps, r), False, len(cache) - evals0))
    ok = [(row[0], row[2]) for row in rep.rows if not row[4]]
    if len(ok) >= 2:
        rep.fits["n_vs_eps"] = fit_loglog([e for e, _ in ok], [m for _, m in ok])
    return rep


def run_distance_scatter(domain, density, n, eps, r, seed=0, trials=1) -> ExperimentReport:
    """True versus estimated distances for scored points with ``d_Omega <= r``."""
    rep = ExperimentReport(
        "distance_scatter",
        _config(domain=domain, density=density, n=n, eps=eps, r=r, seed=seed, trials=trials),
        ["trial", "index", "true_dist", "d_hat1", "d_hat2"],
        seeds=[seed + t for t in range(trials)],
    )
    for t in range(trials):
        cloud = sample(domain, density, n, seed + t)
        index = SpatialIndex(cloud)
        X = cloud.points
        tdist = domain.dist(X)
        keep = np.flatnonzero((tdist <= r) & metric_mask(domain, X, r))
        d1 = bd.distance_estimates(index, r, "first", on_isolated="interior").d_hat
        d2 = bd.distance_estimates(index, r, "second", on_isolated="interior").d_hat
        for i in keep:
            rep.rows.append((t, int(i), float(tdist[i]), float(d1[i]), float(d2[i])))
    true = rep.column("true_dist")
    e1 = rep.column("d_hat1") - true
    e2 = rep.column("d_hat2") - true
    rep.notes = {"mean_err1": float(e1.mean()), "mean_err2": float(e2.mean()),
                 "mae1": float(np.abs(e1).mean()), "mae2": float(np.abs(e2).mean())}
    return rep


def run_normal_error_sweep(domain, density, n, r_grid, trials=1, seed=0, window=None, near=None,
                           orders=("first", "second")) -> ExperimentReport:
    """Angular error of estimated normals against the exact ones, as r varies.

    ``window(points) -> mask`` picks evaluation points (default: within
    ``near`` of the boundary, ``near`` defaulting to the smallest r). Reports
    the mean absolute angle and the absolute value of the mean signed angle
    (the latter isolates bias from noise in 2-D).
    """
    near = min(r_grid) if near is None else near
    rep = ExperimentReport(
        "normal_error_sweep",
        _config(domain=domain, density=density, n=n, r_grid=list(r_grid), trials=trials, seed=seed, near=near, orders=list(orders)),
        ["r", "order", "mean_abs_angle", "abs_mean_signed_angle", "points"],
        seeds=[seed + t for t in range(trials)],
    )
    acc = {}
    for t in range(trials):
        cloud = sample(domain, density, n, seed + t)
        index = SpatialIndex(cloud)
        X = cloud.points
        sel = window(X) if window is not None else domain.dist(X) <= near
        rows = np.flatnonzero(sel)
        tnu, tdeg = _true_normals(domain, X[rows])
        for r in r_grid:
            for order in orders:
                est = (first_order_normals if order == "first" else second_order_normals)(index, r, rows=rows)
                nu = est.nu
                ok = ~est.degenerate & ~tdeg
                cosang = np.clip(np.sum(nu[ok] * tnu[ok], axis=1), -1, 1)
                ang = np.arccos(cosang)
                if X.shape[1] == 2:
                    cross = tnu[ok, 0] * nu[ok, 1] - tnu[ok, 1] * nu[ok, 0]
                    signed = np.arctan2(cross, cosang)
                else:
                    signed = ang
                a = acc.setdefault((float(r), order), [[], []])
                a[0].append(ang)
                a[1].append(signed)
    for (r, order), (angs, signed) in sorted(acc.items()):
        angs = np.concatenate(angs)
        signed = np.concatenate(signed)
        rep.rows.append((r, order, float(angs.mean()), float(abs(signed.mean())), int(len(angs))))
    for order in orders:
        rs = rep.column("r", lambda d: d["order"] == order)
        for metric in ("mean_abs_angle", "abs_mean_signed_angle"):
            ys = rep.column(metric, lambda d: d["order"] == order)
            if np.all(ys > 0):
                rep.fits[f"{order}_{metric}"] = fit_loglog(rs, ys)
    return rep


def population_bias_check(domain, density, r_grid, points, L=None, prob_exponent=3.0) -> ExperimentReport:
    """Exact population distance estimate against the two-sided bias bound, per (point, r).

    The upper bound is ``d_Omega + (7 C_x / (R C_y) + 1/R) r^2``. The slope of the
    mean excess ``d_bar1 - d_Omega`` against r is fitted when it is positive.
    """
    oracle = PopulationOracle(domain, density)
    d = domain.dim
    R = domain.reach
    rho_min, rho_max = (density or Uniform()).bounds(domain)
    L = (density or Uniform()).lipschitz(domain) if L is None else L
    C = bd.theory_constants(d, R, L, rho_min, rho_max, prob_exponent)
    slack = 7 * C.C_x / (R * C.C_y) + 1 / R
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    tdist = domain.dist(pts)
    rep = ExperimentReport(
        "population_bias",
        _config(domain=domain, density=density, r_grid=list(r_grid), points=pts, L=L, prob_exponent=prob_exponent),
        ["point", "r", "true_dist", "d_bar1", "upper", "lower_ok", "upper_ok"],
    )
    tol = 1e-12
    for i, x0 in enumerate(pts):
        for r in r_grid:
            dbar = oracle.d_bar1(x0, r)
            upper = tdist[i] + slack * r * r
            rep.rows.append((i, float(r), float(tdist[i]), dbar, upper, bool(dbar >= tdist[i] - tol), bool(dbar <= upper + tol)))
    excess = []
    for r in r_grid:
        ex = rep.column("d_bar1", lambda q, r=r: q["r"] == r) - rep.column("true_dist", lambda q, r=r: q["r"] == r)
        excess.append(float(np.mean(ex)))
    rep.notes = {"mean_excess": excess, "C_x": C.C_x, "C_y": C.C_y}
    if all(e > 0 for e in excess) and len(r_grid) >= 2:
        rep.fits["excess_vs_r"] = fit_loglog(r_grid, excess)
    return rep


# ---------------------------------------------------------------------------
# PDE experiments
# ---------------------------------------------------------------------------


def run_eikonal_convergence(domain, n_grid=tuple(2**p for p in range(10, 16)), trials=20, seed=0,
                            order="second") -> ExperimentReport:
    """Sup error of the graph eikonal solution against ``d_Omega`` as n grows.

    Uses ``k = 10 n^(1/5)`` neighbours: the detection radius at each point is
    its k-th neighbour distance, the boundary width solves
    ``36 pi rho n eps^2 = k``, and the graph connects points within the
    expected k-th neighbour distance ``sqrt(k / (pi rho n))``.
    """
    rho = 1.0 / domain.volume
    d = domain.dim
    rep = ExperimentReport(
        "eikonal_convergence",
        _config(domain=domain, n_grid=list(n_grid), trials=trials, seed=seed, order=order),
        ["n", "k", "eps", "graph_eps", "sup_error", "unreachable", "boundary_max_u"],
        seeds=[seed + t for t in range(trials)],
    )
    for n in n_grid:
        k = int(round(10 * n ** 0.2))
        eps = gp.eikonal_eps(k, n, rho, d)
        h = (k / (unit_ball_volume(d) * rho * n)) ** (1 / d)
        errs, unreach, bmax = [], 0, 0.0
        for t in range(trials):
            cloud = sample(domain, Uniform(), n, seed + t)
            index = SpatialIndex(cloud)
            radii = index.kth_neighbor_distances(k)
            est = bd.distance_estimates(index, radii, order, on_isolated="interior")
            boundary = np.flatnonzero(bd.boundary_test(est, eps).label)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                sol = gp.solve_eikonal(index, h, boundary)
            fin = np.isfinite(sol.u)
            unreach += int((~fin).sum())
            bmax = max(bmax, float(np.max(sol.u[boundary])))
            errs.append(float(np.max(np.abs(sol.u[fin] - domain.dist(cloud.points[fin])))))
        rep.rows.append((n, k, eps, h, float(np.mean(errs)), unreach, bmax))
    if len(rep.rows) >= 2:
        rep.fits["error_vs_eps"] = fit_loglog(rep.column("eps"), rep.column("sup_error"))
    return rep


def _robin_data(X):
    x1 = X[:, 0]
    s = 2 * x1 * x1
    u = np.sin(s) - np.cos(s)
    du1 = 4 * x1 * (np.cos(s) + np.sin(s))
    d2u = 4 * (np.cos(s) + np.sin(s)) + 16 * x1 * x1 * (np.cos(s) - np.sin(s))
    grad = np.zeros_like(X)
    grad[:, 0] = du1
    return u, grad, d2u


def run_secondorder_convergence(problem, n_grid=tuple(2**p for p in range(10, 15)), trials=10, seed=0,
                                robin_gamma=0.5, last=3) -> ExperimentReport:
    """Sup error of the graph Robin solution or Dirichlet eigenvector on the unit disc.

    ``eps = (log n / n)^(1/6) / 4``; boundary points have second-order distance
    estimate below ``3 eps / 2`` with radius equal to the k-th neighbour
    distance, ``k = 2 pi n eps^2``. The Robin rows use the estimated normals.
    The slope is fitted over the last ``last`` grid points.
    """
    if problem not in ("robin", "eigen"):
        raise ValueError("problem must be 'robin' or 'eigen'")
    domain = Ball(1.0, dim=2)
    d = 2
    rep = ExperimentReport(
        "secondorder_convergence",
        _config(problem=problem, n_grid=list(n_grid), trials=trials, seed=seed, robin_gamma=robin_gamma, last=last),
        ["n", "k", "eps", "sup_error", "boundary_points"],
        seeds=[seed + t for t in range(trials)],
    )
    z0 = float(jn_zeros(0, 1)[0])
    for n in n_grid:
        eps = 0.25 * (math.log(n) / n) ** (1 / (d + 4))
        k = max(1, int(round(2 * math.pi * n * eps * eps)))
        errs, nb = [], 0
        for t in range(trials):
            cloud = sample(domain, Uniform(), n, seed + t)
            index = SpatialIndex(cloud)
            X = cloud.points
            radii = index.kth_neighbor_distances(k)
            normals = second_order_normals(index, radii)
            nu, deg = normals.full(n)
            est = bd.distance_estimates(index, radii, "second", normals=nu, degenerate=deg, on_isolated="interior")
            boundary = np.flatnonzero(bd.boundary_test(est, eps).label)
            nb += len(boundary)
            graph = gp.build_epsilon_graph(index, eps)
            if problem == "robin":
                u_true, grad, lap = _robin_data(X)
                tnu = domain.normal(X[boundary])
                g = robin_gamma * u_true[boundary] - (1 - robin_gamma) * np.sum(grad[boundary] * tnu, axis=1)
                f = -(1.0 / math.pi) * lap
                bc = gp.BoundaryConditions(boundary, robin_gamma, g, f, nu[boundary])
                sol = gp.solve_robin(index, graph, eps, bc)
                errs.append(float(np.max(np.abs(sol.u - u_true))))
            else:
                u_true = j0(z0 * np.linalg.norm(X, axis=1))
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    sol = gp.solve_dirichlet_eigen(graph, boundary, eps=eps, dim=d)
                errs.append(float(np.max(np.abs(sol.u - u_true / u_true.max()))))
        rep.rows.append((n, k, eps, float(np.mean(errs)), nb / trials))
    eps_col, err_col = rep.column("eps"), rep.column("sup_error")
    if len(rep.rows) >= 2:
        rep.fits["error_vs_eps_last"] = fit_loglog(eps_col[-last:], err_col[-last:])
        rep.fits["error_vs_eps_all"] = fit_loglog(eps_col, err_col)
    return rep
