"""Distance-to-boundary estimators, the boundary test, theory constants and metrics.

Given unit normal estimates ``nu``, the first-order distance estimate at ``x^i`` is

    d1(x^i) = max_{x^j in B(x^i, r)} (x^i - x^j) . nu(x^i),

the height of the point above its lowest neighbour along the normal. The
maximum runs over the closed ball including ``x^i`` itself, so ``d1 >= 0``. The
second-order estimate replaces ``nu(x^i)`` by the average of the normals at
``x^i`` and ``x^j`` whenever they point into the same half-space.

A point is labelled boundary when its estimate is strictly below ``3*eps/2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .normals import _finish as _finish_normals
from .normals import (
    NormalEstimate,
    first_order_normals,
    second_order_normals,
    smooth_normals,
    unit_ball_volume,
)
from .spatial import SpatialIndex

__all__ = [
    "InsufficientNeighborsError",
    "TestParams",
    "DistanceEstimate",
    "BoundaryLabel",
    "TheoryConstants",
    "RecommendedParams",
    "DetectionMetrics",
    "BoundaryResult",
    "NoBoundaryPointsError",
    "estimate_normals",
    "distance_estimates",
    "distance_first_order",
    "distance_second_order",
    "boundary_test",
    "boundary_percentile",
    "theory_constants",
    "c_y_full",
    "recommended_params",
    "detection_metrics",
    "detect_boundary",
    "default_radius",
]


class InsufficientNeighborsError(ValueError):
    """Some points have no neighbour other than themselves within ``r``."""

    def __init__(self, indices):
        self.indices = np.asarray(indices, dtype=np.intp)
        shown = ", ".join(str(int(i)) for i in self.indices[:10])
        more = "" if len(self.indices) <= 10 else f" (and {len(self.indices) - 10} more)"
        super().__init__(f"insufficient neighbors: no point within r of index {shown}{more}")


class NoBoundaryPointsError(ValueError):
    pass


@dataclass(frozen=True)
class TestParams:
    """Test radii plus the two assumption flags (``None`` when the reach is unknown)."""

    r: float
    eps: float
    order: str = "second"
    smoothing: float | None = None
    reach: float | None = None

    def __post_init__(self):
        if not (self.r > 0 and self.eps > 0):
            raise ValueError("r and eps must be positive")
        if self.order not in ("first", "second"):
            raise ValueError("order must be 'first' or 'second'")

    def assumption1(self, d: int) -> bool:
        return self.eps / self.r <= 1.0 / (3.0 * math.sqrt(d))

    @property
    def assumption2(self) -> bool | None:
        if self.reach is None:
            return None
        return self.r**2 <= self.reach * self.eps


@dataclass(frozen=True)
class DistanceEstimate:
    """``d_hat`` for ``rows``; ``argmax`` is the maximising neighbour (-1 where the normal was degenerate)."""

    rows: np.ndarray
    d_hat: np.ndarray
    argmax: np.ndarray
    order: str
    degenerate: np.ndarray
    isolated: np.ndarray


@dataclass(frozen=True)
class BoundaryLabel:
    label: np.ndarray
    threshold: float
    eps: float


# ---------------------------------------------------------------------------
# distance estimators
# ---------------------------------------------------------------------------


def estimate_normals(index: SpatialIndex, r, order="second", smoothing=None, rows=None) -> NormalEstimate:
    est = first_order_normals(index, r, rows) if order == "first" else second_order_normals(index, r, rows)
    if smoothing:
        est = smooth_normals(index, est, smoothing)
    return est


def distance_estimates(
    index: SpatialIndex,
    r,
    order: str = "second",
    rows=None,
    normals=None,
    degenerate=None,
    smoothing=None,
    on_isolated: str = "raise",
) -> DistanceEstimate:
    """Vectorised distance estimates.

    ``normals`` (shape ``(n, d)``) overrides the estimated normals, e.g. with
    the true ones; ``degenerate`` marks unusable rows of it. Isolated points
    raise :class:`InsufficientNeighborsError` unless ``on_isolated="interior"``,
    in which case they get ``d_hat = r`` like degenerate ones.
    """
    if order not in ("first", "second"):
        raise ValueError("order must be 'first' or 'second'")
    if on_isolated not in ("raise", "interior"):
        raise ValueError("on_isolated must be 'raise' or 'interior'")
    n = index.n
    radii = np.full(n, float(r)) if np.ndim(r) == 0 else np.asarray(r, dtype=np.float64)
    rows = np.arange(n) if rows is None else np.asarray(rows, dtype=np.intp)
    if normals is None:
        need = None
        if len(rows) < n and not smoothing:
            # normals are read at the rows (first order) or their neighbours (second order)
            need = rows if order == "first" else np.unique(np.concatenate(
                [blk.indices for blk in index.neighborhoods(radii, rows=rows)]))
        nu, deg = estimate_normals(index, radii, order, smoothing, rows=need).full(n)
    else:
        nu = np.asarray(normals, dtype=np.float64)
        deg = np.zeros(n, dtype=bool) if degenerate is None else np.asarray(degenerate, dtype=bool)

    X = index.points
    d_hat = np.empty(len(rows))
    argmax = np.empty(len(rows), dtype=np.intp)
    isolated = np.zeros(len(rows), dtype=bool)
    pos = 0
    for blk in index.neighborhoods(radii, rows=rows, include_self=True):
        rid = blk.row_ids()
        gi = blk.rows[rid]
        gj = blk.indices
        nu_i = nu[gi]
        if order == "second":
            nu_j = nu[gj]
            same = (np.einsum("ij,ij->i", nu_j, nu_i) > 0) & ~deg[gj]
            direction = nu_i + 0.5 * (nu_j - nu_i) * same[:, None]
        else:
            direction = nu_i
        val = np.einsum("ij,ij->i", X[gi] - X[gj], direction)
        m = len(blk.rows)
        _block_max(blk, rid, val, d_hat[pos:pos + m], argmax[pos:pos + m], isolated[pos:pos + m])
        pos += m
    return _assemble(rows, radii, order, d_hat, argmax, deg[rows], isolated, on_isolated)


def _block_max(blk, rid, val, d_hat, argmax, isolated):
    """Per-row maximum of ``val`` and the first neighbour attaining it, written in place."""
    starts = blk.indptr[:-1]
    segmax = np.maximum.reduceat(val, starts)
    where = np.where(val == segmax[rid], np.arange(len(val)), len(val))
    d_hat[:] = segmax
    argmax[:] = blk.indices[np.minimum.reduceat(where, starts)]
    isolated[:] = blk.counts == 1


def _assemble(rows, radii, order, d_hat, argmax, row_deg, isolated, on_isolated):
    if np.any(isolated) and on_isolated == "raise":
        raise InsufficientNeighborsError(rows[isolated])
    sentinel = row_deg | isolated
    d_hat[sentinel] = radii[rows][sentinel]
    argmax[sentinel] = -1
    return DistanceEstimate(rows=rows, d_hat=d_hat, argmax=argmax, order=order, degenerate=row_deg, isolated=isolated)


def _first_order_fused(index: SpatialIndex, radii, on_isolated):
    """First-order normals and distances for every point in one neighbourhood pass.

    Matches ``estimate_normals`` followed by ``distance_estimates`` bit for bit:
    a row's first-order normal needs only its own neighbourhood.
    """
    n, X = index.n, index.points
    nu = np.zeros((n, index.dim))
    deg = np.zeros(n, dtype=bool)
    d_hat = np.empty(n)
    argmax = np.empty(n, dtype=np.intp)
    isolated = np.zeros(n, dtype=bool)
    pos = 0
    for blk in index.neighborhoods(radii, include_self=True):
        rid = blk.row_ids()
        disp = X[blk.indices] - X[blk.rows[rid]]
        est = _finish_normals(blk.rows, np.add.reduceat(disp, blk.indptr[:-1], axis=0) / n, radii, "first")
        m = len(blk.rows)
        nu[pos:pos + m], deg[pos:pos + m] = est.nu, est.degenerate
        # -(x^j - x^i) is exactly x^i - x^j in floating point
        val = np.einsum("ij,ij->i", -disp, est.nu[rid])
        _block_max(blk, rid, val, d_hat[pos:pos + m], argmax[pos:pos + m], isolated[pos:pos + m])
        pos += m
    rows = np.arange(n)
    dist = _assemble(rows, radii, "first", d_hat, argmax, deg, isolated, on_isolated)
    return nu, deg, dist


def distance_first_order(index: SpatialIndex, i: int, r: float) -> float:
    return float(distance_estimates(index, r, "first", rows=[i]).d_hat[0])


def distance_second_order(index: SpatialIndex, i: int, r: float) -> float:
    return float(distance_estimates(index, r, "second", rows=[i]).d_hat[0])


# ---------------------------------------------------------------------------
# tests
# ---------------------------------------------------------------------------


def _values(d_hat):
    return np.asarray(d_hat.d_hat if isinstance(d_hat, DistanceEstimate) else d_hat, dtype=np.float64)


def boundary_test(d_hat, eps: float) -> BoundaryLabel:
    """Label 1 where ``d_hat < 3*eps/2`` (strict)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    thr = 1.5 * eps
    return BoundaryLabel(label=_values(d_hat) < thr, threshold=thr, eps=eps)


def boundary_percentile(d_hat, p: float) -> BoundaryLabel:
    """Label the ``ceil(p*n/100)`` smallest estimates (ties to the smaller index).

    The implied width is ``eps = (2/3) * max(selected d_hat)``.
    """
    if not 0 < p <= 100:
        raise ValueError("p must lie in (0, 100]")
    vals = _values(d_hat)
    n = len(vals)
    m = min(n, max(1, math.ceil(p * n / 100 - 1e-12)))
    order = np.lexsort((np.arange(n), vals))
    label = np.zeros(n, dtype=bool)
    label[order[:m]] = True
    thr = float(vals[order[m - 1]])
    return BoundaryLabel(label=label, threshold=thr, eps=2.0 * thr / 3.0)


# ---------------------------------------------------------------------------
# constants and parameter choice
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TheoryConstants:
    d: int
    R: float
    L: float
    rho_min: float
    rho_max: float
    prob_exponent: float
    C_x: float
    C_y: float
    C_r: float
    C_eps: float


def c_y_full(d: int, dist: float, r: float, R: float) -> float:
    """Position-dependent constant; reduces to omega_{d-1}/(d+1) on a flat boundary."""
    t = dist / r - r / R
    return unit_ball_volume(d - 1) * max(0.0, 1.0 - t * t) ** ((d + 1) / 2) / (d + 1) if d > 1 else max(0.0, 1.0 - t * t)


def theory_constants(d, R, L, rho_min, rho_max, prob_exponent=3.0) -> TheoryConstants:
    """Closed-form constants for the accuracy guarantee; ``prob_exponent`` must exceed 2."""
    if not R > 0:
        raise ValueError("reach must be positive (a box has reach 0, so its assumptions are violated)")
    if not prob_exponent > 2:
        raise ValueError("prob_exponent must exceed 2")
    if not 0 < rho_min <= rho_max:
        raise ValueError("need 0 < rho_min <= rho_max")
    if L < 0:
        raise ValueError("L must be >= 0")
    g = prob_exponent
    w_d = unit_ball_volume(d)
    w_dm1 = unit_ball_volume(d - 1) if d > 1 else 1.0
    C_x = 2 * w_dm1 + L * R * w_d / rho_min
    C_y = w_dm1 / (2 * (d + 1))
    a = (3 * g * rho_max * d**2 * w_d * R**2 / (C_x**2 * rho_min**2)) ** (1 / (d + 2))
    b = (2 * g * (7 * C_x / (R * C_y) + 1 / R) / (rho_min * w_dm1)) ** (1 / (d + 1))
    C_r = max(a, b) / R
    C_eps = (28 * C_x / C_y + 4) * C_r**2
    return TheoryConstants(d, R, L, rho_min, rho_max, g, C_x, C_y, C_r, C_eps)


@dataclass(frozen=True)
class RecommendedParams:
    eps: float
    r: float
    assumption1: bool
    assumption2: bool


def recommended_params(constants: TheoryConstants, n: int, R: float | None = None) -> RecommendedParams:
    """``eps = R C_eps (log n/n)^{2/(d+2)}`` and ``r = R C_r (log n/n)^{1/(d+2)}``."""
    if n < 2:
        raise ValueError("n must be >= 2")
    R = constants.R if R is None else R
    d = constants.d
    s = math.log(n) / n
    eps = R * constants.C_eps * s ** (2 / (d + 2))
    r = R * constants.C_r * s ** (1 / (d + 2))
    a1 = eps / r <= 1 / (3 * math.sqrt(d))
    a2 = r * r <= R * eps
    return RecommendedParams(eps, r, a1, a2)


def default_radius(index: SpatialIndex, k0: int = 10) -> float:
    """Smallest radius whose closed ball around every point holds ``k0`` other points."""
    k0 = min(k0, index.n - 1)
    return float(index.kth_neighbor_distances(k0).max())


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DetectionMetrics:
    BP: int
    FP: int
    FN: int
    P: int
    N: int
    FNR: float
    FPR: float
    TFR: float


def detection_metrics(labels, true_dist, eps: float, mask=None) -> DetectionMetrics:
    """Failure rates of a labelling against the true distance to the boundary.

    ``mask`` restricts which points are scored (all by default).
    """
    lab = np.asarray(labels.label if isinstance(labels, BoundaryLabel) else labels, dtype=bool)
    dist = np.asarray(true_dist, dtype=np.float64)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        lab, dist = lab[mask], dist[mask]
    near = dist <= eps
    BP = int(near.sum())
    if BP == 0:
        raise NoBoundaryPointsError("no true boundary points: metrics undefined (BP = 0)")
    FP = int(np.sum(lab & (dist > 2 * eps)))
    FN = int(np.sum(~lab & near))
    P = int(lab.sum())
    fnr, fpr = FN / BP, FP / BP
    return DetectionMetrics(BP, FP, FN, P, len(lab) - P, fnr, fpr, fnr + fpr)


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryResult:
    nu: np.ndarray
    degenerate: np.ndarray
    d_hat: np.ndarray
    label: np.ndarray
    threshold: float
    eps: float
    r: np.ndarray | float
    order: str


def detect_boundary(
    index: SpatialIndex,
    r,
    eps: float | None = None,
    percentile: float | None = None,
    order: str = "second",
    smoothing: float | None = None,
    on_isolated: str = "raise",
) -> BoundaryResult:
    """Normals, distance estimates and labels in one call.

    Exactly one of ``eps`` and ``percentile`` must be given.
    """
    if (eps is None) == (percentile is None):
        raise ValueError("give exactly one of eps and percentile")
    if order == "first" and not smoothing:
        radii = np.full(index.n, float(r)) if np.ndim(r) == 0 else np.asarray(r, dtype=np.float64)
        if radii.shape != (index.n,) or np.any(radii <= 0):
            raise ValueError("r must be > 0, scalar or one entry per point")
        nu, deg, dist = _first_order_fused(index, radii, on_isolated)
    else:
        est = estimate_normals(index, r, order, smoothing)
        nu, deg = est.full(index.n)
        dist = distance_estimates(index, r, order, normals=nu, degenerate=deg, on_isolated=on_isolated)
    lab = boundary_test(dist, eps) if eps is not None else boundary_percentile(dist, percentile)
    return BoundaryResult(nu, deg, dist.d_hat, lab.label, lab.threshold, lab.eps, r, order)
