"""Inward-normal estimators and the local density surrogate.

The first-order estimator averages neighbour displacements,

    v(x^i) = (1/n) * sum_{|x^j - x^i| <= r} (x^j - x^i),

which points into the domain near the boundary. The second-order estimator
divides each displacement by a kernel density estimate ``theta_hat(x^j)`` taken at
radius ``r/2``, cancelling the leading density-gradient bias.

Batch functions return a :class:`NormalEstimate` holding arrays over all
requested points; ``first_order_normal`` and friends are single-point
conveniences built on the same code.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spatial import SpatialIndex

__all__ = [
    "unit_ball_volume",
    "NormalEstimate",
    "PointNormal",
    "first_order_normals",
    "second_order_normals",
    "first_order_normal",
    "second_order_normal",
    "theta_hat",
    "theta_hats",
    "smooth_normals",
    "DEGENERACY_FACTOR",
]

DEGENERACY_FACTOR = 1e-14


def unit_ball_volume(d: int) -> float:
    """Volume of the unit ball in R^d."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


@dataclass(frozen=True)
class PointNormal:
    v: np.ndarray
    nu: np.ndarray | None
    magnitude: float
    degenerate: bool
    order: str


@dataclass(frozen=True)
class NormalEstimate:
    """Normal estimates for ``rows`` of a cloud.

    ``nu`` rows are zero where ``degenerate`` is set.
    """

    rows: np.ndarray
    v: np.ndarray
    nu: np.ndarray
    magnitude: np.ndarray
    degenerate: np.ndarray
    order: str

    def point(self, k) -> PointNormal:
        deg = bool(self.degenerate[k])
        return PointNormal(
            v=self.v[k].copy(),
            nu=None if deg else self.nu[k].copy(),
            magnitude=float(self.magnitude[k]),
            degenerate=deg,
            order=self.order,
        )

    def full(self, n):
        """``nu`` scattered into an ``(n, d)`` array (zeros outside ``rows``) plus a degenerate mask."""
        nu = np.zeros((n, self.nu.shape[1]))
        deg = np.ones(n, dtype=bool)
        nu[self.rows] = self.nu
        deg[self.rows] = self.degenerate
        return nu, deg


def _radii(index, r):
    r_arr = np.asarray(r, dtype=np.float64)
    if np.any(r_arr <= 0):
        raise ValueError("r must be > 0")
    if r_arr.ndim == 0:
        return np.full(index.n, float(r_arr))
    if r_arr.shape != (index.n,):
        raise ValueError("per-point r must have one entry per point")
    return r_arr


def _finish(rows, v, radii, order):
    mag = np.sqrt(np.einsum("ij,ij->i", v, v))
    deg = mag < DEGENERACY_FACTOR * radii[rows]
    safe = np.where(deg, 1.0, mag)
    nu = np.where(deg[:, None], 0.0, v / safe[:, None])
    return NormalEstimate(rows=rows, v=v, nu=nu, magnitude=mag, degenerate=deg, order=order)


def _weighted_sum(index, r, rows, weights):
    """(1/n) * sum over the closed r-ball of weights[j] * (x^j - x^i), ascending j."""
    X = index.points
    radii = _radii(index, r)
    rows = np.arange(index.n) if rows is None else np.asarray(rows, dtype=np.intp)
    v = np.zeros((len(rows), index.dim))
    pos = 0
    for blk in index.neighborhoods(radii, rows=rows, include_self=True):
        disp = X[blk.indices] - X[blk.rows[blk.row_ids()]]
        if weights is not None:
            disp *= weights[blk.indices][:, None]
        # every row contains at least itself, so no reduceat segment is empty
        v[pos:pos + len(blk.rows)] = np.add.reduceat(disp, blk.indptr[:-1], axis=0)
        pos += len(blk.rows)
    return rows, v / index.n, radii


def first_order_normals(index: SpatialIndex, r, rows=None) -> NormalEstimate:
    rows, v, radii = _weighted_sum(index, r, rows, None)
    return _finish(rows, v, radii, "first")


def theta_hats(index: SpatialIndex, r, rows=None) -> np.ndarray:
    """theta_hat(x^j) = (2/r_j)^d * #{k : |x^k - x^j| <= r_j/2} / (omega_d * n), self counted.

    With ``rows`` only those entries are computed; the rest are NaN.
    """
    radii = _radii(index, r)
    rows = np.arange(index.n) if rows is None else np.asarray(rows, dtype=np.intp)
    counts = np.full(index.n, np.nan)
    pos = 0
    for blk in index.neighborhoods(radii / 2, rows=rows, include_self=True):
        counts[rows[pos:pos + len(blk.rows)]] = blk.counts
        pos += len(blk.rows)
    d = index.dim
    return counts * (2.0 / radii) ** d / (unit_ball_volume(d) * index.n)


def theta_hat(index: SpatialIndex, i: int, r: float) -> float:
    count = len(index.range_of(i, r / 2, include_self=True))
    d = index.dim
    return count * (2.0 / r) ** d / (unit_ball_volume(d) * index.n)


def second_order_normals(index: SpatialIndex, r, rows=None, theta=None) -> NormalEstimate:
    """Density-corrected normals; ``theta`` may be passed in to reuse a computation."""
    if theta is None:
        need = None
        if rows is not None:
            # only the neighbours of the requested rows need a density estimate
            need = np.unique(np.concatenate(
                [blk.indices for blk in index.neighborhoods(_radii(index, r), rows=np.asarray(rows, dtype=np.intp))]))
        theta = theta_hats(index, r, rows=need)
    rows, v, radii = _weighted_sum(index, r, rows, 1.0 / theta)
    return _finish(rows, v, radii, "second")


def first_order_normal(index: SpatialIndex, i: int, r: float) -> PointNormal:
    return first_order_normals(index, r, rows=[i]).point(0)


def second_order_normal(index: SpatialIndex, i: int, r: float) -> PointNormal:
    nbrs = index.range_of(i, r)
    X = index.points
    theta = np.array([theta_hat(index, j, r) for j in nbrs])
    v = ((X[nbrs] - X[i]) / theta[:, None]).sum(axis=0) / index.n
    radii = np.full(index.n, float(r))
    return _finish(np.array([i]), v[None, :], radii, "second").point(0)


def smooth_normals(index: SpatialIndex, normals: NormalEstimate, r_s: float) -> NormalEstimate:
    """Average unit normals over the closed ``r_s``-ball, skipping degenerate inputs.

    Points whose neighbourhood sum vanishes come back flagged degenerate.
    """
    nu_full, deg_full = normals.full(index.n)
    contrib = np.where(deg_full[:, None], 0.0, nu_full)
    rows = normals.rows
    s = np.zeros((len(rows), index.dim))
    pos = 0
    for blk in index.neighborhoods(r_s, rows=rows, include_self=True):
        s[pos:pos + len(blk.rows)] = np.add.reduceat(contrib[blk.indices], blk.indptr[:-1], axis=0)
        pos += len(blk.rows)
    mag = np.sqrt(np.einsum("ij,ij->i", s, s))
    deg = mag < 1e-12
    nu = np.where(deg[:, None], 0.0, s / np.where(deg, 1.0, mag)[:, None])
    return NormalEstimate(rows=rows, v=s, nu=nu, magnitude=mag, degenerate=deg, order=normals.order)
