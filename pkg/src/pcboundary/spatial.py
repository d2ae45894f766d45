"""Exact range and nearest-neighbour search over a point cloud.

Membership uses the closed ball, tested as ``sum((x - y)**2) <= r*r`` in float64.
The k-d tree (``scipy.spatial.cKDTree``) is only a candidate generator: every
candidate set is queried with a little slack and then filtered with that exact
predicate, so results agree bit-for-bit with a brute-force scan using the same
expression.
"""
from __future__ import annotations

import hashlib
import itertools
import os
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.spatial import cKDTree

from .pointcloud import PointCloud

__all__ = ["SpatialIndex", "NeighborBlock", "InsufficientPointsError", "build", "resolve_workers", "covering_sqrt"]

_SLACK = 1e-9
_TARGET_PAIRS = 1_000_000
_CACHE_PAIRS = 4_000_000


class InsufficientPointsError(ValueError):
    pass


def resolve_workers(workers=None) -> int:
    """Worker count: explicit argument, else ``PCB_THREADS``, else 1."""
    if workers is None:
        env = os.environ.get("PCB_THREADS", "").strip()
        workers = int(env) if env else 1
    workers = int(workers)
    if workers == 0 or workers < -1:
        raise ValueError("workers must be a positive integer or -1")
    return workers


def covering_sqrt(sq):
    """Smallest float64 ``r >= sqrt(sq)`` with ``r * r >= sq``.

    A radius taken from a neighbour distance then keeps that neighbour under the
    closed-ball predicate despite rounding in the square root.
    """
    sq = np.asarray(sq, dtype=np.float64)
    r = np.sqrt(sq)
    short = r * r < sq
    return np.where(short, np.nextafter(r, np.inf), r)


def _sqdist(a, b):
    diff = a - b
    return np.einsum("...i,...i->...", diff, diff)


@dataclass(frozen=True)
class NeighborBlock:
    """Neighbourhoods of a contiguous run of points, in CSR layout.

    Row ``k`` describes point ``rows[k]``; its neighbours are
    ``indices[indptr[k]:indptr[k+1]]`` in ascending index order, with squared
    distances ``sqdist`` aligned to them.
    """

    rows: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    sqdist: np.ndarray

    @property
    def counts(self):
        return np.diff(self.indptr)

    def row_ids(self):
        """Block-local row number of every stored pair."""
        return np.repeat(np.arange(len(self.rows)), self.counts)


class SpatialIndex:
    """Immutable search structure over a :class:`PointCloud`."""

    def __init__(self, cloud, workers=None):
        if not isinstance(cloud, PointCloud):
            cloud = PointCloud(cloud)
        self.cloud = cloud
        self.points = cloud.points
        self.workers = resolve_workers(workers)
        self._tree = cKDTree(self.points, balanced_tree=True, compact_nodes=True)
        self._cache = {}

    @property
    def n(self):
        return self.cloud.n

    @property
    def dim(self):
        return self.cloud.dim

    # -- single queries -----------------------------------------------------

    def _point(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.dim:
            raise ValueError(f"query point has dimension {x.shape[0]}, index has {self.dim}")
        return x

    def range(self, x, r, include_self=True, self_index=None):
        """Indices ``i`` with ``|x^i - x| <= r``, ascending.

        With ``include_self=False`` the query point itself is dropped: the given
        ``self_index`` if any, otherwise every cloud point equal to ``x``.
        """
        if r < 0:
            raise ValueError("r must be >= 0")
        x = self._point(x)
        cand = np.asarray(self._tree.query_ball_point(x, r * (1 + _SLACK) + 1e-300), dtype=np.intp)
        cand.sort()
        sq = _sqdist(self.points[cand], x)
        keep = sq <= r * r
        if not include_self:
            if self_index is not None:
                keep &= cand != self_index
            else:
                keep &= sq > 0.0
        return cand[keep]

    def range_of(self, i, r, include_self=True):
        return self.range(self.points[i], r, include_self=include_self, self_index=i)

    def knn(self, x, k, exclude=None):
        """``k`` nearest indices sorted by (distance, index), and their distances."""
        x = self._point(x)
        avail = self.n - (0 if exclude is None else 1)
        if not 1 <= k <= avail:
            raise InsufficientPointsError(f"insufficient points: k={k} but only {avail} candidates")
        kk = min(self.n, k + (0 if exclude is None else 1))
        dist, _ = self._tree.query(x, kk)
        radius = float(np.atleast_1d(dist)[-1])
        cand = self.range(x, radius * (1 + 1e-7) + 1e-300)
        if exclude is not None:
            cand = cand[cand != exclude]
        sq = _sqdist(self.points[cand], x)
        order = np.lexsort((cand, sq))[:k]
        return cand[order], np.sqrt(sq[order])

    def kth_neighbor_distance(self, i, k):
        """Distance from point ``i`` to its k-th nearest other point (duplicates count).

        Rounded up by at most one ulp so that ``range_of(i, r)`` contains that neighbour.
        """
        if not 1 <= k <= self.n - 1:
            raise InsufficientPointsError(f"insufficient points: k={k} needs at least {k + 1} points, have {self.n}")
        near, _ = self.knn(self.points[i], k, exclude=i)
        return float(covering_sqrt(_sqdist(self.points[near[-1]], self.points[i])))

    def kth_neighbor_distances(self, k):
        """Vectorised :meth:`kth_neighbor_distance` for every point."""
        if not 1 <= k <= self.n - 1:
            raise InsufficientPointsError(f"insufficient points: k={k} needs at least {k + 1} points, have {self.n}")
        # Self sits at distance 0, so the (k+1)-th smallest over all points is the
        # k-th smallest over the others, duplicates included.
        _, idx = self._tree.query(self.points, k + 1, workers=self.workers)
        sq = _sqdist(self.points[idx], self.points[:, None, :])
        sq.sort(axis=1)
        return covering_sqrt(sq[:, k])

    def nearest(self, x):
        """Index of the nearest cloud point to each row of ``x`` (ties to smaller index)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        d, _ = self._tree.query(x, 1, workers=self.workers)
        out = np.empty(len(x), dtype=np.intp)
        for q in range(len(x)):
            cand = self.range(x[q], d[q] * (1 + 1e-7) + 1e-300)
            sq = _sqdist(self.points[cand], x[q])
            out[q] = cand[np.lexsort((cand, sq))[0]]
        return out

    # -- batched neighbourhoods --------------------------------------------

    def _mean_count(self, radii, rows):
        if len(rows) <= 256:
            return float(self.n)
        rng = np.random.default_rng(0)
        probe = rows[rng.choice(len(rows), size=256, replace=False)]
        counts = self._tree.query_ball_point(self.points[probe], radii[probe], return_length=True)
        return max(1.0, float(np.mean(counts)))

    def neighborhoods(self, r, rows=None, include_self=True, chunk=None) -> Iterator[NeighborBlock]:
        """Yield :class:`NeighborBlock` objects covering ``rows`` (default: all points).

        ``r`` is a scalar or a per-point array of radii (indexed by point).
        """
        rows = np.arange(self.n) if rows is None else np.asarray(rows, dtype=np.intp)
        radii = np.broadcast_to(np.asarray(r, dtype=np.float64), (self.n,)) if np.ndim(r) == 0 else np.asarray(r, dtype=np.float64)
        if radii.shape != (self.n,):
            raise ValueError("per-point radii must have one entry per point")
        if np.any(radii < 0):
            raise ValueError("radii must be >= 0")
        rmax = float(radii[rows].max()) if len(rows) else 0.0
        mean = self._mean_count(radii, rows)
        # past half the cloud, an all-pairs scan beats the tree query and its sort
        dense = len(rows) > 256 and mean >= 0.5 * self.n
        if chunk is None:
            # Whole-cloud neighbourhoods that fit in memory are kept, since the
            # estimators make several passes at the same radii.
            key = (hashlib.sha1(np.ascontiguousarray(radii).tobytes()).hexdigest(), hashlib.sha1(rows.tobytes()).hexdigest(), include_self)
            cached = self._cache.get(key)
            if cached is not None:
                yield cached
                return
            if mean * len(rows) <= _CACHE_PAIRS:
                blk = self._block(rows, radii, rmax, include_self, dense)
                for arr in (blk.rows, blk.indptr, blk.indices, blk.sqdist):
                    arr.setflags(write=False)
                self._cache = {key: blk, **{k: v for k, v in list(self._cache.items())[:1]}}
                yield blk
                return
        step = chunk or int(max(16, min(self.n, _TARGET_PAIRS // mean)))
        for start in range(0, len(rows), step):
            block_rows = rows[start:start + step]
            yield self._block(block_rows, radii, rmax, include_self, dense)

    def _block(self, block_rows, radii, rmax, include_self, dense=False):
        if dense:
            return self._block_dense(block_rows, radii, include_self)
        if np.ptp(radii[block_rows]) > 0 if len(block_rows) else False:
            return self._block_varying(block_rows, radii, include_self)
        sub = cKDTree(self.points[block_rows])
        pairs = sub.sparse_distance_matrix(self._tree, rmax * (1 + _SLACK) + 1e-300, output_type="ndarray")
        li = pairs["i"].astype(np.intp)
        gj = pairs["j"].astype(np.intp)
        # sparse_distance_matrix omits exact zero distances, so add the diagonal
        # and any coincident duplicates back explicitly.
        dup_li, dup_gj = self._coincident(block_rows)
        li = np.concatenate([li, dup_li])
        gj = np.concatenate([gj, dup_gj])
        gi = block_rows[li]
        sq = _sqdist(self.points[gj], self.points[gi])
        keep = sq <= radii[gi] ** 2
        if not include_self:
            keep &= gj != gi
        li, gj, sq = li[keep], gj[keep], sq[keep]
        key = li.astype(np.int64) * self.n + gj
        order = np.argsort(key)
        key, li, gj, sq = key[order], li[order], gj[order], sq[order]
        # drop pairs reported twice (zero-distance pairs may appear in both sources)
        if len(li) > 1:
            uniq = np.ones(len(li), dtype=bool)
            uniq[1:] = key[1:] != key[:-1]
            li, gj, sq = li[uniq], gj[uniq], sq[uniq]
        indptr = np.zeros(len(block_rows) + 1, dtype=np.intp)
        np.cumsum(np.bincount(li, minlength=len(block_rows)), out=indptr[1:])
        return NeighborBlock(rows=block_rows, indptr=indptr, indices=gj, sqdist=sq)

    def _block_dense(self, block_rows, radii, include_self):
        # balls cover most of the cloud: test every pair, with the same filter as the tree path
        sq = _sqdist(self.points[None, :, :], self.points[block_rows][:, None, :])
        keep = sq <= (radii[block_rows] ** 2)[:, None]
        if not include_self:
            keep[np.arange(len(block_rows)), block_rows] = False
        if keep.all():
            li = np.repeat(np.arange(len(block_rows)), self.n)
            gj = np.tile(np.arange(self.n, dtype=np.intp), len(block_rows))
            sq = sq.ravel()
        else:
            li, gj = np.nonzero(keep)
            sq = sq[li, gj]
        indptr = np.zeros(len(block_rows) + 1, dtype=np.intp)
        np.cumsum(np.bincount(li, minlength=len(block_rows)), out=indptr[1:])
        return NeighborBlock(rows=block_rows, indptr=indptr, indices=gj, sqdist=sq)

    def _block_varying(self, block_rows, radii, include_self):
        r = radii[block_rows]
        lists = self._tree.query_ball_point(self.points[block_rows], r * (1 + _SLACK) + 1e-300,
                                            return_sorted=True, workers=self.workers)
        counts = np.fromiter(map(len, lists), dtype=np.intp, count=len(lists))
        gj = np.fromiter(itertools.chain.from_iterable(lists), dtype=np.intp, count=int(counts.sum()))
        li = np.repeat(np.arange(len(block_rows)), counts)
        gi = block_rows[li]
        sq = _sqdist(self.points[gj], self.points[gi])
        keep = sq <= radii[gi] ** 2
        if not include_self:
            keep &= gj != gi
        li, gj, sq = li[keep], gj[keep], sq[keep]
        indptr = np.zeros(len(block_rows) + 1, dtype=np.intp)
        np.cumsum(np.bincount(li, minlength=len(block_rows)), out=indptr[1:])
        return NeighborBlock(rows=block_rows, indptr=indptr, indices=gj, sqdist=sq)

    def _coincident(self, block_rows):
        li = [np.arange(len(block_rows), dtype=np.intp)]
        gj = [block_rows.astype(np.intp)]
        if self._has_duplicates:
            d, idx = self._tree.query(self.points[block_rows], 2)
            for k in np.flatnonzero(d[:, 1] == 0.0):
                same = self.range(self.points[block_rows[k]], 0.0)
                same = same[same != block_rows[k]]
                li.append(np.full(len(same), k, dtype=np.intp))
                gj.append(same)
        return np.concatenate(li), np.concatenate(gj)

    @property
    def _has_duplicates(self):
        cached = getattr(self, "_dup_cache", None)
        if cached is None:
            if self.n < 2:
                cached = False
            else:
                d, _ = self._tree.query(self.points, 2, workers=self.workers)
                cached = bool(np.any(d[:, 1] == 0.0))
            self._dup_cache = cached
        return cached


def build(cloud, workers=None) -> SpatialIndex:
    return SpatialIndex(cloud, workers=workers)
