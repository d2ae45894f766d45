"""Graphs over point clouds and the PDE solvers that use a detected boundary.

Two graph types are supported: the epsilon graph with weights
``eta(|x^i - x^j| / eps)``, and the symmetrised k-nearest-neighbour graph with
Gaussian weights used for data depth. The unnormalised graph Laplacian

    (L u)_i = 2 / (sigma_eta n eps^(d+2)) * sum_j w_ij (u_j - u_i)

approximates ``rho^{-1} div(rho^2 grad u)``. Elliptic problems are posed with
``-L`` so that the graph operator is positive, like ``-Delta``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as spla

from .boundary import boundary_percentile, distance_estimates
from .normals import unit_ball_volume
from .spatial import SpatialIndex

__all__ = [
    "Kernel",
    "Graph",
    "BoundaryConditions",
    "PdeSolution",
    "DepthResult",
    "SolverError",
    "build_epsilon_graph",
    "build_knn_gaussian_graph",
    "laplacian_matrix",
    "apply_laplacian",
    "solve_eikonal",
    "solve_eikonal_graph",
    "normal_derivative",
    "normal_derivatives",
    "assemble_robin_system",
    "solve_robin",
    "solve_dirichlet_eigen",
    "depth_rank",
    "eikonal_eps",
]


class SolverError(RuntimeError):
    """An iterative solve did not reach its tolerance; ``residual`` holds the last value."""

    def __init__(self, message, residual=float("nan")):
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3e})")


# ---------------------------------------------------------------------------
# kernels and graphs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Kernel:
    """Radial profile ``eta`` on ``[0, 1]`` normalised so that ``int eta(|z|) dz = 1`` in R^d.

    ``kind`` is ``"indicator"`` (constant ``1/omega_d``) or ``"bump"``
    (proportional to ``(1 - t^2)^2``).
    """

    kind: str = "indicator"
    dim: int = 2

    def __post_init__(self):
        if self.kind not in ("indicator", "bump"):
            raise ValueError("kernel kind must be 'indicator' or 'bump'")
        d = self.dim
        w = unit_ball_volume(d)
        if self.kind == "indicator":
            c = 1.0 / w
            sigma = 1.0 / (d + 2)
        else:
            prof = lambda t: (1 - t * t) ** 2  # noqa: E731
            mass = d * w * integrate.quad(lambda t: prof(t) * t ** (d - 1), 0, 1, epsabs=1e-14, epsrel=1e-12)[0]
            c = 1.0 / mass
            sigma = w * c * integrate.quad(lambda t: prof(t) * t ** (d + 1), 0, 1, epsabs=1e-14, epsrel=1e-12)[0]
        object.__setattr__(self, "_c", c)
        object.__setattr__(self, "sigma_eta", sigma)

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        inside = (t >= 0) & (t <= 1)
        if self.kind == "indicator":
            return np.where(inside, self._c, 0.0)
        return np.where(inside, self._c * (1 - t * t) ** 2, 0.0)


@dataclass(frozen=True)
class Graph:
    """Symmetric sparse weight matrix plus how it was built."""

    W: sparse.csr_matrix
    kind: str
    eps: float | None = None
    k: int | None = None
    kernel: Kernel | None = None

    @property
    def n(self):
        return self.W.shape[0]

    @property
    def degrees(self):
        return np.asarray(self.W.sum(axis=1)).ravel()

    @property
    def isolated(self):
        return np.flatnonzero(np.diff(self.W.indptr) == 0)


def _pairs_within(index: SpatialIndex, eps):
    """All ordered pairs (i, j) with ``0 < |x^i - x^j| <= eps``, with distances."""
    I, J, S = [], [], []
    for blk in index.neighborhoods(eps, include_self=False):
        keep = blk.sqdist > 0
        I.append(blk.rows[blk.row_ids()][keep])
        J.append(blk.indices[keep])
        S.append(blk.sqdist[keep])
    if not I:
        return np.empty(0, np.intp), np.empty(0, np.intp), np.empty(0)
    return np.concatenate(I), np.concatenate(J), np.sqrt(np.concatenate(S))


def build_epsilon_graph(index: SpatialIndex, eps: float, kernel: Kernel | None = None) -> Graph:
    """Edges for ``0 < |x^i - x^j| <= eps`` with weight ``eta(|x^i - x^j| / eps)``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    kernel = Kernel("indicator", index.dim) if kernel is None else kernel
    I, J, dist = _pairs_within(index, eps)
    w = kernel(dist / eps)
    W = sparse.csr_matrix((w, (I, J)), shape=(index.n, index.n))
    W.eliminate_zeros()
    W.sort_indices()
    return Graph(W=W, kind="epsilon", eps=eps, kernel=kernel)


def _knn_all(index: SpatialIndex, k: int):
    """k nearest other points of every point, ties to the smaller index."""
    n = index.n
    X = index.points
    extra = min(n, k + 4)
    _, cand = index._tree.query(X, extra, workers=index.workers)
    cand = np.atleast_2d(cand)
    sq = np.einsum("ijk,ijk->ij", X[cand] - X[:, None, :], X[cand] - X[:, None, :])
    sq = np.where(cand == np.arange(n)[:, None], np.inf, sq)
    order = np.lexsort((cand, sq), axis=-1)
    cand = np.take_along_axis(cand, order, axis=1)
    sq = np.take_along_axis(sq, order, axis=1)
    nbr, nsq = cand[:, :k].copy(), sq[:, :k].copy()
    # rows where a tie may reach past the candidate list are redone exactly
    if extra < n:
        unsure = sq[:, k - 1] >= sq[:, -1]
        for i in np.flatnonzero(unsure):
            idx, d = index.knn(X[i], k, exclude=i)
            nbr[i], nsq[i] = idx, d * d
    return nbr, nsq


def build_knn_gaussian_graph(index: SpatialIndex, k: int = 10) -> Graph:
    """``w_ij = exp(-4 |x^i - x^j|^2 / eps_k(x^i)^2)`` over each point's k neighbours, then ``W + W^T``."""
    n = index.n
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must lie in [1, n-1]; got k={k}, n={n}")
    nbr, nsq = _knn_all(index, k)
    ek2 = nsq[:, k - 1]
    zero = nsq == 0.0
    bad = (ek2 == 0.0) & np.any(~zero, axis=1)
    if np.any(bad):
        raise ValueError(f"k-th neighbour distance is zero at node {int(np.flatnonzero(bad)[0])} while it has a nonzero-distance neighbour")
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.exp(-4.0 * nsq / ek2[:, None])
    w[zero] = 1.0
    rows = np.repeat(np.arange(n), k)
    W = sparse.csr_matrix((w.ravel(), (rows, nbr.ravel())), shape=(n, n))
    W = (W + W.T).tocsr()
    W.sort_indices()
    return Graph(W=W, kind="knn_gaussian", k=k)


# ---------------------------------------------------------------------------
# Laplacians
# ---------------------------------------------------------------------------


def _scale(graph: Graph, eps, kernel, dim, n):
    if eps is None:
        eps = graph.eps
    kernel = kernel or graph.kernel
    if eps is None or kernel is None:
        return 1.0
    return 2.0 / (kernel.sigma_eta * n * eps ** (dim + 2))


def laplacian_matrix(graph: Graph, eps=None, kernel=None, normalization="unnormalized", dim=None):
    """Sparse matrix of the graph Laplacian.

    ``unnormalized``: ``c (W - D)`` with ``c = 2/(sigma_eta n eps^(d+2))`` when
    an epsilon and kernel are known, else ``c = 1``. ``symmetric``:
    ``(D - W) D^{-1/2}``, i.e. ``sum_j w_ij (u_i/sqrt(d_i) - u_j/sqrt(d_j))``.
    """
    W = graph.W
    deg = graph.degrees
    n = graph.n
    if normalization == "unnormalized":
        d = dim if dim is not None else (kernel.dim if kernel else (graph.kernel.dim if graph.kernel else 2))
        c = _scale(graph, eps, kernel, d, n)
        return (c * (W - sparse.diags(deg))).tocsr()
    if normalization == "symmetric":
        if np.any(deg <= 0):
            raise ValueError(f"symmetric normalization undefined: node {int(np.flatnonzero(deg <= 0)[0])} has zero degree")
        return ((sparse.diags(deg) - W) @ sparse.diags(1.0 / np.sqrt(deg))).tocsr()
    raise ValueError("normalization must be 'unnormalized' or 'symmetric'")


def apply_laplacian(graph: Graph, u, eps=None, kernel=None, normalization="unnormalized", dim=None):
    return laplacian_matrix(graph, eps, kernel, normalization, dim) @ np.asarray(u, dtype=np.float64)


# ---------------------------------------------------------------------------
# eikonal
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PdeSolution:
    u: np.ndarray
    residual: float
    eigenvalue: float | None = None
    iterations: int = 0
    unreachable: int = 0


def _dijkstra(lengths: sparse.csr_matrix, boundary):
    boundary = np.unique(np.asarray(boundary, dtype=np.intp))
    if boundary.size == 0:
        raise ValueError("empty boundary set")
    u = csgraph.dijkstra(lengths, directed=False, indices=boundary, min_only=True)
    u[boundary] = 0.0
    unreachable = int(np.sum(~np.isfinite(u)))
    if unreachable:
        warnings.warn(f"{unreachable} nodes cannot reach the boundary set; their distance is +inf", RuntimeWarning, stacklevel=3)
    return u, unreachable


def _dpp_defect(lengths: sparse.csr_matrix, u, boundary):
    """max over reachable non-boundary nodes of |min_j (u_j - u_i + |x^j - x^i|)|."""
    L = lengths.tocsr()
    rows = np.repeat(np.arange(L.shape[0]), np.diff(L.indptr))
    vals = u[L.indices] - u[rows] + L.data
    best = np.full(L.shape[0], np.inf)
    np.minimum.at(best, rows, vals)
    mask = np.isfinite(u)
    mask[np.asarray(boundary, dtype=np.intp)] = False
    mask &= np.isfinite(best)
    return float(np.max(np.abs(best[mask]))) if np.any(mask) else 0.0


def solve_eikonal(index: SpatialIndex, eps: float, boundary) -> PdeSolution:
    """Graph distance to ``boundary`` over edges ``0 < |x^i - x^j| <= eps`` of Euclidean length.

    Nodes that cannot reach the boundary get ``+inf`` (counted in ``unreachable``).
    ``residual`` is the DPP defect.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    I, J, dist = _pairs_within(index, eps)
    lengths = sparse.csr_matrix((dist, (I, J)), shape=(index.n, index.n))
    u, unreachable = _dijkstra(lengths, boundary)
    return PdeSolution(u=u, residual=_dpp_defect(lengths, u, boundary), unreachable=unreachable)


def solve_eikonal_graph(graph: Graph, points, boundary) -> PdeSolution:
    """Like :func:`solve_eikonal` but on the edges of an existing graph."""
    X = np.asarray(points, dtype=np.float64)
    W = graph.W.tocoo()
    keep = W.row != W.col
    I, J = W.row[keep], W.col[keep]
    dist = np.sqrt(np.sum((X[I] - X[J]) ** 2, axis=1))
    pos = dist > 0
    lengths = sparse.csr_matrix((dist[pos], (I[pos], J[pos])), shape=(graph.n, graph.n))
    u, unreachable = _dijkstra(lengths, boundary)
    return PdeSolution(u=u, residual=_dpp_defect(lengths, u, boundary), unreachable=unreachable)


def eikonal_eps(k: float, n: int, rho: float, dim: int = 2) -> float:
    """Boundary width tied to a kNN radius: solves ``36 pi rho n eps^2 = k`` in 2-D.

    Other dimensions use ``36 omega_d rho n eps^d = k``, an extrapolation
    rather than an established choice.
    """
    return (k / (36.0 * unit_ball_volume(dim) * rho * n)) ** (1.0 / dim)


# ---------------------------------------------------------------------------
# Robin problem
# ---------------------------------------------------------------------------


def normal_derivatives(index: SpatialIndex, u, boundary, eps, nu_hat):
    """``(u(p(x^i + eps nu^i)) - u(x^i)) / eps`` for each boundary index, ``p`` = nearest cloud point."""
    boundary = np.asarray(boundary, dtype=np.intp)
    nu_hat = np.atleast_2d(np.asarray(nu_hat, dtype=np.float64))
    target = index.points[boundary] + eps * nu_hat
    p = index.nearest(target)
    u = np.asarray(u, dtype=np.float64)
    return (u[p] - u[boundary]) / eps


def normal_derivative(index: SpatialIndex, u, i: int, eps: float, nu_hat) -> float:
    return float(normal_derivatives(index, u, [i], eps, np.asarray(nu_hat)[None, :])[0])


@dataclass(frozen=True)
class BoundaryConditions:
    """Robin data. ``f`` and ``g`` may be full-length arrays or restricted to interior / boundary rows.

    ``normals`` has one row per boundary index.
    """

    boundary: np.ndarray
    robin_gamma: float
    g: np.ndarray
    f: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        if not 0 < self.robin_gamma <= 1:
            raise ValueError("robin_gamma must lie in (0, 1]; the pure Neumann case gamma = 0 is not supported")
        b = np.unique(np.asarray(self.boundary, dtype=np.intp))
        if b.size == 0:
            raise ValueError("empty boundary set")


def _full(values, n, idx, name):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 0:
        return np.full(n, float(values))
    if values.shape == (n,):
        return values
    if values.shape == (len(idx),):
        out = np.zeros(n)
        out[idx] = values
        return out
    raise ValueError(f"{name} has {values.shape[0]} entries; expected {n} or {len(idx)}")


def assemble_robin_system(index: SpatialIndex, graph: Graph, eps: float, bc: BoundaryConditions, kernel=None):
    """Sparse system ``A u = b``.

    Interior rows: ``-(L u)_i = f_i``. Boundary rows:
    ``gamma u_i - (1 - gamma) (u_{p(i)} - u_i) / eps = g_i``.
    """
    n = index.n
    b_idx = np.asarray(bc.boundary, dtype=np.intp)
    if len(np.unique(b_idx)) != len(b_idx):
        raise ValueError("boundary indices must be distinct")
    is_b = np.zeros(n, dtype=bool)
    is_b[b_idx] = True
    interior = np.flatnonzero(~is_b)
    f = _full(bc.f, n, interior, "f")
    g = _full(bc.g, n, b_idx, "g")

    L = -laplacian_matrix(graph, eps, kernel, "unnormalized", dim=index.dim)
    keep = sparse.diags((~is_b).astype(float))
    A_int = keep @ L

    gam = bc.robin_gamma
    p = index.nearest(index.points[b_idx] + eps * np.atleast_2d(bc.normals))
    c = (1.0 - gam) / eps
    rows = np.concatenate([b_idx, b_idx])
    cols = np.concatenate([b_idx, p])
    vals = np.concatenate([np.full(len(b_idx), gam + c), np.full(len(b_idx), -c)])
    A_bdy = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    A = (A_int + A_bdy).tocsr()
    A.sum_duplicates()
    rhs = np.where(is_b, g, f)
    return A, rhs


def _gmres(A, b, tol):
    n = A.shape[0]
    try:
        ilu = spla.spilu(A.tocsc(), drop_tol=1e-6, fill_factor=30)
        M = spla.LinearOperator(A.shape, ilu.solve)
    except RuntimeError:
        M = None
    restart = min(n, 100)
    x, info = spla.gmres(A, b, rtol=tol * 1e-2, atol=0.0, restart=restart, maxiter=max(1, (50 * n) // restart), M=M)
    return x, info


def _maxnorm_residual(A, x, b):
    r = A @ x - b
    scale = max(np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(r)) / scale)


def solve_robin(index: SpatialIndex, graph: Graph, eps: float, bc: BoundaryConditions, kernel=None, tol: float = 1e-8) -> PdeSolution:
    """Solve the graph Poisson problem with Robin rows by preconditioned GMRES.

    Raises :class:`SolverError` if the max-norm relative residual exceeds ``tol``.
    """
    A, b = assemble_robin_system(index, graph, eps, bc, kernel)
    if not np.any(b):
        return PdeSolution(u=np.zeros(index.n), residual=0.0)
    x, info = _gmres(A, b, tol)
    res = _maxnorm_residual(A, x, b)
    # a couple of refinement sweeps recover digits lost to a loose inner solve
    for _ in range(3):
        if res <= tol:
            break
        dx, info = _gmres(A, b - A @ x, tol)
        x = x + dx
        res = _maxnorm_residual(A, x, b)
    if res > tol:
        raise SolverError("Robin solve did not converge", res)
    return PdeSolution(u=x, residual=res)


# ---------------------------------------------------------------------------
# Dirichlet eigenproblem
# ---------------------------------------------------------------------------


def _positive_operator(graph, eps, kernel, normalization, dim):
    if normalization == "unnormalized":
        return -laplacian_matrix(graph, eps, kernel, "unnormalized", dim)
    return laplacian_matrix(graph, eps, kernel, "symmetric", dim)


def solve_dirichlet_eigen(
    graph: Graph,
    boundary,
    eps=None,
    kernel=None,
    normalization="unnormalized",
    dim=None,
    tol=1e-8,
    max_iter=500,
) -> PdeSolution:
    """Smallest eigenpair of the positive graph Laplacian with ``u = 0`` on ``boundary``.

    Inverse power iteration (shift 0) with an LU factorisation. The returned
    ``u`` is nonnegative and scaled so that ``max u = 1``.
    """
    n = graph.n
    is_b = np.zeros(n, dtype=bool)
    is_b[np.asarray(boundary, dtype=np.intp)] = True
    interior = np.flatnonzero(~is_b)
    if interior.size == 0:
        raise ValueError("empty interior: every node is a boundary node")
    K = _positive_operator(graph, eps, kernel, normalization, dim)
    K_II = K[interior][:, interior].tocsc()
    ncomp, _ = csgraph.connected_components(graph.W[interior][:, interior], directed=False)
    if ncomp > 1:
        warnings.warn(f"interior graph has {ncomp} connected components", RuntimeWarning, stacklevel=2)
    try:
        lu = spla.splu(K_II)
    except RuntimeError as err:
        raise SolverError(f"singular interior operator: {err}") from None
    v = np.ones(interior.size) / math.sqrt(interior.size)
    lam_prev = np.inf
    res = np.inf
    for it in range(1, max_iter + 1):
        w = lu.solve(v)
        v = w / np.linalg.norm(w)
        Kv = K_II @ v
        lam = float(v @ Kv)
        res = float(np.max(np.abs(Kv - lam * v)) / np.max(np.abs(v)))
        if abs(lam - lam_prev) <= tol * max(abs(lam), 1e-300) and res <= 1e-6:
            break
        lam_prev = lam
    else:
        raise SolverError(f"inverse power iteration did not converge in {max_iter} iterations", res)
    if v.sum() < 0:
        v = -v
    u = np.zeros(n)
    u[interior] = v / np.max(v)
    return PdeSolution(u=u, residual=res, eigenvalue=lam, iterations=it)


# ---------------------------------------------------------------------------
# depth
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DepthResult:
    order: np.ndarray
    depth: np.ndarray
    boundary: np.ndarray
    d_hat: np.ndarray


def depth_rank(index: SpatialIndex, k: int = 10, p: float = 10.0, method: str = "eikonal") -> DepthResult:
    """Rank points by depth, deepest first.

    The boundary is the lower ``p`` percent of second-order distance estimates
    with per-point radius ``eps_k(x^i)``. Depth is the graph eikonal distance
    to it, or the principal Dirichlet eigenvector of the symmetrically
    normalised Laplacian, both on the kNN Gaussian graph. Unreachable points
    rank last.
    """
    if method not in ("eikonal", "eigen"):
        raise ValueError("method must be 'eikonal' or 'eigen'")
    if not 0 < p <= 100:
        raise ValueError("p must lie in (0, 100]")
    radii = index.kth_neighbor_distances(k)
    radii = np.where(radii > 0, radii, np.finfo(float).tiny)
    dist = distance_estimates(index, radii, "second", on_isolated="interior")
    lab = boundary_percentile(dist, p).label
    boundary = np.flatnonzero(lab)
    graph = build_knn_gaussian_graph(index, k)
    if method == "eikonal":
        sol = solve_eikonal_graph(graph, index.points, boundary)
    else:
        sol = solve_dirichlet_eigen(graph, boundary, normalization="symmetric")
    depth = sol.u
    key = np.where(np.isfinite(depth), -depth, np.inf)
    order = np.lexsort((np.arange(index.n), key))
    return DepthResult(order=order, depth=depth, boundary=lab, d_hat=dist.d_hat)
