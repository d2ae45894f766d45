"""Point clouds, synthetic domains and densities, and point-cloud file formats.

A :class:`PointCloud` is an immutable ``(n, d)`` array of float64 coordinates.
Row order is the point index used by every downstream result.

Synthetic experiments draw i.i.d. samples from a density restricted to a
:class:`Ball`, :class:`Annulus` or :class:`Box`; each domain also knows its exact
distance-to-boundary and inward normal, which serve as ground truth.
"""
from __future__ import annotations

import csv
import io
import math
import os
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

__all__ = [
    "PointCloud",
    "Ball",
    "Annulus",
    "Box",
    "Uniform",
    "Sinusoidal",
    "GroundTruth",
    "ParseError",
    "DegenerateDensityError",
    "NormalUndefinedError",
    "sample",
    "ground_truth",
    "load_csv",
    "save_csv",
    "load_binary",
    "save_binary",
    "load",
    "save",
]


class ParseError(ValueError):
    """Malformed point-cloud file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DegenerateDensityError(RuntimeError):
    pass


class NormalUndefinedError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PointCloud:
    """``n`` points in R^d, stored row-major as float64 and never mutated."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise ValueError(f"points must be a 2-D array, got shape {pts.shape}")
        if pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError("a point cloud needs n >= 1 points of dimension d >= 1")
        if not np.all(np.isfinite(pts)):
            raise ValueError("all coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n

    def __array__(self, dtype=None, copy=None):
        return self.points if dtype is None else self.points.astype(dtype)

    def permuted(self, perm) -> "PointCloud":
        return PointCloud(self.points[np.asarray(perm)])


def _as_points(x):
    x = np.asarray(x, dtype=np.float64)
    return x


def _unit_ball_volume(d):
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def _norms(x):
    return np.sqrt(np.sum(x * x, axis=-1))


# ---------------------------------------------------------------------------
# Domains
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Ball:
    """Ball of the given radius; its reach equals the radius."""

    radius: float
    dim: int = 2
    center: tuple | None = None

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        c = (0.0,) * self.dim if self.center is None else tuple(float(v) for v in self.center)
        if len(c) != self.dim:
            raise ValueError("center has the wrong dimension")
        object.__setattr__(self, "center", c)

    @property
    def reach(self) -> float:
        return float(self.radius)

    @property
    def volume(self) -> float:
        return _unit_ball_volume(self.dim) * self.radius**self.dim

    @property
    def bounds(self):
        c = np.array(self.center)
        return c - self.radius, c + self.radius

    def contains(self, x):
        x = _as_points(x)
        return _norms(x - np.array(self.center)) <= self.radius

    def dist(self, x):
        x = _as_points(x)
        return self.radius - _norms(x - np.array(self.center))

    def normal(self, x):
        x = _as_points(x)
        y = x - np.array(self.center)
        r = _norms(y)
        if np.any(r == 0.0):
            raise NormalUndefinedError("normal undefined at the centre of the ball (medial axis)")
        return -y / r[..., None]

    def ray_intervals(self, x0, directions, tmax):
        """Parameter intervals ``[t0, t1] ⊂ [0, tmax]`` where ``x0 + t e`` lies in the domain."""
        lo, hi = _circle_chord(np.asarray(x0) - np.array(self.center), directions, self.radius)
        lo = np.maximum(lo, 0.0)
        hi = np.minimum(hi, tmax)
        return [(lo, hi)]


@dataclass(frozen=True)
class Annulus:
    """Annulus ``inner <= |x| <= outer`` centred at the origin.

    With ``boundary="inner"`` only the inner sphere counts as boundary, which is
    how negatively curved boundaries are studied; ``"both"`` uses both spheres.
    """

    inner: float
    outer: float
    dim: int = 2
    boundary: str = "inner"

    def __post_init__(self):
        if not (0 < self.inner < self.outer):
            raise ValueError("need 0 < inner < outer")
        if self.boundary not in ("inner", "both"):
            raise ValueError("boundary must be 'inner' or 'both'")

    @property
    def reach(self) -> float:
        if self.boundary == "inner":
            return float(self.inner)
        return float(min(self.inner, (self.outer - self.inner) / 2))

    @property
    def volume(self) -> float:
        return _unit_ball_volume(self.dim) * (self.outer**self.dim - self.inner**self.dim)

    @property
    def bounds(self):
        return np.full(self.dim, -self.outer), np.full(self.dim, self.outer)

    def contains(self, x):
        r = _norms(_as_points(x))
        return (r >= self.inner) & (r <= self.outer)

    def dist(self, x):
        r = _norms(_as_points(x))
        if self.boundary == "inner":
            return r - self.inner
        return np.minimum(r - self.inner, self.outer - r)

    def normal(self, x):
        x = _as_points(x)
        r = _norms(x)
        if np.any(r == 0.0):
            raise NormalUndefinedError("normal undefined at the origin")
        out = x / r[..., None]
        if self.boundary == "both":
            din, dout = r - self.inner, self.outer - r
            if np.any(din == dout):
                raise NormalUndefinedError("normal undefined on the medial sphere of the annulus")
            out = np.where((dout < din)[..., None], -out, out)
        return out

    def ray_intervals(self, x0, directions, tmax):
        x0 = np.asarray(x0, dtype=float)
        lo_o, hi_o = _circle_chord(x0, directions, self.outer)
        lo_i, hi_i = _circle_chord(x0, directions, self.inner)
        lo_o = np.maximum(lo_o, 0.0)
        hi_o = np.minimum(hi_o, tmax)
        # outer chord minus inner chord: up to two pieces; empty ones have zero finite length
        miss = np.isnan(lo_i)
        first = (lo_o, np.where(miss, hi_o, np.minimum(hi_o, lo_i)))
        second = (np.where(miss, hi_o, np.minimum(np.maximum(lo_o, hi_i), hi_o)), hi_o)
        return [first, second]


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``lower <= x <= upper``.

    Corners make the reach zero, so theory constants cannot be evaluated on a
    box; it exists for the eikonal experiments.
    """

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or any(b <= a for a, b in zip(lo, hi)):
            raise ValueError("need lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, dim=2):
        return cls((0.0,) * dim, (1.0,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def reach(self) -> float:
        return 0.0

    @property
    def assumptions_violated(self) -> bool:
        return True

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.upper, self.lower)))

    @property
    def bounds(self):
        return np.array(self.lower), np.array(self.upper)

    def contains(self, x):
        x = _as_points(x)
        return np.all((x >= np.array(self.lower)) & (x <= np.array(self.upper)), axis=-1)

    def _face_distances(self, x):
        x = _as_points(x)
        return np.concatenate([x - np.array(self.lower), np.array(self.upper) - x], axis=-1)

    def dist(self, x):
        return np.min(self._face_distances(x), axis=-1)

    def normal(self, x):
        fd = self._face_distances(x)
        fmin = fd.min(axis=-1, keepdims=True)
        if np.any(np.sum(fd == fmin, axis=-1) > 1):
            raise NormalUndefinedError("normal undefined where two faces are equally close")
        k = np.argmin(fd, axis=-1)
        d = self.dim
        eye = np.concatenate([np.eye(d), -np.eye(d)])
        return eye[k]


def _circle_chord(x0, directions, radius):
    """Entry/exit parameters of rays ``x0 + t e`` through the sphere ``|x| = radius``.

    NaN where the ray misses the sphere.
    """
    e = np.asarray(directions, dtype=float)
    b = e @ x0
    c = float(x0 @ x0) - radius * radius
    disc = b * b - c
    with np.errstate(invalid="ignore"):
        s = np.sqrt(disc)
    lo = np.where(disc >= 0, -b - s, np.nan)
    hi = np.where(disc >= 0, -b + s, np.nan)
    return lo, hi


# ---------------------------------------------------------------------------
# Densities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Uniform:
    def __call__(self, x, domain):
        x = _as_points(x)
        return np.full(x.shape[:-1], 1.0 / domain.volume)

    def bounds(self, domain):
        v = 1.0 / domain.volume
        return v, v

    def lipschitz(self, domain) -> float:
        return 0.0


@dataclass(frozen=True)
class Sinusoidal:
    """``rho(x) = (1 + sin(L |Omega| x_1) / 2) / (m |Omega|)``.

    ``m`` is the mass of the unnormalised profile, so ``rho`` integrates to
    one. On domains symmetric in ``x_1`` about 0 (balls and annuli centred on
    that axis) the sine integrates to zero and ``m = 1`` exactly. The
    x_1-derivative has supremum ``L/(2m)``, which :meth:`lipschitz` reports.
    """

    L: float

    def mass(self, domain) -> float:
        a = self.L * domain.volume
        if a == 0 or isinstance(domain, Annulus):
            return 1.0
        if isinstance(domain, Box):
            lo, hi = domain.lower[0], domain.upper[0]
            rest = math.prod(u - l for l, u in zip(domain.lower[1:], domain.upper[1:]))
            s = rest * (math.cos(a * lo) - math.cos(a * hi)) / a
        elif isinstance(domain, Ball):
            c = domain.center[0]
            if c == 0:
                return 1.0
            R, d = domain.radius, domain.dim
            # integral of exp(i a x_1) over a centred ball is (2 pi R / a)^(d/2) J_{d/2}(a R)
            s = math.sin(a * c) * (2 * math.pi * R / abs(a)) ** (d / 2) * float(special.jv(d / 2, abs(a) * R))
        else:
            raise TypeError(f"no mass formula for {type(domain).__name__}")
        return 1.0 + s / (2 * domain.volume)

    def __call__(self, x, domain):
        x = _as_points(x)
        vol = domain.volume
        return (1.0 + 0.5 * np.sin(self.L * vol * x[..., 0])) / (vol * self.mass(domain))

    def bounds(self, domain):
        vol = domain.volume * self.mass(domain)
        if self.L == 0:
            return 1.0 / vol, 1.0 / vol
        return 0.5 / vol, 1.5 / vol

    def lipschitz(self, domain) -> float:
        return 0.5 * abs(self.L) / self.mass(domain)


# ---------------------------------------------------------------------------
# Sampling and ground truth
# ---------------------------------------------------------------------------

_MIN_ACCEPTANCE = 1e-6


def sample(domain, density=None, n=1, seed=0) -> PointCloud:
    """Draw ``n`` i.i.d. points from ``density`` restricted to ``domain``.

    Rejection sampling from the bounding box with the constant envelope
    ``rho_max``. The result depends only on ``(domain, density, n, seed)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    density = Uniform() if density is None else density
    rng = np.random.default_rng(seed)
    lo, hi = (np.asarray(b, dtype=float) for b in domain.bounds)
    _, rho_max = density.bounds(domain)
    out = []
    have = 0
    drawn = 0
    accepted = 0
    batch = max(1024, 2 * n)
    while have < n:
        x = lo + (hi - lo) * rng.random((batch, domain.dim))
        u = rng.random(batch)
        keep = domain.contains(x)
        keep &= u * rho_max < density(x, domain)
        drawn += batch
        accepted += int(keep.sum())
        if drawn >= 10**7 and accepted / drawn < _MIN_ACCEPTANCE:
            raise DegenerateDensityError(
                f"degenerate density: acceptance rate {accepted / drawn:.3g} below {_MIN_ACCEPTANCE}"
            )
        out.append(x[keep])
        have += int(keep.sum())
        if accepted:
            batch = int(min(4 * 10**6, max(1024, 1.2 * (n - have) * drawn / accepted)))
    return PointCloud(np.concatenate(out)[:n])


@dataclass(frozen=True)
class GroundTruth:
    """Exact distance to the boundary and inward unit normal of a synthetic domain."""

    dist: Callable
    normal: Callable
    reach: float


def ground_truth(domain) -> GroundTruth:
    return GroundTruth(dist=domain.dist, normal=domain.normal, reach=domain.reach)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def load_csv(path) -> PointCloud:
    """Read one point per line, comma separated.

    A single leading header line is recognised by a non-numeric first token.
    Lines starting with ``#`` are comments (the CLI writes its configuration
    there).
    """
    with open(path, "r", newline="") as fh:
        text = fh.read()
    return parse_csv(text)


def parse_csv(text: str) -> PointCloud:
    rows = []
    dim = None
    header_seen = False
    for lineno, line in enumerate(io.StringIO(text), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = next(csv.reader([line]))
        fields = [f.strip() for f in fields]
        if not rows and not header_seen and not _is_number(fields[0]):
            header_seen = True
            continue
        try:
            vals = [float(f) for f in fields]
        except ValueError:
            bad = next(f for f in fields if not _is_number(f))
            raise ParseError(f"non-numeric field {bad!r}", lineno) from None
        if dim is None:
            dim = len(vals)
        elif len(vals) != dim:
            raise ParseError(f"expected {dim} fields, found {len(vals)}", lineno)
        rows.append(vals)
    if not rows:
        raise ParseError("empty file: no points found", 1)
    try:
        return PointCloud(np.array(rows, dtype=np.float64))
    except ValueError as err:
        raise ParseError(str(err)) from None


def save_csv(cloud: PointCloud, path, header: Sequence[str] | None = None, comment: str | None = None):
    """Write coordinates with 17 significant digits (lossless for float64)."""
    pts = np.asarray(cloud.points if isinstance(cloud, PointCloud) else cloud)
    with open(path, "w", newline="\n") as fh:
        if comment is not None:
            fh.write("# " + comment.replace("\n", " ") + "\n")
        if header is not None:
            fh.write(",".join(header) + "\n")
        for row in pts:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


_MAGIC = b"PCB1"
_HEADER = struct.Struct("<4sIQ")


def save_binary(cloud: PointCloud, path):
    pts = np.ascontiguousarray(cloud.points, dtype="<f8")
    n, d = pts.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, d, n))
        fh.write(pts.tobytes(order="C"))


def load_binary(path) -> PointCloud:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise ParseError("truncated header")
    magic, d, n = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise ParseError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    need = n * d * 8
    payload = blob[_HEADER.size:]
    if len(payload) < need:
        raise ParseError(f"truncated payload: expected {need} bytes, found {len(payload)}")
    if len(payload) > need:
        raise ParseError(f"trailing bytes after payload: expected {need}, found {len(payload)}")
    pts = np.frombuffer(payload, dtype="<f8").reshape(n, d)
    return PointCloud(pts)


def load(path) -> PointCloud:
    """Dispatch on content: binary if the file starts with the ``PCB1`` magic."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == _MAGIC:
        return load_binary(path)
    return load_csv(path)


def save(cloud: PointCloud, path, **kw):
    if os.fspath(path).endswith((".pcb", ".bin")):
        save_binary(cloud, path)
    else:
        save_csv(cloud, path, **kw)
