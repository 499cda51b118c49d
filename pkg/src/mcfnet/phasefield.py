"""Phase-field profiles, analytic shapes and geometric observables.

Two exact representations are used.  The oriented one is ``q(d / eps)`` with
``d`` the signed distance (negative inside); the non-oriented one is
``q'(dist / eps)`` with ``dist`` the unsigned distance to the interface.
Distances are periodic: coordinate differences are wrapped to the nearest
image on the torus ``[0, L]^d``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .grid import Grid


class Profile(enum.Enum):
    ORIENTED = "oriented"
    UNORIENTED = "unoriented"

    @classmethod
    def parse(cls, value) -> "Profile":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown profile {value!r}; expected 'oriented' or 'unoriented'") from None


def q(s):
    """Optimal profile of the double well: ``(1 - tanh(s/2)) / 2``."""
    return 0.5 * (1.0 - np.tanh(np.asarray(s, dtype=float) / 2.0))


def dq(s):
    """Derivative of the optimal profile: ``(tanh(s/2)^2 - 1) / 4``."""
    t = np.tanh(np.asarray(s, dtype=float) / 2.0)
    return 0.25 * (t * t - 1.0)


def profile_eval(profile: Profile, s):
    return q(s) if Profile.parse(profile) is Profile.ORIENTED else dq(s)


# Double-well potential W(s) = s^2 (1 - s)^2 / 2.

def W(s):
    return 0.5 * s**2 * (1.0 - s) ** 2


def dW(s):
    return s * (1.0 - s) * (1.0 - 2.0 * s)


def d2W(s):
    return 1.0 - 6.0 * s + 6.0 * s**2


def sqrt_2W(s):
    """``sqrt(2 W(s))`` written as ``|s (1 - s)|`` to avoid rounding below zero."""
    return np.abs(s * (1.0 - s))


class UnsupportedOperation(Exception):
    """Raised when a signed distance is requested from a non-orientable shape."""


def _wrap(diff: np.ndarray, L: float) -> np.ndarray:
    return (diff + 0.5 * L) % L - 0.5 * L


def _as_points(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != d:
        raise ValueError(f"expected points with last axis {d}, got shape {x.shape}")
    return x


def _segment_distance(x: np.ndarray, a: np.ndarray, b: np.ndarray, L: float) -> np.ndarray:
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    p = _wrap(x - mid, L)
    hh = float(half @ half)
    if hh == 0.0:
        return np.linalg.norm(p, axis=-1)
    t = np.clip((p @ half) / hh, -1.0, 1.0)
    return np.linalg.norm(p - t[..., None] * half, axis=-1)


def _triangle_distance(x: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray, L: float) -> np.ndarray:
    """Distance from points to a 3-d triangle (closest-point region test)."""
    centroid = (a + b + c) / 3.0
    p = _wrap(x - centroid, L)
    a, b, c = a - centroid, b - centroid, c - centroid
    ab, ac = b - a, c - a
    ap = p - a
    bp = p - b
    cp = p - c
    d1, d2 = ap @ ab, ap @ ac
    d3, d4 = bp @ ab, bp @ ac
    d5, d6 = cp @ ab, cp @ ac
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    closest = np.empty_like(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = np.where(denom != 0, vb / denom, 0.0)
        w = np.where(denom != 0, vc / denom, 0.0)
        closest[:] = a + v[..., None] * ab + w[..., None] * ac

        edge_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        closest[edge_bc] = (b + t[..., None] * (c - b))[edge_bc]

        edge_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t = d2 / (d2 - d6)
        closest[edge_ac] = (a + t[..., None] * ac)[edge_ac]

        closest[(d6 >= 0) & (d5 <= d6)] = c

        edge_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t = d1 / (d1 - d3)
        closest[edge_ab] = (a + t[..., None] * ab)[edge_ab]

    closest[(d3 >= 0) & (d4 <= d3)] = b
    closest[(d1 <= 0) & (d2 <= 0)] = a
    return np.linalg.norm(p - closest, axis=-1)


class Shape:
    """Analytic geometry supplying distances in box coordinates."""

    orientable = False

    def signed_distance(self, x, L: float = 1.0) -> np.ndarray:
        raise UnsupportedOperation(f"{type(self).__name__} has no orientation; only the unsigned distance is defined")

    def unsigned_distance(self, x, L: float = 1.0) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Ball(Shape):
    center: tuple
    radius: float
    orientable = True

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"ball radius must be positive, got {self.radius}")

    def signed_distance(self, x, L=1.0):
        c = np.asarray(self.center, dtype=float)
        x = _as_points(x, c.size)
        return np.linalg.norm(_wrap(x - c, L), axis=-1) - self.radius

    def unsigned_distance(self, x, L=1.0):
        return np.abs(self.signed_distance(x, L))


@dataclass(frozen=True)
class Union(Shape):
    shapes: tuple

    def __post_init__(self):
        if not self.shapes:
            raise ValueError("union of no shapes")

    @property
    def orientable(self):
        return all(s.orientable for s in self.shapes)

    def signed_distance(self, x, L=1.0):
        if not self.orientable:
            return super().signed_distance(x, L)
        return np.minimum.reduce([s.signed_distance(x, L) for s in self.shapes])

    def unsigned_distance(self, x, L=1.0):
        if self.orientable:
            return np.abs(self.signed_distance(x, L))
        return np.minimum.reduce([s.unsigned_distance(x, L) for s in self.shapes])


@dataclass(frozen=True)
class SegmentSet(Shape):
    segments: tuple  # ((a, b), ...)

    def __post_init__(self):
        if not self.segments:
            raise ValueError("segment set is empty")

    def unsigned_distance(self, x, L=1.0):
        segs = [(np.asarray(a, float), np.asarray(b, float)) for a, b in self.segments]
        x = _as_points(x, segs[0][0].size)
        return np.minimum.reduce([_segment_distance(x, a, b, L) for a, b in segs])


@dataclass(frozen=True)
class PointSet(Shape):
    points: tuple

    def __post_init__(self):
        if not self.points:
            raise ValueError("point set is empty")

    def unsigned_distance(self, x, L=1.0):
        pts = np.asarray(self.points, dtype=float)
        x = _as_points(x, pts.shape[1])
        return np.minimum.reduce([np.linalg.norm(_wrap(x - p, L), axis=-1) for p in pts])


@dataclass(frozen=True)
class SampledCurve(Shape):
    """Polyline through ordered points; keep segment lengths below ``delta_x``."""

    points: tuple
    closed: bool = True

    def __post_init__(self):
        if len(self.points) < 2:
            raise ValueError("sampled curve needs at least 2 points")

    def segments(self) -> list:
        pts = np.asarray(self.points, dtype=float)
        pairs = list(zip(pts[:-1], pts[1:]))
        if self.closed:
            pairs.append((pts[-1], pts[0]))
        return pairs

    def unsigned_distance(self, x, L=1.0):
        x = _as_points(x, len(self.points[0]))
        return np.minimum.reduce([_segment_distance(x, a, b, L) for a, b in self.segments()])


@dataclass(frozen=True)
class TriangleSet(Shape):
    """Unoriented triangle soup in 3-d."""

    triangles: tuple  # ((a, b, c), ...)

    def __post_init__(self):
        if not self.triangles:
            raise ValueError("triangle set is empty")

    def unsigned_distance(self, x, L=1.0):
        x = _as_points(x, 3)
        out = None
        for a, b, c in self.triangles:
            dist = _triangle_distance(x, np.asarray(a, float), np.asarray(b, float), np.asarray(c, float), L)
            out = dist if out is None else np.minimum(out, dist)
        return out


@dataclass(frozen=True, eq=False)
class GridSDF(Shape):
    """Precomputed distance values on a grid (signed unless ``signed=False``)."""

    values: np.ndarray
    signed: bool = True

    @property
    def orientable(self):
        return self.signed

    def _check(self, x):
        if np.shape(x)[:-1] != self.values.shape:
            raise ValueError("GridSDF can only be evaluated on its own grid nodes")

    def signed_distance(self, x, L=1.0):
        if not self.signed:
            return super().signed_distance(x, L)
        self._check(x)
        return np.asarray(self.values, dtype=float)

    def unsigned_distance(self, x, L=1.0):
        self._check(x)
        return np.abs(np.asarray(self.values, dtype=float))


def cone_surface(curve: SampledCurve, apex=None) -> TriangleSet:
    """Triangle fan joining ``apex`` (default: the curve centroid) to each curve segment."""
    pts = np.asarray(curve.points, dtype=float)
    apex = pts.mean(axis=0) if apex is None else np.asarray(apex, dtype=float)
    return TriangleSet(tuple((tuple(apex), tuple(a), tuple(b)) for a, b in curve.segments()))


def sdf_eval(shape: Shape, x, L: float = 1.0):
    """Signed and unsigned distance at one point; signed raises for non-orientable shapes."""
    x = np.asarray(x, dtype=float)
    signed = float(shape.signed_distance(x, L))
    return signed, float(shape.unsigned_distance(x, L))


def grid_points(grid: Grid) -> np.ndarray:
    coords = np.broadcast_arrays(*grid.coordinates())
    return np.stack(coords, axis=-1)


def field_from_shape(grid: Grid, shape: Shape, profile: Profile) -> np.ndarray:
    """Exact phase field of ``shape``: ``q(d / eps)`` or ``q'(dist / eps)``."""
    profile = Profile.parse(profile)
    x = grid_points(grid)
    if profile is Profile.ORIENTED:
        if not shape.orientable:
            raise UnsupportedOperation(f"oriented profile needs an orientable shape, got {type(shape).__name__}")
        return q(shape.signed_distance(x, grid.L) / grid.epsilon)
    return dq(shape.unsigned_distance(x, grid.L) / grid.epsilon)


def volume_estimate(u: np.ndarray, grid: Grid):
    """Discrete integral ``delta_x^d * sum(u)`` over the grid axes."""
    return grid.cell_volume * np.sum(u, axis=grid.axes)


def length_estimate(u: np.ndarray, grid: Grid):
    """Interface measure of a ``q'`` field: ``-(1/eps) * integral(u)``."""
    return -volume_estimate(u, grid) / grid.epsilon


def radius_estimate(u: np.ndarray, grid: Grid, profile: Profile) -> float:
    """Radius of the single circle/sphere the field represents.

    Oriented fields use the enclosed volume, non-oriented ones the interface
    measure; the sign of the ``q'`` integral is discarded.
    """
    profile = Profile.parse(profile)
    vol = float(volume_estimate(u, grid))
    if profile is Profile.ORIENTED:
        if vol < 0 or not np.isfinite(vol):
            raise ValueError(f"cannot take a radius of negative or non-finite volume {vol}")
        if grid.d == 2:
            return float(np.sqrt(vol / np.pi))
        if grid.d == 3:
            return float(np.cbrt(3.0 * vol / (4.0 * np.pi)))
        return vol / 2.0
    measure = abs(vol) / grid.epsilon
    if grid.d == 2:
        return measure / (2.0 * np.pi)
    if grid.d == 3:
        return float(np.sqrt(measure / (4.0 * np.pi)))
    return measure / 2.0


def sphere_radius(r0: float, t, d: int = 2):
    """Radius of a ``d``-ball under mean curvature flow: ``sqrt(r0^2 - 2 (d-1) t)``."""
    r2 = r0**2 - 2.0 * (d - 1) * np.asarray(t, dtype=float)
    return np.sqrt(np.where(r2 > 0, r2, np.nan))
