"""Constrained flows: multiphase partition/volume projections and obstacle problems.

Steiner trees (2-d) and Plateau surfaces (3-d) are both computed as
stationary points of a non-oriented flow under the inclusion constraint
``u <= u_in``, where ``u_in`` is a ``q'`` bump along the prescribed points or
boundary curve.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .grid import Grid
from .phasefield import (
    PointSet,
    SampledCurve,
    SegmentSet,
    Shape,
    cone_surface,
    dq,
    grid_points,
    length_estimate,
    sqrt_2W,
)

DENOMINATOR_FLOOR = 1e-12
OBSTACLE_FLOOR = -0.25


class ConstraintInfeasible(ValueError):
    """A volume multiplier cannot be formed because a phase has no interface weight."""


def _stack(phases) -> np.ndarray:
    u = np.asarray(phases, dtype=float)
    if u.ndim < 2 or u.shape[0] < 1:
        raise ValueError("expected a non-empty stack of phase fields")
    return u


def _lambda_weights(s: np.ndarray) -> np.ndarray:
    """``s_k / sum s`` per node; ``1/N`` where the sum falls below the floor."""
    total = s.sum(axis=0)
    low = total < DENOMINATOR_FLOOR
    safe = np.where(low, 1.0, total)
    w = s / safe
    w[:, low] = 1.0 / s.shape[0]
    return w


def partition_project(phases) -> np.ndarray:
    """Add ``lambda * sqrt(2W(u_k))`` so the phases sum to one at every node."""
    u = _stack(phases)
    residual = 1.0 - u.sum(axis=0)
    return u + _lambda_weights(sqrt_2W(u)) * residual


def volume_partition_project(phases, volumes: Sequence[float], cell_volume: float) -> np.ndarray:
    """Joint projection onto the partition and per-phase volume constraints.

    The update is ``u_k + (lambda(x) + mu_k) sqrt(2W(u_k))``.  Eliminating the
    pointwise ``lambda`` leaves an ``N x N`` linear system for ``mu`` whose
    null space (a common shift of all ``mu_k``) is absorbed by ``lambda``;
    it is solved in the least-squares sense, which is exact whenever the
    targets sum to the box volume.
    """
    u = _stack(phases)
    vols = np.asarray(volumes, dtype=float)
    if vols.shape != (u.shape[0],):
        raise ValueError(f"expected {u.shape[0]} volume targets, got {vols.shape}")
    s = sqrt_2W(u)
    axes = tuple(range(1, u.ndim))
    mass = cell_volume * s.sum(axis=axes)
    for k, m in enumerate(mass):
        if m < DENOMINATOR_FLOOR:
            raise ConstraintInfeasible(f"phase {k} has no interface weight (integral of sqrt(2W) = {m:.3e})")
    w = _lambda_weights(s)
    residual = 1.0 - u.sum(axis=0)
    flat_w = w.reshape(u.shape[0], -1)
    flat_s = s.reshape(u.shape[0], -1)
    A = np.diag(mass) - cell_volume * flat_w @ flat_s.T
    b = vols - cell_volume * u.sum(axis=axes) - cell_volume * flat_w @ residual.ravel()
    mu = np.linalg.lstsq(A, b, rcond=None)[0]
    shift = mu.reshape((-1,) + (1,) * (u.ndim - 1))
    lam = residual - (shift * s).sum(axis=0)
    return u + shift * s + w * lam


def sequential_volume_project(phases, volumes: Sequence[float], cell_volume: float) -> np.ndarray:
    """Explicit multipliers: ``mu_k`` from the volume defect, then ``lambda`` for the partition.

    The partition holds exactly; volumes are matched only up to the
    ``lambda`` contribution, so this is kept as a reference variant.
    """
    u = _stack(phases)
    s = sqrt_2W(u)
    axes = tuple(range(1, u.ndim))
    mass = cell_volume * s.sum(axis=axes)
    for k, m in enumerate(mass):
        if m < DENOMINATOR_FLOOR:
            raise ConstraintInfeasible(f"phase {k} has no interface weight (integral of sqrt(2W) = {m:.3e})")
    mu = (np.asarray(volumes, dtype=float) - cell_volume * u.sum(axis=axes)) / mass
    shifted = u + mu.reshape((-1,) + (1,) * (u.ndim - 1)) * s
    return shifted + _lambda_weights(s) * (1.0 - shifted.sum(axis=0))


def multiphase_step(phases, step: Callable, grid: Grid, volumes: Optional[Sequence[float]] = None,
                    method: str = "coupled") -> np.ndarray:
    """Step each phase independently, then project onto the constraints."""
    u = _stack(phases)
    half = np.stack([step(uk) for uk in u])
    if volumes is None:
        return partition_project(half)
    if method == "coupled":
        return volume_partition_project(half, volumes, grid.cell_volume)
    if method == "sequential":
        return sequential_volume_project(half, volumes, grid.cell_volume)
    raise ValueError(f"unknown projection method {method!r}")


def build_obstacle(shape: Shape, grid: Grid) -> np.ndarray:
    """``sum_i q'(dist(a_i, x) / eps)`` over the shape's components, clamped at ``-1/4``.

    A point set contributes one bump per point; any other shape contributes a
    single bump along its distance function.
    """
    if isinstance(shape, PointSet):
        if len(shape.points) == 0:
            raise ValueError("obstacle needs at least one point")
        parts = [PointSet((p,)) for p in shape.points]
    else:
        parts = [shape]
    x = grid_points(grid)
    total = np.zeros(grid.shape)
    for part in parts:
        total += dq(part.unsigned_distance(x, grid.L) / grid.epsilon)
    return np.maximum(total, OBSTACLE_FLOOR)


def constrained_step(u: np.ndarray, step: Callable, u_in: np.ndarray) -> np.ndarray:
    return np.minimum(u_in, step(u))


def star_tree(points) -> SegmentSet:
    """Segments joining the first point to every other point."""
    pts = [tuple(map(float, p)) for p in points]
    if len(pts) < 2:
        raise ValueError("star tree needs at least 2 points")
    return SegmentSet(tuple((pts[0], p) for p in pts[1:]))


@dataclass
class ObstacleResult:
    field: np.ndarray
    measure: float        # length (2-d) or area (3-d)
    iterations: int
    converged: bool
    history: list         # measure after each iteration


def obstacle_flow(u0: np.ndarray, step: Callable, u_in: np.ndarray, grid: Grid,
                  max_iters: int = 5000, stall_tol: float = 1e-7) -> ObstacleResult:
    """Iterate ``min(u_in, step(u))`` until the relative L2 change drops below ``stall_tol``."""
    if max_iters < 0 or stall_tol <= 0:
        raise ValueError("max_iters must be >= 0 and stall_tol > 0")
    u = np.minimum(u_in, u0)
    history = [float(length_estimate(u, grid))]
    converged = False
    it = 0
    while it < max_iters:
        nxt = constrained_step(u, step, u_in)
        it += 1
        if not np.all(np.isfinite(nxt)):
            raise FloatingPointError(f"non-finite field at iteration {it}")
        change = np.linalg.norm(nxt - u)
        ref = np.linalg.norm(u)
        u = nxt
        history.append(float(length_estimate(u, grid)))
        if change < stall_tol * ref:
            converged = True
            break
    return ObstacleResult(u, history[-1], it, converged, history)


def steiner_solve(points, step: Callable, grid: Grid, max_iters: int = 5000,
                  stall_tol: float = 1e-7) -> ObstacleResult:
    """Approximate Steiner tree through ``points`` from the star-tree initialization."""
    if grid.d != 2:
        raise ValueError("Steiner problems are 2-d")
    pts = PointSet(tuple(tuple(map(float, p)) for p in points))
    u0 = dq(star_tree(pts.points).unsigned_distance(grid_points(grid), grid.L) / grid.epsilon)
    u_in = build_obstacle(pts, grid)
    return obstacle_flow(u0, step, u_in, grid, max_iters, stall_tol)


def plateau_solve(boundary: SampledCurve, step: Callable, grid: Grid, init: Optional[Shape] = None,
                  max_iters: int = 2000, stall_tol: float = 1e-7) -> ObstacleResult:
    """Approximate minimal surface spanning a closed curve; ``measure`` is the area."""
    if grid.d != 3:
        raise ValueError("Plateau problems are 3-d")
    if not boundary.closed:
        raise ValueError("Plateau boundary must be a closed curve")
    init = cone_surface(boundary) if init is None else init
    u0 = dq(init.unsigned_distance(grid_points(grid), grid.L) / grid.epsilon)
    u_in = build_obstacle(boundary, grid)
    return obstacle_flow(u0, step, u_in, grid, max_iters, stall_tol)
