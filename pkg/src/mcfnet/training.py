"""Datasets of exactly shrinking spheres, the multipoint loss, Adam and E_l.

A ball of radius ``R`` in ``d`` dimensions moving by mean curvature stays a
ball of radius ``sqrt(R^2 - 2 (d - 1) t)``; the training pairs are its exact
phase fields at ``t = 0`` and ``t = j * delta_t``, ``j = 1..k``.
"""
from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .grid import Grid
from .network import DRNet, loss_and_gradient, loss_only
from .phasefield import Ball, Profile, field_from_shape, volume_estimate

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6
BAD_SCORE = 1e30


class DivergenceError(RuntimeError):
    """Training loss became non-finite or exceeded the divergence guard."""


@dataclass
class TrainConfig:
    n_train: int = 100
    radius_min: float = 0.05
    radius_max: float = 0.45
    k: int = 1
    batch_size: int = 10
    epochs: int = 20000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 100
    validation_radii: tuple = (0.1, 0.2, 0.3, 0.4)

    def validate(self, grid: Grid) -> None:
        if self.n_train < 1:
            raise ValueError("n_train must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be at least 1")
        if not 0 < self.radius_min <= self.radius_max < grid.L / 2:
            raise ValueError(f"radius bounds must satisfy 0 < min <= max < L/2, got {self.radius_min}, {self.radius_max}")
        if any(r <= 0 for r in self.validation_radii):
            raise ValueError("validation radii must be positive")


def radius_at(r0: float, t: float, d: int) -> float:
    """Exact radius at time ``t``; NaN once the ball has vanished."""
    r2 = r0 * r0 - 2.0 * (d - 1) * t
    return math.sqrt(r2) if r2 > 0 else math.nan


def extinction_time(r0: float, d: int) -> float:
    return r0 * r0 / (2.0 * (d - 1))


def ball_field(grid: Grid, radius: float, profile: Profile) -> np.ndarray:
    """Exact phase field of a centered ball; the empty set (zero field) for NaN radius."""
    if not radius > 0:
        return np.zeros(grid.shape)
    return field_from_shape(grid, Ball(tuple(grid.center()), radius), profile)


@dataclass
class TrainingPair:
    radius: float
    X: np.ndarray
    Y: list


@dataclass
class Dataset:
    radii: np.ndarray
    inputs: np.ndarray   # (N, *grid.shape)
    targets: np.ndarray  # (N, k, *grid.shape)

    def __len__(self):
        return len(self.radii)

    def pairs(self) -> list:
        return [TrainingPair(float(r), x, list(y)) for r, x, y in zip(self.radii, self.inputs, self.targets)]


def generate_dataset(grid: Grid, profile: Profile, cfg: TrainConfig) -> Dataset:
    cfg.validate(grid)
    profile = Profile.parse(profile)
    radii = np.linspace(cfg.radius_min, cfg.radius_max, cfg.n_train)
    horizon = 2.0 * (grid.d - 1) * cfg.k * grid.delta_t
    if radii.min() ** 2 <= horizon:
        raise ValueError(
            f"radius {radii.min()} vanishes before the {cfg.k}-step horizon (needs R^2 > {horizon:.6g})"
        )
    inputs = np.empty((cfg.n_train,) + grid.shape)
    targets = np.empty((cfg.n_train, cfg.k) + grid.shape)
    for i, r in enumerate(radii):
        inputs[i] = ball_field(grid, r, profile)
        for j in range(cfg.k):
            targets[i, j] = ball_field(grid, radius_at(r, (j + 1) * grid.delta_t, grid.d), profile)
    return Dataset(radii, inputs, targets)


def loss_jk(net, inputs: np.ndarray, targets: np.ndarray, grid: Grid) -> float:
    """Mean over the batch of ``sum_j dx^d ||S^j(X) - Y_j||^2``."""
    return loss_only(net, inputs, targets, grid.cell_volume)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState, hyper: AdamHyper):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient and moment shapes differ")
    t = state.t + 1
    m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * grad
    v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * grad * grad
    m_hat = m / (1.0 - hyper.beta1**t)
    v_hat = v / (1.0 - hyper.beta2**t)
    new = params - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return new, AdamState(m, v, t)


def last_step_before_extinction(r0: float, grid: Grid) -> int:
    """Largest ``n`` with ``n * delta_t < T_R``."""
    T = extinction_time(r0, grid.d)
    n = int(math.floor(T / grid.delta_t))
    while n > 0 and n * grid.delta_t >= T:
        n -= 1
    return n


@functools.lru_cache(maxsize=64)
def _exact_volumes(grid: Grid, profile: Profile, r0: float) -> tuple:
    n_max = last_step_before_extinction(r0, grid)
    return tuple(
        float(volume_estimate(ball_field(grid, radius_at(r0, n * grid.delta_t, grid.d), profile), grid))
        for n in range(n_max + 1)
    )


def validation_El(net, radii, grid: Grid, profile: Profile) -> float:
    """Accumulated squared volume drift along full shrink trajectories.

    ``net`` is any ``Field -> Field`` map; all radii are stepped together as
    one batch.
    """
    profile = Profile.parse(profile)
    radii = [float(r) for r in radii]
    if not radii:
        return 0.0
    if any(r <= 0 for r in radii):
        raise ValueError("validation radii must be positive")
    n_max = [last_step_before_extinction(r, grid) for r in radii]
    exact = [_exact_volumes(grid, profile, r) for r in radii]
    u = np.stack([ball_field(grid, r, profile) for r in radii])
    score = 0.0
    with np.errstate(all="ignore"):
        for n in range(max(n_max) + 1):
            vols = volume_estimate(u, grid)
            if not np.all(np.isfinite(vols)):
                return BAD_SCORE
            for i, r in enumerate(radii):
                if n <= n_max[i]:
                    diff = float(vols[i]) - exact[i][n]
                    score += diff * diff
            if n < max(n_max):
                u = net(u)
    return score if math.isfinite(score) and score < BAD_SCORE else BAD_SCORE


@dataclass
class Checkpoint:
    epoch: int
    net: DRNet
    train_loss: float
    validation_score: float


@dataclass
class TrainResult:
    best: Checkpoint
    trace: list = field(default_factory=list)  # (epoch, train_loss, validation_score or nan)
    final: Optional[DRNet] = None


def _full_loss(net, data: Dataset, grid: Grid, batch_size: int) -> float:
    total = 0.0
    for lo in range(0, len(data), batch_size):
        sl = slice(lo, lo + batch_size)
        total += loss_only(net, data.inputs[sl], data.targets[sl], grid.cell_volume) * len(data.radii[sl])
    return total / len(data)


def train(net: DRNet, data: Dataset, cfg: TrainConfig, grid: Grid, profile: Profile,
          checkpoint_dir: Optional[Path] = None) -> TrainResult:
    """Mini-batch Adam on the multipoint loss with periodic E_l checkpointing.

    The dataset order is reshuffled every epoch by a generator seeded with
    ``cfg.seed``; the returned ``best`` checkpoint has the smallest E_l.
    """
    from .formats import checkpoint_write  # formats depends on this module's Checkpoint

    if len(data) == 0:
        raise ValueError("empty dataset")
    if data.targets.shape[1] < cfg.k:
        raise ValueError(f"dataset horizon {data.targets.shape[1]} shorter than k={cfg.k}")
    profile = Profile.parse(profile)
    rng = np.random.default_rng(cfg.seed)
    hyper = AdamHyper(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    state = AdamState.zeros(net.theta.size)
    targets = data.targets[:, : cfg.k]
    data = Dataset(data.radii, data.inputs, targets)

    def checkpoint(epoch, current, loss):
        score = validation_El(current, cfg.validation_radii, grid, profile)
        ck = Checkpoint(epoch, current.copy(), loss, score)
        if checkpoint_dir is not None:
            checkpoint_write(ck, Path(checkpoint_dir) / f"epoch_{epoch:06d}.drn")
        log.info("epoch %d loss %.6e E_l %.6e", epoch, loss, score)
        return ck

    loss0 = _full_loss(net, data, grid, cfg.batch_size)
    best = checkpoint(0, net, loss0)
    trace = [(0, loss0, best.validation_score)]

    theta = net.theta.copy()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(data))
        epoch_loss = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            current = net.with_theta(theta)
            loss, grad = loss_and_gradient(current, data.inputs[idx], data.targets[idx], grid.cell_volume)
            if not math.isfinite(loss) or loss > DIVERGENCE_LIMIT:
                raise DivergenceError(f"loss {loss} at epoch {epoch} batch starting {lo}")
            theta, state = adam_step(theta, grad, state, hyper)
            epoch_loss += loss * len(idx)
        epoch_loss /= len(data)
        score = math.nan
        if epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs:
            ck = checkpoint(epoch, net.with_theta(theta), epoch_loss)
            score = ck.validation_score
            if score < best.validation_score:
                best = ck
        trace.append((epoch, epoch_loss, score))
    return TrainResult(best, trace, net.with_theta(theta))
