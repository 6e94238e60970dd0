"""Preconditioned SGD driver.

One step performs, in order: optional preconditioner update from a curvature
pair (every ``update_every`` iterations), L2 weight decay folded into the
gradient, momentum accumulation m <- beta m + (1 - beta) g, preconditioning
of the momentum, norm clipping of the preconditioned gradient, and the
parameter move theta <- theta - lr_i * pg.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .base import UpdateResult, as_vector
from .curvature import CurvaturePair
from .errors import ConfigError, CurvatureError


@dataclass(frozen=True)
class ExponentialAnneal:
    """Geometric interpolation from start to end over total iterations."""

    start: float
    end: float
    total: int


@dataclass(frozen=True)
class StageDrops:
    """Multiply the base rate by ``factor`` after each drop iteration."""

    drops: tuple[int, ...]
    factor: float = 0.1

    def __post_init__(self):
        drops = tuple(int(d) for d in self.drops)
        if any(b <= a for a, b in zip(drops, drops[1:])):
            raise ConfigError("stage drops must be strictly increasing")
        object.__setattr__(self, "drops", drops)


@dataclass(frozen=True)
class CosineDecay:
    """base * 0.5 * (1 + cos(pi i / total)), clamped past total."""

    total: int


Schedule = Union[None, ExponentialAnneal, StageDrops, CosineDecay]


def lr_schedule(base: float, schedule: Schedule, i: int) -> float:
    if i < 0:
        raise ConfigError(f"iteration index must be >= 0, got {i}")
    if schedule is None:
        return base
    if isinstance(schedule, ExponentialAnneal):
        frac = min(i, schedule.total) / max(schedule.total, 1)
        return schedule.start * (schedule.end / schedule.start) ** frac
    if isinstance(schedule, StageDrops):
        passed = sum(1 for d in schedule.drops if i >= d)
        return base * schedule.factor**passed
    if isinstance(schedule, CosineDecay):
        frac = min(i, schedule.total) / max(schedule.total, 1)
        return base * 0.5 * (1.0 + np.cos(np.pi * frac))
    raise ConfigError(f"unknown schedule {schedule!r}")


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.01
    precond_lr: float = 0.01
    momentum: float = 0.0
    clip_threshold: float | None = None
    update_every: int = 1
    weight_decay: float = 0.0
    schedule: Schedule = None
    precond_schedule: Schedule = None

    def __post_init__(self):
        if not 0.0 < self.lr <= 1.0:
            raise ConfigError(f"lr must be in (0, 1], got {self.lr}")
        if not 0.0 < self.precond_lr < 1.0:
            raise ConfigError(f"precond_lr must be in (0, 1), got {self.precond_lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.clip_threshold is not None and not self.clip_threshold > 0.0:
            raise ConfigError(f"clip threshold must be positive, got {self.clip_threshold}")
        if self.update_every < 1:
            raise ConfigError(f"update_every must be >= 1, got {self.update_every}")
        if self.weight_decay < 0.0:
            raise ConfigError(f"weight decay must be >= 0, got {self.weight_decay}")


@dataclass
class OptimizerState:
    theta: np.ndarray
    momentum: np.ndarray
    precond: object | None
    iteration: int = 0
    precond_updates: int = 0
    last_criterion: float | None = None
    last_rejected: bool = False

    @classmethod
    def initial(cls, theta0: np.ndarray, precond=None) -> "OptimizerState":
        theta0 = as_vector(np.array(theta0, dtype=np.float64, copy=True), name="theta0")
        return cls(theta=theta0, momentum=np.zeros_like(theta0), precond=precond)


def momentum_update(m: np.ndarray, g: np.ndarray, beta: float) -> np.ndarray:
    """m <- beta m + (1 - beta) g; converges to g for constant gradients."""
    return beta * m + (1.0 - beta) * g


def clip_preconditioned(pg: np.ndarray, threshold: float) -> np.ndarray:
    """Rescale pg so ||pg||_2 = min(||pg||_2, threshold); direction preserved."""
    norm = float(np.linalg.norm(pg))
    if norm <= threshold:
        return pg
    return pg * (threshold / norm)


def psgd_step(
    state: OptimizerState,
    g: np.ndarray,
    pair: CurvaturePair | None,
    cfg: OptimizerConfig,
) -> OptimizerState:
    """Advance the optimizer by one iteration (state is updated in place)."""
    g = as_vector(g, n=state.theta.shape[0], name="g")
    if not np.all(np.isfinite(g)):
        raise CurvatureError("gradient has non-finite entries; step rejected")

    state.last_rejected = False
    state.last_criterion = None
    if (
        state.precond is not None
        and pair is not None
        and state.iteration % cfg.update_every == 0
    ):
        mu_q = lr_schedule(cfg.precond_lr, cfg.precond_schedule, state.iteration)
        res: UpdateResult = state.precond.update(pair, mu_q)
        state.precond = res.element
        state.last_criterion = res.criterion
        state.last_rejected = not res.accepted
        if res.accepted:
            state.precond_updates += 1

    if cfg.weight_decay > 0.0:
        g = g + cfg.weight_decay * state.theta
    state.momentum = momentum_update(state.momentum, g, cfg.momentum)
    pg = state.precond.precondition(state.momentum) if state.precond is not None else state.momentum.copy()
    if cfg.clip_threshold is not None:
        pg = clip_preconditioned(pg, cfg.clip_threshold)
    lr_i = lr_schedule(cfg.lr, cfg.schedule, state.iteration)
    state.theta = state.theta - lr_i * pg
    state.iteration += 1
    return state
