"""The Problem contract shared by all testbeds.

A Problem bundles loss/gradient callables (stochastic ones accept an explicit
``batch`` so a fitting step can reuse the step's minibatch), optional exact
curvature oracles, and bookkeeping the benchmark harness needs (initial
point, success threshold, extra metrics).  Problems are immutable after
construction; stochastic ones own a seeded sampler.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np


@dataclass(frozen=True)
class Problem:
    name: str
    dim: int
    loss: Callable[..., float]
    grad: Callable[..., np.ndarray]
    loss_and_grad: Callable[..., tuple[float, np.ndarray]]
    hvp: Callable[..., np.ndarray] | None = None
    dense_hessian: Callable[[np.ndarray], np.ndarray] | None = None
    sample_batch: Callable[[], Any] | None = None
    init_theta: Callable[[np.random.Generator], np.ndarray] | None = None
    eval_loss: Callable[[np.ndarray], float] | None = None
    success_loss: float | None = None
    extra_metrics: Callable[[np.ndarray], dict[str, float]] | None = None

    def initial_point(self, rng: np.random.Generator) -> np.ndarray:
        if self.init_theta is not None:
            return np.asarray(self.init_theta(rng), dtype=np.float64)
        return rng.standard_normal(self.dim)

    def evaluate(self, theta: np.ndarray) -> float:
        return float(self.eval_loss(theta) if self.eval_loss is not None else self.loss(theta))


def with_defaults(
    name: str,
    dim: int,
    loss: Callable[..., float],
    grad: Callable[..., np.ndarray],
    **kwargs,
) -> Problem:
    """Build a Problem, deriving loss_and_grad from loss + grad if absent."""
    lag = kwargs.pop("loss_and_grad", None)
    if lag is None:
        def lag(theta, batch=None, _loss=loss, _grad=grad):
            return float(_loss(theta, batch)), _grad(theta, batch)
    return Problem(name=name, dim=dim, loss=loss, grad=grad, loss_and_grad=lag, **kwargs)


def central_diff_gradient(
    f: Callable[[np.ndarray], float], theta: np.ndarray, eps: float = 1e-6
) -> np.ndarray:
    """Dense central-difference gradient used by consistency checks."""
    theta = np.asarray(theta, dtype=np.float64)
    out = np.empty_like(theta)
    for i in range(theta.size):
        step = np.zeros_like(theta)
        step[i] = eps
        out[i] = (f(theta + step) - f(theta - step)) / (2.0 * eps)
    return out


def gradient_consistency_error(
    problem: Problem,
    theta: np.ndarray,
    batch=None,
    eps: float = 1e-6,
) -> float:
    """Relative error between analytic gradient and central differences."""
    if batch is None and problem.sample_batch is not None:
        batch = problem.sample_batch()
    f = (lambda t: problem.loss(t)) if batch is None else (lambda t: problem.loss(t, batch))
    g = problem.grad(theta) if batch is None else problem.grad(theta, batch)
    fd = central_diff_gradient(f, theta, eps)
    denom = max(float(np.linalg.norm(g)), 1e-12)
    return float(np.linalg.norm(fd - g)) / denom
