"""Curvature pairs (v, h) for preconditioner fitting.

A pair couples a probe direction v with the curvature response h, obtained
from an exact Hessian-vector product, a finite difference of gradients, or
the difference of successive iterates and their gradients.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .base import as_vector
from .errors import CurvatureError, DegenerateStepError, DimensionError

# Near-duplicate iterates give pure-noise curvature; skip them.
DELTA_SKIP_RTOL = 1e-12


class PairKind(enum.Enum):
    EXACT_HVP = "exact_hvp"
    FD_HVP = "fd_hvp"
    ITERATE_DELTA = "iterate_delta"


class ProbeDistribution(enum.Enum):
    STANDARD_NORMAL = "standard_normal"
    RADEMACHER = "rademacher"


@dataclass(frozen=True)
class CurvaturePair:
    """Probe vector v and curvature response h, both length n."""

    v: np.ndarray
    h: np.ndarray
    kind: PairKind = PairKind.EXACT_HVP

    def __post_init__(self):
        v = as_vector(self.v, name="v")
        h = as_vector(self.h, n=v.shape[0], name="h")
        if v.shape[0] < 1:
            raise DimensionError("curvature pair needs n >= 1")
        if not np.all(np.isfinite(v)):
            raise CurvatureError("probe vector v has non-finite entries")
        if not np.all(np.isfinite(h)):
            raise CurvatureError("curvature response h has non-finite entries")
        if np.max(np.abs(v)) == 0.0:
            raise DegenerateStepError("probe vector v is identically zero")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "h", h)

    @property
    def dim(self) -> int:
        return self.v.shape[0]


def make_probe(
    n: int,
    dist: ProbeDistribution = ProbeDistribution.STANDARD_NORMAL,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Draw a length-n probe with E[v*v] = 1 per component."""
    if n < 1:
        raise DimensionError(f"probe dimension must be >= 1, got {n}")
    if rng is None:
        rng = np.random.default_rng()
    if dist is ProbeDistribution.STANDARD_NORMAL:
        return rng.standard_normal(n)
    if dist is ProbeDistribution.RADEMACHER:
        return rng.integers(0, 2, size=n).astype(np.float64) * 2.0 - 1.0
    raise ValueError(f"unknown probe distribution {dist!r}")


def pair_from_hvp(
    hvp: Callable[[np.ndarray, np.ndarray], np.ndarray],
    theta: np.ndarray,
    v: np.ndarray,
) -> CurvaturePair:
    """Pair (v, H v) from a Hessian-vector-product oracle evaluated at theta."""
    theta = as_vector(theta, name="theta")
    v = as_vector(v, n=theta.shape[0], name="v")
    h = as_vector(hvp(theta, v), n=v.shape[0], name="hvp(theta, v)")
    if not np.all(np.isfinite(h)):
        raise CurvatureError("Hessian-vector product returned non-finite entries")
    return CurvaturePair(v=v, h=h, kind=PairKind.EXACT_HVP)


def default_fd_epsilon(theta: np.ndarray, v: np.ndarray) -> float:
    """Step size balancing truncation against round-off for gradient FD."""
    from .base import TINY

    sqrt_eps = float(np.sqrt(np.finfo(np.float64).eps))
    return sqrt_eps * (1.0 + float(np.max(np.abs(theta)))) / max(float(np.max(np.abs(v))), TINY)


def pair_from_fd_grad(
    grad: Callable[[np.ndarray], np.ndarray],
    theta: np.ndarray,
    v: np.ndarray,
    eps: float | None = None,
    g0: np.ndarray | None = None,
) -> CurvaturePair:
    """Pair (v, (grad(theta + eps v) - grad(theta)) / eps).

    Pass ``g0`` to reuse an already-computed grad(theta) (same minibatch), so
    the pair costs one extra gradient evaluation.
    """
    theta = as_vector(theta, name="theta")
    v = as_vector(v, n=theta.shape[0], name="v")
    if eps is None:
        eps = default_fd_epsilon(theta, v)
    if eps <= 0.0:
        raise DegenerateStepError(f"finite-difference step must be positive, got {eps}")
    perturbed = theta + eps * v
    if np.array_equal(perturbed, theta):
        raise DegenerateStepError("eps * v vanished in floating point; increase eps")
    g1 = as_vector(grad(perturbed), n=theta.shape[0], name="grad(theta + eps v)")
    if g0 is None:
        g0 = as_vector(grad(theta), n=theta.shape[0], name="grad(theta)")
    else:
        g0 = as_vector(g0, n=theta.shape[0], name="g0")
    h = (g1 - g0) / eps
    if not np.all(np.isfinite(h)):
        raise CurvatureError("finite-difference curvature is non-finite")
    return CurvaturePair(v=v, h=h, kind=PairKind.FD_HVP)


def pair_from_deltas(
    theta_prev: np.ndarray,
    theta: np.ndarray,
    g_prev: np.ndarray,
    g: np.ndarray,
) -> CurvaturePair:
    """Pair (theta - theta_prev, g - g_prev) from successive iterates."""
    theta_prev = as_vector(theta_prev, name="theta_prev")
    n = theta_prev.shape[0]
    theta = as_vector(theta, n=n, name="theta")
    g_prev = as_vector(g_prev, n=n, name="g_prev")
    g = as_vector(g, n=n, name="g")
    dtheta = theta - theta_prev
    if np.max(np.abs(dtheta)) < DELTA_SKIP_RTOL * (1.0 + np.max(np.abs(theta))):
        raise DegenerateStepError("iterates are (nearly) identical; pair skipped")
    dg = g - g_prev
    return CurvaturePair(v=dtheta, h=dg, kind=PairKind.ITERATE_DELTA)


@dataclass
class ProbeSource:
    """Seeded stream of probes; same seed gives a bit-identical sequence."""

    n: int
    dist: ProbeDistribution = ProbeDistribution.STANDARD_NORMAL
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    def __call__(self) -> np.ndarray:
        return make_probe(self.n, self.dist, self.rng)
