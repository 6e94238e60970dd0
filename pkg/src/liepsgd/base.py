"""Shared pieces of the preconditioner-element API.

Both element families (sparse group elements and low-rank elements) are
immutable values exposing the same duck-typed surface:

    dim                      problem dimension n
    apply(x)                 y = Q x
    apply_transpose(x)       y = Q^T x
    apply_inv_transpose(x)   y = Q^-T x
    precondition(g)          y = Q^T Q g
    to_dense(cap)            explicit n-by-n matrix (oracle use only)
    update(pair, mu, ...)    one fitting step, returns UpdateResult
    descent_move(pair, ...)  raw direction for derivative checks
    to_record()/from_record  checkpoint serialization

Fitting steps multiply the factor Q by ``I + mu_hat * E`` with E in the
group's Lie algebra and ``mu_hat`` normalized so the move stays well inside
the group.  The normalizer is a running bound on the observed gradient
magnitude (decayed max), so steps shrink as fitting converges.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .curvature import CurvaturePair

# Guard against division by zero in step normalizers.
TINY = float(np.finfo(np.float64).tiny)

# Default size limit for dense-oracle materialization.
DEFAULT_ORACLE_CAP = 512

# Decay rate of the running gradient-magnitude bound used by normalizers.
NORMALIZER_DECAY = 0.9


def bump_normalizer(prev: float, observed: float) -> float:
    """Decayed running max: never below the current observation."""
    return max(NORMALIZER_DECAY * prev + (1.0 - NORMALIZER_DECAY) * observed, observed)


@dataclass(frozen=True)
class DescentMove:
    """A candidate fitting move, exposed for derivative verification.

    ``mover(mu_hat)`` returns the element moved by ``I + mu_hat * E`` (or the
    equivalent one-factor move), and ``loss_derivative`` is the analytic
    d(criterion)/d(mu_hat) at mu_hat = 0 along that direction.
    ``magnitude`` is the scale the production update normalizes by.
    """

    mover: Callable[[float], object]
    loss_derivative: float
    magnitude: float


@dataclass(frozen=True)
class UpdateResult:
    """Outcome of one fitting step."""

    element: object
    accepted: bool
    criterion: float
    loss_derivative: float
    mu_hat: float


def as_vector(x, n: int | None = None, name: str = "x") -> np.ndarray:
    """Coerce to a 1-D float64 array, optionally checking its length."""
    from .errors import DimensionError

    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be a 1-D vector, got shape {v.shape}")
    if n is not None and v.shape[0] != n:
        raise DimensionError(f"{name} has length {v.shape[0]}, expected {n}")
    return v
