"""Fitting criterion, brute-force oracles, and the online fitting loop.

The criterion for a pair (v, h) and factored preconditioner P = Q^T Q is

    c_hat(Q) = h^T P h + v^T P^-1 v = ||Q h||^2 + ||Q^-T v||^2

whose expectation over probes has the unique positive-definite minimizer
P* = (H^2 + E[eps^2])^(-1/2); for noiseless symmetric positive definite H
that is exactly H^-1.  Oracles here compute P* and the eigenvalue spread of
the preconditioned Hessian by dense eigendecomposition (small n only).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .base import DEFAULT_ORACLE_CAP, UpdateResult
from .curvature import CurvaturePair
from .errors import DimensionError, NonInvertibleError, OracleCapError


@dataclass(frozen=True)
class CriterionSample:
    """One criterion evaluation; always finite and nonnegative."""

    value: float
    pair: CurvaturePair


def criterion_hat(element, pair: CurvaturePair) -> CriterionSample:
    """c_hat = ||Q h||^2 + ||Q^-T v||^2, computed matrix-free."""
    a = element.apply(pair.h)
    b = element.apply_inv_transpose(pair.v)
    value = float(a @ a + b @ b)
    if not math.isfinite(value) or value < 0.0:
        raise NonInvertibleError(f"criterion evaluated to {value}")
    return CriterionSample(value=value, pair=pair)


@dataclass(frozen=True)
class FixedPointSpec:
    """Dense description of the criterion's stationary point inputs."""

    hessian: np.ndarray
    noise_second_moment: np.ndarray | None = None

    def __post_init__(self):
        h = np.asarray(self.hessian, dtype=np.float64)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise DimensionError(f"Hessian must be square, got {h.shape}")
        if not np.allclose(h, h.T, atol=1e-10 * (1.0 + np.abs(h).max())):
            raise DimensionError("Hessian must be symmetric")
        object.__setattr__(self, "hessian", 0.5 * (h + h.T))
        if self.noise_second_moment is not None:
            e = np.asarray(self.noise_second_moment, dtype=np.float64)
            if e.shape != h.shape:
                raise DimensionError("noise second moment must match the Hessian shape")
            if not np.allclose(e, e.T, atol=1e-10 * (1.0 + np.abs(e).max())):
                raise DimensionError("noise second moment must be symmetric")
            object.__setattr__(self, "noise_second_moment", 0.5 * (e + e.T))


def fixed_point_oracle(spec: FixedPointSpec, cap: int = DEFAULT_ORACLE_CAP) -> np.ndarray:
    """(H^2 + E[eps^2])^(-1/2) by symmetric eigendecomposition."""
    h = spec.hessian
    n = h.shape[0]
    if n > cap:
        raise OracleCapError(f"fixed-point oracle capped at {cap}, got n={n}")
    m = h @ h
    if spec.noise_second_moment is not None:
        m = m + spec.noise_second_moment
    w, r = np.linalg.eigh(0.5 * (m + m.T))
    if w.min() <= n * np.finfo(np.float64).eps * max(w.max(), 0.0):
        raise NonInvertibleError("H^2 + E[eps^2] is numerically singular")
    return (r * w ** -0.5) @ r.T


def spectral_spread(p: np.ndarray, h: np.ndarray, cap: int = DEFAULT_ORACLE_CAP) -> float:
    """Ratio of extreme |eigenvalues| of P^(1/2) H P^(1/2); 1 means perfect."""
    p = np.asarray(p, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if p.shape != h.shape or p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise DimensionError(f"P and H must be square and matching, got {p.shape}, {h.shape}")
    if p.shape[0] > cap:
        raise OracleCapError(f"spread oracle capped at {cap}, got n={p.shape[0]}")
    wp, rp = np.linalg.eigh(0.5 * (p + p.T))
    if wp.min() <= 0.0:
        raise NonInvertibleError("P must be positive definite")
    sqrt_p = (rp * np.sqrt(wp)) @ rp.T
    sym = sqrt_p @ (0.5 * (h + h.T)) @ sqrt_p
    eigs = np.abs(np.linalg.eigvalsh(0.5 * (sym + sym.T)))
    top = float(eigs.max())
    bottom = float(eigs.min())
    if bottom <= top * np.finfo(np.float64).eps:
        return math.inf
    return top / bottom


@dataclass
class FitResult:
    """Final element plus the per-step criterion trace of a fitting run."""

    element: object
    criterion_trace: np.ndarray
    accepted: np.ndarray
    updates_applied: int


def fit_preconditioner(
    element,
    source: Callable[[], CurvaturePair],
    steps: int,
    mu: float | Callable[[int], float] = 0.01,
) -> FitResult:
    """Draw pairs from ``source`` and apply the element's own update op.

    ``mu`` may be a constant or a per-step schedule.  Rejected updates are
    recorded, not fatal.
    """
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    mu_at = mu if callable(mu) else (lambda _i, _mu=float(mu): _mu)
    trace = np.empty(steps)
    accepted = np.zeros(steps, dtype=bool)
    applied = 0
    for i in range(steps):
        pair = source()
        res: UpdateResult = element.update(pair, mu_at(i))
        element = res.element
        trace[i] = res.criterion
        accepted[i] = res.accepted
        applied += int(res.accepted)
    return FitResult(element=element, criterion_trace=trace, accepted=accepted, updates_applied=applied)


def smoothed_is_nonincreasing(trace: Iterable[float], window: int = 100) -> bool:
    """Window-mean trend check used by the fitting tests: last <= first."""
    arr = np.asarray(list(trace), dtype=np.float64)
    if arr.size < 2 * window:
        window = max(1, arr.size // 2)
    return bool(np.mean(arr[-window:]) <= np.mean(arr[:window]))


def directional_derivative_check(
    element,
    pair: CurvaturePair,
    mu_hat: float = 1e-6,
    which: str | None = None,
) -> tuple[float, float]:
    """(finite-difference, analytic) d c_hat / d mu_hat along the update move.

    Central difference over the element's own descent move.  ``mu_hat`` is
    measured in normalized units: the probe step is mu_hat / magnitude, the
    same scaling the production update uses, so the probe stays inside the
    region where the move is a small group transform.  Both returned values
    are derivatives with respect to the raw (unnormalized) step.
    """
    from .base import TINY

    move = element.descent_move(pair) if which is None else element.descent_move(pair, which)
    step = mu_hat / (move.magnitude + TINY)
    c_plus = criterion_hat(move.mover(step), pair).value
    c_minus = criterion_hat(move.mover(-step), pair).value
    fd = (c_plus - c_minus) / (2.0 * step)
    return fd, move.loss_derivative
