"""Deterministic smooth testbeds: rotated quadratics and chained Rosenbrock."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .base import Problem, with_defaults


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-ish orthogonal matrix via sign-fixed QR."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def quadratic_make(
    n: int,
    kappa: float = 1.0,
    grad_noise: float = 0.0,
    hvp_noise: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Problem:
    """f = 0.5 theta^T H theta with eigenvalues log-spaced over the condition
    number: H = R diag(lambda) R^T, lambda in [kappa^-1/2, kappa^1/2]."""
    if kappa < 1.0:
        raise DimensionError(f"condition number must be >= 1, got {kappa}")
    if rng is None:
        rng = np.random.default_rng()
    lam = np.geomspace(kappa**-0.5, kappa**0.5, n) if n > 1 else np.array([1.0])
    rot = random_orthogonal(n, rng)
    hess = (rot * lam) @ rot.T
    hess = 0.5 * (hess + hess.T)
    noise_rng = np.random.default_rng(rng.integers(2**63))

    def loss(theta, batch=None):
        return 0.5 * float(theta @ (hess @ theta))

    def grad(theta, batch=None):
        g = hess @ theta
        if grad_noise > 0.0:
            g = g + grad_noise * noise_rng.standard_normal(n)
        return g

    def hvp(theta, v, batch=None):
        hv = hess @ v
        if hvp_noise > 0.0:
            hv = hv + hvp_noise * float(np.linalg.norm(v)) * noise_rng.standard_normal(n)
        return hv

    return with_defaults(
        name=f"quadratic(n={n},kappa={kappa:g})",
        dim=n,
        loss=loss,
        grad=grad,
        hvp=hvp,
        dense_hessian=lambda theta: hess,
        init_theta=lambda r: r.standard_normal(n),
    )


def rosenbrock_make(n: int) -> Problem:
    """Chained Rosenbrock; global minimum at the all-ones vector."""
    if n < 2:
        raise DimensionError(f"Rosenbrock needs n >= 2, got {n}")

    def loss(theta, batch=None):
        x = np.asarray(theta, dtype=np.float64)
        return float(np.sum((1.0 - x[:-1]) ** 2 + 100.0 * (x[1:] - x[:-1] ** 2) ** 2))

    def grad(theta, batch=None):
        x = np.asarray(theta, dtype=np.float64)
        g = np.zeros_like(x)
        diff = x[1:] - x[:-1] ** 2
        g[:-1] = -2.0 * (1.0 - x[:-1]) - 400.0 * x[:-1] * diff
        g[1:] += 200.0 * diff
        return g

    def dense_hessian(theta):
        x = np.asarray(theta, dtype=np.float64)
        h = np.zeros((n, n))
        idx = np.arange(n - 1)
        h[idx, idx] += 2.0 + 1200.0 * x[:-1] ** 2 - 400.0 * x[1:]
        h[idx + 1, idx + 1] += 200.0
        h[idx, idx + 1] = -400.0 * x[:-1]
        h[idx + 1, idx] = -400.0 * x[:-1]
        return h

    def hvp(theta, v, batch=None):
        x = np.asarray(theta, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        out = np.zeros_like(v)
        diag_main = np.zeros(n)
        diag_main[:-1] += 2.0 + 1200.0 * x[:-1] ** 2 - 400.0 * x[1:]
        diag_main[1:] += 200.0
        off = -400.0 * x[:-1]
        out = diag_main * v
        out[:-1] += off * v[1:]
        out[1:] += off * v[:-1]
        return out

    def init_theta(rng):
        theta0 = np.ones(n)
        theta0[::2] = -1.2
        return theta0

    return with_defaults(
        name=f"rosenbrock(n={n})",
        dim=n,
        loss=loss,
        grad=grad,
        hvp=hvp,
        dense_hessian=dense_hessian,
        init_theta=init_theta,
    )
