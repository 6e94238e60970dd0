"""Low-rank preconditioner Q = scale * (I + U V^T).

Two scale modes share one implementation:

* scalar rho (the plain low-rank family), and
* a positive-length vector d (composite form diag(d) (I + U V^T)); the two
  factors are fitted on their own groups and rank 0 degenerates to the pure
  diagonal preconditioner.

Inverses go through the Woodbury identity, so application costs O(n r) plus
an r-by-r solve.  Fitting holds one factor fixed per step: the scale moves on
the (diagonal) scaling group, U moves with V fixed (left multiplication by
I - mu W V^T), and V moves with U fixed (right multiplication by
I - mu U W^T), each along the steepest-descent direction of the fitting
criterion restricted to that group.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .base import (
    DEFAULT_ORACLE_CAP,
    TINY,
    DescentMove,
    UpdateResult,
    as_vector,
    bump_normalizer,
)
from .curvature import CurvaturePair
from .errors import DimensionError, NonInvertibleError, OracleCapError

# Reject factor updates that leave I + V^T U numerically unusable.
_MAX_CORE_COND = 1e12

_SUBUPDATES = ("scale", "u", "v")


@dataclass(frozen=True)
class LraElement:
    """Immutable low-rank element; ``lips`` holds per-factor normalizer state."""

    scale: float | np.ndarray
    u: np.ndarray
    v: np.ndarray
    lips: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rr_phase: int = 0

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.ndim != 2 or v.ndim != 2 or u.shape != v.shape:
            raise DimensionError(f"U and V must share shape (n, r), got {u.shape}, {v.shape}")
        if np.isscalar(self.scale) or getattr(self.scale, "ndim", 1) == 0:
            s = float(self.scale)
            if s == 0.0 or not np.isfinite(s):
                raise NonInvertibleError("scalar scale must be nonzero and finite")
        else:
            s = as_vector(self.scale, n=u.shape[0], name="scale")
            if np.any(s == 0.0) or not np.all(np.isfinite(s)):
                raise NonInvertibleError("composite scale d must have nonzero finite entries")
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def dim(self) -> int:
        return self.u.shape[0]

    @property
    def rank(self) -> int:
        return self.u.shape[1]

    @property
    def is_composite(self) -> bool:
        return isinstance(self.scale, np.ndarray)

    # -- I + U V^T and its relatives, all O(n r) -----------------------------

    def _b_apply(self, x):
        return x + self.u @ (self.v.T @ x)

    def _bt_apply(self, x):
        return x + self.v @ (self.u.T @ x)

    def _core_solve(self, core: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        try:
            out = np.linalg.solve(core, rhs)
        except np.linalg.LinAlgError as exc:
            raise NonInvertibleError("I_r + V^T U is singular") from exc
        if not np.all(np.isfinite(out)):
            raise NonInvertibleError("I_r + V^T U solve produced non-finite values")
        return out

    def _b_inv_apply(self, x):
        if self.rank == 0:
            return x
        core = np.eye(self.rank) + self.v.T @ self.u
        return x - self.u @ self._core_solve(core, self.v.T @ x)

    def _bt_inv_apply(self, x):
        # (I + V U^T)^-1 = I - V (I_r + U^T V)^-1 U^T  (Woodbury)
        if self.rank == 0:
            return x
        core = np.eye(self.rank) + self.u.T @ self.v
        return x - self.v @ self._core_solve(core, self.u.T @ x)

    # -- linear-operator surface ----------------------------------------------

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = as_vector(x, n=self.dim)
        return self.scale * self._b_apply(x)

    def apply_transpose(self, x: np.ndarray) -> np.ndarray:
        x = as_vector(x, n=self.dim)
        return self._bt_apply(self.scale * x)

    def apply_inv(self, x: np.ndarray) -> np.ndarray:
        x = as_vector(x, n=self.dim)
        return self._b_inv_apply(x / self.scale)

    def apply_inv_transpose(self, x: np.ndarray) -> np.ndarray:
        x = as_vector(x, n=self.dim)
        return self._bt_inv_apply(x) / self.scale

    def precondition(self, g: np.ndarray) -> np.ndarray:
        """P g with P = Q^T Q, via two matrix-free applications."""
        return self.apply_transpose(self.apply(g))

    def to_dense(self, cap: int = DEFAULT_ORACLE_CAP) -> np.ndarray:
        if self.dim > cap:
            raise OracleCapError(f"dense oracle capped at {cap}, element has n={self.dim}")
        b = np.eye(self.dim) + self.u @ self.v.T
        return np.asarray(self.scale).reshape(-1, 1) * b if self.is_composite else self.scale * b

    # -- fitting ------------------------------------------------------------------

    def _transported(self, pair: CurvaturePair):
        if pair.dim != self.dim:
            raise DimensionError(f"pair dimension {pair.dim} != element dimension {self.dim}")
        a = self.apply(pair.h)
        b = self.apply_inv_transpose(pair.v)
        return a, b

    def _scale_move(self, pair, a, b) -> DescentMove:
        na, nb = float(a @ a), float(b @ b)
        if self.is_composite:
            # Whitened diagonal step: descend along -diag(m1 h^T - v m2^T)
            # with m1 = P h and m2 = P^-1 v, applied as right multiplication
            # by I + mu_hat diag(eps).  Refactoring keeps the composite form:
            # the row scaling moves into d while U and V rows compensate, so
            # the represented operator family is unchanged.
            m1 = self.apply_transpose(a)
            m2 = self.apply_inv(b)
            t1 = m1 * pair.h
            t2 = pair.v * m2
            eps = -(t1 - t2)
            magnitude = float(np.max(np.abs(t1)) + np.max(np.abs(t2)))

            def mover(mu_hat: float, _eps=eps) -> "LraElement":
                s = 1.0 + mu_hat * _eps
                u, v = self.u, self.v
                if self.rank:
                    col = s[:, None]
                    u = u / col
                    v = v * col
                    # keep the factors at comparable Frobenius norms
                    nu = float(np.linalg.norm(u))
                    nv = float(np.linalg.norm(v))
                    if nu > 0.0 and nv > 0.0:
                        bal = np.sqrt(nv / nu)
                        u = u * bal
                        v = v / bal
                return replace(self, scale=self.scale * s, u=u, v=v)

            return DescentMove(mover, -2.0 * float(eps @ eps), magnitude)
        eps = -(na - nb)

        def mover(mu_hat: float, _eps=eps) -> "LraElement":
            return replace(self, scale=self.scale * (1.0 + mu_hat * _eps))

        return DescentMove(mover, -2.0 * eps * eps, na + nb)

    def _scale_column(self) -> float | np.ndarray:
        return np.asarray(self.scale).reshape(-1, 1) if self.is_composite else self.scale

    def _u_move(self, pair, a, b) -> DescentMove:
        # Steepest descent of the criterion over {X V^T}, V held fixed; the
        # move is left multiplication of I + U V^T by I - mu W V^T.
        d_col = self._scale_column()
        v_over_d = self.v / d_col
        ta = a @ v_over_d
        tb = b @ v_over_d
        da = self.scale * a
        db = self.scale * b
        w = np.outer(da, ta) - np.outer(db, tb)
        core = np.eye(self.rank) + self.v.T @ self.u

        def mover(mu_hat: float, _w=w, _core=core) -> "LraElement":
            return replace(self, u=self.u - mu_hat * (_w @ _core))

        dc = -2.0 * float(np.sum(w * w))
        magnitude = float(
            np.linalg.norm(da) * np.linalg.norm(self.v @ ta)
            + np.linalg.norm(db) * np.linalg.norm(self.v @ tb)
        )
        return DescentMove(mover, dc, magnitude)

    def _v_move(self, pair, a, b) -> DescentMove:
        # Steepest descent over {U Y^T}, U held fixed; right multiplication of
        # I + U V^T by I - mu U W^T.  Uses m1 = P h and m2 = P^-1 v.
        m1 = self.apply_transpose(a)
        m2 = self.apply_inv(b)
        t1 = m1 @ self.u
        t2 = pair.v @ self.u
        w = np.outer(pair.h, t1) - np.outer(m2, t2)
        core = np.eye(self.rank) + self.u.T @ self.v

        def mover(mu_hat: float, _w=w, _core=core) -> "LraElement":
            return replace(self, v=self.v - mu_hat * (_w @ _core))

        dc = -2.0 * float(np.sum(w * w))
        magnitude = float(
            np.linalg.norm(pair.h) * np.linalg.norm(self.u @ t1)
            + np.linalg.norm(m2) * np.linalg.norm(self.u @ t2)
        )
        return DescentMove(mover, dc, magnitude)

    def applicable_subupdates(self) -> tuple[str, ...]:
        return ("scale",) if self.rank == 0 else _SUBUPDATES

    def descent_move(self, pair: CurvaturePair, which: str = "scale") -> DescentMove:
        a, b = self._transported(pair)
        if which == "scale":
            return self._scale_move(pair, a, b)
        if which == "u":
            return self._u_move(pair, a, b)
        if which == "v":
            return self._v_move(pair, a, b)
        raise ValueError(f"unknown sub-update {which!r}")

    def _single_update(self, pair: CurvaturePair, mu: float, which: str):
        """One sub-update; returns (element', accepted, criterion, dc, mu_hat)."""
        try:
            a, b = self._transported(pair)
        except NonInvertibleError:
            return self, False, float("nan"), 0.0, 0.0
        criterion = float(a @ a + b @ b)
        try:
            if which == "scale":
                move = self._scale_move(pair, a, b)
            elif which == "u":
                move = self._u_move(pair, a, b)
            else:
                move = self._v_move(pair, a, b)
        except NonInvertibleError:
            return self, False, criterion, 0.0, 0.0

        lips = list(self.lips)
        slot = _SUBUPDATES.index(which)
        if which == "scale" and not self.is_composite:
            denom = move.magnitude  # ||a||^2 + ||b||^2 is already a safe bound
        else:
            lips[slot] = bump_normalizer(lips[slot], move.magnitude)
            denom = lips[slot]
        mu_hat = mu / (denom + TINY)
        try:
            moved = move.mover(mu_hat)
        except NonInvertibleError:
            return replace(self, lips=tuple(lips)), False, criterion, 0.0, mu_hat
        moved = replace(moved, lips=tuple(lips))
        if not self._acceptable(moved):
            return replace(self, lips=tuple(lips)), False, criterion, 0.0, mu_hat
        return moved, True, criterion, move.loss_derivative, mu_hat

    def update(self, pair: CurvaturePair, mu: float, which: str = "auto") -> UpdateResult:
        """One normalized fitting step.

        ``auto`` updates the scale factor on every call and alternates the U
        and V factors across calls; an explicit ``which`` performs just that
        sub-update.
        """
        if not 0.0 < mu < 1.0:
            raise ValueError(f"fitting step size must be in (0, 1), got {mu}")
        if which == "auto":
            sequence = ["scale"]
            if self.rank > 0:
                sequence.append("u" if self.rr_phase % 2 == 0 else "v")
            next_phase = self.rr_phase + 1
        else:
            if which not in _SUBUPDATES:
                raise ValueError(f"unknown sub-update {which!r}")
            if which != "scale" and self.rank == 0:
                raise ValueError("rank-0 element has no U/V factors to update")
            sequence = [which]
            next_phase = self.rr_phase

        element = self
        accepted = True
        criterion = float("nan")
        dc_total = 0.0
        mu_hat = 0.0
        for step, sub in enumerate(sequence):
            element, ok, crit, dc, mh = element._single_update(pair, mu, sub)
            if step == 0:
                criterion = crit
            accepted &= ok
            dc_total += dc
            mu_hat = mh
        return UpdateResult(
            replace(element, rr_phase=next_phase), accepted, criterion, dc_total, mu_hat
        )

    @staticmethod
    def _acceptable(elt: "LraElement") -> bool:
        if not (np.all(np.isfinite(elt.u)) and np.all(np.isfinite(elt.v))):
            return False
        if not np.all(np.isfinite(np.atleast_1d(elt.scale))):
            return False
        if elt.rank == 0:
            return True
        core = np.eye(elt.rank) + elt.v.T @ elt.u
        return bool(np.linalg.cond(core) < _MAX_CORE_COND)

    # -- checkpointing --------------------------------------------------------------

    def to_record(self) -> dict:
        return {
            "type": "lra",
            "mode": "composite" if self.is_composite else "scalar",
            "n": self.dim,
            "r": self.rank,
            "scale": np.asarray(self.scale).tolist() if self.is_composite else self.scale,
            "u": self.u.tolist(),
            "v": self.v.tolist(),
            "lips": list(self.lips),
            "rr_phase": self.rr_phase,
        }


def lra_from_record(rec: dict) -> LraElement:
    if rec.get("type") != "lra":
        raise DimensionError(f"not a low-rank element record: {rec.get('type')!r}")
    n, r = int(rec["n"]), int(rec["r"])
    scale = np.asarray(rec["scale"]) if rec["mode"] == "composite" else float(rec["scale"])
    return LraElement(
        scale=scale,
        u=np.asarray(rec["u"], dtype=np.float64).reshape(n, r),
        v=np.asarray(rec["v"], dtype=np.float64).reshape(n, r),
        lips=tuple(rec.get("lips", (0.0, 0.0, 0.0))),
        rr_phase=int(rec.get("rr_phase", 0)),
    )


def lra_identity(
    n: int,
    r: int,
    rho0: float = 1.0,
    composite: bool = True,
    rng: np.random.Generator | None = None,
) -> LraElement:
    """Near-identity starting element: P = rho0^2 I plus a tiny low-rank seed."""
    if n < 1 or r < 0:
        raise DimensionError(f"need n >= 1 and r >= 0, got n={n}, r={r}")
    if r == 0:
        u = np.zeros((n, 0))
        v = np.zeros((n, 0))
    else:
        if rng is None:
            rng = np.random.default_rng()
        std = (0.1 / np.sqrt(n * r)) ** 0.5
        u = std * rng.standard_normal((n, r))
        v = std * rng.standard_normal((n, r))
    scale = np.full(n, float(rho0)) if composite else float(rho0)
    return LraElement(scale=scale, u=u, v=v)


def spectrum_witness(
    target_large: float, target_small: float
) -> tuple[LraElement, LraElement]:
    """Two n=2, r=1, rho=1 elements whose P = Q^T Q hit both spectral tails.

    With U = alpha e1 and V = e1, the eigenvalues of P are ((1 + alpha)^2, 1),
    so alpha = sqrt(target) - 1 places an eigenvalue exactly on the target:
    above rho^2 for target_large > 1, below it for target_small in (0, 1).
    """
    if not target_large > 1.0:
        raise ValueError(f"target_large must exceed 1, got {target_large}")
    if not 0.0 < target_small < 1.0:
        raise ValueError(f"target_small must lie in (0, 1), got {target_small}")
    e1 = np.array([[1.0], [0.0]])

    def witness(alpha: float) -> LraElement:
        return LraElement(scale=1.0, u=alpha * e1, v=e1.copy())

    return witness(np.sqrt(target_large) - 1.0), witness(np.sqrt(target_small) - 1.0)
