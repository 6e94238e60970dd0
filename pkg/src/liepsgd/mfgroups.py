"""Sparse matrix-free preconditioners built from permutation subgroups.

A subgroup K = {sigma_1 .. sigma_m} of the permutation group induces the
family of linear maps

    T(x | a_1 .. a_m) = sum_i a_i * sigma_i(x)

which is a group under composition whenever the map is bijective.  Stored
matrix-free: a permutation is an index array p with sigma(x) = x[p], and the
dense representation (oracles only) has entry (k, p_i[k]) = a_i[k].

Built-in subgroups: trivial (diagonal matrices), flip (X-shape matrices),
half shift (butterfly matrices), all shifts (dense invertible matrices),
plus user-supplied closed permutation sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

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

# Above this subgroup order, compose/invert go through dense linear algebra.
_DENSE_ORDER_THRESHOLD = 8


def _perm_key(p: np.ndarray) -> tuple:
    return tuple(int(t) for t in p)


@dataclass(frozen=True)
class PermSubgroup:
    """A verified subgroup of S_n stored as index arrays.

    perms[0] is always the identity.  table[i, j] holds the index k of the
    permutation-matrix product P_i P_j, i.e. perms[k] = perms[j][perms[i]].
    own[i, k] marks the coefficient slot that owns dense pattern position
    (k, perms[i][k]); later permutations sharing the position (non-free group
    action) get own = False so pattern entries are counted exactly once.
    """

    kind: str
    perms: np.ndarray
    table: np.ndarray = field(repr=False)
    inv_index: np.ndarray = field(repr=False)
    inv_perms: np.ndarray = field(repr=False)
    own: np.ndarray = field(repr=False)
    orbits: tuple = field(repr=False)

    @property
    def order(self) -> int:
        return self.perms.shape[0]

    @property
    def dim(self) -> int:
        return self.perms.shape[1]

    @property
    def is_full_pattern(self) -> bool:
        """True when the pattern covers every matrix entry (dense GL)."""
        return self.order == self.dim and bool(self.own.all())


def build_subgroup(perms: Sequence[Sequence[int]], kind: str = "custom") -> PermSubgroup:
    """Validate closure/identity and precompute the composition table."""
    p = np.asarray(perms, dtype=np.intp)
    if p.ndim != 2:
        raise DimensionError("permutations must form a (m, n) index array")
    m, n = p.shape
    for i in range(m):
        if not np.array_equal(np.sort(p[i]), np.arange(n)):
            raise DimensionError(f"row {i} is not a permutation of 0..{n - 1}")
    index = {_perm_key(p[i]): i for i in range(m)}
    if len(index) != m:
        raise DimensionError("duplicate permutations in subgroup")
    ident = _perm_key(np.arange(n))
    if ident not in index:
        raise DimensionError("subgroup must contain the identity permutation")
    if index[ident] != 0:
        order = [index[ident]] + [i for i in range(m) if i != index[ident]]
        p = p[order]
        index = {_perm_key(p[i]): i for i in range(m)}

    table = np.empty((m, m), dtype=np.intp)
    for i in range(m):
        for j in range(m):
            prod = p[j][p[i]]  # (P_i P_j x)[t] = x[p_j[p_i[t]]]
            k = index.get(_perm_key(prod))
            if k is None:
                raise DimensionError("permutation set is not closed under composition")
            table[i, j] = k
    inv_index = np.empty(m, dtype=np.intp)
    for i in range(m):
        hits = np.nonzero(table[i] == 0)[0]
        if hits.size != 1:
            raise DimensionError("permutation set has no unique inverses")
        inv_index[i] = hits[0]
    inv_perms = np.argsort(p, axis=1)

    own = np.ones((m, n), dtype=bool)
    for i in range(1, m):
        for j in range(i):
            own[i] &= p[i] != p[j]

    seen = np.zeros(n, dtype=bool)
    orbits = []
    for k in range(n):
        if seen[k]:
            continue
        orbit = np.unique(p[:, k])
        seen[orbit] = True
        orbits.append(orbit)

    return PermSubgroup(
        kind=kind,
        perms=p,
        table=table,
        inv_index=inv_index,
        inv_perms=inv_perms,
        own=own,
        orbits=tuple(orbits),
    )


def diagonal_group(n: int) -> PermSubgroup:
    """K = {e}: invertible diagonal matrices."""
    return build_subgroup(np.arange(n)[None, :], kind="diag")


def x_shape_group(n: int) -> PermSubgroup:
    """K = {e, flip}: nonzeros on the diagonal and anti-diagonal."""
    return build_subgroup([np.arange(n), np.arange(n)[::-1]], kind="xmat")


def butterfly_group(n: int) -> PermSubgroup:
    """K = {e, s_(n/2)}: diagonal plus half-length circular shift (even n)."""
    if n % 2 != 0:
        raise DimensionError(f"butterfly group needs even n, got {n}")
    return build_subgroup([np.arange(n), (np.arange(n) + n // 2) % n], kind="butterfly")


def dense_group(n: int, cap: int = DEFAULT_ORACLE_CAP) -> PermSubgroup:
    """K = {e, s_1, .., s_(n-1)}: all of GL(n).  Only sensible under the cap."""
    if n > cap:
        raise OracleCapError(f"dense group of size {n} exceeds cap {cap}")
    shifts = [(np.arange(n) + i) % n for i in range(n)]
    return build_subgroup(shifts, kind="dense")


_GROUP_FACTORIES = {
    "diag": diagonal_group,
    "xmat": x_shape_group,
    "butterfly": butterfly_group,
    "dense": dense_group,
}


def make_group(kind: str, n: int) -> PermSubgroup:
    if kind not in _GROUP_FACTORIES:
        raise DimensionError(f"unknown group kind {kind!r}")
    return _GROUP_FACTORIES[kind](n)


@dataclass(frozen=True)
class GroupElement:
    """Immutable element T(. | a_1 .. a_m) of a permutation-subgroup family.

    ``lip`` is the running normalizer state threaded through fitting updates.
    """

    group: PermSubgroup
    coeffs: np.ndarray
    lip: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.shape != (self.group.order, self.group.dim):
            raise DimensionError(
                f"coefficients shape {c.shape} does not match group "
                f"({self.group.order}, {self.group.dim})"
            )
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "_dense_cache", None)

    @property
    def dim(self) -> int:
        return self.group.dim

    # -- linear-operator surface -------------------------------------------

    def apply(self, x: np.ndarray) -> np.ndarray:
        """T x = sum_i a_i * x[p_i]; O(m n), no dense matrix."""
        x = as_vector(x, n=self.dim)
        return np.einsum("ij,ij->j", self.coeffs, x[self.group.perms])

    def apply_transpose(self, x: np.ndarray) -> np.ndarray:
        """T^T x = sum_i (a_i * x)[p_i^-1]."""
        x = as_vector(x, n=self.dim)
        rows = np.arange(self.group.order)[:, None]
        return (self.coeffs * x)[rows, self.group.inv_perms].sum(axis=0)

    def apply_inv_transpose(self, x: np.ndarray) -> np.ndarray:
        return self.inverse().apply_transpose(x)

    def precondition(self, g: np.ndarray) -> np.ndarray:
        """P g with P = T^T T."""
        return self.apply_transpose(self.apply(g))

    # -- group structure ----------------------------------------------------

    def compose(self, other: "GroupElement") -> "GroupElement":
        """Element of the matrix product (self) @ (other)."""
        if self.group is not other.group and not (
            self.group.kind == other.group.kind and self.group.dim == other.group.dim
            and np.array_equal(self.group.perms, other.group.perms)
        ):
            raise DimensionError("cannot compose elements of different groups")
        g = self.group
        if g.order > _DENSE_ORDER_THRESHOLD:
            dense = self._to_dense_unchecked() @ other._to_dense_unchecked()
            return element_from_dense(g, dense, lip=self.lip)
        out = np.zeros_like(self.coeffs)
        for i in range(g.order):
            sigma_i = g.perms[i]
            a_i = self.coeffs[i]
            for j in range(g.order):
                out[g.table[i, j]] += a_i * other.coeffs[j][sigma_i]
        return GroupElement(group=g, coeffs=out, lip=self.lip)

    def inverse(self) -> "GroupElement":
        """Group inverse; closed form for |K| <= 2, per-orbit solves otherwise."""
        g = self.group
        m = g.order
        if m == 1:
            a = self.coeffs[0]
            if np.any(a == 0.0) or not np.all(np.isfinite(a)):
                raise NonInvertibleError("diagonal element has a zero entry")
            return GroupElement(group=g, coeffs=(1.0 / a)[None, :], lip=self.lip)
        if m == 2:
            a, b = self.coeffs
            sigma = g.perms[1]
            c = a * a[sigma] - b * b[sigma]
            if np.any(c == 0.0) or not np.all(np.isfinite(c)):
                raise NonInvertibleError("pairing determinant c has a zero entry")
            return GroupElement(
                group=g, coeffs=np.stack([a[sigma] / c, -b / c]), lip=self.lip
            )
        if g.is_full_pattern:
            try:
                inv = np.linalg.inv(self._to_dense_unchecked())
            except np.linalg.LinAlgError as exc:
                raise NonInvertibleError("dense element is singular") from exc
            if not np.all(np.isfinite(inv)):
                raise NonInvertibleError("dense element inverse is non-finite")
            return element_from_dense(g, inv, lip=self.lip)
        out = np.zeros_like(self.coeffs)
        for orbit in g.orbits:
            loc = np.full(g.dim, -1, dtype=np.intp)
            loc[orbit] = np.arange(orbit.size)
            block = np.zeros((orbit.size, orbit.size))
            for i in range(m):
                np.add.at(block, (loc[orbit], loc[g.perms[i][orbit]]), self.coeffs[i][orbit])
            try:
                inv_block = np.linalg.inv(block)
            except np.linalg.LinAlgError as exc:
                raise NonInvertibleError(f"singular orbit block (size {orbit.size})") from exc
            if not np.all(np.isfinite(inv_block)):
                raise NonInvertibleError("orbit block inverse is non-finite")
            for i in range(m):
                sel = g.own[i][orbit]
                rows = orbit[sel]
                out[i][rows] = inv_block[loc[rows], loc[g.perms[i][rows]]]
        return GroupElement(group=g, coeffs=out, lip=self.lip)

    def is_invertible(self) -> bool:
        g = self.group
        if not np.all(np.isfinite(self.coeffs)):
            return False
        if g.order == 1:
            return bool(np.all(self.coeffs[0] != 0.0))
        if g.order == 2:
            a, b = self.coeffs
            sigma = g.perms[1]
            return bool(np.all(a * a[sigma] - b * b[sigma] != 0.0))
        for orbit in g.orbits:
            loc = np.full(g.dim, -1, dtype=np.intp)
            loc[orbit] = np.arange(orbit.size)
            block = np.zeros((orbit.size, orbit.size))
            for i in range(g.order):
                np.add.at(block, (loc[orbit], loc[g.perms[i][orbit]]), self.coeffs[i][orbit])
            if np.linalg.det(block) == 0.0:
                return False
        return True

    # -- dense oracle ---------------------------------------------------------

    def to_dense(self, cap: int = DEFAULT_ORACLE_CAP) -> np.ndarray:
        if self.dim > cap:
            raise OracleCapError(f"dense oracle capped at {cap}, element has n={self.dim}")
        return self._to_dense_unchecked()

    def _to_dense_unchecked(self) -> np.ndarray:
        if self._dense_cache is not None:
            return self._dense_cache
        g = self.group
        out = np.zeros((g.dim, g.dim))
        rows = np.arange(g.dim)
        if g.own.all():  # free action: pattern positions never collide
            out[rows[None, :], g.perms] = self.coeffs
        else:
            for i in range(g.order):
                np.add.at(out, (rows, g.perms[i]), self.coeffs[i])
        object.__setattr__(self, "_dense_cache", out)
        return out

    # -- fitting ---------------------------------------------------------------
    #
    # Sparse kinds descend along E = -proj(a a^T - b b^T) with a = T h and
    # b = T^-T v, applied as T' = (I + mu_hat E) T; steps are normalized by a
    # decayed running max of the largest pattern entry of E.
    #
    # The full-pattern (dense GL) kind uses the same left-multiplied form but
    # with the whitened pair (m1, v), m1 = P h: E = -(m1 m1^T - v v^T).  Its
    # expectation is balanced across the spectrum of H, which is what lets the
    # fit reach the criterion's fixed point accurately at large condition
    # numbers; the trace bound ||m1||^2 + ||v||^2 dominates ||E||_2, keeping
    # the move inside the group.  After each step a Procrustes rotation pulls
    # T back toward the symmetric gauge (a pure rotation of the factor, which
    # leaves P = T^T T and the criterion unchanged).

    def _transported(self, pair: CurvaturePair) -> tuple[np.ndarray, np.ndarray]:
        """a = T h and b = T^-T v, the only inputs the update rule sees."""
        if pair.dim != self.dim:
            raise DimensionError(f"pair dimension {pair.dim} != element dimension {self.dim}")
        return self.apply(pair.h), self.inverse().apply_transpose(pair.v)

    def _pattern_outer(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Coefficients of proj(x x^T - y y^T) without materializing outers."""
        g = self.group
        return np.where(g.own, x * x[g.perms] - y * y[g.perms], 0.0)

    def _step_element(self, grads: np.ndarray, mu_hat: float) -> "GroupElement":
        coeffs = -mu_hat * grads
        coeffs[0] += 1.0
        return GroupElement(group=self.group, coeffs=coeffs, lip=self.lip)

    def descent_move(self, pair: CurvaturePair) -> DescentMove:
        """Fitting direction: mover(mu_hat) applies (I + mu_hat E) on the left;
        loss_derivative is the analytic d c_hat / d mu_hat at 0."""
        a, b = self._transported(pair)
        return self._descent_move_impl(pair, a, b)

    def _descent_move_impl(self, pair: CurvaturePair, a, b) -> DescentMove:
        if self.group.is_full_pattern:
            m1 = self.apply_transpose(a)
            grads = self._pattern_outer(m1, pair.v)
            magnitude = float(m1 @ m1 + pair.v @ pair.v)
            # <N, G> with rank-2 N = m1 m1^T - v v^T and G = a a^T - b b^T
            dc = -2.0 * float(
                (m1 @ a) ** 2 - (m1 @ b) ** 2 - (pair.v @ a) ** 2 + (pair.v @ b) ** 2
            )
        else:
            grads = self._pattern_outer(a, b)
            magnitude = float(np.max(np.abs(grads)))
            dc = -2.0 * float(np.sum(grads * grads))

        def mover(mu_hat: float, _grads=grads) -> GroupElement:
            return self._step_element(_grads, mu_hat).compose(self)

        return DescentMove(mover=mover, loss_derivative=dc, magnitude=magnitude)

    def _symmetric_gauge(self) -> "GroupElement":
        """Rotate a full-pattern element toward its symmetric representative."""
        dense = self._to_dense_unchecked()
        skew = dense.T - dense
        max_abs = float(np.abs(skew).max())
        if max_abs < TINY:
            return self
        skew = skew / max_abs
        sq = skew @ dense
        tr_sq = float(np.trace(sq))
        if tr_sq <= 0.0:
            return self
        row = skew[int(np.argmax(np.sum(skew * skew, axis=1)))] @ skew
        norm_row = float(np.linalg.norm(row))
        bound = float(np.linalg.norm((row / norm_row) @ skew)) if norm_row > 0.0 else 0.0
        alpha = 0.2 / max(bound, TINY)
        ssq = skew @ sq
        tr_ssq = float(np.trace(ssq))
        if tr_ssq < 0.0:
            alpha = min(alpha, -tr_sq / tr_ssq)
        rotated = dense + alpha * (sq + 0.5 * alpha * ssq)
        return element_from_dense(self.group, rotated, lip=self.lip)

    def update(self, pair: CurvaturePair, mu: float) -> UpdateResult:
        """One normalized descent step on the group.

        The criterion for the pair never increases to first order.  A singular
        intermediate rejects the step and returns the element unchanged.
        """
        if not 0.0 < mu < 1.0:
            raise ValueError(f"fitting step size must be in (0, 1), got {mu}")
        try:
            a, b = self._transported(pair)
            move = self._descent_move_impl(pair, a, b)
        except NonInvertibleError:
            return UpdateResult(self, False, float("nan"), 0.0, 0.0)
        criterion = float(a @ a + b @ b)
        lip = bump_normalizer(self.lip, move.magnitude)
        mu_hat = mu / (lip + TINY)
        moved = move.mover(mu_hat)
        if self.group.is_full_pattern:
            moved = moved._symmetric_gauge()
        moved = replace(moved, lip=lip)
        if not np.all(np.isfinite(moved.coeffs)) or not (
            self.group.is_full_pattern or moved.is_invertible()
        ):
            return UpdateResult(replace(self, lip=lip), False, criterion, 0.0, mu_hat)
        return UpdateResult(
            element=moved,
            accepted=True,
            criterion=criterion,
            loss_derivative=move.loss_derivative,
            mu_hat=mu_hat,
        )

    # -- checkpointing -----------------------------------------------------------

    def to_record(self) -> dict:
        rec = {
            "type": "mfgroup",
            "kind": self.group.kind,
            "n": self.dim,
            "coeffs": self.coeffs.tolist(),
            "lip": self.lip,
        }
        if self.group.kind == "custom":
            rec["perms"] = self.group.perms.tolist()
        return rec


def element_from_record(rec: dict) -> GroupElement:
    if rec.get("type") != "mfgroup":
        raise DimensionError(f"not a group-element record: {rec.get('type')!r}")
    if rec["kind"] == "custom":
        group = build_subgroup(rec["perms"])
    else:
        group = make_group(rec["kind"], int(rec["n"]))
    return GroupElement(group=group, coeffs=np.asarray(rec["coeffs"]), lip=float(rec["lip"]))


def identity_element(group: PermSubgroup, rho0: float = 1.0) -> GroupElement:
    """rho0 * I as a group element; fitting starts from a plain-SGD scaling."""
    coeffs = np.zeros((group.order, group.dim))
    coeffs[0] = rho0
    return GroupElement(group=group, coeffs=coeffs)


def element_from_dense(
    group: PermSubgroup, dense: np.ndarray, lip: float = 0.0
) -> GroupElement:
    """Read pattern entries back into coefficients (dense must lie in the group)."""
    rows = np.arange(group.dim)
    coeffs = np.where(group.own, dense[rows[None, :], group.perms], 0.0)
    elt = GroupElement(group=group, coeffs=coeffs, lip=lip)
    if group.is_full_pattern:
        object.__setattr__(elt, "_dense_cache", np.asarray(dense, dtype=np.float64))
    return elt


def random_element(
    group: PermSubgroup, rng: np.random.Generator, spread: float = 0.4
) -> GroupElement:
    """A well-conditioned random element near the identity (test/verify helper)."""
    coeffs = spread * rng.standard_normal((group.order, group.dim))
    coeffs[0] += 1.0
    elt = GroupElement(group=group, coeffs=coeffs)
    while not elt.is_invertible():  # pragma: no cover - measure-zero retry
        coeffs = spread * rng.standard_normal((group.order, group.dim))
        coeffs[0] += 1.0
        elt = GroupElement(group=group, coeffs=coeffs)
    return elt
