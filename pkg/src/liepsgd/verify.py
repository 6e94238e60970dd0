"""Oracle and invariant checks runnable from the CLI (`verify` subcommand).

Each check compares an implementation path against an independent route
(dense linear algebra, finite differences, closed forms) and reports the
observed error against its tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .curvature import CurvaturePair, ProbeDistribution, make_probe
from .fitting import (
    FixedPointSpec,
    directional_derivative_check,
    fit_preconditioner,
    fixed_point_oracle,
    smoothed_is_nonincreasing,
    spectral_spread,
)
from .lra import LraElement, spectrum_witness
from .mfgroups import (
    GroupElement,
    diagonal_group,
    element_from_dense,
    identity_element,
    make_group,
    random_element,
)
from .testbeds import (
    gradient_consistency_error,
    logreg_outer_make,
    quadratic_make,
    rosenbrock_make,
    sample_xor_batch,
    synthetic_blobs,
    xor_make,
)

GROUP_KINDS = ("diag", "xmat", "butterfly", "dense")


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    passed: bool
    tolerance: float
    observed: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.suite}/{self.name}: observed {self.observed:.3e} (tolerance {self.tolerance:.1e})"


def _check(suite, name, observed, tol, larger_ok=False) -> CheckResult:
    passed = observed >= tol if larger_ok else observed <= tol
    return CheckResult(suite=suite, name=name, passed=bool(passed), tolerance=tol, observed=float(observed))


def random_group_element(kind: str, n: int, rng: np.random.Generator) -> GroupElement:
    """Well-conditioned random element; near-symmetric for the dense kind."""
    group = make_group(kind, n)
    if group.is_full_pattern:
        w = 0.25 * rng.standard_normal((n, n))
        sym = 0.5 * (w + w.T) + np.eye(n)
        floor = np.linalg.eigvalsh(sym).min()
        if floor < 0.1:
            sym += (0.1 - floor) * np.eye(n)
        return element_from_dense(group, sym)
    return random_element(group, rng)


def _rand_pair(n, rng) -> CurvaturePair:
    return CurvaturePair(v=rng.standard_normal(n), h=rng.standard_normal(n))


def verify_groups(rounds: int = 100, rng: np.random.Generator | None = None) -> list[CheckResult]:
    if rng is None:
        rng = np.random.default_rng(20240817)
    out = []
    for kind in GROUP_KINDS:
        comp = inv = assoc = prec = pattern = 0.0
        descent_err = 0.0
        descent_neg = True
        for _ in range(rounds):
            n = int(rng.choice([2, 4, 8, 16]))
            t1 = random_group_element(kind, n, rng)
            t2 = random_group_element(kind, n, rng)
            t3 = random_group_element(kind, n, rng)
            d1, d2 = t1.to_dense(), t2.to_dense()
            comp = max(comp, float(np.abs(t1.compose(t2).to_dense() - d1 @ d2).max()))
            assoc = max(
                assoc,
                float(
                    np.abs(
                        t1.compose(t2).compose(t3).to_dense() - t1.compose(t2.compose(t3)).to_dense()
                    ).max()
                ),
            )
            inv = max(inv, float(np.abs(t1.compose(t1.inverse()).to_dense() - np.eye(n)).max()))
            g = rng.standard_normal(n)
            prec = max(prec, float(np.abs(t1.precondition(g) - d1.T @ (d1 @ g)).max()))
            pair = _rand_pair(n, rng)
            res = t1.update(pair, 0.05)
            outside = np.abs(res.element.to_dense())[~_pattern_mask(t1.group)]
            pattern = max(pattern, float(outside.max()) if outside.size else 0.0)
            fd, an = directional_derivative_check(t1, pair, 1e-6)
            descent_neg &= fd < 0
            descent_err = max(descent_err, abs(fd - an) / max(abs(an), 1e-300))
        out.append(_check("groups", f"{kind}/compose-dense", comp, 1e-10))
        out.append(_check("groups", f"{kind}/associativity", assoc, 1e-10))
        out.append(_check("groups", f"{kind}/inverse-roundtrip", inv, 1e-10))
        out.append(_check("groups", f"{kind}/precondition-dense", prec, 1e-10))
        out.append(_check("groups", f"{kind}/update-stays-in-pattern", pattern, 1e-12))
        out.append(_check("groups", f"{kind}/descent-direction-negative", 0.0 if descent_neg else 1.0, 0.5))
        out.append(_check("groups", f"{kind}/descent-fd-vs-analytic", descent_err, 1e-3))
    return out


def _pattern_mask(group) -> np.ndarray:
    mask = np.zeros((group.dim, group.dim), dtype=bool)
    rows = np.arange(group.dim)
    for i in range(group.order):
        mask[rows, group.perms[i]] = True
    return mask


def verify_lra(rounds: int = 100, rng: np.random.Generator | None = None) -> list[CheckResult]:
    if rng is None:
        rng = np.random.default_rng(20240818)
    out = []
    wood = dense_agree = 0.0
    for _ in range(rounds):
        n = int(rng.integers(2, 65))
        r = int(rng.integers(0, 9))
        comp = bool(rng.integers(0, 2))
        elt = LraElement(
            scale=(1.0 + 0.3 * rng.standard_normal(n)) if comp else float(1.0 + 0.3 * rng.standard_normal()),
            u=0.3 * rng.standard_normal((n, r)),
            v=0.3 * rng.standard_normal((n, r)),
        )
        x = rng.standard_normal(n)
        wood = max(wood, float(np.abs(elt.apply_inv_transpose(elt.apply_transpose(x)) - x).max()))
        dense = elt.to_dense()
        dense_agree = max(dense_agree, float(np.abs(elt.apply(x) - dense @ x).max()))
        dense_agree = max(
            dense_agree, float(np.abs(elt.precondition(x) - dense.T @ (dense @ x)).max())
        )
    out.append(_check("lra", "woodbury-inverse-transpose", wood, 1e-10))
    out.append(_check("lra", "dense-oracle-agreement", dense_agree, 1e-10))

    n, r = 8, 2
    u1, u2, v = rng.standard_normal((n, r)), rng.standard_normal((n, r)), rng.standard_normal((n, r))
    lhs = (u1 @ v.T) @ (u2 @ v.T) - (u2 @ v.T) @ (u1 @ v.T)
    rhs = (u1 @ (v.T @ u2) - u2 @ (v.T @ u1)) @ v.T
    out.append(_check("lra", "lie-bracket-closure", float(np.abs(lhs - rhs).max()), 1e-12))

    descent_err = 0.0
    descent_neg = True
    held_exact = True
    for _ in range(rounds):
        n = 8
        r = int(rng.choice([1, 4]))
        comp = bool(rng.integers(0, 2))
        elt = LraElement(
            scale=(1.0 + 0.3 * rng.standard_normal(n)) if comp else float(1.0 + 0.3 * rng.standard_normal()),
            u=0.4 * rng.standard_normal((n, r)),
            v=0.4 * rng.standard_normal((n, r)),
        )
        pair = _rand_pair(n, rng)
        for which in ("scale", "u", "v"):
            fd, an = directional_derivative_check(elt, pair, 1e-6, which=which)
            descent_neg &= fd < 0
            descent_err = max(descent_err, abs(fd - an) / max(abs(an), 1e-300))
            res = elt.update(pair, 0.05, which=which)
            if which == "u":
                held_exact &= np.array_equal(res.element.v, elt.v)
            elif which == "v":
                held_exact &= np.array_equal(res.element.u, elt.u)
    out.append(_check("lra", "descent-direction-negative", 0.0 if descent_neg else 1.0, 0.5))
    out.append(_check("lra", "descent-fd-vs-analytic", descent_err, 1e-3))
    out.append(_check("lra", "update-holds-other-factor", 0.0 if held_exact else 1.0, 0.5))

    big, small = spectrum_witness(100.0, 0.01)
    pb = big.to_dense().T @ big.to_dense()
    ps = small.to_dense().T @ small.to_dense()
    out.append(_check("lra", "witness-large-eigenvalue", float(np.linalg.eigvalsh(pb).max()), 100.0, larger_ok=True))
    out.append(_check("lra", "witness-small-eigenvalue", float(np.linalg.eigvalsh(ps).min()), 0.01 + 1e-12))
    return out


def verify_fitting(rng: np.random.Generator | None = None) -> list[CheckResult]:
    if rng is None:
        rng = np.random.default_rng(20240819)
    out = []
    spec = FixedPointSpec(np.diag([4.0, 1.0]))
    out.append(
        _check(
            "fitting",
            "oracle-diag",
            float(np.abs(fixed_point_oracle(spec) - np.diag([0.25, 1.0])).max()),
            1e-12,
        )
    )
    out.append(
        _check(
            "fitting",
            "oracle-indefinite",
            float(abs(fixed_point_oracle(FixedPointSpec(np.array([[-2.0]])))[0, 0] - 0.5)),
            1e-12,
        )
    )
    h = np.diag([4.0, 1.0])
    out.append(
        _check(
            "fitting",
            "spread-of-exact-fixed-point",
            abs(spectral_spread(fixed_point_oracle(FixedPointSpec(h)), h) - 1.0),
            1e-10,
        )
    )

    # diagonal fit against the oracle, noiseless
    src_rng = np.random.default_rng(7)
    hmat = np.diag([4.0, 1.0])

    def source():
        v = make_probe(2, rng=src_rng)
        return CurvaturePair(v=v, h=hmat @ v)

    res = fit_preconditioner(identity_element(diagonal_group(2)), source, 500, 0.1)
    q2 = res.element.coeffs[0] ** 2
    err = float(np.abs(q2 - np.array([0.25, 1.0])).max() / 0.25)
    out.append(_check("fitting", "diag-fit-vs-oracle-noiseless", err, 0.05))

    # trend check from a deliberately bad start so the descent is visible
    far = fit_preconditioner(
        identity_element(diagonal_group(2), rho0=4.0), source, 500, 0.02
    )
    out.append(
        _check(
            "fitting",
            "criterion-trace-monotone-trend",
            0.0 if smoothed_is_nonincreasing(far.criterion_trace) else 1.0,
            0.5,
        )
    )
    out.append(
        _check(
            "fitting",
            "criterion-finite",
            0.0 if np.all(np.isfinite(res.criterion_trace) & np.isfinite(far.criterion_trace)) else 1.0,
            0.5,
        )
    )
    return out


def verify_gradients(rng: np.random.Generator | None = None) -> list[CheckResult]:
    if rng is None:
        rng = np.random.default_rng(20240820)
    out = []
    quad = quadratic_make(6, 50.0, rng=np.random.default_rng(1))
    theta = rng.standard_normal(6)
    out.append(_check("gradients", "quadratic-grad-fd", gradient_consistency_error(quad, theta), 1e-5))
    v = rng.standard_normal(6)
    out.append(
        _check(
            "gradients",
            "quadratic-hvp-vs-dense",
            float(np.abs(quad.hvp(theta, v) - quad.dense_hessian(theta) @ v).max()),
            1e-10,
        )
    )
    rosen = rosenbrock_make(5)
    theta = rng.standard_normal(5) * 0.5
    out.append(_check("gradients", "rosenbrock-grad-fd", gradient_consistency_error(rosen, theta), 1e-5))
    v = rng.standard_normal(5)
    out.append(
        _check(
            "gradients",
            "rosenbrock-hvp-vs-dense",
            float(np.abs(rosen.hvp(theta, v) - rosen.dense_hessian(theta) @ v).max()),
            1e-10,
        )
    )
    blobs = synthetic_blobs(side=4, classes=3, n_train=60, n_test=30, rng=np.random.default_rng(2))
    logreg = logreg_outer_make(blobs, batch_size=20, rng=np.random.default_rng(3))
    theta = 0.1 * rng.standard_normal(logreg.dim)
    batch = logreg.sample_batch()
    out.append(
        _check("gradients", "logreg-grad-fd", gradient_consistency_error(logreg, theta, batch=batch), 1e-5)
    )
    xor = xor_make(8, 6, rng=np.random.default_rng(4), batch_size=8)
    theta = xor.initial_point(np.random.default_rng(5))
    batch = xor.sample_batch()
    out.append(_check("gradients", "xor-bptt-grad-fd", gradient_consistency_error(xor, theta, batch=batch), 1e-5))
    x, y = sample_xor_batch(16, 10000, np.random.default_rng(6))
    out.append(_check("gradients", "xor-label-balance", abs(float(np.mean(y)) - 0.5), 0.05))
    return out


SUITES = {
    "groups": verify_groups,
    "lra": verify_lra,
    "fitting": verify_fitting,
    "gradients": verify_gradients,
}


def run_suites(names: list[str]) -> list[CheckResult]:
    results = []
    for name in names:
        results.extend(SUITES[name]())
    return results
