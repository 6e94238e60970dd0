"""Benchmark harness: seeded experiment runs, CSV logs, and summaries.

All randomness flows from the configured seed (sub-streams are spawned per
concern), so identical configs produce byte-identical numeric CSV columns;
only wall_ms varies between reruns.  Seeds may run in parallel workers and
are merged in seed order.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, replace
from multiprocessing import get_context
from pathlib import Path
from typing import Sequence

import numpy as np

from .curvature import (
    CurvaturePair,
    ProbeDistribution,
    make_probe,
    pair_from_deltas,
    pair_from_fd_grad,
    pair_from_hvp,
)
from .errors import ConfigError, DegenerateStepError
from .lra import lra_identity
from .mfgroups import identity_element, make_group
from .optimizer import OptimizerConfig, OptimizerState, lr_schedule, psgd_step
from .testbeds import (
    Problem,
    load_mnist_dataset,
    logreg_outer_make,
    quadratic_make,
    rosenbrock_make,
    synthetic_blobs,
    xor_make,
)

CSV_HEADER = ("run_id", "seed", "iter", "loss", "grad_norm", "precond_updates", "criterion", "wall_ms")


def parse_precond_spec(spec: str) -> tuple[str, dict]:
    """'diag' | 'xmat' | 'butterfly' | 'dense' | 'lra:r=K[ :scalar ]' | 'none'."""
    parts = spec.strip().split(":")
    head = parts[0].lower()
    if head in ("none", "diag", "xmat", "butterfly", "dense"):
        if len(parts) > 1:
            raise ConfigError(f"unexpected options for preconditioner {head!r}: {spec!r}")
        return head, {}
    if head == "lra":
        opts = {"r": None, "mode": "composite"}
        for part in parts[1:]:
            if part == "scalar":
                opts["mode"] = "scalar"
            elif part == "composite":
                opts["mode"] = "composite"
            elif part.startswith("r="):
                try:
                    opts["r"] = int(part[2:])
                except ValueError as exc:
                    raise ConfigError(f"bad rank in preconditioner spec {spec!r}") from exc
            else:
                raise ConfigError(f"unknown option {part!r} in preconditioner spec {spec!r}")
        if opts["r"] is None:
            raise ConfigError(f"lra preconditioner needs r=<rank>: {spec!r}")
        if opts["r"] < 0:
            raise ConfigError(f"lra rank must be >= 0, got {opts['r']}")
        return "lra", opts
    raise ConfigError(f"unknown preconditioner spec {spec!r}")


def make_preconditioner(spec: str, n: int, rng: np.random.Generator, rho0: float = 1.0):
    kind, opts = parse_precond_spec(spec)
    if kind == "none":
        return None
    if kind == "lra":
        return lra_identity(n, opts["r"], rho0=rho0, composite=opts["mode"] == "composite", rng=rng)
    return identity_element(make_group(kind, n), rho0=rho0)


def parse_seeds(text: str) -> tuple[int, ...]:
    """'1..10', '3', or '1,4,9'."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        seeds = tuple(range(int(lo), int(hi) + 1))
    elif "," in text:
        seeds = tuple(int(t) for t in text.split(",") if t.strip())
    else:
        seeds = (int(text),)
    if not seeds:
        raise ConfigError(f"empty seed list: {text!r}")
    return seeds


@dataclass(frozen=True)
class ExperimentConfig:
    testbed: str
    testbed_params: dict = field(default_factory=dict)
    precond: str = "none"
    iters: int = 1000
    seeds: tuple[int, ...] = (0,)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    pair_source: str = "auto"  # auto | hvp | fd | delta
    probe_dist: ProbeDistribution = ProbeDistribution.STANDARD_NORMAL
    rho0: float = 1.0
    log_every: int = 10
    eval_every: int = 0  # 0: only at the end
    stop_on_success: bool = True
    stop_at_loss: float | None = None
    track_loss_target: float | None = None
    max_grad_evals: int | None = None
    workers: int = 1
    keep_final_element: bool = False

    def __post_init__(self):
        if self.iters < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iters}")
        if not self.seeds:
            raise ConfigError("seed list must be non-empty")
        parse_precond_spec(self.precond)
        if self.pair_source not in ("auto", "hvp", "fd", "delta"):
            raise ConfigError(f"unknown pair source {self.pair_source!r}")


@dataclass
class RunRecord:
    run_id: str
    seed: int
    iteration: int
    loss: float
    grad_norm: float
    precond_updates: int
    criterion: float | None
    wall_ms: int

    def row(self) -> tuple:
        return (
            self.run_id,
            self.seed,
            self.iteration,
            repr(self.loss),
            repr(self.grad_norm),
            self.precond_updates,
            "" if self.criterion is None else repr(self.criterion),
            self.wall_ms,
        )


def make_problem(testbed: str, params: dict, seed: int) -> Problem:
    rng = np.random.default_rng([seed, 101])
    params = dict(params)
    problem = _build_problem(testbed, params, seed, rng)
    if params:
        raise ConfigError(f"unknown {testbed} parameters: {sorted(params)}")
    return problem


def _build_problem(testbed: str, params: dict, seed: int, rng) -> Problem:
    if testbed == "quadratic":
        return quadratic_make(
            n=int(params.pop("n", 10)),
            kappa=float(params.pop("kappa", 1.0)),
            grad_noise=float(params.pop("grad_noise", 0.0)),
            hvp_noise=float(params.pop("hvp_noise", 0.0)),
            rng=rng,
        )
    if testbed == "rosenbrock":
        return rosenbrock_make(n=int(params.pop("n", 10)))
    if testbed == "logreg":
        side = int(params.pop("side", 10))
        dataset = None
        if params.pop("use_mnist", True):
            dataset = load_mnist_dataset(params.pop("data_dir", None))
        else:
            params.pop("data_dir", None)
        if dataset is None:
            dataset = synthetic_blobs(
                side=int(params.pop("native_side", side)),
                classes=int(params.pop("classes", 10)),
                n_train=int(params.pop("n_train", 1000)),
                n_test=int(params.pop("n_test", 500)),
                noise=float(params.pop("noise", 0.25)),
                rng=np.random.default_rng([seed, 202]),
            )
        else:
            for key in ("native_side", "classes", "n_train", "n_test", "noise"):
                params.pop(key, None)
        return logreg_outer_make(
            dataset, side=side, batch_size=int(params.pop("batch_size", 100)), rng=rng
        )
    if testbed == "xor":
        return xor_make(
            seq_len=int(params.pop("seq_len", 32)),
            hidden=int(params.pop("hidden", 30)),
            rng=rng,
            batch_size=int(params.pop("batch_size", 64)),
            eval_batch=int(params.pop("eval_batch", 256)),
            init_scale=float(params.pop("init_scale", 0.3)),
            recurrent_gain=float(params.pop("recurrent_gain", 1.0)),
            success_loss=float(params.pop("success_loss", 0.1)),
        )
    raise ConfigError(f"unknown testbed {testbed!r}")


def _build_pair(problem, theta, g, batch, mode, probe_rng, dist, prev):
    """One curvature pair, reusing the step's minibatch where that matters."""
    if mode == "auto":
        mode = "hvp" if problem.hvp is not None else "fd"
    if mode == "hvp":
        if problem.hvp is None:
            raise ConfigError("testbed offers no exact Hessian-vector product")
        v = make_probe(theta.size, dist, probe_rng)
        hvp = (lambda t, vv: problem.hvp(t, vv)) if batch is None else (
            lambda t, vv: problem.hvp(t, vv, batch)
        )
        return pair_from_hvp(hvp, theta, v)
    if mode == "fd":
        v = make_probe(theta.size, dist, probe_rng)
        grad = (lambda t: problem.grad(t)) if batch is None else (lambda t: problem.grad(t, batch))
        return pair_from_fd_grad(grad, theta, v, g0=g)
    if mode == "delta":
        if prev is None:
            return None
        theta_prev, g_prev = prev
        try:
            return pair_from_deltas(theta_prev, theta, g_prev, g)
        except DegenerateStepError:
            return None
    raise ConfigError(f"unknown pair source {mode!r}")


@dataclass
class SeedOutcome:
    seed: int
    final_loss: float
    final_eval: float
    iterations: int
    grad_evals: int
    precond_updates: int
    diverged: bool
    success: bool | None
    success_iter: int | None
    wall_ms: int
    metrics: dict = field(default_factory=dict)
    final_element: object | None = None
    target_iter: int | None = None


def run_single_seed(cfg: ExperimentConfig, seed: int) -> tuple[list[RunRecord], SeedOutcome]:
    t0 = time.perf_counter()
    problem = make_problem(cfg.testbed, cfg.testbed_params, seed)
    init_rng = np.random.default_rng([seed, 303])
    probe_rng = np.random.default_rng([seed, 404])
    theta0 = problem.initial_point(init_rng)
    precond = make_preconditioner(cfg.precond, theta0.size, np.random.default_rng([seed, 505]), cfg.rho0)
    state = OptimizerState.initial(theta0, precond)
    run_id = f"{cfg.testbed}-{cfg.precond}-s{seed}"

    records: list[RunRecord] = []
    grad_evals = 0
    diverged = False
    success: bool | None = None if problem.success_loss is None else False
    success_iter: int | None = None
    prev: tuple[np.ndarray, np.ndarray] | None = None
    loss = math.nan
    target_iter: int | None = None

    def elapsed_ms() -> int:
        return int(1000 * (time.perf_counter() - t0))

    for i in range(cfg.iters):
        batch = problem.sample_batch() if problem.sample_batch is not None else None
        loss, g = (
            problem.loss_and_grad(state.theta) if batch is None else problem.loss_and_grad(state.theta, batch)
        )
        grad_evals += 1
        if not math.isfinite(loss) or not np.all(np.isfinite(g)):
            diverged = True
            records.append(
                RunRecord(run_id, seed, i, loss, float(np.linalg.norm(g)), state.precond_updates, None, elapsed_ms())
            )
            break

        pair: CurvaturePair | None = None
        if precond is not None and i % cfg.optimizer.update_every == 0:
            pair = _build_pair(problem, state.theta, g, batch, cfg.pair_source, probe_rng, cfg.probe_dist, prev)
            if pair is not None:
                grad_evals += 1  # one gradient-equivalent per curvature evaluation
        prev = (state.theta.copy(), np.asarray(g, dtype=np.float64).copy())

        state = psgd_step(state, g, pair, cfg.optimizer)

        if i % cfg.log_every == 0 or i == cfg.iters - 1:
            records.append(
                RunRecord(
                    run_id,
                    seed,
                    i,
                    float(loss),
                    float(np.linalg.norm(g)),
                    state.precond_updates,
                    state.last_criterion,
                    elapsed_ms(),
                )
            )
        if cfg.eval_every and problem.success_loss is not None and (i + 1) % cfg.eval_every == 0:
            if problem.evaluate(state.theta) < problem.success_loss:
                success = True
                success_iter = i + 1
                if cfg.stop_on_success:
                    break
        if cfg.track_loss_target is not None and target_iter is None and loss < cfg.track_loss_target:
            target_iter = i + 1
        if cfg.stop_at_loss is not None and loss < cfg.stop_at_loss:
            break
        if cfg.max_grad_evals is not None and grad_evals >= cfg.max_grad_evals:
            break

    final_eval = math.inf
    if not diverged:
        final_eval = problem.evaluate(state.theta)
        if success is False and problem.success_loss is not None:
            success = final_eval < problem.success_loss
            if success and success_iter is None:
                success_iter = state.iteration
    metrics = {}
    if problem.extra_metrics is not None and not diverged:
        metrics = {k: float(v) for k, v in problem.extra_metrics(state.theta).items()}
    outcome = SeedOutcome(
        seed=seed,
        final_loss=float(loss),
        final_eval=float(final_eval),
        iterations=state.iteration,
        grad_evals=grad_evals,
        precond_updates=state.precond_updates,
        diverged=diverged,
        success=success,
        success_iter=success_iter,
        wall_ms=elapsed_ms(),
        metrics=metrics,
        final_element=state.precond if cfg.keep_final_element else None,
        target_iter=target_iter,
    )
    return records, outcome


def _worker(args):
    cfg, seed = args
    return run_single_seed(cfg, seed)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[RunRecord]
    outcomes: list[SeedOutcome]

    def summary(self) -> dict:
        finals = [o.final_eval for o in self.outcomes if not o.diverged]
        succ = [o.success for o in self.outcomes if o.success is not None]
        out = {
            "testbed": self.config.testbed,
            "precond": self.config.precond,
            "seeds": list(self.config.seeds),
            "final_loss_mean": float(np.mean(finals)) if finals else math.inf,
            "final_loss_std": float(np.std(finals)) if finals else math.inf,
            "diverged": int(sum(o.diverged for o in self.outcomes)),
            "total_wall_ms": int(sum(o.wall_ms for o in self.outcomes)),
            "grad_evals": [o.grad_evals for o in self.outcomes],
            "per_seed": [
                {
                    "seed": o.seed,
                    "final_loss": o.final_loss,
                    "final_eval": o.final_eval,
                    "iterations": o.iterations,
                    "precond_updates": o.precond_updates,
                    "diverged": o.diverged,
                    "success": o.success,
                    "success_iter": o.success_iter,
                    **o.metrics,
                }
                for o in self.outcomes
            ],
        }
        if succ:
            out["success_rate"] = float(np.mean([bool(s) for s in succ]))
        return out


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    jobs = [(cfg, seed) for seed in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with get_context("fork").Pool(min(cfg.workers, len(jobs))) as pool:
            results = pool.map(_worker, jobs)
    else:
        results = [_worker(job) for job in jobs]
    records: list[RunRecord] = []
    outcomes: list[SeedOutcome] = []
    for recs, out in results:  # merged in seed order
        records.extend(recs)
        outcomes.append(out)
    return ExperimentResult(config=cfg, records=records, outcomes=outcomes)


def write_csv(records: Sequence[RunRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for rec in records:
            writer.writerow(rec.row())


def write_summary_json(summary: dict, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")


def best_fixed_lr_sgd(
    cfg: ExperimentConfig,
    lr_grid: Sequence[float],
    target_loss: float | None = None,
) -> dict:
    """Run plain SGD over a learning-rate grid; report the best configuration.

    With ``target_loss`` set, best = fewest iterations to reach it; otherwise
    best = lowest final evaluation loss at the iteration budget.
    """
    best = None
    for lr in lr_grid:
        opt = replace(cfg.optimizer, lr=lr, update_every=1)
        sub = replace(cfg, precond="none", optimizer=opt, stop_at_loss=target_loss)
        res = run_experiment(sub)
        outs = res.outcomes
        diverged = any(o.diverged for o in outs)
        reached = [o for o in outs if not o.diverged and (target_loss is None or o.final_eval < target_loss)]
        entry = {
            "lr": lr,
            "diverged": diverged,
            "reached_target": len(reached) == len(outs) and not diverged,
            "iterations_mean": float(np.mean([o.iterations for o in outs])),
            "final_loss_mean": float(np.mean([o.final_eval for o in outs])) if outs else math.inf,
            "grad_evals_mean": float(np.mean([o.grad_evals for o in outs])),
        }
        if target_loss is not None:
            score = entry["iterations_mean"] if entry["reached_target"] else math.inf
        else:
            score = entry["final_loss_mean"] if not diverged else math.inf
        if best is None or score < best[0]:
            best = (score, entry)
    return best[1]
