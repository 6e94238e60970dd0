"""Command-line benchmark harness.

Subcommands: ``quadratic``, ``rosenbrock``, ``logreg``, ``xor`` run optimizer
benchmarks over seeds and write CSV logs plus an optional JSON summary;
``fit-only`` fits a preconditioner at a fixed point in parameter space and
reports oracle diagnostics; ``verify`` runs the invariant/oracle check suites
and exits nonzero on any failure.

Flags override values from an optional JSON ``--config`` file; unknown file
keys are rejected.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from .curvature import CurvaturePair, ProbeDistribution, make_probe
from .errors import ConfigError, LiePsgdError
from .fitting import FixedPointSpec, fit_preconditioner, fixed_point_oracle, spectral_spread
from .harness import (
    CSV_HEADER,
    ExperimentConfig,
    RunRecord,
    make_preconditioner,
    make_problem,
    parse_seeds,
    run_experiment,
    write_csv,
    write_summary_json,
)
from .optimizer import CosineDecay, ExponentialAnneal, OptimizerConfig, StageDrops
from .verify import SUITES, run_suites

TESTBED_COMMANDS = ("quadratic", "rosenbrock", "logreg", "xor")


def parse_schedule(text: str | None, total: int):
    """'exp:START,END' | 'stage:I1,I2,..' | 'cos' | None."""
    if text is None or text == "const":
        return None
    if text == "cos":
        return CosineDecay(total=total)
    kind, _, rest = text.partition(":")
    if kind == "exp":
        try:
            start, end = (float(t) for t in rest.split(","))
        except ValueError as exc:
            raise ConfigError(f"bad exponential schedule {text!r}; want exp:START,END") from exc
        return ExponentialAnneal(start=start, end=end, total=total)
    if kind == "stage":
        try:
            drops = tuple(int(t) for t in rest.split(","))
        except ValueError as exc:
            raise ConfigError(f"bad stage schedule {text!r}; want stage:I1,I2") from exc
        return StageDrops(drops=drops)
    raise ConfigError(f"unknown schedule {text!r}")


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with defaults; flags override")
    p.add_argument("--precond", default="none", help="diag|xmat|butterfly|dense|lra:r=K|none")
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--seed", "--seeds", dest="seed", default="0", help="e.g. 3, 1..10, or 1,4,9")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--precond-lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--clip", type=float, default=None, help="preconditioned-gradient norm threshold")
    p.add_argument("--update-every", type=int, default=1)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--lr-schedule", default=None, help="exp:START,END | stage:I1,I2 | cos")
    p.add_argument("--precond-schedule", default=None, help="exp:START,END")
    p.add_argument("--pair-source", default="auto", choices=["auto", "hvp", "fd", "delta"])
    p.add_argument("--probe", default="normal", choices=["normal", "rademacher"])
    p.add_argument("--rho0", type=float, default=1.0)
    p.add_argument("--log-every", type=int, default=10)
    p.add_argument("--eval-every", type=int, default=0)
    p.add_argument("--no-stop-on-success", action="store_true")
    p.add_argument("--stop-at-loss", type=float, default=None)
    p.add_argument("--max-grad-evals", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--csv", default=None, help="write per-iteration records here")
    p.add_argument("--summary-json", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="liepsgd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    pq = sub.add_parser("quadratic", help="rotated quadratic testbed")
    pq.add_argument("--n", type=int, default=100)
    pq.add_argument("--kappa", type=float, default=1e4)
    pq.add_argument("--grad-noise", type=float, default=0.0)
    pq.add_argument("--hvp-noise", type=float, default=0.0)
    _add_common_flags(pq)

    pr = sub.add_parser("rosenbrock", help="chained Rosenbrock testbed")
    pr.add_argument("--n", type=int, default=10)
    _add_common_flags(pr)

    pl = sub.add_parser("logreg", help="logistic regression on outer-product features")
    pl.add_argument("--side", type=int, default=10)
    pl.add_argument("--classes", type=int, default=10)
    pl.add_argument("--batch-size", type=int, default=100)
    pl.add_argument("--n-train", type=int, default=1000)
    pl.add_argument("--n-test", type=int, default=500)
    pl.add_argument("--data-dir", default=None, help="IDX files (default: $PSGD_DATA_DIR)")
    pl.add_argument("--synthetic", action="store_true", help="force the synthetic dataset")
    _add_common_flags(pl)

    px = sub.add_parser("xor", help="delayed-XOR RNN testbed")
    px.add_argument("--seq-len", type=int, default=32)
    px.add_argument("--hidden", type=int, default=30)
    px.add_argument("--batch-size", type=int, default=64)
    px.add_argument("--eval-batch", type=int, default=256)
    px.add_argument("--init-scale", type=float, default=0.1)
    px.add_argument("--success-loss", type=float, default=0.1)
    _add_common_flags(px)

    pf = sub.add_parser("fit-only", help="fit a preconditioner at a fixed parameter point")
    pf.add_argument("--n", type=int, default=10)
    pf.add_argument("--kappa", type=float, default=1e4)
    pf.add_argument("--hvp-noise", type=float, default=0.0)
    pf.add_argument("--precond", default="dense")
    pf.add_argument("--steps", type=int, default=5000)
    pf.add_argument("--seed", default="0")
    pf.add_argument("--probe", default="normal", choices=["normal", "rademacher"])
    pf.add_argument("--fit-start", type=float, default=0.01)
    pf.add_argument("--fit-peak", type=float, default=0.1)
    pf.add_argument("--fit-end", type=float, default=0.02)
    pf.add_argument("--warm-frac", type=float, default=0.1)
    pf.add_argument("--hold-frac", type=float, default=0.4)
    pf.add_argument("--rho0", type=float, default=1.0)
    pf.add_argument("--csv", default=None)
    pf.add_argument("--summary-json", default=None)

    pv = sub.add_parser("verify", help="run invariant/oracle checks")
    pv.add_argument("suite", choices=[*SUITES.keys(), "all"])
    return parser


def _explicit_dests(subparser: argparse.ArgumentParser, argv: list[str]) -> set[str]:
    """Dests of options that literally appear on the command line."""
    given = set()
    tokens = {tok.split("=", 1)[0] for tok in argv if tok.startswith("-")}
    for action in subparser._actions:
        if any(opt in tokens for opt in action.option_strings):
            given.add(action.dest)
    return given


def _apply_config_file(
    args: argparse.Namespace, known: set[str], explicit: set[str]
) -> argparse.Namespace:
    if not getattr(args, "config", None):
        return args
    with open(args.config) as f:
        file_values = json.load(f)
    unknown = set(file_values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key, value in file_values.items():
        # flags explicitly given on the command line win over the file
        if key not in explicit:
            setattr(args, key, value)
    return args


def warmup_hold_anneal(total: int, start: float, peak: float, end: float,
                       warm_frac: float = 0.1, hold_frac: float = 0.4):
    """Fitting-step schedule: geometric warmup, plateau, geometric anneal."""
    warm = max(int(total * warm_frac), 1)
    hold = max(int(total * (warm_frac + hold_frac)), warm + 1)

    def mu_at(i: int) -> float:
        if i < warm:
            return start * (peak / start) ** (i / warm)
        if i < hold:
            return peak
        return peak * (end / peak) ** ((i - hold) / max(total - hold, 1))

    return mu_at


def _experiment_from_args(command: str, args: argparse.Namespace) -> ExperimentConfig:
    seeds = parse_seeds(str(args.seed))
    opt = OptimizerConfig(
        lr=args.lr,
        precond_lr=args.precond_lr,
        momentum=args.momentum,
        clip_threshold=args.clip,
        update_every=args.update_every,
        weight_decay=args.weight_decay,
        schedule=parse_schedule(args.lr_schedule, args.iters),
        precond_schedule=parse_schedule(args.precond_schedule, args.iters),
    )
    params: dict = {}
    if command == "quadratic":
        params = {"n": args.n, "kappa": args.kappa, "grad_noise": args.grad_noise, "hvp_noise": args.hvp_noise}
    elif command == "rosenbrock":
        params = {"n": args.n}
    elif command == "logreg":
        params = {
            "side": args.side,
            "classes": args.classes,
            "batch_size": args.batch_size,
            "n_train": args.n_train,
            "n_test": args.n_test,
            "use_mnist": not args.synthetic,
            "data_dir": args.data_dir,
        }
    elif command == "xor":
        params = {
            "seq_len": args.seq_len,
            "hidden": args.hidden,
            "batch_size": args.batch_size,
            "eval_batch": args.eval_batch,
            "init_scale": args.init_scale,
            "success_loss": args.success_loss,
        }
    return ExperimentConfig(
        testbed=command,
        testbed_params=params,
        precond=args.precond,
        iters=args.iters,
        seeds=seeds,
        optimizer=opt,
        pair_source=args.pair_source,
        probe_dist=ProbeDistribution.RADEMACHER if args.probe == "rademacher" else ProbeDistribution.STANDARD_NORMAL,
        rho0=args.rho0,
        log_every=args.log_every,
        eval_every=args.eval_every,
        stop_on_success=not args.no_stop_on_success,
        stop_at_loss=args.stop_at_loss,
        max_grad_evals=args.max_grad_evals,
        workers=args.workers,
    )


def _run_benchmark(command: str, args: argparse.Namespace) -> int:
    cfg = _experiment_from_args(command, args)
    result = run_experiment(cfg)
    if args.csv:
        write_csv(result.records, args.csv)
    summary = result.summary()
    if args.summary_json:
        write_summary_json(summary, args.summary_json)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _run_fit_only(args: argparse.Namespace) -> int:
    seed = parse_seeds(str(args.seed))[0]
    problem = make_problem(
        "quadratic", {"n": args.n, "kappa": args.kappa, "hvp_noise": args.hvp_noise}, seed
    )
    theta = problem.initial_point(np.random.default_rng([seed, 303]))
    probe_rng = np.random.default_rng([seed, 404])
    dist = ProbeDistribution.RADEMACHER if args.probe == "rademacher" else ProbeDistribution.STANDARD_NORMAL
    element = make_preconditioner(args.precond, args.n, np.random.default_rng([seed, 505]), args.rho0)
    if element is None:
        raise ConfigError("fit-only needs a preconditioner other than 'none'")

    def source() -> CurvaturePair:
        v = make_probe(args.n, dist, probe_rng)
        return CurvaturePair(v=v, h=problem.hvp(theta, v))

    mu_at = warmup_hold_anneal(args.steps, args.fit_start, args.fit_peak, args.fit_end,
                               args.warm_frac, args.hold_frac)
    fit = fit_preconditioner(element, source, args.steps, mu_at)

    hess = problem.dense_hessian(theta)
    dense_q = fit.element.to_dense(cap=max(args.n, 512))
    p_fit = dense_q.T @ dense_q
    noise_moment = None
    if args.hvp_noise > 0.0:
        noise_moment = args.n * args.hvp_noise**2 * np.eye(args.n)
    p_star = fixed_point_oracle(FixedPointSpec(hess, noise_second_moment=noise_moment))
    rel_err = float(np.linalg.norm(p_fit - p_star) / np.linalg.norm(p_star))
    summary = {
        "precond": args.precond,
        "steps": args.steps,
        "updates_applied": fit.updates_applied,
        "criterion_first": float(fit.criterion_trace[0]),
        "criterion_last": float(fit.criterion_trace[-1]),
        "rel_err_vs_fixed_point": rel_err,
        "spectral_spread": spectral_spread(p_fit, hess),
    }
    if args.csv:
        run_id = f"fit-{args.precond}-s{seed}"
        loss0 = float(problem.loss(theta))
        gnorm = float(np.linalg.norm(problem.grad(theta)))
        records = [
            RunRecord(run_id, seed, i, loss0, gnorm, int(np.sum(fit.accepted[: i + 1])), float(c), 0)
            for i, c in enumerate(fit.criterion_trace)
        ]
        write_csv(records, args.csv)
    if args.summary_json:
        write_summary_json(summary, args.summary_json)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _run_verify(args: argparse.Namespace) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    results = run_suites(names)
    for res in results:
        print(res.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    args = parser.parse_args(argv)
    try:
        if args.command in TESTBED_COMMANDS:
            subparser = parser._subparsers._group_actions[0].choices[args.command]
            known = {a.dest for a in subparser._actions if a.dest not in ("help", "config")}
            args = _apply_config_file(args, known, _explicit_dests(subparser, list(argv)))
            return _run_benchmark(args.command, args)
        if args.command == "fit-only":
            return _run_fit_only(args)
        if args.command == "verify":
            return _run_verify(args)
    except (LiePsgdError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
