"""Command-line entry points.

Commands: train, eval, ablation, gradcheck, plot.  Exit codes form a
stable contract: 0 success, 1 check or ablation failure, 2 configuration
error (bad config file, bad override, incompatible checkpoint).

The run-directory root comes from --run-dir / --out flags or the
SKILLAB_RUN_ROOT environment variable (default ./runs); directory names
are deterministic so reruns land in the same place.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import torch

from skillab.core import CheckpointError, ConfigError
from skillab.config import load_config

GRADCHECK_TOL = 1e-4


def _run_root() -> Path:
    return Path(os.environ.get("SKILLAB_RUN_ROOT", "runs"))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skillab",
        description="Skill-discovery lab: multi-discriminator intrinsic "
        "rewards, orthogonal expert-mixture policies, PPO, coverage evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", default=None, help="YAML config file")
        p.add_argument(
            "--preset", default=None, help="named preset, e.g. desk_scale"
        )
        p.add_argument(
            "--override",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="dotted-path config override (repeatable)",
        )

    p_train = sub.add_parser("train", help="run the training loop")
    add_config_args(p_train)
    p_train.add_argument("--run-dir", default=None, help="output directory")
    p_train.add_argument("--quiet", action="store_true")

    p_eval = sub.add_parser("eval", help="coverage evaluation of a checkpoint")
    p_eval.add_argument("checkpoint", help="checkpoint file")
    p_eval.add_argument("--out", default=None, help="output directory")
    p_eval.add_argument("--bins", type=int, default=None)
    p_eval.add_argument("--duration", type=int, default=None, help="rollout steps")
    p_eval.add_argument(
        "--all-channels",
        action="store_true",
        help="coverage over every motion channel, not just v/omega/gravity",
    )

    p_abl = sub.add_parser("ablation", help="train and compare a variant suite")
    p_abl.add_argument("suite", choices=["discriminator", "policy"])
    add_config_args(p_abl)
    p_abl.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
    p_abl.add_argument("--variants", default=None, help="comma-separated subset")
    p_abl.add_argument("--out", default=None, help="output directory")
    p_abl.add_argument("--no-reuse", action="store_true", help="retrain even if runs exist")
    p_abl.add_argument("--quiet", action="store_true")

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p_grad.add_argument(
        "--negative-control",
        action="store_true",
        help="self-test: inject a wrong-sign gradient and require failure",
    )

    p_plot = sub.add_parser("plot", help="render figures from a run or suite dir")
    p_plot.add_argument("directory", help="training run or ablation output dir")
    return parser


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    try:
        config = load_config(args.config, args.override, args.preset)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    from skillab.trainer import train

    run_dir = Path(args.run_dir) if args.run_dir else _run_root() / f"train_seed{config.training.seed}"
    result = train(config, run_dir=run_dir, progress=not args.quiet)
    print(f"run complete: {result.run_dir} ({len(result.metrics)} iterations)")
    print(f"final checkpoint: {result.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    from skillab.eval import evaluate_checkpoint

    out = Path(args.out) if args.out else Path(args.checkpoint).resolve().parent.parent / "eval"
    channels = ("v", "omega", "gravity", "q", "dq") if args.all_channels else None
    try:
        report = evaluate_checkpoint(
            args.checkpoint,
            out_dir=out,
            bins=args.bins,
            duration_steps=args.duration,
            channels=channels,
        )
    except (CheckpointError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(report.to_text())
    print(f"trajectories and report written to {out}")
    return 0


def cmd_ablation(args) -> int:
    try:
        config = load_config(args.config, args.override, args.preset)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    from skillab.eval import run_ablation

    seeds = [int(s) for s in args.seeds.split(",") if s]
    variants = [v for v in args.variants.split(",") if v] if args.variants else None
    out = Path(args.out) if args.out else _run_root() / f"ablation_{args.suite}"
    try:
        report = run_ablation(
            args.suite,
            config,
            seeds,
            out,
            variants=variants,
            reuse=not args.no_reuse,
            progress=not args.quiet,
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print((out / "coverage_table.txt").read_text())
    failures = [r for r in report.runs if r.error is not None]
    for r in failures:
        print(f"FAILED {r.variant} seed {r.seed}: {r.error}", file=sys.stderr)
    print(f"suite wall time: {report.wall_time:.1f}s")
    return 1 if failures else 0


def _gradcheck_suite(negative_control: bool = False):
    """Seeded gradient checks over the differentiable core."""
    from skillab.nets import (
        OmoeBody,
        OmoeSpec,
        grad_check,
        gram_schmidt,
        make_policy_body,
    )

    reports = []
    gen = torch.Generator().manual_seed(202)
    x0 = torch.tensor([1.0, 2.0, -3.0], dtype=torch.float64)
    reports.append(grad_check(lambda: (x0**2).sum(), [x0], name="quadratic_sanity"))

    u = torch.randn(6, 64, dtype=torch.float64, generator=gen)
    reports.append(grad_check(lambda: gram_schmidt(u).sum(), [u], name="gram_schmidt"))

    body = make_policy_body("omoe", 21 + 8, 4, gen, num_experts=3, dtype=torch.float64)
    x1 = torch.randn(2, 29, dtype=torch.float64, generator=gen)
    reports.append(
        grad_check(lambda: body(x1).sum(), [x1], name="omoe_forward_wrt_input")
    )

    small = OmoeBody(
        OmoeSpec(
            input_dim=10, action_dim=3, num_experts=3,
            expert_hidden_dims=(8, 8), feature_dim=8, gate_hidden_dims=(8,),
        ),
        gen,
        dtype=torch.float64,
    )
    x2 = torch.randn(3, 10, dtype=torch.float64, generator=gen)
    reports.append(
        grad_check(
            lambda: small(x2).sum(), list(small.parameters()),
            name="omoe_forward_wrt_parameters",
        )
    )

    if negative_control:
        class WrongSign(torch.autograd.Function):
            @staticmethod
            def forward(ctx, t):
                ctx.save_for_backward(t)
                return (t**2).sum()

            @staticmethod
            def backward(ctx, grad_out):
                (t,) = ctx.saved_tensors
                return -2.0 * t * grad_out

        x3 = torch.tensor([0.5, -1.5], dtype=torch.float64)
        reports.append(
            grad_check(lambda: WrongSign.apply(x3), [x3], name="negative_control")
        )
    return reports


def cmd_gradcheck(args) -> int:
    reports = _gradcheck_suite(negative_control=args.negative_control)
    failed = False
    for report in reports:
        print(report.line(GRADCHECK_TOL))
        if not report.passed(GRADCHECK_TOL):
            failed = True
    if args.negative_control and not failed:
        print("negative control did not trip the checker", file=sys.stderr)
        return 1
    return 1 if failed else 0


def cmd_plot(args) -> int:
    from skillab.plots import plot_ablation, plot_run_metrics

    directory = Path(args.directory)
    if not directory.exists():
        print(f"error: directory not found: {directory}", file=sys.stderr)
        return 2
    produced = []
    if (directory / "metrics.jsonl").exists():
        produced.append(plot_run_metrics(directory))
    produced.extend(plot_ablation(directory))
    if not produced:
        print(f"error: nothing to plot in {directory}", file=sys.stderr)
        return 2
    for path in produced:
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {
        "train": cmd_train,
        "eval": cmd_eval,
        "ablation": cmd_ablation,
        "gradcheck": cmd_gradcheck,
        "plot": cmd_plot,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
