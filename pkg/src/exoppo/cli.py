"""Command-line entry point: ``exoppo <subcommand> ...``.

Subcommands: train, offline, eval, verify-bound, curves, gen-dataset.
Config values can be overridden with repeated ``--set key.path=value``;
``EXOPPO_SEED`` overrides the seed. Errors exit nonzero with a one-line
message on stderr.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from exoppo import trainer, verifier
from exoppo.config import load_offline_config, load_train_config
from exoppo.errors import ExoPPOError, TrainingError
from exoppo.objective import curves

log = logging.getLogger("exoppo")


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_train_config(args.config, args.set)
    res = trainer.train(cfg, args.run_dir)
    ev = res.final_eval
    msg = f"done: {res.counters.env_steps} env steps, {res.counters.rounds} rounds"
    if ev.size:
        msg += f", final eval {ev.mean():.2f} +- {ev.std():.2f}"
    print(msg)
    return 0


def cmd_offline(args: argparse.Namespace) -> int:
    cfg = load_offline_config(args.config, args.set)
    res = trainer.train_offline(cfg, args.run_dir)
    msg = f"done: {cfg.offline.iterations} iterations, final sigma {res.sigmas[-1]:.4f}"
    if res.final_eval.size:
        msg += f", final eval {res.final_eval.mean():.2f} +- {res.final_eval.std():.2f}"
    print(msg)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    policy, _, ck = trainer.load_policy(args.checkpoint)
    spec = trainer.checkpoint_env_spec(ck)
    returns = trainer.evaluate(policy, spec, args.episodes, args.seed)
    print(f"{spec.id}: mean {returns.mean():.3f} std {returns.std():.3f} over {args.episodes} episodes")
    return 0


def cmd_verify_bound(args: argparse.Namespace) -> int:
    res = verifier.sweep(args.instances, args.seed, args.priors, args.penalty_scale)
    if not args.quiet:
        print(verifier.format_reports(res.reports))
    print(
        f"instances {args.instances}: min slack {res.min_slack:.3e}, "
        f"max PDL residual {res.pdl_residuals.max():.3e}, "
        f"visitation bound {'ok' if np.all(res.visitation[:, 0] <= res.visitation[:, 1] + verifier.TOL) else 'VIOLATED'}, "
        f"max M=1 gap {res.m1_gaps.max():.3e}"
    )
    if not res.ok:
        print("bound check FAILED", file=sys.stderr)
        return 1
    return 0


def cmd_curves(args: argparse.Namespace) -> int:
    alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
    if not alphas:
        raise ExoPPOError("--alphas needs at least one value")
    if args.grid_size < 2:
        raise ExoPPOError("--grid-size must be >= 2")
    grid = np.linspace(args.r_min, args.r_max, args.grid_size)
    rows = curves(args.epsilon, alphas, grid)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["alpha", "r", "xi", "xi_grad", "clip", "clip_grad"])
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def cmd_gen_dataset(args: argparse.Namespace) -> int:
    header = trainer.generate_dataset(
        args.checkpoint, args.out, args.episodes, args.seed, args.gamma, sample_actions=args.sample
    )
    print(f"wrote {header['count']} records, return mean {header['manifest']['return_mean']:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exoppo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p: argparse.ArgumentParser) -> None:
        p.add_argument("config", help="YAML config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--run-dir", required=True, help="directory for manifest, metrics and checkpoint")

    p = sub.add_parser("train", help="online training")
    with_config(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("offline", help="offline training from a dataset")
    with_config(p)
    p.set_defaults(func=cmd_offline)

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify-bound", help="exact tabular check of the improvement bounds")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--priors", type=int, default=3)
    p.add_argument("--quiet", action="store_true", help="print only the summary line")
    # negative-control hook: scales the penalty constant
    p.add_argument("--penalty-scale", type=float, default=1.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify_bound)

    p = sub.add_parser("curves", help="write surrogate curves as CSV")
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--alphas", default="2,5,8", help="comma-separated list")
    p.add_argument("--r-min", type=float, default=0.0)
    p.add_argument("--r-max", type=float, default=3.0)
    p.add_argument("--grid-size", type=int, default=301)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("gen-dataset", help="roll out a checkpoint into a dataset file")
    p.add_argument("checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--sample", action="store_true", help="sample actions instead of acting greedily")
    p.set_defaults(func=cmd_gen_dataset)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except TrainingError as exc:
        print(f"error: training failed: {exc}", file=sys.stderr)
        return 3
    except (ExoPPOError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
