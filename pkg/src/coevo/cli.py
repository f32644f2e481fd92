"""Command line front end: run a synthesis session, inspect logs, simulate."""

from __future__ import annotations

import argparse
import sys
from random import Random

from .config import RunConfig, load_config
from .engine import run
from .errors import ConfigError, CorruptLogError, ExecutorError, ProviderError
from .gateway import HTTPProvider, MockProvider
from .problems import load_problem
from .runlog import RunLogWriter, read_runlog, render_report
from .synthetic import (
    UpdateParams,
    adversarial_world,
    random_noise_model,
    recovery_experiment,
    recovery_world,
    threshold_sweep,
)

EXIT_CONFIG = 2
EXIT_PROVIDER = 3
EXIT_EXECUTOR = 4
EXIT_CORRUPT_LOG = 5


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coevo",
        description="Evolve candidate programs and tests under noisy-evidence beliefs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run a synthesis session on one problem")
    runp.add_argument("--problem", required=True, help="path to a problem JSON file")
    runp.add_argument("--config", help="path to a TOML config file")
    runp.add_argument("--seed", type=int, help="override the run seed")
    runp.add_argument(
        "--mock-provider",
        nargs="?",
        const="-",
        metavar="SCRIPT",
        help="use the offline mock provider, optionally scripted from a JSON file",
    )
    runp.add_argument(
        "--no-anchoring",
        action="store_true",
        help="ablation: treat public examples as ordinary uncertain tests",
    )
    runp.add_argument("--log", help="write the structured run log to this path")

    repp = sub.add_parser("report", help="verify a run log and print its report")
    repp.add_argument("log", help="path to a run log written by `coevo run`")

    simp = sub.add_parser("simulate", help="ground-truth experiments on synthetic worlds")
    simp.add_argument(
        "--experiment",
        choices=("recovery", "adversarial", "threshold"),
        default="recovery",
    )
    simp.add_argument("--seeds", type=int, default=100, help="number of seeded repetitions")
    simp.add_argument("--rounds", type=int, default=3, help="observation rounds per repetition")
    simp.add_argument("--unanchored", action="store_true", help="drop the anchor set")
    return parser


def _make_config(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.no_anchoring:
        overrides["anchoring_enabled"] = False
    return load_config(args.config, **overrides)


def _make_provider(args: argparse.Namespace, config: RunConfig):
    if args.mock_provider is None:
        return HTTPProvider(config.provider)
    if args.mock_provider == "-":
        return MockProvider()
    return MockProvider.from_file(args.mock_provider)


def _cmd_run(args: argparse.Namespace) -> int:
    config = _make_config(args)
    problem = load_problem(args.problem)
    provider = _make_provider(args, config)
    writer = RunLogWriter(args.log) if args.log else None
    try:
        result = run(problem, config, provider, log_writer=writer)
    finally:
        if writer is not None:
            digest = writer.close()
            print(f"log: {args.log} sha256={digest}")
    best = result.best_code
    print(f"best: {best.id} belief={best.belief.probability:.6f} origin={best.origin}")
    print(f"generations: {len(result.generations)}")
    print(f"anchors_passed: {'yes' if result.anchors_passed else 'no'}")
    print("--- best program ---")
    print(best.source)
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    events = read_runlog(args.log)
    print(render_report(events), end="")
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    seeds = range(args.seeds)
    if args.experiment == "threshold":
        rng = Random(0)
        models = [random_noise_model(rng) for _ in range(max(args.seeds, 1))]
        beliefs = [rng.uniform(0.001, 0.999) for _ in range(25)]
        rows, disagreements = threshold_sweep(models, beliefs)
        print(f"cells: {len(rows)}")
        print(f"disagreements: {disagreements}")
        return 0
    world = adversarial_world() if args.experiment == "adversarial" else recovery_world()
    params = UpdateParams(rounds=args.rounds)
    stats = recovery_experiment(world, params, seeds, anchored=not args.unanchored)
    print(f"experiment: {args.experiment}")
    print(f"seeds: {stats.seeds}")
    print(f"map_accuracy: {stats.map_accuracy:.3f}")
    print(f"baseline_accuracy: {stats.baseline_accuracy:.3f}")
    print(f"mean_belief_correct: {stats.mean_belief_correct:.3f}")
    print(f"mean_belief_incorrect: {stats.mean_belief_incorrect:.3f}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": _cmd_run, "report": _cmd_report, "simulate": _cmd_simulate}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except ExecutorError as exc:
        print(f"executor error: {exc}", file=sys.stderr)
        return EXIT_EXECUTOR
    except CorruptLogError as exc:
        print(f"corrupt log: {exc}", file=sys.stderr)
        return EXIT_CORRUPT_LOG


if __name__ == "__main__":
    sys.exit(main())
