"""Command-line entry point: ``readfb <command> [options]``.

Commands
    collect       roll out a behaviour planner and write a dataset (JSON Lines)
    fit           fit a Monte-Carlo critic from one or more datasets
    check-theory  run the identity suites over seeded random games
    bench         run a benchmark config and write report.csv / report.jsonl
    disturb       as bench, with a silent reset after step n
    mix           subsample two datasets to a policy/expert ratio
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .critic import Dataset, Episode, mc_fit
from .envs import TASKS, build
from .game import GameError
from .harness import (
    BenchConfig,
    MixSpec,
    collect_dataset,
    inject_disturbance,
    mix_datasets,
    parse_seeds,
    run_benchmark,
    scripted_factory,
)
from .theory import check_theory


class UsageError(Exception):
    pass


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    # subcommands repeat the flags so they may follow the command name without clobbering earlier values
    defaults = {"seed": None, "config": None, "out": "."}
    d = (lambda k: argparse.SUPPRESS) if suppress else defaults.get
    parser.add_argument("--seed", type=int, default=d("seed"), help="random seed")
    parser.add_argument("--config", default=d("config"), help="key = value config file")
    parser.add_argument("--out", default=d("out"), help="output directory (default: .)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="readfb", description="Advantage-feedback plan refinement for cooperative planners.")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("collect", parents=[common], help="collect a dataset")
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--level", required=True)
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--p", type=float, default=0.3, help="illegal-proposal probability")
    p.add_argument("--q", type=float, default=0.2, help="off-script proposal probability")
    p.add_argument("--stale", action="store_true", help="planner tracks state from its own history")
    p.add_argument("--no-augment", action="store_true", help="skip WAIT injection and perturbed restarts")
    p.add_argument("--provenance", choices=("llm_policy", "expert"), default=None)
    p.add_argument("--name", default="dataset.jsonl")

    p = sub.add_parser("fit", parents=[common], help="fit a critic")
    p.add_argument("datasets", nargs="+")
    p.add_argument("--gamma", type=float, default=None, help="discount (default: from the dataset)")
    p.add_argument("--name", default="critic.json")

    p = sub.add_parser("check-theory", parents=[common], help="verify the identities on random games")
    p.add_argument("--games", type=int, default=100)
    p.add_argument("--gapped", type=int, default=30)

    for name, text in (("bench", "run a benchmark"), ("disturb", "run a disturbance benchmark")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--seeds", default=None, help='"10", "3-7" or "1,4,9"; overrides the config')
        p.add_argument("--critic", default=None, help="critic file; overrides the config")
        if name == "disturb":
            p.add_argument("--n", type=int, default=None, help="reset after this many steps (default: config)")

    p = sub.add_parser("mix", parents=[common], help="mix two datasets")
    p.add_argument("--llm", required=True, help="policy dataset")
    p.add_argument("--expert", required=True, help="expert dataset")
    p.add_argument("--llm-percent", type=float, required=True)
    p.add_argument("--total", type=int, default=None)
    p.add_argument("--name", default="mixed.jsonl")
    return parser


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_collect(args) -> int:
    spec = build(args.task, args.level)
    seed = args.seed or 0
    if args.p == 0.0 and args.q == 0.0:
        provenance = args.provenance or "expert"
    else:
        provenance = args.provenance or "llm_policy"
    factory = scripted_factory(spec, args.p, args.q, stale=args.stale)
    data = collect_dataset(spec, factory, args.episodes, augment=not args.no_augment, seed=seed, provenance=provenance)
    path = _out(args) / args.name
    data.save(path)
    print(f"wrote {len(data)} episodes to {path}")
    return 0


def cmd_fit(args) -> int:
    sets = [Dataset.load(p) for p in args.datasets]
    data = sets[0]
    if len(sets) > 1:
        episodes: list[Episode] = []
        for d in sets:
            if d.n_agents != data.n_agents:
                raise UsageError("datasets have different agent counts")
            for ep in d.episodes:
                k = len(episodes)
                trs = [replace(tr, episode_id=k) for tr in ep.transitions]
                episodes.append(replace(ep, episode_id=k, transitions=trs))
        data = Dataset(episodes, data.n_agents, data.wait_action, data.meta)
    gamma = args.gamma if args.gamma is not None else data.meta.get("gamma")
    if gamma is None:
        raise UsageError("dataset records no discount; pass --gamma")
    critic = mc_fit(data, float(gamma))
    path = _out(args) / args.name
    critic.save(path)
    print(f"wrote critic with {len(critic)} entries to {path}")
    return 0


def cmd_check_theory(args) -> int:
    rep = check_theory(seed=args.seed or 0, games=args.games, gapped=args.gapped)
    for line in rep.lines():
        print(line)
    verified = sum(c.passed for c in rep.checks.values() if not c.informational)
    total = sum(c.total for c in rep.checks.values() if not c.informational)
    print(f"{verified}/{total} identities verified")
    return 0 if rep.ok else 1


def _bench_config(args) -> BenchConfig:
    if not args.config:
        raise UsageError(f"{args.command} needs --config <file>")
    cfg = BenchConfig.load(args.config)
    if args.seeds is not None:
        cfg = replace(cfg, seeds=parse_seeds(args.seeds))
    elif args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    if args.critic is not None:
        cfg = replace(cfg, critic=args.critic)
    return cfg


def _print_report(report, paths) -> None:
    sr, es, nq = report.sr, report.es, report.nq
    print(f"SR {sr[0]:.3f}±{sr[1]:.3f}  ES {es[0]:.3f}±{es[1]:.3f}  NQ {nq[0]:.3f}±{nq[1]:.3f}")
    print("wrote " + " and ".join(str(p) for p in paths))


def cmd_bench(args) -> int:
    cfg = _bench_config(args)
    report = run_benchmark(cfg)
    _print_report(report, report.write(_out(args)))
    return 0


def cmd_disturb(args) -> int:
    cfg = _bench_config(args)
    n = args.n if args.n is not None else cfg.disturb
    report = inject_disturbance(cfg, n)
    _print_report(report, report.write(_out(args)))
    return 0


def cmd_mix(args) -> int:
    d_llm, d_exp = Dataset.load(args.llm), Dataset.load(args.expert)
    mixed = mix_datasets(d_llm, d_exp, MixSpec(args.llm_percent), seed=args.seed or 0, total=args.total)
    path = _out(args) / args.name
    mixed.save(path)
    print(f"wrote {len(mixed)} episodes to {path}")
    return 0


COMMANDS = {
    "collect": cmd_collect,
    "fit": cmd_fit,
    "check-theory": cmd_check_theory,
    "bench": cmd_bench,
    "disturb": cmd_disturb,
    "mix": cmd_mix,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 and usage on bad input
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"readfb {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, GameError, OSError, RuntimeError, KeyError) as exc:
        print(f"readfb {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
