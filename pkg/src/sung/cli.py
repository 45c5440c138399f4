"""Command line entry point: ``sung <command> ...`` or ``python -m sung``."""
from __future__ import annotations

import argparse
import sys

from . import runner
from .config import ConfigError, build_config, load_config_file, parse_overrides, raw_config
from .data import DatasetError, TIERS, generate_dataset, save_dataset
from .envs import ENV_NAMES
from .numerics.checkpoint import CheckpointError


def _config(args):
    return build_config(args.config, parse_overrides(args.set or []))


def cmd_gen_data(args):
    ds = generate_dataset(args.env, args.tier, args.size, args.seed)
    save_dataset(ds, args.out)
    rets = ds.trajectory_returns()
    print(f"wrote {len(ds)} transitions ({args.env}/{args.tier}) to {args.out}; "
          f"mean trajectory return {rets.mean():.3f}")


def cmd_pretrain(args):
    cfg = _config(args)
    res = runner.pretrain(cfg)
    print(f"agent checkpoint: {res['agent_ckpt']}")
    print(f"vae checkpoint:   {res['vae_ckpt']}")
    print(f"metrics:          {res['metrics']}")


def cmd_finetune(args):
    cfg = _config(args)
    res = runner.finetune(cfg, args.agent_ckpt, args.vae_ckpt)
    print(f"metrics: {res['metrics']}")
    print(f"final score {res['final_score']:.4f} (normalized {res['final_normalized']:.4f})")


def cmd_evaluate(args):
    cfg = _config(args)
    if args.metrics:
        rows = runner.read_metrics(args.metrics)
        score = runner.final_score(rows)
        print(f"final score {score:.4f} (normalized {cfg.normalized(score):.4f}) over last 3 rows")
        return
    if not args.agent_ckpt:
        raise ConfigError("evaluate needs --agent-ckpt or --metrics")
    episodes = args.episodes or cfg["eval.episodes"]
    mean, std = runner.evaluate_checkpoint(cfg, args.agent_ckpt, episodes, args.seed)
    print(f"return {mean:.4f} +/- {std:.4f} over {episodes} episodes "
          f"(normalized {cfg.normalized(mean):.4f})")


def cmd_ablate(args):
    base = raw_config(load_config_file(args.config) if args.config else {}, parse_overrides(args.set or []))
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    path, rows = runner.run_ablation_suite(base, args.suite, seeds=seeds, out_path=args.out)
    for row in rows:
        print(f"{row['variant']:28s} seed {row['seed']}: {row['final_score']:.4f}")
    print(f"comparison table: {path}")


def build_parser():
    ap = argparse.ArgumentParser(prog="sung", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate an offline dataset file")
    g.add_argument("--env", required=True, choices=ENV_NAMES)
    g.add_argument("--tier", required=True, choices=TIERS)
    g.add_argument("--size", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    def with_config(p, required=True):
        p.add_argument("--config", required=required)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")
        return p

    p = with_config(sub.add_parser("pretrain", help="offline pretraining of agent and VAE"))
    p.set_defaults(func=cmd_pretrain)

    f = with_config(sub.add_parser("finetune", help="online finetuning from checkpoints"))
    f.add_argument("--agent-ckpt", required=True)
    f.add_argument("--vae-ckpt", required=True)
    f.set_defaults(func=cmd_finetune)

    e = with_config(sub.add_parser("evaluate", help="evaluate a checkpoint or summarize a metrics CSV"),
                    required=False)
    e.add_argument("--agent-ckpt")
    e.add_argument("--metrics")
    e.add_argument("--episodes", type=int)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_evaluate)

    a = with_config(sub.add_parser("ablate", help="run a named variant suite"))
    a.add_argument("--suite", required=True)
    a.add_argument("--seeds", help="comma-separated seeds (default: suite.seeds)")
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    runner.tune_allocator()
    try:
        args.func(args)
    except (ConfigError, DatasetError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
