"""Command line entry point: ``birdrl train | eval | compare | baseline``."""

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..bird import VARIANTS
from ..envs import ENVS
from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .loop import TrainingDiverged, evaluate, random_policy_returns, train
from .metrics import FIELDS, read_metrics

PROG = "birdrl"


def build_parser():
    parser = argparse.ArgumentParser(prog=PROG, description="Train and evaluate BIRD agents on toy control tasks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log each finished episode")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{train,eval,compare,baseline}")

    p = sub.add_parser("train", help="train one agent from a config file")
    p.add_argument("--config", required=True, help="flat JSON object of RunConfig fields")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--seed", type=int)
    p.add_argument("--episodes", type=int, help="override total_episodes")
    p.add_argument("--out", help="output directory (default runs/<variant>-seed<seed>)")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("eval", help="noise-free evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("compare", help="run several configs over shared seeds and merge their metrics")
    p.add_argument("--configs", nargs="+", required=True)
    p.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    p.add_argument("--out", default="runs/compare")
    p.add_argument("--jobs", type=int, default=1, help="runs executed concurrently in worker threads")

    p = sub.add_parser("baseline", help="returns of the uniform-random policy")
    p.add_argument("--env", choices=sorted(ENVS), default="pendulum-swingup")
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episode-steps", type=int, default=500)
    return parser


def _progress(verbose):
    if not verbose:
        return None

    def report(rec):
        print(f"episode {rec.episode:4d}  steps {rec.env_steps:7d}  return {rec.episode_return:8.2f}  "
              f"model_loss {rec.model_loss:9.3f}", file=sys.stderr, flush=True)
    return report


def cmd_train(args):
    cfg = load_config(args.config)
    changes = {k: v for k, v in (("variant", args.variant), ("seed", args.seed),
                                 ("total_episodes", args.episodes)) if v is not None}
    cfg = cfg.replace(**changes)
    out = args.out or os.path.join("runs", f"{cfg.variant}-seed{cfg.seed}")
    trainer = train(cfg, out, resume=args.resume, progress=_progress(args.verbose))
    print(f"{out}: {trainer.episode} episodes, {trainer.env_steps} env steps")
    return 0


def cmd_eval(args):
    mean, std = evaluate(args.checkpoint, args.episodes, seed=args.seed)
    print(json.dumps({"mean": mean, "std": std, "episodes": args.episodes}))
    return 0


def _run_names(paths):
    names = [os.path.splitext(os.path.basename(p))[0] for p in paths]
    if len(set(names)) != len(names):
        raise ConfigError("compare needs config files with distinct base names")
    return names


def cmd_compare(args):
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    configs = [load_config(p) for p in args.configs]
    names = _run_names(args.configs)
    jobs = [(name, cfg.replace(seed=seed), os.path.join(args.out, name, f"seed{seed}"))
            for name, cfg in zip(names, configs) for seed in args.seeds]

    def run(job):
        _, cfg, out = job
        train(cfg, out, progress=_progress(args.verbose))
        return out

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        outs = list(pool.map(run, jobs))
    merged = os.path.join(args.out, "merged.csv")
    with open(merged, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("config", "variant", "seed") + FIELDS)
        for (name, cfg, _), out in zip(jobs, outs):
            with open(os.path.join(out, "metrics.csv"), newline="") as src:
                reader = csv.reader(src)
                next(reader)
                for row in reader:
                    w.writerow([name, cfg.variant, cfg.seed] + row)
    print(f"{merged}: {len(jobs)} runs")
    return 0


def cmd_baseline(args):
    returns = random_policy_returns(args.env, args.episodes, seed=args.seed, episode_steps=args.episode_steps)
    print(json.dumps({"env": args.env, "mean": float(np.mean(returns)), "std": float(np.std(returns)),
                      "episodes": args.episodes}))
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "compare": cmd_compare, "baseline": cmd_baseline}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, CheckpointError, TrainingDiverged, OSError, ValueError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"{PROG}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
