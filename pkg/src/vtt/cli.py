"""Command-line entry point.

Verbs: gen-data, train-repr, train-rl, eval, heatmap, gradcheck, params.
Every command honors --config/--seed/--fusion overrides and writes the
effective configuration next to its outputs.  Exit codes: 0 success,
2 validation/configuration error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import sys
import traceback

import numpy as np

from .config import ExperimentConfig, load_config, save_config
from .errors import ConfigError, ValidationError

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value config file (defaults otherwise)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--fusion", help="override the fusion kind "
                                    "(vtt|concat|poe|vtt-no-contact|vtt-no-align|vtt-no-both)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vtt",
                                     description="Visuo-tactile representation learning "
                                                 "on a desk-scale pushing task")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="roll out scripted/random episodes to a dataset")
    _add_common(p)
    p.add_argument("--out", required=True, help="output dataset path")
    p.add_argument("--episodes", type=int, help="override episode count")

    p = sub.add_parser("train-repr", help="pretrain the representation and dynamics model")
    _add_common(p)
    p.add_argument("--data", required=True, help="episode dataset path")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--steps", type=int, help="override optimization step count")

    p = sub.add_parser("train-rl", help="train the policy (and keep training the model)")
    _add_common(p)
    p.add_argument("--ckpt", required=True, help="representation checkpoint")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--env-steps", type=int, help="override environment step budget")

    p = sub.add_parser("eval", help="roll out a trained policy deterministically")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--episodes", type=int, help="override evaluation episode count")
    p.add_argument("--out", help="write episode,return,success CSV here")

    p = sub.add_parser("heatmap", help="export attention overlays and proportion series")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--data", help="episode dataset (fresh scripted rollouts otherwise)")
    p.add_argument("--index", type=int, default=0, help="first episode index")
    p.add_argument("--episodes", type=int, default=1, help="episodes to analyze")

    p = sub.add_parser("gradcheck", help="finite-difference verification at toy dims")
    _add_common(p)
    p.add_argument("--tolerance", type=float, default=1e-3)

    p = sub.add_parser("params", help="parameter counts per fusion variant")
    _add_common(p)
    p.add_argument("--paper-scale", action="store_true",
                   help="report at full scale instead of the configured dimensions")
    return parser


def _load_cfg(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "fusion", None):
        cfg.fusion = args.fusion
    if getattr(args, "episodes", None) and args.command == "gen-data":
        cfg.episodes = args.episodes
    if getattr(args, "steps", None):
        cfg.repr_steps = args.steps
    if getattr(args, "env_steps", None):
        cfg.rl_env_steps = args.env_steps
    return cfg.validate()


def _cmd_gen_data(args) -> int:
    from .training import gen_data
    cfg = _load_cfg(args)
    stats = gen_data(cfg, args.out)
    print(f"wrote {stats['episodes']} episodes ({stats['steps']} steps, "
          f"{stats['scripted']} scripted) to {args.out}")
    print(f"contact-step fraction: {stats['contact_fraction']:.4f}")
    return EXIT_OK


def _cmd_train_repr(args) -> int:
    from .training import train_repr
    cfg = _load_cfg(args)
    result = train_repr(cfg, args.data, args.out)
    accs = result["accuracies"]
    print(f"checkpoint: {args.out}")
    for k in sorted(accs):
        print(f"{k}: {accs[k]:.4f}")
    return EXIT_OK


def _cmd_train_rl(args) -> int:
    from .training import train_rl
    cfg = _load_cfg(args)
    result = train_rl(cfg, args.ckpt, args.out)
    rows = result["episodes"]
    last = rows[-50:]
    if last:
        mean_ret = float(np.mean([r["return"] for r in last]))
        succ = float(np.mean([r["success"] for r in last]))
        print(f"episodes: {len(rows)}  updates: {result['updates']}")
        print(f"last-{len(last)} mean return: {mean_ret:.2f}  success rate: {succ:.2f}")
    print(f"checkpoint: {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .training import eval_policy
    cfg = _load_cfg(args)
    rows = eval_policy(cfg, args.ckpt, n_episodes=args.episodes)
    mean_ret = float(np.mean([r["return"] for r in rows]))
    succ = float(np.mean([r["success"] for r in rows]))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode", "return", "success"])
            for r in rows:
                writer.writerow([r["episode"], f"{r['return']:.6f}", r["success"]])
        save_config(cfg, args.out + ".cfg")
    print(f"{len(rows)} episodes  mean return: {mean_ret:.2f}  success rate: {succ:.2f}")
    return EXIT_OK


def _cmd_heatmap(args) -> int:
    from .analysis import run_heatmap
    cfg = _load_cfg(args)
    results = run_heatmap(cfg, args.ckpt, args.out, data_path=args.data,
                          index=args.index, n_episodes=args.episodes)
    save_config(cfg, args.out.rstrip("/") + "/config.cfg")
    for i, res in enumerate(results):
        shift = res["shift"]
        print(f"episode {i}: {res['steps']} overlays; pre-contact visual share "
              f"{shift['pre_visual']:.3f}, tactile pre={shift['pre_tactile']:.3f} "
              f"in-contact={shift['in_tactile']:.3f}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .gradcheck_suite import run_suite
    _load_cfg(args)  # validates any supplied config
    reports = run_suite(tolerance=args.tolerance)
    bad = {k: r for k, r in reports.items() if not r.passed(args.tolerance)}
    if bad:
        worst = max(bad.values(), key=lambda r: r.max_rel_err)
        print(f"FAILED: {len(bad)} checks above tolerance {args.tolerance}; "
              f"worst parameter: {worst.worst_param} ({worst.max_rel_err:.3e})",
              file=sys.stderr)
        return EXIT_RUNTIME
    print(f"all {len(reports)} gradient checks within tolerance {args.tolerance}")
    return EXIT_OK


def _cmd_params(args) -> int:
    from .analysis import params_report
    cfg = _load_cfg(args)
    rows = params_report(cfg, paper_scale=args.paper_scale)
    counts = dict(rows)
    width = max(len(name) for name, _ in rows)
    for name, count in rows:
        print(f"{name:<{width}s}  {count:>10d}")
    print(f"{'vtt/concat ratio':<{width}s}  {counts['vtt'] / counts['concat']:>10.2f}")
    return EXIT_OK


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train-repr": _cmd_train_repr,
    "train-rl": _cmd_train_rl,
    "eval": _cmd_eval,
    "heatmap": _cmd_heatmap,
    "gradcheck": _cmd_gradcheck,
    "params": _cmd_params,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception:
        traceback.print_exc()
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
