"""Command-line entry point: data generation, two-stage training, evaluation,
and reporting.

Exit codes are a stable contract: 0 success, 1 usage error, 2 data error,
3 numeric failure. Every command prints the resolved config hash; rerunning a
command with the same hash, seed, and --threads 1 reproduces its outputs byte
for byte.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import torch

from . import config as cfgmod
from .datagen import TrainingWindows, generate_dataset, read_dataset
from .diffusion import LatentDiffusionPolicy
from .errors import DataError, LatentGraspError, MissingVAE, NumericError, UsageError
from .evaluation import PolicyRunner, format_report, read_results, write_results
from .selector import HeuristicPoseSelector
from .vae import ActionChunkVAE

DATA_ROOT_ENV = "LATENTGRASP_DATA_ROOT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def resolve_path(path: str) -> Path:
    p = Path(path)
    root = os.environ.get(DATA_ROOT_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def add_common(sub):
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a config key (repeatable)")
    sub.add_argument("--seed", type=int, help="master seed")
    sub.add_argument("--threads", type=int, help="torch thread count")


def add_ablation_flags(sub):
    sub.add_argument("--no-cue", action="store_true",
                     help="zero the graspness cue channel")
    sub.add_argument("--condition-guidance", action="store_true",
                     help="feed the grasp pose to the denoiser conditioning "
                          "instead of the latent decoder")
    sub.add_argument("--no-guidance", action="store_true",
                     help="drop the grasp pose entirely (plain baseline)")


def build_parser() -> _Parser:
    parser = _Parser(prog="latentgrasp",
                     description="grasp-pose-guided latent diffusion policy")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[], help="generate demonstrations")
    g.add_argument("--objects", type=int, default=10)
    g.add_argument("--episodes", type=int, required=True)
    g.add_argument("--out", required=True)
    add_common(g)

    tv = sub.add_parser("train-vae", help="stage 1: action latent learning")
    tv.add_argument("--data", required=True)
    tv.add_argument("--out", required=True)
    add_ablation_flags(tv)
    add_common(tv)

    tl = sub.add_parser("train-ldp", help="stage 2: latent diffusion policy")
    tl.add_argument("--data", required=True)
    tl.add_argument("--vae", help="stage-1 checkpoint")
    tl.add_argument("--out", required=True)
    add_ablation_flags(tl)
    add_common(tl)

    ev = sub.add_parser("eval", help="closed-loop evaluation")
    ev.add_argument("--suite", default="in_domain")
    ev.add_argument("--episodes", type=int, default=50)
    ev.add_argument("--vae", required=True)
    ev.add_argument("--ldp", required=True)
    ev.add_argument("--out", required=True, help="results file")
    ev.add_argument("--select", choices=("hps", "random", "highest", "nearest"))
    ev.add_argument("--detect-once", action="store_true",
                    help="detect grasps only on the first control cycle")
    ev.add_argument("--action-horizon", type=int)
    ev.add_argument("--discard-head", type=int,
                    help="drop this many actions from each chunk")
    ev.add_argument("--no-cue", action="store_true")
    add_common(ev)

    rp = sub.add_parser("report", help="aggregate a results file")
    rp.add_argument("--results", required=True)
    rp.add_argument("--svg", help="optional SVG bar chart output path")
    add_common(rp)

    dt = sub.add_parser("detect", help="detect grasp candidates for a scene, "
                                       "or select from a candidate file")
    dt.add_argument("--suite", default="in_domain")
    dt.add_argument("--episode", type=int, default=0)
    dt.add_argument("--out", help="write candidates to this file")
    dt.add_argument("--candidates", help="read candidates from this file")
    dt.add_argument("--select", choices=("hps", "random", "highest", "nearest"))
    add_common(dt)

    sc = sub.add_parser("scenes", help="print or write a suite's scene spec")
    sc.add_argument("--suite", required=True)
    sc.add_argument("--episode", type=int, default=0)
    sc.add_argument("--out", help="write the spec file here instead of stdout")
    add_common(sc)
    return parser


def resolved_config(args) -> dict:
    overrides = {}
    if getattr(args, "config", None):
        overrides.update(cfgmod.load_config_file(resolve_path(args.config)))
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        overrides["threads"] = args.threads
    if getattr(args, "no_cue", False):
        overrides["use_cue"] = False
        overrides["use_recon"] = False
    if getattr(args, "condition_guidance", False):
        overrides["guidance"] = "condition"
    if getattr(args, "no_guidance", False):
        overrides["guidance"] = "none"
    if getattr(args, "select", None):
        overrides["select_strategy"] = args.select
    if getattr(args, "detect_once", False):
        overrides["detect_every_cycle"] = False
    if getattr(args, "action_horizon", None) is not None:
        overrides["action_horizon"] = args.action_horizon
    if getattr(args, "discard_head", None) is not None:
        overrides["discard_head_actions"] = args.discard_head
    cfg = cfgmod.resolve(overrides)
    return cfg


def load_windows(data_dir, cfg) -> TrainingWindows:
    episodes = read_dataset(resolve_path(data_dir))
    return TrainingWindows(episodes, cfg["horizon"], cfg["n_obs_steps"])


def write_loss_log(path, losses):
    with open(path, "w", encoding="utf-8") as f:
        for i, v in enumerate(losses):
            f.write(f"{i} {v:.8e}\n")


def cmd_gen_data(args, cfg) -> int:
    stored, rejected = generate_dataset(resolve_path(args.out), args.objects,
                                        args.episodes, cfg["seed"], cfg)
    print(f"stored={stored} rejected={rejected}")
    return 0


def cmd_train_vae(args, cfg) -> int:
    windows = load_windows(args.data, cfg)
    vae = ActionChunkVAE.from_config(cfg, guided=cfg["guidance"] == "latent")
    vae.fit(windows.chunks, windows.grasp_conds if vae.guided else None)
    out = resolve_path(args.out)
    vae.save(out, {"config_hash": cfgmod.config_hash(cfg)})
    write_loss_log(str(out) + ".loss.txt", vae.loss_log_)
    print(f"saved {out} (final loss {vae.loss_log_[-1]:.3e})")
    return 0


def cmd_train_ldp(args, cfg) -> int:
    if not args.vae:
        raise MissingVAE("train-ldp requires --vae with a stage-1 checkpoint")
    vae = ActionChunkVAE.load(resolve_path(args.vae))
    windows = load_windows(args.data, cfg)
    policy = LatentDiffusionPolicy.from_config(cfg)
    policy.fit(windows, vae)
    out = resolve_path(args.out)
    policy.save(out, {"config_hash": cfgmod.config_hash(cfg)})
    write_loss_log(str(out) + ".loss.txt", policy.loss_log_)
    print(f"saved {out} (final loss {policy.loss_log_[-1]:.3e})")
    return 0


def cmd_eval(args, cfg) -> int:
    vae = ActionChunkVAE.load(resolve_path(args.vae))
    policy = LatentDiffusionPolicy.load(resolve_path(args.ldp))
    if not cfg["use_cue"]:
        policy.use_cue = False
    cfg = dict(cfg)
    cfg["guidance"] = "condition" if policy.guidance == "condition" else (
        "latent" if vae.guided else "none")
    runner = PolicyRunner(vae, policy, HeuristicPoseSelector.from_config(cfg),
                          cfg)
    out = resolve_path(args.out)
    if args.suite.startswith("cluttered"):
        results, scr_lines = run_cluttered_protocol(runner, args.suite,
                                                    args.episodes, cfg)
        write_results(out, results, cfg)
        with open(out, "a", encoding="utf-8") as f:
            for line in scr_lines:
                f.write(line + "\n")
        for line in scr_lines:
            print(line)
    else:
        results = runner.run_suite(args.suite, args.episodes, cfg["seed"])
        write_results(out, results, cfg)
    sys.stdout.write(format_report(results))
    return 0


def run_cluttered_protocol(runner, suite_name, n_scenes, cfg):
    """Table clearing with an attempt budget per scene; returns per-attempt
    trials plus SCR summary comment lines."""
    from .scenes import get_suite
    from .simworld import spawn as spawn_world
    suite = get_suite(suite_name)
    results, lines = [], []
    for e in range(n_scenes):
        world = spawn_world(suite.scene_spec(e),
                            suite.spawn_seed(cfg["seed"], e), cfg)
        cleared, total, attempts = runner.run_scene_completion(
            world, master_seed=suite.spawn_seed(cfg["seed"], e),
            attempt_budget=suite.attempt_budget or 10, suite=suite_name)
        results.extend(attempts)
        scr = 100.0 * cleared / total
        lines.append(f"# scr scene={e} cleared={cleared} total={total} "
                     f"scr={scr:.1f}")
    return results, lines


def cmd_report(args, cfg) -> int:
    results = read_results(resolve_path(args.results))
    sys.stdout.write(format_report(results))
    if args.svg:
        write_svg_report(resolve_path(args.svg), results)
    return 0


def write_svg_report(path, results) -> None:
    """Minimal standalone SVG bar chart of per-suite success rates."""
    from .evaluation import success_rate
    suites = sorted({r.suite for r in results})
    bars = [(s, success_rate([r for r in results if r.suite == s]))
            for s in suites]
    width, bar_w, height = 80 + 90 * len(bars), 60, 260
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}">']
    for i, (name, sr) in enumerate(bars):
        x = 50 + i * 90
        h = 1.8 * sr
        parts.append(f'<rect x="{x}" y="{220 - h:.1f}" width="{bar_w}" '
                     f'height="{h:.1f}" fill="#4878a8"/>')
        parts.append(f'<text x="{x + bar_w / 2}" y="236" font-size="11" '
                     f'text-anchor="middle">{name}</text>')
        parts.append(f'<text x="{x + bar_w / 2}" y="{214 - h:.1f}" '
                     f'font-size="11" text-anchor="middle">{sr:.1f}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts), encoding="utf-8")


def cmd_detect(args, cfg) -> int:
    from .graspsense import read_candidates, write_candidates
    from .scenes import get_suite
    from .simworld import GRIPPER_HOME, spawn as spawn_world
    if args.candidates:
        cands = read_candidates(resolve_path(args.candidates))
    else:
        suite = get_suite(args.suite)
        world = spawn_world(suite.scene_spec(args.episode),
                            suite.spawn_seed(cfg["seed"], args.episode), cfg)
        runner = PolicyRunner(None, None,
                              HeuristicPoseSelector.from_config(cfg), cfg,
                              planner=lambda *a: None)
        cands, _ = runner.detect_candidates(world, cfg["seed"])
    print(f"candidates={len(cands)}")
    if args.out:
        write_candidates(resolve_path(args.out), cands)
        print(f"wrote {args.out}")
    if args.select:
        sel = HeuristicPoseSelector.from_config(
            dict(cfg, select_strategy=args.select))
        chosen = sel.select(cands, GRIPPER_HOME, seed=cfg["seed"])
        t = chosen.pose.translation
        print(f"selected score={chosen.score:.3f} width={chosen.width:.3f} "
              f"t=({t[0]:.4f},{t[1]:.4f},{t[2]:.4f})")
    return 0


def cmd_scenes(args, cfg) -> int:
    from .scenes import get_suite
    text = get_suite(args.suite).scene_spec(args.episode).to_text()
    if args.out:
        Path(resolve_path(args.out)).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-vae": cmd_train_vae,
    "train-ldp": cmd_train_ldp,
    "eval": cmd_eval,
    "report": cmd_report,
    "detect": cmd_detect,
    "scenes": cmd_scenes,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolved_config(args)
        torch.set_num_threads(max(1, cfg["threads"]))
        print(f"config_hash={cfgmod.config_hash(cfg)} seed={cfg['seed']}")
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except LatentGraspError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
