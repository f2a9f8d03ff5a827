"""Command-line entry point: ``rolemaddpg {train,eval,sweep-pursuers,replay,coverage-report}``."""

import argparse
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
import json
import logging
import os
from pathlib import Path
import sys

import numpy as np

from . import config as cfgmod
from . import metrics
from .env import Role
from .maddpg import Trainer, TrainingAborted, checkpoint_name, evaluate, load_learner, train
from .replay import render_svg

OUTPUT_ENV = "ROLEMADDPG_OUTPUT_DIR"
SENSORY_THRESHOLD = 0.5
DEFAULT_SKIP = 2000

log = logging.getLogger("rolemaddpg")


class CliError(Exception):
    pass


def _resolve_out(args_out, run):
    return Path(args_out or os.environ.get(OUTPUT_ENV) or run.output_dir)


def _latest_checkpoint(out):
    root = Path(out) / "checkpoints"
    found = sorted(p for p in root.glob("ep_*") if (p / "manifest.json").is_file())
    if not found:
        raise CliError(f"no checkpoints under {root}")
    return found[-1]


def _truncate_aggregate(path, before_episode):
    lines = Path(path).read_text().splitlines(keepends=True)
    keep = [lines[0]] + [l for l in lines[1:] if int(l.split(",", 1)[0]) < before_episode]
    Path(path).write_text("".join(keep))


def run_training(run, out, resume=None, progress=print):
    """Train ``run`` writing everything under ``out``; returns the TrainResult."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    run.save(out / "config.toml")
    agg_path = out / "aggregate.csv"
    tcfg = run.training
    trainer = None
    if resume is not None:
        trainer = Trainer.from_checkpoint(resume, train_cfg=tcfg)
        if not agg_path.is_file():
            raise CliError(f"cannot resume: {agg_path} is missing")
        _truncate_aggregate(agg_path, trainer.episode)
    else:
        metrics.write_aggregate_csv(agg_path, [])
    traj_dir = out / "trajectories"

    def on_episode(ep_log, tr):
        metrics.write_aggregate_csv(agg_path, [ep_log], append=True)
        if tcfg.trajectory_every and ep_log.episode % tcfg.trajectory_every == 0:
            traj_dir.mkdir(exist_ok=True)
            stem = traj_dir / f"ep_{ep_log.episode:06d}"
            metrics.write_trajectory_csv(stem.with_suffix(".csv"), [ep_log])
            stem.with_suffix(".obstacles.json").write_text(json.dumps(
                {"half_extent": ep_log.half_extent, "obstacles": ep_log.obstacles}) + "\n")
        if tcfg.progress_every and (ep_log.episode + 1) % tcfg.progress_every == 0:
            recent = [l for l in tr.losses if l.episode == ep_log.episode] or tr.losses[-len(tr.learners):]
            closs = np.mean([l.critic_loss for l in recent]) if recent else float("nan")
            aobj = np.mean([l.actor_objective for l in recent]) if recent else float("nan")
            progress(f"PROGRESS episode={ep_log.episode} critic_loss={closs:.6g} actor_q={aobj:.6g} "
                     f"min_d={ep_log.min_d:.4f} avg_d={ep_log.avg_d:.4f} max_d={ep_log.max_d:.4f} "
                     f"coverage={ep_log.coverage:.4f}")

    result = train(run.world, run.rewards, tcfg, output_dir=out, trainer=trainer,
                   on_episode=on_episode, run_config=run.to_dict())
    manifest = {
        "config": run.to_dict(),
        "episodes": tcfg.episodes,
        "checkpoints": sorted(p.name for p in (out / "checkpoints").glob("ep_*")),
        "aggregate_csv": agg_path.name,
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return result


def cmd_train(args):
    run = cfgmod.load(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.episodes is not None:
        overrides["episodes"] = args.episodes
    if overrides:
        run = replace(run, training=replace(run.training, **overrides))
    out = _resolve_out(args.out, run)
    resume = None
    if args.resume:
        resume = _latest_checkpoint(out) if args.resume == "latest" else Path(args.resume)
    run_training(run, out, resume)
    print(f"DONE out={out}")
    return 0


def load_checkpoint(ckpt_dir):
    d = Path(ckpt_dir)
    mpath = d / "manifest.json"
    if not mpath.is_file():
        raise CliError(f"checkpoint manifest not found: {mpath}")
    manifest = json.loads(mpath.read_text())
    snap = manifest["config"]
    run = cfgmod.from_dict(snap) if "output_dir" in snap else cfgmod.RunConfig(*cfgmod.parse_snapshot(snap))
    roles = run.world.roles()
    if [r.label for r in roles] != manifest["roles"]:
        raise CliError(f"{d}: agent roles in manifest do not match the world config")
    learners = []
    for i, role in enumerate(roles):
        path = d / f"agent_{i:02d}.spnn"
        if not path.is_file():
            raise CliError(f"{d}: missing {path.name}")
        l = load_learner(path, role)
        if l.actor.layer_dims[0] != run.world.obs_dim(role):
            raise CliError(f"{path}: actor input width {l.actor.layer_dims[0]} "
                           f"does not match observation length {run.world.obs_dim(role)}")
        learners.append(l)
    return run, learners


def _skip_for(n, requested):
    if requested is not None:
        return requested
    return DEFAULT_SKIP if n > DEFAULT_SKIP else n // 2


def cmd_eval(args):
    run, learners = load_checkpoint(args.checkpoint)
    logs = evaluate(learners, run.world, run.rewards, args.episodes, args.seed,
                    run.training.sensor_range, run.training.coverage_scouts_only, run.training.coverage_resolution)
    out = Path(args.out) if args.out else Path(args.checkpoint) / "eval_aggregate.csv"
    metrics.write_aggregate_csv(out, logs)
    skip = args.skip or 0
    print(metrics.format_distance_table(
        metrics.truncated_mean([l.min_d for l in logs], skip),
        metrics.truncated_mean([l.avg_d for l in logs], skip),
        metrics.truncated_mean([l.max_d for l in logs], skip),
    ))
    print(f"EVAL episodes={args.episodes} coverage={metrics.truncated_mean([l.coverage for l in logs], skip):.4f} "
          f"csv={out}")
    return 0


def _sweep_cell(run, n_p, out):
    world = replace(run.world, n_pursuers=n_p, n_scouts=0, n_evaders=2)
    training = replace(run.training, seed=run.training.seed + n_p)
    cell = replace(run, world=world, training=training)
    result = run_training(cell, Path(out) / f"np_{n_p}", progress=lambda s: None)
    return [l.min_d for l in result.logs]


def sweep_table(min_series, skip, threshold=SENSORY_THRESHOLD, tol=0.01):
    """Rows (n_p, truncated mean-of-min), smallest sufficient n_p, and the
    n_p values whose distance rose versus n_p - 1 by more than ``tol``."""
    rows = [(n_p, metrics.truncated_mean(s, skip)) for n_p, s in sorted(min_series.items())]
    sufficient = next((n for n, v in rows if v < threshold), None)
    flagged = [b[0] for a, b in zip(rows, rows[1:]) if b[0] == a[0] + 1 and b[1] > a[1] + tol]
    return rows, sufficient, flagged


def cmd_sweep_pursuers(args):
    if args.min < 1 or args.max < args.min:
        raise CliError("need 1 <= --min <= --max")
    if args.min < 2:
        # two targets need at least two pursuers
        raise CliError("--min must be >= 2 for the double-target scenario")
    run = cfgmod.load(args.config)
    out = _resolve_out(args.out, run)
    n_values = list(range(args.min, args.max + 1))
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            series = dict(zip(n_values, pool.map(_sweep_cell, [run] * len(n_values), n_values, [out] * len(n_values))))
    else:
        series = {n: _sweep_cell(run, n, out) for n in n_values}
    skip = _skip_for(run.training.episodes, args.skip)
    rows, sufficient, flagged = sweep_table(series, skip, tol=args.tol)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep_pursuers.csv", "w") as f:
        f.write("n_p,mean_min_dist\n")
        for n, v in rows:
            f.write(f"{n},{v!r}\n")
    for n, v in rows:
        print(f"SWEEP n_p={n} mean_min_dist={v:.4f}")
    for n in flagged:
        print(f"SWEEP non_monotone n_p={n}")
    print(f"SWEEP sufficient_n_p={sufficient if sufficient is not None else 'none'} threshold={SENSORY_THRESHOLD}")
    return 0


def cmd_replay(args):
    log_csv = Path(args.log_csv)
    if not log_csv.is_file():
        raise CliError(f"trajectory file not found: {log_csv}")
    rows = metrics.read_trajectory_csv(log_csv)
    if args.episode is not None:
        rows = [r for r in rows if r["episode"] == args.episode]
    half_extent, obstacles = args.half_extent, []
    side = Path(args.obstacles) if args.obstacles else log_csv.with_suffix(".obstacles.json")
    if side.is_file():
        meta = json.loads(side.read_text())
        obstacles = [tuple(o) for o in meta.get("obstacles", [])]
        if args.half_extent is None:
            half_extent = meta.get("half_extent")
    svg = render_svg(rows, half_extent or 3.0, obstacles)
    out = Path(args.svg) if args.svg else log_csv.with_suffix(".svg")
    out.write_bytes(svg.encode())
    print(f"REPLAY agents={len({(r['episode'], r['agent_id']) for r in rows})} svg={out}")
    return 0


def cmd_coverage_report(args):
    run, learners = load_checkpoint(args.checkpoint)
    logs = evaluate(learners, run.world, run.rewards, args.episodes, args.seed,
                    args.range, args.scouts_only, run.training.coverage_resolution)
    cov = [l.coverage for l in logs]
    team = "scouts" if args.scouts_only else "pursuers+scouts"
    print(f"COVERAGE team={team} range={args.range} episodes={args.episodes} "
          f"mean={np.mean(cov):.4f} min={np.min(cov):.4f} max={np.max(cov):.4f}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="rolemaddpg", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a run config")
    t.add_argument("config")
    t.add_argument("--seed", type=int)
    t.add_argument("--episodes", type=int)
    t.add_argument("--out", help=f"output directory (overrides ${OUTPUT_ENV} and the config)")
    t.add_argument("--resume", help="checkpoint directory to resume from, or 'latest'")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="noise-free evaluation rollouts from a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--skip", type=int, default=0, help="leading episodes to drop from the means")
    e.add_argument("--out", help="aggregate CSV path")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep-pursuers", help="train one model per pursuer count on the double-target scenario")
    s.add_argument("config")
    s.add_argument("--min", type=int, default=2)
    s.add_argument("--max", type=int, default=6)
    s.add_argument("--out")
    s.add_argument("--skip", type=int, help=f"truncated episodes (default {DEFAULT_SKIP}, or half the run if shorter)")
    s.add_argument("--tol", type=float, default=0.01, help="monotonicity tolerance in metres")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep_pursuers)

    r = sub.add_parser("replay", help="render a trajectory CSV to SVG")
    r.add_argument("log_csv")
    r.add_argument("--svg")
    r.add_argument("--episode", type=int)
    r.add_argument("--obstacles", help="obstacle sidecar JSON (default: <log>.obstacles.json)")
    r.add_argument("--half-extent", type=float)
    r.set_defaults(func=cmd_replay)

    c = sub.add_parser("coverage-report", help="mean sensory coverage of a trained swarm")
    c.add_argument("checkpoint")
    c.add_argument("--episodes", type=int, default=50)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--range", type=float, default=metrics.SENSOR_RANGE)
    c.add_argument("--scouts-only", action="store_true")
    c.set_defaults(func=cmd_coverage_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (cfgmod.ConfigError, CliError, metrics.CsvFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingAborted as exc:
        print(f"error: training aborted: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
