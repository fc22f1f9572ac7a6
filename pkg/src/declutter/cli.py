"""Command-line entry point: ``declutter {generate,solve,run,bench,scaling}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness, io
from .config import POLICIES, Config, ConfigError, load_config
from .setcover import ModelViolation, SolverConfig, plan_failure_prob, solve


def _override(cfg: Config, items: list[str]) -> Config:
    """Apply ``section.key=value`` overrides; values are parsed as JSON when possible."""
    over: dict = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        node = over
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = val
    return cfg.with_overrides(**over) if over else cfg


def _config(args) -> Config:
    cfg = load_config(args.config) if getattr(args, "config", None) else Config()
    return _override(cfg, getattr(args, "set", None) or [])


def cmd_generate(args) -> int:
    cfg = _config(args)
    if args.garments < 1:
        raise ValueError("--garments must be >= 1")
    scene = harness.episode_scene(cfg, args.seed, args.garments)
    io.save_scene(scene, args.out)
    print(f"wrote {args.out}: {len(scene.stack)} garments, seed {args.seed}")
    return 0


def cmd_solve(args) -> int:
    p, inst = io.instance_from_file(args.instance)
    q = 1 - np.exp(inst.b)
    scfg = SolverConfig(q=float(q[0]) if q.size else 0.7, time_budget=args.budget,
                        strategy=args.strategy)
    out = solve(inst, scfg)
    fail = plan_failure_prob(out.plan, p) if p.size else np.zeros(0)
    print(f"status {out.status}")
    print("selected " + " ".join(map(str, out.plan.selected)))
    print(f"grasps {len(out.plan.selected)}")
    if out.dropped_garments:
        print("dropped " + " ".join(map(str, out.dropped_garments)))
    print(f"nodes {out.nodes_explored}  time {out.wall_time:.4f}s")
    print("garment\tfailure_prob\ttarget")
    for j, f in enumerate(fail):
        print(f"{j}\t{f:.6f}\t{1 - q[j]:.6f}")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    scene = io.load_scene(args.scene)
    max_steps = args.max_steps or cfg.bench.step_factor * max(len(scene.stack), 1)
    rp, rs = harness._rngs(args.seed)

    def echo(i, step):
        a = step.action
        where = a.grasp or a.place or ()
        coords = " ".join(f"{v:.4f}" for v in where)
        removed = ",".join(map(str, step.removed)) or "-"
        print(f"{i}\t{a.kind}\t{coords}\theld={step.held_after}\tremoved={removed}"
              f"\tstale={step.stale_skips}")

    print("step\taction\tpose\theld\tremoved\tstale")
    rec = harness.run_episode(scene, args.policy, cfg, rp, rs, max_steps, args.seed, echo=echo)
    print(f"# transports={rec.transports} moves={rec.workspace_moves} "
          f"removed={rec.objects_removed}/{rec.initial_garments} opt={rec.opt:.4f} "
          f"completed={rec.completed}")
    record = args.record or Path(args.scene).with_suffix(f".{args.policy}.{args.seed}.json")
    io.save_record(rec, record)
    if not args.no_figure:
        from .plotting import plot_episode
        plot_episode(scene, rec, scene.meta, Path(record).with_suffix(".png"))
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    rep = harness.bench(cfg, args.workers, out_dir=args.out)
    sys.stdout.write(io.report_table(rep))
    return 0


def cmd_scaling(args) -> int:
    cfg = _config(args)
    if args.min < 1 or args.max < args.min or args.step < 1:
        raise ValueError("need 1 <= --min <= --max and --step >= 1")
    n_list = list(range(args.min, args.max + 1, args.step))
    med, raw = harness.scaling_bench(n_list, np.random.default_rng(args.seed), cfg, args.repeats)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(io.scaling_csv(med))
    out.with_suffix(".raw.csv").write_text(io.scaling_csv(raw))
    from .plotting import plot_scaling
    plot_scaling(med, out.with_suffix(".png"))
    sys.stdout.write(io.scaling_csv(med))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="declutter", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(p, required=False):
        p.add_argument("--config", required=required, help="JSON config file")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a config field, e.g. policy.staleness_tol=1e-4")

    p = sub.add_parser("generate", help="write a random scene file")
    p.add_argument("--garments", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    with_config(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="solve a set-cover instance file")
    p.add_argument("--instance", required=True)
    p.add_argument("--strategy", choices=("exact", "greedy"), default="exact")
    p.add_argument("--budget", type=float, default=60.0, help="time budget in seconds")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("run", help="run one episode and log every step")
    p.add_argument("--scene", required=True)
    p.add_argument("--policy", choices=POLICIES, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--record", help="episode record JSON (default next to the scene)")
    p.add_argument("--no-figure", action="store_true")
    with_config(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="paired benchmark over policies")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int)
    with_config(p, required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("scaling", help="planning time against garment count")
    p.add_argument("--min", type=int, default=5)
    p.add_argument("--max", type=int, default=35)
    p.add_argument("--step", type=int, default=5)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV of per-n medians")
    with_config(p)
    p.set_defaults(func=cmd_scaling)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (io.ParseError, ConfigError, ModelViolation, ValueError, RuntimeError,
            OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
