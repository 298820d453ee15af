"""Command-line entry points: train, eval, diagnose, ablate.

Every training run owns a directory with the resolved config, a
manifest, line-delimited metrics/gating/gradient logs and its
checkpoints. Run ids are a pure function of (config hash, seed) so a
repeated run overwrites its predecessor with byte-identical logs.

The default output root is ``runs/`` or the CROSSGATE_OUT environment
variable. Exit codes: 0 success, 1 runtime failure, 2 bad usage or
config.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import (Config, ConfigError, apply_overrides, config_hash,
                     load_config, save_config)
from .geometry import MANEUVERS
from .metrics import gradient_conflict, summarize
from .training import Trainer, evaluate_policy

OUT_ENV_VAR = "CROSSGATE_OUT"

ABLATION_VARIANTS = {
    "full": [],
    "no_prior": ["alpha=0.0", "rho=[0.0,0.0,0.0]"],
    "no_likelihood": ["beta=0.0"],
    "flat_rho": ["rho=[-2.0,-2.0,-2.0]"],
    "uniform": ["strategy=uniform"],
    "minmax": ["strategy=minmax"],
}


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ENV_VAR, "runs"))


def run_id_for(cfg: Config) -> str:
    return f"run-{config_hash(cfg)[:12]}-seed{cfg.seed}"


def build_config(config_path, overrides, seed) -> Config:
    cfg = load_config(config_path) if config_path else Config()
    ov = list(overrides or [])
    if seed is not None:
        ov.append(f"seed={seed}")
    if ov:
        cfg = apply_overrides(cfg, ov)
    cfg.validate()
    return cfg


class RunWriter:
    """Owns one run directory and its append-only logs."""

    def __init__(self, out_dir: Path, cfg: Config):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.run_id = run_id_for(cfg)
        self.cfg = cfg
        save_config(cfg, self.dir / "config.yaml")
        self.manifest = {
            "run_id": self.run_id,
            "config_hash": config_hash(cfg),
            "seed": cfg.seed,
            "config": cfg.to_dict(),
            "started_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "finished_at": None,
            "status": "running",
            "checkpoints": [],
        }
        for name in ("metrics.jsonl", "gating.jsonl",
                     "gradient_cosines.jsonl"):
            (self.dir / name).write_text("")
        self._write_manifest()

    def _write_manifest(self):
        (self.dir / "manifest.json").write_text(
            json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")

    def append(self, name: str, record: dict):
        record = dict(record, run_id=self.run_id)
        with open(self.dir / name, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def metrics(self, record: dict):
        self.append("metrics.jsonl", record)

    def gating(self, epoch: int, gate):
        self.append("gating.jsonl", {
            "epoch": epoch, "strategy": gate.strategy,
            "phi_prior": gate.phi_prior.tolist(),
            "delta_mean": gate.delta_mean.tolist(),
            "w_mean": gate.w_mean.tolist(), "w_max": gate.w_max.tolist()})

    def cosines(self, snapshot):
        self.append("gradient_cosines.jsonl", snapshot.to_dict())

    def checkpoint(self, trainer: Trainer, tag: str) -> Path:
        path = self.dir / "checkpoints" / f"{tag}.ckpt"
        save_checkpoint(path, self.cfg, trainer.theta, trainer.adam,
                        trainer.lagrange, trainer.epoch, trainer.global_step)
        rel = str(path.relative_to(self.dir))
        if rel not in self.manifest["checkpoints"]:
            self.manifest["checkpoints"].append(rel)
        self._write_manifest()
        return path

    def finish(self, status: str):
        self.manifest["status"] = status
        self.manifest["finished_at"] = time.strftime(
            "%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        self._write_manifest()


def cmd_train(args) -> int:
    cfg = build_config(args.config, args.set, args.seed)
    out_dir = Path(args.out) if args.out else default_out_root() / run_id_for(cfg)
    trainer = Trainer(cfg)
    writer = RunWriter(out_dir, cfg)
    n_epochs = trainer.n_epochs
    print(f"{writer.run_id}: {n_epochs} epochs x {cfg.steps_per_epoch} steps "
          f"-> {out_dir}")
    try:
        for epoch in range(1, n_epochs + 1):
            diag = cfg.grad_diag_every > 0 and epoch % cfg.grad_diag_every == 0
            report, gate, snapshot = trainer.train_epoch(diagnose=diag)
            writer.metrics(report.to_dict())
            writer.gating(report.epoch, gate)
            if snapshot is not None:
                writer.cosines(snapshot)
            writer.checkpoint(trainer, "latest")
            if cfg.checkpoint_every > 0 and epoch % cfg.checkpoint_every == 0:
                writer.checkpoint(trainer, f"epoch_{epoch:05d}")
            if cfg.eval_every > 0 and epoch % cfg.eval_every == 0:
                records = evaluate_policy(trainer.params, cfg, cfg.seed,
                                          cfg.eval_episodes)
                writer.append("evals.jsonl",
                              dict(summarize(records), epoch=epoch))
            lam = ", ".join(f"{v:.3f}" for v in report.lambda_after)
            print(f"epoch {epoch}/{n_epochs} reward {report.mean_ep_reward:9.2f} "
                  f"episodes {report.episodes:3d} "
                  f"goal/coll/to {report.terminals['goal']}/"
                  f"{report.terminals['collision']}/{report.terminals['timeout']} "
                  f"lambda [{lam}]")
    except FloatingPointError as exc:
        writer.metrics({"event": "abort", "epoch": trainer.epoch + 1,
                        "error": str(exc)})
        writer.finish("aborted")
        print(f"error: {exc}", file=sys.stderr)
        return 1
    writer.checkpoint(trainer, "final")
    writer.finish("complete")
    return 0


def _fmt(value, width=12) -> str:
    if value is None:
        return f"{'undefined':>{width}}"
    return f"{value:>{width}.3f}"


def print_summary(summary: dict) -> None:
    print(f"{'metric':<22}{'mean':>12}{'std':>12}")
    for key in ("avg_risk", "avg_speed_kmh", "time_to_goal_s", "avg_jerk",
                "episode_reward"):
        entry = summary[key]
        if entry is None:
            print(f"{key:<22}{_fmt(None)}{_fmt(None)}")
        else:
            print(f"{key:<22}{_fmt(entry['mean'])}{_fmt(entry['std'])}")
    print(f"{'collision_rate_pct':<22}{_fmt(summary['collision_rate_pct'])}")
    print(f"{'success_rate_pct':<22}{_fmt(summary['success_rate_pct'])}")
    print("collision breakdown (%):")
    for cls, pct in summary["collision_by_class_pct"].items():
        print(f"  {cls:<20}{_fmt(pct)}")
    print("success by maneuver (%):")
    for man, pct in summary["success_by_maneuver_pct"].items():
        print(f"  {man:<20}{_fmt(pct)}")


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    cfg = ck.cfg
    seed = args.seed if args.seed is not None else cfg.seed
    episodes = args.episodes if args.episodes else cfg.eval_episodes
    records = evaluate_policy(ck.params, cfg, seed, episodes,
                              deterministic=True, maneuver=args.maneuver,
                              keep_traces=bool(args.out))
    summary = summarize(records)
    summary["checkpoint"] = str(args.checkpoint)
    summary["seed"] = seed
    print_summary(summary)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "episodes.jsonl", "w") as fh:
            for i, rec in enumerate(records):
                fh.write(json.dumps(dict(rec.to_dict(), episode=i),
                                    sort_keys=True) + "\n")
        with open(out / "trajectories.jsonl", "w") as fh:
            for i, rec in enumerate(records):
                for row in rec.trace or []:
                    fh.write(json.dumps(dict(row, episode=i),
                                        sort_keys=True) + "\n")
        (out / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


def _emit_rows(rows, path) -> None:
    lines = [f"{epoch}\t{a}:{b}\t{value:.10f}"
             for epoch, a, b, value in rows]
    text = "epoch\tpair\tcosine\n" + "\n".join(lines) + "\n"
    if path:
        Path(path).write_text(text)
        print(f"wrote {len(rows)} rows to {path}")
    else:
        print(text, end="")


def cmd_diagnose(args) -> int:
    rows = []
    if args.run:
        log = Path(args.run) / "gradient_cosines.jsonl"
        if not log.exists():
            print(f"error: {log} not found", file=sys.stderr)
            return 1
        for line in log.read_text().splitlines():
            snap = json.loads(line)
            labels = snap["labels"]
            cos = snap["cosines"]
            for i in range(len(labels)):
                for j in range(i + 1, len(labels)):
                    rows.append((snap["epoch"], labels[i], labels[j],
                                 cos[i][j]))
    elif args.checkpoint:
        ck = load_checkpoint(args.checkpoint)
        cfg = ck.cfg
        if args.steps:
            cfg = apply_overrides(cfg, [f"steps_per_epoch={args.steps}"])
        if args.seed is not None:
            cfg = apply_overrides(cfg, [f"seed={args.seed}"])
        trainer = Trainer(cfg)
        trainer.restore(ck.params, ck.theta, ck.adam, ck.lagrange,
                        ck.epoch, ck.global_step)
        batch, _, _ = trainer.collect_batch()
        snap = gradient_conflict(batch, trainer.params, cfg.clip_epsilon,
                                 epoch=ck.epoch)
        for a, b, value in snap.pairs():
            rows.append((snap.epoch, a, b, value))
    else:
        print("error: diagnose needs --run or --checkpoint", file=sys.stderr)
        return 2
    if not rows:
        print("error: no gradient diagnostics found", file=sys.stderr)
        return 1
    _emit_rows(rows, args.emit_plot_data)
    return 0


def cmd_ablate(args) -> int:
    names = [v.strip() for v in args.variants.split(",")] if args.variants \
        else list(ABLATION_VARIANTS)
    unknown = [v for v in names if v not in ABLATION_VARIANTS]
    if unknown:
        print(f"error: unknown variants {unknown}; valid: "
              f"{sorted(ABLATION_VARIANTS)}", file=sys.stderr)
        return 2
    seeds = [int(s) for s in args.seeds.split(",")]
    root = Path(args.out) if args.out else default_out_root() / "ablation"
    root.mkdir(parents=True, exist_ok=True)

    jobs = []
    for variant in names:
        for seed in seeds:
            out_dir = root / variant / f"seed{seed}"
            cmd = [sys.executable, "-m", "crossgate", "train",
                   "--seed", str(seed), "--out", str(out_dir)]
            if args.config:
                cmd += ["--config", args.config]
            for ov in (args.set or []) + ABLATION_VARIANTS[variant]:
                cmd += ["--set", ov]
            jobs.append((variant, seed, out_dir, cmd))

    env = dict(os.environ, OPENBLAS_NUM_THREADS="1", OMP_NUM_THREADS="1")
    max_jobs = max(1, args.jobs)
    running: list[tuple] = []
    results = {}
    pending = list(jobs)

    def reap():
        for entry in list(running):
            variant, seed, out_dir, proc = entry
            code = proc.poll()
            if code is None:
                continue
            running.remove(entry)
            if code != 0:
                results[(variant, seed)] = None
                print(f"FAILED {variant} seed {seed} (exit {code})",
                      file=sys.stderr)
            else:
                results[(variant, seed)] = out_dir

    while pending or running:
        while pending and len(running) < max_jobs:
            variant, seed, out_dir, cmd = pending.pop(0)
            print(f"launch {variant} seed {seed}")
            proc = subprocess.Popen(cmd, env=env)
            running.append((variant, seed, out_dir, proc))
        reap()
        if running and (len(running) >= max_jobs or not pending):
            time.sleep(0.5)

    if any(v is None for v in results.values()):
        return 1

    rows = []
    for variant in names:
        for seed in seeds:
            out_dir = results[(variant, seed)]
            ck = load_checkpoint(out_dir / "checkpoints" / "final.ckpt")
            records = evaluate_policy(ck.params, ck.cfg, seed,
                                      args.episodes or ck.cfg.eval_episodes)
            s = summarize(records)
            rows.append({"variant": variant, "seed": seed,
                         "collision_rate_pct": s["collision_rate_pct"],
                         "mean_reward": s["episode_reward"]["mean"],
                         "success_rate_pct": s["success_rate_pct"],
                         "avg_risk": s["avg_risk"]["mean"]})

    tsv = root / "ablation_summary.tsv"
    with open(tsv, "w") as fh:
        cols = ["variant", "seed", "collision_rate_pct", "mean_reward",
                "success_rate_pct", "avg_risk"]
        fh.write("\t".join(cols) + "\n")
        for row in rows:
            fh.write("\t".join(str(row[c]) for c in cols) + "\n")

    print(f"\n{'variant':<15}{'CR %':>10}{'reward':>12}{'success %':>12}")
    for variant in names:
        sub = [r for r in rows if r["variant"] == variant]
        cr = np.mean([r["collision_rate_pct"] for r in sub])
        rw = np.mean([r["mean_reward"] for r in sub])
        sc = np.mean([r["success_rate_pct"] for r in sub])
        print(f"{variant:<15}{cr:>10.2f}{rw:>12.2f}{sc:>12.2f}")
    print(f"\nper-run table: {tsv}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="crossgate",
        description="Constraint-gated safe-RL training on a deterministic "
                    "intersection simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run training and write a run directory")
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable, dotted keys ok)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="run directory (default derived from config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--maneuver", choices=MANEUVERS)
    p.add_argument("--out", help="write episode records and traces here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diagnose",
                       help="emit gradient-conflict cosine series")
    p.add_argument("--run", help="existing run directory")
    p.add_argument("--checkpoint", help="collect a fresh batch instead")
    p.add_argument("--steps", type=int, help="batch size for fresh collection")
    p.add_argument("--seed", type=int)
    p.add_argument("--emit-plot-data", metavar="PATH",
                   help="write (epoch, pair, cosine) TSV here")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("ablate", help="train and compare config variants")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--variants", help="comma list, default all: "
                   + ",".join(ABLATION_VARIANTS))
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--episodes", type=int, help="eval episodes per run")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel training processes")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
