"""Experiment harness CLI: `train`, `ablation`, `compare`, `replay`.

Each seed runs as an independent worker writing only its own files; the
cross-seed merge happens after all seeds complete. Artifacts per run:
a JSON manifest (resolved config + version), one metrics CSV per seed,
a merged mean/std CSV, and parameter checkpoints.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor

import numpy as np

import esbcpo
from esbcpo import envs, policy as pol, trainer
from esbcpo.cmdp import load_transition_records, save_trajectories
from esbcpo.config import RunConfig, load_config, parse_override
from esbcpo.trainer import EpochMetrics

CSV_COMMENT = "# columns: " + ",".join(EpochMetrics.COLUMNS)


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def write_metrics_csv(path, history) -> None:
    with open(path, "w") as fh:
        fh.write(CSV_COMMENT + "\n")
        fh.write(",".join(EpochMetrics.COLUMNS) + "\n")
        for m in history:
            fh.write(",".join(_fmt(x) for x in m.row()) + "\n")


def read_metrics_csv(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    names = lines[0].split(",")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    if data.size == 0:
        raise ValueError(f"no data rows in {path}")
    return {name: data[:, i] for i, name in enumerate(names)}


def _seed_worker(values: dict, seed: int) -> str:
    """Train one seed and write its artifacts; returns the seed directory."""
    config = RunConfig(values)
    spec = envs.get_spec(config["environment"])
    algo_cfg = config.algo_config(spec.default_horizon)
    seed_dir = os.path.join(config.output_dir, f"seed_{seed}")
    os.makedirs(seed_dir, exist_ok=True)
    every = int(config["checkpoint_every"])

    def on_epoch(state, metrics):
        if every > 0 and state.epoch % every == 0:
            pol.save_checkpoint(os.path.join(seed_dir, f"checkpoint_{state.epoch}.bin"), state.policy, state.critics)

    state, history = trainer.train(algo_cfg, spec, seed, on_epoch)
    write_metrics_csv(os.path.join(seed_dir, "metrics.csv"), history)
    pol.save_checkpoint(os.path.join(seed_dir, "checkpoint_final.bin"), state.policy, state.critics)
    if config["log_trajectories"]:
        horizon = config.horizon(spec.default_horizon)
        trajs = envs.rollout(state.policy, spec, seed, horizon, horizon)
        save_trajectories(trajs, os.path.join(seed_dir, "trajectories.csv"))
    return seed_dir


def merge_seed_metrics(run_dir: str, seeds) -> str:
    """Write merged.csv: per-epoch mean and std of every column across seeds."""
    tables = [read_metrics_csv(os.path.join(run_dir, f"seed_{s}", "metrics.csv")) for s in seeds]
    cols = [c for c in EpochMetrics.COLUMNS if c != "epoch"]
    out = os.path.join(run_dir, "merged.csv")
    n_epochs = len(tables[0]["epoch"])
    with open(out, "w") as fh:
        header = ["epoch"] + [f"{c}_{suffix}" for c in cols for suffix in ("mean", "std")]
        fh.write("# columns: " + ",".join(header) + "\n")
        fh.write(",".join(header) + "\n")
        for e in range(n_epochs):
            row = [str(int(tables[0]["epoch"][e]))]
            for c in cols:
                vals = np.array([t[c][e] for t in tables])
                row += [repr(float(vals.mean())), repr(float(vals.std()))]
            fh.write(",".join(row) + "\n")
    return out


def run(config: RunConfig) -> str:
    """Full multi-seed run; returns the run directory."""
    run_dir = config.output_dir
    os.makedirs(run_dir, exist_ok=True)
    manifest = {"version": esbcpo.__version__, "config": config.values}
    with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    seeds = config["seeds"]
    try:
        if len(seeds) == 1:
            _seed_worker(config.values, seeds[0])
        else:
            workers = min(len(seeds), os.cpu_count() or 1)
            with ProcessPoolExecutor(max_workers=workers) as ex:
                futures = [ex.submit(_seed_worker, config.values, s) for s in seeds]
                for f in futures:
                    f.result()
        merge_seed_metrics(run_dir, seeds)
    except BaseException as exc:
        with open(os.path.join(run_dir, "FAILED"), "w") as fh:
            fh.write(f"{type(exc).__name__}: {exc}\n")
        raise
    return run_dir


ABLATION_VARIANTS = ("cpo", "esb-cpo-g1", "esb-cpo")


def ablation(config: RunConfig) -> dict[str, str]:
    """Three sub-runs (no budgets / stability budget only / full) sharing
    seeds and initial parameters, under one ablation directory.
    """
    base_dir = config.output_dir
    out = {}
    for variant in ABLATION_VARIANTS:
        sub = config.with_overrides(
            **{"algorithm": variant, "output_dir": os.path.join(base_dir, variant)}
        )
        out[variant] = run(sub)
    return out


def final_window_stats(run_dir: str, window: int = 100):
    merged = read_metrics_csv(os.path.join(run_dir, "merged.csv"))
    w = min(window, len(merged["epoch"]))
    return float(merged["avg_return_mean"][-w:].mean()), float(merged["avg_cost_mean"][-w:].mean())


def compare(run_dirs, output_path) -> str:
    """Tabulate final-window mean return/cost and limit satisfaction across
    completed runs on the same environment.
    """
    if len(run_dirs) < 2:
        raise ValueError("need at least 2 run directories to compare")
    rows = []
    env_seen = None
    for rd in run_dirs:
        manifest_path = os.path.join(rd, "manifest.json")
        if not os.path.exists(manifest_path):
            raise ValueError(f"not a completed run directory (no manifest): {rd}")
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        cfg = manifest["config"]
        if env_seen is None:
            env_seen = cfg["environment"]
        elif cfg["environment"] != env_seen:
            raise ValueError(
                f"environment mismatch: {rd} ran {cfg['environment']!r}, expected {env_seen!r}"
            )
        ret, cost = final_window_stats(rd)
        rows.append((cfg["algorithm"], ret, cost, int(cost <= float(cfg["cost_limit"]))))
    with open(output_path, "w") as fh:
        fh.write("# columns: algorithm,final_return,final_cost,within_limit\n")
        fh.write("algorithm,final_return,final_cost,within_limit\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]!r},{r[2]!r},{r[3]}\n")
    return output_path


def replay(traj_path: str, environment: str) -> tuple[int, int]:
    """Verify logged costs against the hazard indicator recomputed from the
    logged successor observations. Returns (checked, mismatched); the last
    transition of each episode has no logged successor and is skipped.
    """
    spec = envs.get_spec(environment)
    records = list(load_transition_records(traj_path, spec.obs_dim, 1 if not spec.continuous else spec.act_dim))
    checked = mismatched = 0
    for (ep, step, _s, _a, _r, cost, _t), nxt in zip(records, records[1:]):
        if nxt[0] != ep:
            continue
        expected = envs.cost_from_observation(environment, nxt[2])
        checked += 1
        if expected != cost:
            mismatched += 1
    return checked, mismatched


def _add_common_flags(p):
    p.add_argument("--config", help="flat JSON config file (or a run manifest)")
    p.add_argument("--algorithm")
    p.add_argument("--environment")
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps-per-epoch", type=int, dest="steps_per_epoch")
    p.add_argument("--cost-limit", type=float, dest="cost_limit")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. --set trust.delta=0.02")


def _config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig({})
    overrides = {}
    for flag in ("algorithm", "environment", "epochs", "steps_per_epoch", "cost_limit", "output_dir"):
        val = getattr(args, flag, None)
        if val is not None:
            overrides[flag] = val
    if getattr(args, "seeds", None):
        overrides["seeds"] = [int(x) for x in args.seeds.split(",")]
    for item in args.set:
        key, _, raw = item.partition("=")
        overrides[key] = parse_override(key, raw)
    return cfg.with_overrides(**overrides) if overrides else cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="esbcpo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="multi-seed training run")
    _add_common_flags(p_train)
    p_abl = sub.add_parser("ablation", help="run the cpo / g1-only / full variants")
    _add_common_flags(p_abl)
    p_cmp = sub.add_parser("compare", help="tabulate completed runs")
    p_cmp.add_argument("run_dirs", nargs="+")
    p_cmp.add_argument("--output", default="comparison.csv")
    p_rep = sub.add_parser("replay", help="verify costs in a logged trajectory file")
    p_rep.add_argument("trajectories")
    p_rep.add_argument("--environment", required=True)

    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            out = run(_config_from_args(args))
            print(f"run complete: {out}")
        elif args.command == "ablation":
            dirs = ablation(_config_from_args(args))
            print("ablation complete: " + ", ".join(dirs.values()))
        elif args.command == "compare":
            out = compare(args.run_dirs, args.output)
            print(f"comparison written: {out}")
        elif args.command == "replay":
            checked, mismatched = replay(args.trajectories, args.environment)
            if mismatched:
                print(f"replay FAILED: {mismatched}/{checked} cost mismatches", file=sys.stderr)
                return 1
            print(f"replay ok: {checked} costs verified")
        return 0
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        if os.environ.get("ESBCPO_DEBUG"):
            traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
