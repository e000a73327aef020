"""Run configuration: a flat JSON mapping with dotted keys for module
overrides (e.g. "trust.delta"). Unknown keys are rejected by name so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from esbcpo import adaptation
from esbcpo.cmdp import CmdpConfig
from esbcpo.trainer import ALGORITHMS, AlgoConfig, TrustConfig

DEFAULTS = {
    "algorithm": "esb-cpo",
    "environment": "point-circle",
    "seeds": [0, 1, 2, 3, 4],
    "epochs": 100,
    "steps_per_epoch": 1000,
    "cost_limit": 25.0,
    "output_dir": "runs/run",
    "checkpoint_every": 50,
    "log_trajectories": False,
    "gae_lambda": 0.95,
    "cmdp.gamma": 0.99,
    "cmdp.horizon": 0,  # 0 = environment default
    "policy.hidden": [64, 64],
    "policy.logstd_init": -0.5,
    "critic.epochs": 80,
    "critic.lr": 1e-3,
    "trust.delta": 0.01,
    "trust.cg_iters": 20,
    "trust.cg_tol": 1e-8,
    "trust.damping": 0.1,
    "trust.backtrack_ratio": 0.8,
    "trust.max_backtracks": 10,
    "adaptation.k": 0.01,
    "adaptation.eta": 0.01,
    "adaptation.lambda_init": 5.0,
    "lagrangian.eta": 0.05,
    "lagrangian.init": 0.0,
}

OUTPUT_ROOT_ENV = "ESBCPO_OUTPUT_ROOT"


@dataclass(frozen=True)
class RunConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = dict(DEFAULTS)
        for key, val in self.values.items():
            if key not in DEFAULTS:
                raise ValueError(f"invalid config key: {key!r}")
            merged[key] = val
        if merged["algorithm"] not in ALGORITHMS:
            raise ValueError(f"invalid config value for 'algorithm': {merged['algorithm']!r}")
        seeds = list(merged["seeds"])
        if not seeds or len(set(seeds)) != len(seeds):
            raise ValueError("seeds must be non-empty and distinct")
        merged["seeds"] = seeds
        object.__setattr__(self, "values", merged)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def output_dir(self) -> str:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        out = self.values["output_dir"]
        if root and not os.path.isabs(out):
            return os.path.join(root, out)
        return out

    def with_overrides(self, **kv) -> "RunConfig":
        merged = dict(self.values)
        merged.update(kv)
        return RunConfig(merged)

    def horizon(self, spec_default: int) -> int:
        h = int(self.values["cmdp.horizon"])
        return h if h > 0 else spec_default

    def algo_config(self, spec_default_horizon: int) -> AlgoConfig:
        v = self.values
        return AlgoConfig(
            algorithm=v["algorithm"],
            steps_per_epoch=int(v["steps_per_epoch"]),
            epochs=int(v["epochs"]),
            gae_lambda=float(v["gae_lambda"]),
            cmdp=CmdpConfig(float(v["cmdp.gamma"]), float(v["cost_limit"]), self.horizon(spec_default_horizon)),
            trust=TrustConfig(
                delta=float(v["trust.delta"]),
                cg_iters=int(v["trust.cg_iters"]),
                cg_tol=float(v["trust.cg_tol"]),
                damping=float(v["trust.damping"]),
                backtrack_ratio=float(v["trust.backtrack_ratio"]),
                max_backtracks=int(v["trust.max_backtracks"]),
            ),
            adaptation=adaptation.AlphaState(
                float(v["adaptation.lambda_init"]), float(v["adaptation.k"]), float(v["adaptation.eta"])
            ),
            hidden=tuple(v["policy.hidden"]),
            logstd_init=float(v["policy.logstd_init"]),
            critic_epochs=int(v["critic.epochs"]),
            critic_lr=float(v["critic.lr"]),
            lagrangian_eta=float(v["lagrangian.eta"]),
            lagrangian_init=float(v["lagrangian.init"]),
        )


def load_config(path) -> RunConfig:
    """Load a flat config file, or a run manifest (its "config" entry)."""
    with open(path) as fh:
        data = json.load(fh)
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]
    return RunConfig(data)


def parse_override(key: str, raw: str):
    """Parse a key=value override using the default's type as the schema."""
    if key not in DEFAULTS:
        raise ValueError(f"invalid config key: {key!r}")
    default = DEFAULTS[key]
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, list):
        return json.loads(raw) if raw.startswith("[") else [json.loads(x) for x in raw.split(",")]
    return raw
