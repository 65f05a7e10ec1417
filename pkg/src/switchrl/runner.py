"""Experiment orchestration: offline runs, fine-tuning, and re-evaluation.

A run directory is self-describing: the dataset and its metadata, a
run_meta.json with the measured dataset spreads and the resolved switch
configuration, and one subdirectory per seed holding checkpoints,
training logs, and the three offline evaluation reports (BC-only,
RL-only, switched). Every artifact is deterministic in the config, so
reruns are byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .agents import (
    GaussianPolicy,
    Td3Hyper,
    Td3nAgent,
    load_checkpoint,
    save_checkpoint,
    train_offline,
)
from .data import (
    Dataset,
    ReplayBuffer,
    dataset_spread,
    generate_dataset,
    generate_stitch_dataset,
    load_dataset,
    normalized_length_std,
    normalized_return_std,
    save_dataset,
)
from .envs import ENV_IDS, make_env
from .finetune import FinetuneConfig, annealing_summary, finetune_run
from .nn import ConfigurationError
from .switching import MODES, SwitchConfig, evaluate

DATASET_TIERS = ("random", "medium", "expert", "medium-replay", "stitch")
SELECTOR_FILES = {"bc": "eval_bc.json", "rl": "eval_rl.json", "switched": "eval_switched.json"}

# defaults sized for a single CPU core: (64, 64) nets with batch 128
# train a 50k-step seed in ~6 minutes
EXPERIMENT_HIDDEN = (64, 64)
EXPERIMENT_BATCH = 128


@dataclass
class DatasetSpec:
    tier: str | None = None
    n_transitions: int = 40_000
    seed: int = 7
    path: str | None = None


@dataclass
class ExperimentConfig:
    env: str = "point-reach-dense"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    offline_steps: int = 50_000
    eval_episodes: int = 10
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    out_dir: str = "runs/run"
    agent: dict = field(default_factory=dict)
    switch: dict = field(default_factory=dict)
    finetune: dict = field(default_factory=dict)
    log_every: int = 1000

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        errors = validate_config_dict(raw)
        if errors:
            raise ConfigurationError("invalid config:\n  - " + "\n  - ".join(errors))
        raw = dict(raw)
        ds = raw.pop("dataset", {})
        return cls(dataset=DatasetSpec(**ds), **raw)

    def resolved_hyper(self) -> Td3Hyper:
        merged = dict(hidden=EXPERIMENT_HIDDEN, batch_size=EXPERIMENT_BATCH)
        merged.update(self.agent)
        merged["hidden"] = tuple(merged["hidden"])
        return Td3Hyper(**merged)

    def default_measure(self) -> str:
        return "lengths" if make_env(self.env).spec.reward_kind == "sparse" else "returns"


_KNOWN_KEYS = {"env", "dataset", "offline_steps", "eval_episodes", "seeds",
               "out_dir", "agent", "switch", "finetune", "log_every"}
_KNOWN_DATASET_KEYS = {"tier", "n_transitions", "seed", "path"}
_KNOWN_SWITCH_KEYS = {"penalty_cap", "sensitivity", "measure", "mode", "dataset_std"}


def validate_config_dict(raw: dict) -> list[str]:
    """Collect every problem before doing any work."""
    errors: list[str] = []
    if not isinstance(raw, dict):
        return ["config root must be a mapping"]
    for key in raw:
        if key not in _KNOWN_KEYS:
            errors.append(f"unknown key {key!r}")
    env = raw.get("env", "point-reach-dense")
    if env not in ENV_IDS:
        errors.append(f"unknown env {env!r}; known: {ENV_IDS}")
    ds = raw.get("dataset", {})
    if not isinstance(ds, dict):
        errors.append("dataset must be a mapping")
        ds = {}
    for key in ds:
        if key not in _KNOWN_DATASET_KEYS:
            errors.append(f"unknown dataset key {key!r}")
    tier, path = ds.get("tier"), ds.get("path")
    if tier is None and path is None:
        errors.append("dataset needs either a tier or a path")
    if tier is not None and tier not in DATASET_TIERS:
        errors.append(f"unknown dataset tier {tier!r}; known: {DATASET_TIERS}")
    if path is not None and not Path(path).exists():
        errors.append(f"dataset path does not exist: {path}")
    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        errors.append("seeds must be a non-empty list")
    elif not all(isinstance(s, int) for s in seeds):
        errors.append("seeds must be integers")
    if raw.get("offline_steps", 1) < 0:
        errors.append("offline_steps must be >= 0")
    if raw.get("eval_episodes", 1) < 1:
        errors.append("eval_episodes must be >= 1")
    switch = raw.get("switch", {})
    if not isinstance(switch, dict):
        errors.append("switch must be a mapping")
        switch = {}
    for key in switch:
        if key not in _KNOWN_SWITCH_KEYS:
            errors.append(f"unknown switch key {key!r}")
    if switch.get("mode", "adaptive") not in MODES:
        errors.append(f"switch mode must be one of {MODES}")
    if switch.get("penalty_cap", 0.0) < 0:
        errors.append("switch penalty_cap must be >= 0")
    finetune = raw.get("finetune", {})
    if not isinstance(finetune, dict):
        errors.append("finetune must be a mapping")
    else:
        try:
            FinetuneConfig(**finetune)
        except (ConfigurationError, TypeError) as exc:
            errors.append(f"finetune: {exc}")
    try:
        agent = raw.get("agent", {})
        if agent:
            merged = dict(hidden=EXPERIMENT_HIDDEN, batch_size=EXPERIMENT_BATCH)
            merged.update(agent)
            merged["hidden"] = tuple(merged["hidden"])
            Td3Hyper(**merged)
    except (ConfigurationError, TypeError) as exc:
        errors.append(f"agent: {exc}")
    return errors


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    ds = cfg.dataset
    if ds.path is not None:
        return load_dataset(ds.path)
    if ds.tier == "stitch":
        return generate_stitch_dataset(cfg.env, ds.n_transitions, ds.seed)
    return generate_dataset(cfg.env, ds.tier, ds.n_transitions, ds.seed)


def resolve_switch_config(cfg: ExperimentConfig, dataset: Dataset) -> SwitchConfig:
    """Fill the measured dataset spread into the switch settings."""
    switch = dict(cfg.switch)
    measure = switch.setdefault("measure", cfg.default_measure())
    if "sensitivity" not in switch:
        switch["sensitivity"] = 0.3 if measure == "lengths" else 0.1
    if "dataset_std" not in switch:
        horizon = make_env(cfg.env).spec.horizon
        switch["dataset_std"] = dataset_spread(dataset, measure, horizon)
    return SwitchConfig(**switch)


def _seed_rngs(seed: int):
    agent_seq, bc_seq = np.random.SeedSequence([seed, 0]).spawn(2)
    return np.random.default_rng(agent_seq), np.random.default_rng(bc_seq)


def _train_log_to_csv(log, path: Path) -> None:
    lines = ["step,critic_loss,actor_loss,bc_loss"]
    for row in log:
        lines.append(f"{row.step},{row.critic_loss!r},{row.actor_loss!r},{row.bc_loss!r}")
    path.write_text("\n".join(lines) + "\n")


def run_offline_seed(cfg: ExperimentConfig, dataset: Dataset, switch_cfg: SwitchConfig,
                     seed: int, seed_dir: Path) -> dict:
    """Train both policies on one seed and emit the three eval reports."""
    env = make_env(cfg.env)
    hyper = cfg.resolved_hyper()
    rng_agent, rng_bc = _seed_rngs(seed)
    agent = Td3nAgent(env.spec.state_dim, env.spec.action_dim, env.spec.action_bound,
                      hyper, rng_agent)
    bc = GaussianPolicy(env.spec.state_dim, env.spec.action_dim, env.spec.action_bound,
                        hyper.hidden, rng_bc, lr=hyper.bc_lr)
    buffer = ReplayBuffer.from_dataset(dataset)
    log = train_offline(agent, bc, buffer, cfg.offline_steps, seed, log_every=cfg.log_every)
    seed_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(seed_dir / "checkpoints", agent, bc)
    _train_log_to_csv(log, seed_dir / "train_log.csv")
    scores = {}
    for selector, filename in SELECTOR_FILES.items():
        report = evaluate(env, agent, bc, switch_cfg, cfg.eval_episodes, seed,
                          selector=selector)
        (seed_dir / filename).write_text(report.to_json())
        scores[selector] = report.mean_normalized
    return scores


def run_offline_experiment(cfg: ExperimentConfig, echo_config: dict | None = None) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(cfg)
    save_dataset(dataset, out / "dataset.jsonl")
    switch_cfg = resolve_switch_config(cfg, dataset)
    horizon = make_env(cfg.env).spec.horizon
    meta = {
        "env_id": cfg.env,
        "dataset": {
            "tier": dataset.meta.tier,
            "seed": dataset.meta.seed,
            "n_transitions": dataset.meta.n_transitions,
            "n_trajectories": dataset.meta.n_trajectories,
        },
        "sigma_returns": normalized_return_std(dataset),
        "sigma_lengths": normalized_length_std(dataset, horizon),
        "switch": asdict(switch_cfg),
        "offline_steps": cfg.offline_steps,
        "eval_episodes": cfg.eval_episodes,
        "seeds": list(cfg.seeds),
    }
    (out / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if echo_config is not None:
        (out / "config.json").write_text(json.dumps(echo_config, indent=2, sort_keys=True) + "\n")
    for seed in cfg.seeds:
        run_offline_seed(cfg, dataset, switch_cfg, seed, out / f"seed_{seed}")
    return out


def load_run_meta(run_dir) -> dict:
    meta_path = Path(run_dir) / "run_meta.json"
    if not meta_path.exists():
        raise ConfigurationError(f"missing run metadata: {meta_path}")
    return json.loads(meta_path.read_text())


def run_seed_dirs(run_dir) -> list[tuple[int, Path]]:
    meta = load_run_meta(run_dir)
    out = []
    for seed in meta["seeds"]:
        seed_dir = Path(run_dir) / f"seed_{seed}"
        if not seed_dir.exists():
            raise ConfigurationError(f"missing seed directory: {seed_dir}")
        out.append((seed, seed_dir))
    return out


def run_finetune_experiment(run_dir, finetune_cfg: dict | FinetuneConfig | None = None) -> Path:
    """Fine-tune every seed of an offline run in place."""
    run_dir = Path(run_dir)
    meta = load_run_meta(run_dir)
    env = make_env(meta["env_id"])
    switch_cfg = SwitchConfig(**meta["switch"])
    dataset = load_dataset(run_dir / "dataset.jsonl")
    base = finetune_cfg if isinstance(finetune_cfg, dict) else (
        asdict(finetune_cfg) if finetune_cfg else {})
    for seed, seed_dir in run_seed_dirs(run_dir):
        agent, bc = load_checkpoint(seed_dir / "checkpoints")
        buffer = ReplayBuffer.from_dataset(dataset)
        cfg = FinetuneConfig(**{**base, "seed": seed})
        agent, log = finetune_run(agent, bc, env, buffer, cfg, switch_cfg)
        log.to_csv(seed_dir / "finetune_log.csv")
        summary = annealing_summary(log) if len(log) >= 10 else None
        if summary is not None:
            (seed_dir / "annealing.json").write_text(
                json.dumps(asdict(summary), indent=2, sort_keys=True) + "\n")
        save_checkpoint(seed_dir / "checkpoints_finetuned", agent, bc)
    return run_dir


def reevaluate_run(run_dir, selector: str = "switched", episodes: int | None = None,
                   switch_overrides: dict | None = None) -> list[float]:
    """Fresh per-seed evaluation from checkpoints; never writes anything."""
    run_dir = Path(run_dir)
    meta = load_run_meta(run_dir)
    env = make_env(meta["env_id"])
    switch = dict(meta["switch"])
    if switch_overrides:
        switch.update(switch_overrides)
    switch_cfg = SwitchConfig(**switch)
    episodes = episodes or meta["eval_episodes"]
    scores = []
    for seed, seed_dir in run_seed_dirs(run_dir):
        agent, bc = load_checkpoint(seed_dir / "checkpoints")
        report = evaluate(env, agent, bc, switch_cfg, episodes, seed, selector=selector)
        scores.append(report.mean_normalized)
    return scores
