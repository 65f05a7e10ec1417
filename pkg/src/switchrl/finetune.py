"""Offline-to-online fine-tuning.

Only the RL agent keeps learning: the switch keeps choosing between it
and the frozen BC policy at every environment step, new transitions
overwrite the oldest offline samples in place (so the offline fraction
decays as 1 - steps/capacity with no mixing knob), and critic targets
take the minimum over a random pair of members instead of the whole
ensemble. BC usage falls on its own as fresh data shrinks the ensemble
disagreement.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agents import GaussianPolicy, Td3nAgent
from .data import ReplayBuffer
from .envs import PointEnv
from .nn import ConfigurationError
from .switching import SwitchConfig, ci95, evaluate, select_action

CSV_COLUMNS = (
    "env_step",
    "eval_return_mean",
    "eval_return_ci95",
    "normalized_score",
    "bc_proportion",
    "sigma_q_mean",
    "critic_loss",
    "actor_loss",
)


@dataclass
class FinetuneConfig:
    online_steps: int = 25_000
    eval_every: int = 1_000
    warmup_steps: int = 0
    updates_per_env_step: int = 1
    eval_episodes: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.online_steps < 0:
            raise ConfigurationError("online_steps must be >= 0")
        if self.eval_every < 1:
            raise ConfigurationError("eval_every must be >= 1")
        if self.online_steps > 0 and self.eval_every > self.online_steps:
            raise ConfigurationError("eval_every must not exceed online_steps")
        if self.warmup_steps < 0:
            raise ConfigurationError("warmup_steps must be >= 0")
        if self.updates_per_env_step < 1:
            raise ConfigurationError("updates_per_env_step must be >= 1")


@dataclass
class MetricsRecord:
    env_step: int
    eval_return_mean: float
    eval_return_ci95: float
    normalized_score: float
    bc_proportion: float
    sigma_q_mean: float
    critic_loss: float
    actor_loss: float


@dataclass
class FinetuneLog:
    records: list[MetricsRecord]

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for rec in self.records:
                writer.writerow([repr(getattr(rec, c)) if c != "env_step" else rec.env_step
                                 for c in CSV_COLUMNS])

    @classmethod
    def from_csv(cls, path) -> "FinetuneLog":
        records = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
                raise ConfigurationError(f"{path}: unexpected columns {reader.fieldnames}")
            for row in reader:
                records.append(MetricsRecord(
                    env_step=int(row["env_step"]),
                    **{c: float(row[c]) for c in CSV_COLUMNS[1:]},
                ))
        return cls(records)


@dataclass
class AnnealingSummary:
    bc_first_decile_mean: float
    bc_last_decile_mean: float
    sigma_first_decile_mean: float
    sigma_last_decile_mean: float


def annealing_summary(log: FinetuneLog) -> AnnealingSummary:
    """Decile means of BC usage and ensemble disagreement at the two ends
    of the evaluation series."""
    n = len(log.records)
    if n < 10:
        raise ConfigurationError(f"need at least 10 evaluation points, got {n}")
    k = n // 10
    first, last = log.records[:k], log.records[-k:]
    return AnnealingSummary(
        bc_first_decile_mean=float(np.mean([r.bc_proportion for r in first])),
        bc_last_decile_mean=float(np.mean([r.bc_proportion for r in last])),
        sigma_first_decile_mean=float(np.mean([r.sigma_q_mean for r in first])),
        sigma_last_decile_mean=float(np.mean([r.sigma_q_mean for r in last])),
    )


def finetune_run(
    agent: Td3nAgent,
    bc: GaussianPolicy,
    env: PointEnv,
    buffer: ReplayBuffer,
    cfg: FinetuneConfig,
    switch_cfg: SwitchConfig,
) -> tuple[Td3nAgent, FinetuneLog]:
    """Online fine-tuning loop; returns the updated agent and the metrics
    series (one row per periodic evaluation, the first at step 0).

    The switch uses the same config as offline evaluation. Exploration
    noise is added only when the RL action wins; BC actions run clean,
    and the periodic evaluations are always noise-free. BC parameters
    are never written.
    """
    root = np.random.SeedSequence([cfg.seed])
    update_seq, explore_seq, episode_root, eval_root = root.spawn(4)
    rng_update = np.random.default_rng(update_seq)
    rng_explore = np.random.default_rng(explore_seq)
    n_evals = (cfg.online_steps // cfg.eval_every if cfg.online_steps else 0) + 1
    eval_seeds = [int(s.generate_state(1)[0]) for s in eval_root.spawn(n_evals)]
    episode_seqs = iter(episode_root.spawn(cfg.online_steps + 1))

    def run_eval(step, critic_loss, actor_loss, eval_idx) -> MetricsRecord:
        report = evaluate(env, agent, bc, switch_cfg,
                          n_episodes=cfg.eval_episodes, seed=eval_seeds[eval_idx])
        return MetricsRecord(
            env_step=step,
            eval_return_mean=report.mean_return,
            eval_return_ci95=report.return_ci95,
            normalized_score=report.mean_normalized,
            bc_proportion=report.bc_proportion,
            sigma_q_mean=report.sigma_q_mean,
            critic_loss=critic_loss,
            actor_loss=actor_loss,
        )

    records = [run_eval(0, float("nan"), float("nan"), 0)]
    if cfg.online_steps == 0:
        return agent, FinetuneLog(records)

    state = env.reset(next(episode_seqs))
    critic_losses: list[float] = []
    actor_losses: list[float] = []
    eval_idx = 1
    for step in range(1, cfg.online_steps + 1):
        obs = env.observe(state)
        decision = select_action(agent, bc, obs, switch_cfg)
        action = decision.action
        if not decision.used_bc:
            noise = rng_explore.normal(0.0, agent.hyper.exploration_noise_std,
                                       size=action.shape)
            action = np.clip(action + noise, -agent.action_bound, agent.action_bound)
        state, reward, done = env.step(state, action)
        buffer.insert(obs, action, reward, env.observe(state),
                      env.is_terminal(reward, done))
        if step > cfg.warmup_steps:
            for _ in range(cfg.updates_per_env_step):
                batch = buffer.sample(agent.hyper.batch_size, rng_update)
                closs, aloss = agent.update(batch, "min_random2", rng_update)
                critic_losses.append(closs)
                if aloss is not None:
                    actor_losses.append(aloss)
        if done:
            state = env.reset(next(episode_seqs))
        if step % cfg.eval_every == 0:
            records.append(run_eval(
                step,
                float(np.mean(critic_losses)) if critic_losses else float("nan"),
                float(np.mean(actor_losses)) if actor_losses else float("nan"),
                eval_idx,
            ))
            eval_idx += 1
            critic_losses.clear()
            actor_losses.clear()
    return agent, FinetuneLog(records)
