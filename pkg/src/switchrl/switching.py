"""Evaluation-time policy switching.

At every step both policies propose an action. The RL candidate is
scored pessimistically: the ensemble-median value minus a penalty that
scales the ensemble disagreement (epistemic uncertainty) by how narrow
the training data was (aleatoric spread). The BC candidate is scored by
its median value alone; the RL action wins ties. Nothing here touches
training: the rule only reads trained parameters.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from math import exp

import numpy as np

from .agents import GaussianPolicy, Td3nAgent
from .envs import PointEnv, normalized_score
from .nn import ConfigurationError

MEASURES = ("returns", "lengths")
MODES = ("adaptive", "fixed_half")
SELECTORS = ("switched", "rl", "bc")


@dataclass
class SwitchConfig:
    """Knobs of the uncertainty penalty.

    penalty_cap bounds the penalty multiplier, sensitivity sets how fast
    it rises as dataset_std (the measured spread of the training data)
    shrinks, and mode 'fixed_half' pins the multiplier at half the cap
    regardless of the data.
    """

    penalty_cap: float = 4.0
    sensitivity: float = 0.1
    dataset_std: float = 0.0
    measure: str = "returns"
    mode: str = "adaptive"

    def __post_init__(self) -> None:
        if self.penalty_cap < 0.0:
            raise ConfigurationError("penalty_cap must be >= 0")
        if self.sensitivity <= 0.0:
            raise ConfigurationError("sensitivity must be > 0")
        if self.dataset_std < 0.0:
            raise ConfigurationError("dataset_std must be >= 0")
        if self.measure not in MEASURES:
            raise ConfigurationError(f"measure must be one of {MEASURES}")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")


def penalty_scale(cfg: SwitchConfig) -> float:
    """Penalty multiplier in [0, cap]: cap * (1 - exp(-sensitivity/spread)).

    Strictly decreasing in the dataset spread; the spread-zero limit is
    the cap itself. In fixed_half mode the data is ignored and the
    multiplier is cap/2.
    """
    if cfg.mode == "fixed_half":
        return cfg.penalty_cap / 2.0
    if cfg.dataset_std == 0.0:
        return cfg.penalty_cap
    return cfg.penalty_cap * (1.0 - exp(-cfg.sensitivity / cfg.dataset_std))


def ensemble_std(ensemble, state, action) -> float:
    """Population standard deviation of the online critic values."""
    if ensemble.n < 2:
        raise ConfigurationError("uncertainty needs at least 2 critics")
    return float(np.std(ensemble.values(state, action)))


def ensemble_median(ensemble, state, action) -> float:
    """Median critic value; for even ensembles the mean of the middle two."""
    return float(np.median(ensemble.values(state, action)))


@dataclass
class SwitchDecision:
    action: np.ndarray
    used_bc: bool
    q_rl: float  # penalized value of the RL candidate
    q_bc: float  # median value of the BC candidate
    ensemble_std: float  # critic disagreement at the RL candidate


def select_action(agent: Td3nAgent, bc: GaussianPolicy, state, cfg: SwitchConfig) -> SwitchDecision:
    """Pick between the two candidate actions for one state."""
    a_rl = agent.action(state)
    a_bc = bc.action(state)
    vals_rl = agent.ensemble.values(state, a_rl)
    sigma = float(np.std(vals_rl))
    q_rl = float(np.median(vals_rl)) - penalty_scale(cfg) * sigma
    q_bc = float(np.median(agent.ensemble.values(state, a_bc)))
    used_bc = not q_rl >= q_bc
    return SwitchDecision(
        action=a_bc if used_bc else a_rl,
        used_bc=used_bc,
        q_rl=q_rl,
        q_bc=q_bc,
        ensemble_std=sigma,
    )


@dataclass
class EvalReport:
    env_id: str
    selector: str
    n_episodes: int
    seed: int
    episode_returns: list[float]
    normalized_scores: list[float]
    episode_bc_proportions: list[float]
    episode_sigma_means: list[float]
    episode_lengths: list[int]
    mean_return: float
    return_ci95: float
    mean_normalized: float
    normalized_ci95: float
    bc_proportion: float
    sigma_q_mean: float
    switch_config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def ci95(values) -> float:
    """Normal-approximation 95% half-width; 0 for fewer than 2 samples."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < 2:
        return 0.0
    return float(1.96 * arr.std(ddof=1) / np.sqrt(arr.size))


def evaluate(env: PointEnv, agent: Td3nAgent, bc: GaussianPolicy, cfg: SwitchConfig,
             n_episodes: int, seed: int, selector: str = "switched") -> EvalReport:
    """Roll out noise-free episodes under the chosen selector.

    'switched' applies the decision rule each step; 'rl' and 'bc' run a
    single policy (their reports make the selector columns comparable).
    Deterministic given (parameters, seed).
    """
    if selector not in SELECTORS:
        raise ConfigurationError(f"selector must be one of {SELECTORS}")
    episode_seqs = np.random.SeedSequence([seed]).spawn(n_episodes)
    returns, scores, bc_props, sigma_means, lengths = [], [], [], [], []
    for ep in range(n_episodes):
        state = env.reset(episode_seqs[ep])
        total = 0.0
        used = 0
        sigmas = []
        steps = 0
        done = False
        while not done:
            obs = env.observe(state)
            if selector == "switched":
                decision = select_action(agent, bc, obs, cfg)
                action = decision.action
                used += decision.used_bc
                sigmas.append(decision.ensemble_std)
            elif selector == "rl":
                action = agent.action(obs)
                sigmas.append(ensemble_std(agent.ensemble, obs, action))
            else:
                action = bc.action(obs)
                used += 1
                sigmas.append(ensemble_std(agent.ensemble, obs, action))
            state, reward, done = env.step(state, action)
            total += reward
            steps += 1
        returns.append(total)
        scores.append(normalized_score(env.spec, total))
        bc_props.append(used / steps)
        sigma_means.append(float(np.mean(sigmas)))
        lengths.append(steps)
    return EvalReport(
        env_id=env.spec.id,
        selector=selector,
        n_episodes=n_episodes,
        seed=seed,
        episode_returns=returns,
        normalized_scores=scores,
        episode_bc_proportions=bc_props,
        episode_sigma_means=sigma_means,
        episode_lengths=lengths,
        mean_return=float(np.mean(returns)),
        return_ci95=ci95(returns),
        mean_normalized=float(np.mean(scores)),
        normalized_ci95=ci95(scores),
        bc_proportion=float(np.mean(bc_props)),
        sigma_q_mean=float(np.mean(sigma_means)),
        switch_config=asdict(cfg),
    )
