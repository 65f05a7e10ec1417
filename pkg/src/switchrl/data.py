"""Datasets, scripted collection controllers, and replay storage.

Dataset quality tiers come from proportional-derivative waypoint
controllers at different noise levels rather than pre-trained policies,
which keeps generation deterministic and fast while preserving the
narrow-vs-diverse axis the training pipeline cares about. Also home to
the two dataset-spread statistics (normalized stds of returns and of
trajectory lengths) and the FIFO replay buffer whose offline contents
are overwritten from slot zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs import MAZE_WAYPOINTS, PointEnv, make_env
from .nn import ConfigurationError

GENERATOR_VERSION = "1"

TIERS = ("random", "medium", "expert", "medium-replay")

# controller gains, shared by every tier that steers
PD_KP = 4.0
PD_KD = 2.0
WAYPOINT_RADIUS = 0.35


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool
    trajectory_id: int


@dataclass
class Trajectory:
    transitions: list[Transition]

    @property
    def length(self) -> int:
        return len(self.transitions)

    @property
    def total_reward(self) -> float:
        return float(sum(t.reward for t in self.transitions))


@dataclass
class DatasetMeta:
    env_id: str
    tier: str
    seed: int
    generator_version: str = GENERATOR_VERSION
    n_transitions: int = 0
    n_trajectories: int = 0


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    meta: DatasetMeta

    @property
    def n_transitions(self) -> int:
        return sum(t.length for t in self.trajectories)

    def iter_transitions(self):
        for traj in self.trajectories:
            yield from traj.transitions

    def validate(self) -> None:
        for traj in self.trajectories:
            for k, tr in enumerate(traj.transitions):
                if k + 1 < traj.length:
                    if tr.done:
                        raise ConfigurationError("done=True before trajectory end")
                    nxt = traj.transitions[k + 1]
                    if not np.array_equal(tr.next_state, nxt.state):
                        raise ConfigurationError("broken next_state chain")
                if not np.isfinite(tr.reward):
                    raise ConfigurationError("non-finite reward")


def pd_action(position, velocity, target, bound, kp=PD_KP, kd=PD_KD):
    a = kp * (np.asarray(target) - position) - kd * velocity
    return np.clip(a, -bound, bound)


class ScriptedController:
    """PD waypoint follower with Gaussian action noise and occasional
    uniform random actions."""

    def __init__(self, waypoints, bound, noise_std=0.0, random_prob=0.0, rng=None):
        self.waypoints = [np.asarray(w, dtype=np.float64) for w in waypoints]
        self.bound = float(bound)
        self.noise_std = float(noise_std)
        self.random_prob = float(random_prob)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._wp = 0

    def reset(self) -> None:
        self._wp = 0

    def action(self, position, velocity) -> np.ndarray:
        while (self._wp + 1 < len(self.waypoints)
               and np.linalg.norm(position - self.waypoints[self._wp]) < WAYPOINT_RADIUS):
            self._wp += 1
        if self.random_prob > 0.0 and self.rng.uniform() < self.random_prob:
            return self.rng.uniform(-self.bound, self.bound, size=2)
        a = pd_action(position, velocity, self.waypoints[self._wp], self.bound)
        if self.noise_std > 0.0:
            a = a + self.rng.normal(0.0, self.noise_std, size=2)
        return np.clip(a, -self.bound, self.bound)


class RandomController:
    def __init__(self, bound, rng):
        self.bound = float(bound)
        self.rng = rng

    def reset(self) -> None:
        pass

    def action(self, position, velocity) -> np.ndarray:
        return self.rng.uniform(-self.bound, self.bound, size=2)


def route_for(env: PointEnv) -> list[np.ndarray]:
    """Waypoint route for the scripted controllers: straight at the goal
    for open arenas, around the wall for the maze."""
    if env.walls:
        return [np.asarray(w) for w in MAZE_WAYPOINTS] + [env.goal]
    return [env.goal]


def _make_controller(env: PointEnv, tier: str, noise_std: float, rng) -> object:
    if tier == "random":
        return RandomController(env.spec.action_bound, rng)
    random_prob = 0.2 if tier == "medium" else 0.0
    return ScriptedController(
        route_for(env), env.spec.action_bound,
        noise_std=noise_std, random_prob=random_prob, rng=rng,
    )


def _run_episode(env: PointEnv, controller, reset_seed, trajectory_id: int) -> Trajectory:
    state = env.reset(reset_seed)
    controller.reset()
    transitions: list[Transition] = []
    done = False
    while not done:
        obs = env.observe(state)
        action = np.asarray(controller.action(state.position, state.velocity), dtype=np.float64)
        state, reward, done = env.step(state, action)
        transitions.append(Transition(
            state=obs,
            action=np.clip(action, -env.spec.action_bound, env.spec.action_bound),
            reward=reward,
            next_state=env.observe(state),
            done=env.is_terminal(reward, done),
            trajectory_id=trajectory_id,
        ))
    return Trajectory(transitions)


def _episode_streams(seed: int, episode: int):
    reset_seq, ctrl_seq = np.random.SeedSequence([seed, episode]).spawn(2)
    return reset_seq, np.random.default_rng(ctrl_seq)


def generate_dataset(env_id: str, tier: str, n_transitions: int, seed: int) -> Dataset:
    """Collect full trajectories until at least n_transitions are stored.

    Deterministic in (tier, seed). Tier noise levels: expert 0.05,
    medium 0.4 (plus 20% uniform random steps), medium-replay anneals
    the noise std from 1.0 down to 0.4 across the collection run.
    """
    if tier not in TIERS:
        raise ConfigurationError(f"unknown tier {tier!r}; known: {TIERS}")
    env = make_env(env_id)
    if n_transitions < env.spec.horizon:
        raise ConfigurationError("n_transitions must cover at least one horizon")
    trajectories: list[Trajectory] = []
    total = 0
    episode = 0
    while total < n_transitions:
        reset_seq, ctrl_rng = _episode_streams(seed, episode)
        if tier == "expert":
            noise = 0.05
        elif tier == "medium":
            noise = 0.4
        elif tier == "medium-replay":
            frac = min(1.0, total / n_transitions)
            noise = 1.0 + (0.4 - 1.0) * frac
        else:
            noise = 0.0
        controller = _make_controller(env, tier, noise, ctrl_rng)
        traj = _run_episode(env, controller, reset_seq, trajectory_id=episode)
        trajectories.append(traj)
        total += traj.length
        episode += 1
    meta = DatasetMeta(env_id=env_id, tier=tier, seed=seed,
                       n_transitions=total, n_trajectories=len(trajectories))
    return Dataset(trajectories, meta)


# --- mixed partial-coverage dataset for the sparse maze -----------------
#
# Two segment populations around a seam at the corridor's upper mouth:
# "approach" trajectories run clean from the start and park at the seam
# (never scoring), "finish" trajectories are the post-seam suffixes of
# noisy full runs, which carry the goal reward. Cloning the blend stalls
# at the seam while value propagates through it, which is the regime the
# evaluation-time switch is meant to exploit.

STITCH_SEAM_Y = 2.5
STITCH_HOLD_STEPS = 60
STITCH_APPROACH_NOISE = 0.03
STITCH_FINISH_NOISE = 0.45
STITCH_SEAM_POINT = (3.2, 2.6)


def _approach_trajectory(env: PointEnv, reset_seq, ctrl_rng, trajectory_id: int) -> Trajectory:
    controller = ScriptedController(
        [MAZE_WAYPOINTS[0], STITCH_SEAM_POINT], env.spec.action_bound,
        noise_std=STITCH_APPROACH_NOISE, rng=ctrl_rng,
    )
    state = env.reset(reset_seq)
    transitions: list[Transition] = []
    held = 0
    done = False
    while not done and held < STITCH_HOLD_STEPS:
        obs = env.observe(state)
        action = controller.action(state.position, state.velocity)
        state, reward, done = env.step(state, action)
        transitions.append(Transition(obs, action, reward, env.observe(state),
                                      env.is_terminal(reward, done), trajectory_id))
        if state.position[1] >= STITCH_SEAM_Y:
            held += 1
    return Trajectory(transitions)


def _finish_trajectory(env: PointEnv, reset_seq, ctrl_rng, trajectory_id: int) -> Trajectory | None:
    controller = ScriptedController(
        route_for(env), env.spec.action_bound,
        noise_std=STITCH_FINISH_NOISE, rng=ctrl_rng,
    )
    state = env.reset(reset_seq)
    controller.reset()
    transitions: list[Transition] = []
    crossed = False
    done = False
    while not done:
        obs = env.observe(state)
        action = controller.action(state.position, state.velocity)
        state, reward, done = env.step(state, action)
        if not crossed and state.position[1] >= STITCH_SEAM_Y - 0.2:
            crossed = True
        if crossed:
            transitions.append(Transition(obs, action, reward, env.observe(state),
                                          env.is_terminal(reward, done), trajectory_id))
    if not transitions:
        return None
    return Trajectory(transitions)


def generate_stitch_dataset(env_id: str, n_transitions: int, seed: int) -> Dataset:
    """Mixed partial-trajectory dataset for the sparse maze (half
    approach segments, half goal-reaching finish segments)."""
    env = make_env(env_id)
    if env.spec.reward_kind != "sparse":
        raise ConfigurationError("stitch datasets are defined for sparse envs")
    trajectories: list[Trajectory] = []
    total = 0
    episode = 0
    half = n_transitions // 2
    approach_total = 0
    while total < n_transitions:
        reset_seq, ctrl_rng = _episode_streams(seed, episode)
        if approach_total < half:
            traj = _approach_trajectory(env, reset_seq, ctrl_rng, episode)
            approach_total += traj.length
        else:
            traj = _finish_trajectory(env, reset_seq, ctrl_rng, episode)
        episode += 1
        if traj is None or traj.length == 0:
            continue
        trajectories.append(traj)
        total += traj.length
    meta = DatasetMeta(env_id=env_id, tier="stitch", seed=seed,
                       n_transitions=total, n_trajectories=len(trajectories))
    return Dataset(trajectories, meta)


# --- dataset spread statistics -------------------------------------------

def normalized_return_std(dataset: Dataset) -> float:
    """Population std of undiscounted trajectory returns over the max
    absolute return; 0 when every return is 0."""
    returns = np.array([t.total_reward for t in dataset.trajectories])
    if returns.size < 2:
        raise ConfigurationError("need at least 2 trajectories")
    r_max = float(np.max(np.abs(returns)))
    if r_max == 0.0:
        return 0.0
    return float(np.std(returns) / r_max)


def normalized_length_std(dataset: Dataset, horizon: int) -> float:
    """Population std of trajectory lengths over the episode horizon."""
    lengths = np.array([t.length for t in dataset.trajectories], dtype=np.float64)
    if lengths.size < 2:
        raise ConfigurationError("need at least 2 trajectories")
    return float(np.std(lengths) / horizon)


def dataset_spread(dataset: Dataset, measure: str, horizon: int) -> float:
    if measure == "returns":
        return normalized_return_std(dataset)
    if measure == "lengths":
        return normalized_length_std(dataset, horizon)
    raise ConfigurationError(f"unknown spread measure {measure!r}")


# --- replay buffer --------------------------------------------------------

@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]


class ReplayBuffer:
    """Fixed-capacity transition store, overwritten FIFO from slot 0.

    Seeding from a dataset fills every slot and leaves the write cursor
    at 0, so online inserts replace the oldest offline samples first and
    the offline fraction decays as 1 - inserts/capacity with no mixing
    knob.
    """

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ConfigurationError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity)
        self.count = 0
        self.cursor = 0
        self.inserts = 0
        self._seeded_count = 0

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "ReplayBuffer":
        n = dataset.n_transitions
        if n == 0:
            raise ConfigurationError("dataset is empty")
        first = dataset.trajectories[0].transitions[0]
        buf = cls(n, first.state.shape[0], first.action.shape[0])
        i = 0
        for tr in dataset.iter_transitions():
            buf.states[i] = tr.state
            buf.actions[i] = tr.action
            buf.rewards[i] = tr.reward
            buf.next_states[i] = tr.next_state
            buf.dones[i] = 1.0 if tr.done else 0.0
            i += 1
        buf.count = n
        buf.cursor = 0
        buf._seeded_count = n
        return buf

    def insert(self, state, action, reward, next_state, done) -> None:
        i = self.cursor
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = 1.0 if done else 0.0
        self.cursor = (i + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)
        self.inserts += 1

    def offline_remaining(self) -> int:
        """How many dataset-seeded transitions have not been overwritten."""
        return max(0, self._seeded_count - self.inserts)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self.count == 0:
            raise ConfigurationError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.count, size=batch_size)
        return Batch(
            states=self.states[idx],
            actions=self.actions[idx],
            rewards=self.rewards[idx],
            next_states=self.next_states[idx],
            dones=self.dones[idx],
        )


# --- file formats ----------------------------------------------------------

def _meta_path(path: Path) -> Path:
    return path.with_name(path.stem + ".meta.json")


def save_dataset(dataset: Dataset, path) -> None:
    """JSON-lines, one trajectory per line, plus a sidecar metadata file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for traj in dataset.trajectories:
            states = [t.state.tolist() for t in traj.transitions]
            states.append(traj.transitions[-1].next_state.tolist())
            row = {
                "id": traj.transitions[0].trajectory_id,
                "states": states,
                "actions": [t.action.tolist() for t in traj.transitions],
                "rewards": [t.reward for t in traj.transitions],
                "done_last": bool(traj.transitions[-1].done),
            }
            fh.write(json.dumps(row) + "\n")
    meta = {
        "env_id": dataset.meta.env_id,
        "tier": dataset.meta.tier,
        "seed": dataset.meta.seed,
        "generator_version": dataset.meta.generator_version,
        "n_transitions": dataset.meta.n_transitions,
        "n_trajectories": dataset.meta.n_trajectories,
    }
    with open(_meta_path(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    trajectories: list[Trajectory] = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            states = [np.array(s) for s in row["states"]]
            transitions = []
            n = len(row["actions"])
            for k in range(n):
                transitions.append(Transition(
                    state=states[k],
                    action=np.array(row["actions"][k]),
                    reward=float(row["rewards"][k]),
                    next_state=states[k + 1],
                    done=bool(row["done_last"]) and k == n - 1,
                    trajectory_id=int(row["id"]),
                ))
            trajectories.append(Trajectory(transitions))
    meta_file = _meta_path(path)
    if meta_file.exists():
        raw = json.loads(meta_file.read_text())
        meta = DatasetMeta(
            env_id=raw["env_id"], tier=raw["tier"], seed=raw["seed"],
            generator_version=raw.get("generator_version", GENERATOR_VERSION),
            n_transitions=raw.get("n_transitions", 0),
            n_trajectories=raw.get("n_trajectories", 0),
        )
    else:
        meta = DatasetMeta(env_id="unknown", tier="unknown", seed=-1)
    ds = Dataset(trajectories, meta)
    if meta.n_transitions == 0:
        meta.n_transitions = ds.n_transitions
        meta.n_trajectories = len(trajectories)
    return ds


def compute_reference_returns(env_id: str, n_episodes: int = 100, seed: int = 0) -> tuple[float, float]:
    """Mean returns of the scripted random and expert controllers, used
    to anchor the normalized score for an environment."""
    env = make_env(env_id)
    means = []
    for tier in ("random", "expert"):
        total = 0.0
        for episode in range(n_episodes):
            reset_seq, ctrl_rng = _episode_streams(seed, episode)
            controller = _make_controller(env, tier, 0.05, ctrl_rng)
            traj = _run_episode(env, controller, reset_seq, trajectory_id=episode)
            total += traj.total_reward
        means.append(total / n_episodes)
    return means[0], means[1]
