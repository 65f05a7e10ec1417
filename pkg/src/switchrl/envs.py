"""Desk-scale continuous-control environments.

Two seedable point-mass tasks: ``point-reach-dense`` (a goal-reaching
arena with a per-step distance cost) and ``point-maze-sparse`` (a
U-corridor maze paying a single reward on goal contact). Dynamics are a
damped double integrator with axis-wise wall clipping; a trajectory is
fully determined by (seed, action sequence).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .nn import ConfigurationError, NumericsError


@dataclass(frozen=True)
class Wall:
    """Axis-aligned blocking rectangle (open interior)."""

    x0: float
    x1: float
    y0: float
    y1: float


@dataclass(frozen=True)
class EnvSpec:
    id: str
    state_dim: int
    action_dim: int
    action_bound: float
    horizon: int
    reward_kind: str  # "dense" | "sparse"
    gamma: float
    random_ref: float
    expert_ref: float

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ConfigurationError("horizon must be >= 1")
        if self.reward_kind not in ("dense", "sparse"):
            raise ConfigurationError(f"unknown reward kind {self.reward_kind!r}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in (0, 1]")
        if not self.expert_ref > self.random_ref:
            raise ConfigurationError("expert_ref must exceed random_ref")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class EnvState:
    position: np.ndarray  # (2,) arena units
    velocity: np.ndarray  # (2,) units per time unit
    t: int = 0


class PointEnv:
    """Point mass in a walled arena.

    velocity <- damping * velocity + dt * action, then the position
    advances by dt * velocity with collisions resolved per axis: the
    blocked coordinate is clipped to the obstacle face and that velocity
    component zeroed.
    """

    def __init__(
        self,
        spec: EnvSpec,
        arena_lo: tuple[float, float],
        arena_hi: tuple[float, float],
        start: tuple[float, float],
        start_noise: float,
        goal: tuple[float, float],
        goal_radius: float,
        dt: float = 0.05,
        damping: float = 0.95,
        v_max: float = 2.0,
        walls: tuple[Wall, ...] = (),
    ):
        self.spec = spec
        self.arena_lo = np.asarray(arena_lo, dtype=np.float64)
        self.arena_hi = np.asarray(arena_hi, dtype=np.float64)
        self.start = np.asarray(start, dtype=np.float64)
        self.start_noise = float(start_noise)
        self.goal = np.asarray(goal, dtype=np.float64)
        self.goal_radius = float(goal_radius)
        self.dt = float(dt)
        self.damping = float(damping)
        self.v_max = float(v_max)
        self.walls = tuple(walls)

    def reset(self, seed) -> EnvState:
        rng = np.random.default_rng(seed)
        offset = rng.uniform(-self.start_noise, self.start_noise, size=2)
        position = np.clip(self.start + offset, self.arena_lo, self.arena_hi)
        return EnvState(position=position, velocity=np.zeros(2), t=0)

    def observe(self, state: EnvState) -> np.ndarray:
        return np.concatenate([state.position, state.velocity])

    def _resolve_axis(self, old: float, new: float, other: float, axis: int) -> tuple[float, bool]:
        blocked = False
        lo, hi = self.arena_lo[axis], self.arena_hi[axis]
        if new < lo:
            new, blocked = lo, True
        elif new > hi:
            new, blocked = hi, True
        for w in self.walls:
            a0, a1 = (w.x0, w.x1) if axis == 0 else (w.y0, w.y1)
            o0, o1 = (w.y0, w.y1) if axis == 0 else (w.x0, w.x1)
            if not o0 < other < o1:
                continue
            if a0 < new < a1:
                if old <= a0:
                    new = a0
                elif old >= a1:
                    new = a1
                else:
                    new = a0 if new - a0 < a1 - new else a1
                blocked = True
        return new, blocked

    def step(self, state: EnvState, action) -> tuple[EnvState, float, bool]:
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.spec.action_dim,):
            raise ConfigurationError(f"action shape {action.shape} != ({self.spec.action_dim},)")
        if not np.all(np.isfinite(action)):
            raise NumericsError("non-finite action rejected")
        bound = self.spec.action_bound
        action = np.clip(action, -bound, bound)

        velocity = self.damping * state.velocity + self.dt * action
        speed = float(np.linalg.norm(velocity))
        if speed > self.v_max:
            velocity = velocity * (self.v_max / speed)

        x0, y0 = state.position
        x1 = x0 + self.dt * velocity[0]
        x1, bx = self._resolve_axis(x0, x1, y0, axis=0)
        if bx:
            velocity[0] = 0.0
        y1 = y0 + self.dt * velocity[1]
        y1, by = self._resolve_axis(y0, y1, x1, axis=1)
        if by:
            velocity[1] = 0.0

        position = np.array([x1, y1])
        t = state.t + 1
        dist = float(np.linalg.norm(position - self.goal))
        if self.spec.reward_kind == "dense":
            reward = -dist * self.dt
            done = t >= self.spec.horizon
        else:
            hit = dist <= self.goal_radius
            reward = 1.0 if hit else 0.0
            done = hit or t >= self.spec.horizon
        return EnvState(position=position, velocity=velocity, t=t), reward, done

    def is_terminal(self, reward: float, done: bool) -> bool:
        """True termination as opposed to a horizon truncation.

        TD targets should bootstrap through truncations, so replay data
        stores done flags from here rather than from step().
        """
        return self.spec.reward_kind == "sparse" and done and reward > 0.0


# Reference returns are the 100-episode mean returns of the scripted
# random and expert controllers (data.compute_reference_returns with
# seed 0); regenerated and checked by the data-module tests.
_REFS = {
    "point-reach-dense": (-14.456337571458722, -1.6814789670027137),
    "point-maze-sparse": (0.0, 1.0),
}

_SPECS = {
    "point-reach-dense": EnvSpec(
        id="point-reach-dense",
        state_dim=4,
        action_dim=2,
        action_bound=1.0,
        horizon=200,
        reward_kind="dense",
        gamma=0.99,
        random_ref=_REFS["point-reach-dense"][0],
        expert_ref=_REFS["point-reach-dense"][1],
    ),
    "point-maze-sparse": EnvSpec(
        id="point-maze-sparse",
        state_dim=4,
        action_dim=2,
        action_bound=1.0,
        horizon=300,
        reward_kind="sparse",
        gamma=0.99,
        random_ref=_REFS["point-maze-sparse"][0],
        expert_ref=_REFS["point-maze-sparse"][1],
    ),
}

ENV_IDS = tuple(sorted(_SPECS))

# Maze geometry: one wall attached to the left edge splits the arena
# into a U; the corridor around its free end is the only route from the
# start (bottom left) to the goal (top left).
MAZE_WALL = Wall(0.0, 2.2, 1.9, 2.1)
MAZE_WAYPOINTS = ((3.2, 0.8), (3.2, 3.2))


def make_env(env_id: str) -> PointEnv:
    if env_id == "point-reach-dense":
        return PointEnv(
            spec=_SPECS[env_id],
            arena_lo=(-2.0, -2.0),
            arena_hi=(2.0, 2.0),
            start=(0.0, 0.0),
            start_noise=0.1,
            goal=(1.0, 1.0),
            goal_radius=0.2,
        )
    if env_id == "point-maze-sparse":
        return PointEnv(
            spec=_SPECS[env_id],
            arena_lo=(0.0, 0.0),
            arena_hi=(4.0, 4.0),
            start=(0.6, 0.6),
            start_noise=0.1,
            goal=(0.6, 3.4),
            goal_radius=0.3,
            walls=(MAZE_WALL,),
        )
    raise ConfigurationError(f"unknown env id {env_id!r}; known: {ENV_IDS}")


def normalized_score(spec: EnvSpec, raw_return: float) -> float:
    """Affine score mapping random_ref -> 0 and expert_ref -> 100."""
    span = spec.expert_ref - spec.random_ref
    if span == 0.0:
        raise ConfigurationError("degenerate reference returns")
    return 100.0 * (raw_return - spec.random_ref) / span
