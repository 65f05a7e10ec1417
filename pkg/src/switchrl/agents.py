"""The two independently trained policies.

Td3nAgent is TD3 with an ensemble of N critics whose TD targets take a
pessimistic minimum over the ensemble offline, or over a random pair of
members online. GaussianPolicy is a state-conditional Gaussian fitted to
the dataset actions by maximum likelihood; the two never share
parameters or gradients.

Critic ensembles are stored stacked (one leading member axis per layer)
so a single matmul evaluates or updates every member; member(i) exposes
the equivalent per-network view for checkpoints and cross-checks
against the nn-module operations.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .data import Batch, ReplayBuffer
from .nn import ConfigurationError, MlpParams, NumericsError

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0


@dataclass
class Td3Hyper:
    gamma: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    target_noise_std: float = 0.2
    target_noise_clip: float = 0.5
    exploration_noise_std: float = 0.1
    batch_size: int = 256
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    bc_lr: float = 3e-4
    n_critics: int = 10
    hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self) -> None:
        self.hidden = tuple(self.hidden)
        if self.n_critics < 2:
            raise ConfigurationError("ensemble needs at least 2 critics")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in [0, 1]")


# --- stacked ensemble machinery ---------------------------------------------

def _stacked_forward(weights, biases, x, with_cache=False):
    """Forward all members at once; relu hidden, identity output.

    weights[k]: (N, out, in); x: (B, in) shared across members.
    Returns (N, B, out_last), optionally with per-layer caches.
    """
    h = x
    pre, post = [], [x]
    last = len(weights) - 1
    for k, (w, b) in enumerate(zip(weights, biases)):
        z = np.matmul(h, w.transpose(0, 2, 1)) + b[:, None, :]
        h = z if k == last else np.maximum(z, 0.0)
        if with_cache:
            pre.append(z)
            post.append(h)
    if with_cache:
        return h, (pre, post)
    return h


def _stacked_backward(weights, cache, upstream, need_input_grad=False):
    """Gradients of sum(upstream * output) per member.

    upstream: (N, B, out_last). Returns (d_weights, d_biases[, d_input])
    with d_input summed over members.
    """
    pre, post = cache
    n = len(weights)
    d_w = [None] * n
    d_b = [None] * n
    g = upstream  # identity output activation
    input_grad = None
    for k in range(n - 1, -1, -1):
        a_prev = post[k]
        d_w[k] = np.matmul(g.transpose(0, 2, 1), a_prev)
        d_b[k] = g.sum(axis=1)
        g_in = np.matmul(g, weights[k])
        if k > 0:
            g = g_in * (pre[k - 1] > 0.0)
        elif need_input_grad:
            input_grad = g_in.sum(axis=0)
    if need_input_grad:
        return d_w, d_b, input_grad
    return d_w, d_b


class CriticEnsemble:
    """N action-value networks plus their Polyak-averaged targets."""

    def __init__(self, n: int, state_dim: int, action_dim: int, hidden,
                 rng: np.random.Generator, lr: float = 3e-4):
        if n < 2:
            raise ConfigurationError("ensemble needs at least 2 critics")
        self.n = n
        self.state_dim = state_dim
        self.action_dim = action_dim
        sizes = [state_dim + action_dim, *hidden, 1]
        self.layer_sizes = tuple(sizes)
        self.activations = ("relu",) * (len(sizes) - 2) + ("identity",)
        members = [nn.mlp_init(sizes, rng) for _ in range(n)]
        self.weights = [np.stack([m.weights[k] for m in members])
                        for k in range(len(sizes) - 1)]
        self.biases = [np.stack([m.biases[k] for m in members])
                       for k in range(len(sizes) - 1)]
        self.target_weights = [w.copy() for w in self.weights]
        self.target_biases = [b.copy() for b in self.biases]
        self.adam = nn.AdamHyper(lr=lr)
        self._m_w = [np.zeros_like(w) for w in self.weights]
        self._v_w = [np.zeros_like(w) for w in self.weights]
        self._m_b = [np.zeros_like(b) for b in self.biases]
        self._v_b = [np.zeros_like(b) for b in self.biases]
        self._adam_t = 0

    # -- member views (shared memory with the stack) --

    def member(self, i: int) -> MlpParams:
        return MlpParams([w[i] for w in self.weights],
                         [b[i] for b in self.biases], self.activations)

    def target_member(self, i: int) -> MlpParams:
        return MlpParams([w[i] for w in self.target_weights],
                         [b[i] for b in self.target_biases], self.activations)

    def set_member(self, i: int, params: MlpParams, targets: MlpParams | None = None) -> None:
        for k in range(len(self.weights)):
            self.weights[k][i] = params.weights[k]
            self.biases[k][i] = params.biases[k]
            if targets is not None:
                self.target_weights[k][i] = targets.weights[k]
                self.target_biases[k][i] = targets.biases[k]

    # -- evaluation --

    @staticmethod
    def _join(states, actions) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        return np.concatenate([states, actions], axis=1)

    def values(self, states, actions) -> np.ndarray:
        """Online critic values, shape (N, B) ((N,) for single inputs)."""
        single = np.asarray(states).ndim == 1
        out = _stacked_forward(self.weights, self.biases, self._join(states, actions))
        q = out[:, :, 0]
        return q[:, 0] if single else q

    def target_values(self, states, actions, indices=None) -> np.ndarray:
        x = self._join(states, actions)
        if indices is None:
            w, b = self.target_weights, self.target_biases
        else:
            w = [tw[indices] for tw in self.target_weights]
            b = [tb[indices] for tb in self.target_biases]
        return _stacked_forward(w, b, x)[:, :, 0]

    # -- updates --

    def regress(self, states, actions, targets) -> float:
        """One Adam step per member towards the shared TD targets.

        Loss per member is the batch mean squared error; the returned
        value is its mean over members, evaluated before the step.
        """
        x = self._join(states, actions)
        batch = x.shape[0]
        out, cache = _stacked_forward(self.weights, self.biases, x, with_cache=True)
        q = out[:, :, 0]
        err = q - targets[None, :]
        loss = float(np.mean(err * err))
        upstream = (2.0 / batch) * err[:, :, None]
        d_w, d_b = _stacked_backward(self.weights, cache, upstream)
        self._adam_apply(d_w, d_b)
        return loss

    def _adam_apply(self, d_w, d_b) -> None:
        for g in d_w + d_b:
            if not np.all(np.isfinite(g)):
                raise NumericsError("non-finite critic gradient, update rejected")
        self._adam_t += 1
        t, hyp = self._adam_t, self.adam
        c1 = 1.0 - hyp.beta1**t
        c2 = 1.0 - hyp.beta2**t
        for params, grads, ms, vs in (
            (self.weights, d_w, self._m_w, self._v_w),
            (self.biases, d_b, self._m_b, self._v_b),
        ):
            for k in range(len(params)):
                ms[k] = hyp.beta1 * ms[k] + (1.0 - hyp.beta1) * grads[k]
                vs[k] = hyp.beta2 * vs[k] + (1.0 - hyp.beta2) * (grads[k] * grads[k])
                params[k] = params[k] - hyp.lr * (ms[k] / c1) / (np.sqrt(vs[k] / c2) + hyp.eps)

    def soft_update_targets(self, tau: float) -> None:
        for k in range(len(self.weights)):
            self.target_weights[k] = (1.0 - tau) * self.target_weights[k] + tau * self.weights[k]
            self.target_biases[k] = (1.0 - tau) * self.target_biases[k] + tau * self.biases[k]

    def action_value_input_grads(self, states, actions) -> np.ndarray:
        """d(sum over members of Q_i)/d(action), shape (B, action_dim)."""
        x = self._join(states, actions)
        out, cache = _stacked_forward(self.weights, self.biases, x, with_cache=True)
        upstream = np.ones_like(out)
        _, _, d_x = _stacked_backward(self.weights, cache, upstream, need_input_grad=True)
        return d_x[:, self.state_dim:]


# --- Gaussian behavioural cloning --------------------------------------------

class GaussianPolicy:
    """State-conditional Gaussian fitted to dataset actions.

    The trunk emits (mean, log_std) per action dimension; log_std is
    clamped to [-5, 2] after every forward pass. Evaluation uses the
    clipped mean.
    """

    def __init__(self, state_dim: int, action_dim: int, action_bound: float,
                 hidden, rng: np.random.Generator, lr: float = 3e-4):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.action_bound = float(action_bound)
        self.trunk = nn.mlp_init([state_dim, *hidden, 2 * action_dim], rng)
        self.opt = nn.adam_init(self.trunk, lr=lr)

    def forward(self, states) -> tuple[np.ndarray, np.ndarray]:
        out = nn.mlp_forward(self.trunk, states)
        mean = out[..., : self.action_dim]
        log_std = np.clip(out[..., self.action_dim:], LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std

    def action(self, state, mode: str = "eval", rng: np.random.Generator | None = None) -> np.ndarray:
        mean, log_std = self.forward(state)
        if mode == "eval":
            return np.clip(mean, -self.action_bound, self.action_bound)
        if mode == "sample":
            if rng is None:
                raise ConfigurationError("sample mode requires an rng")
            noise = rng.standard_normal(self.action_dim) * np.exp(log_std)
            return np.clip(mean + noise, -self.action_bound, self.action_bound)
        raise ConfigurationError(f"unknown action mode {mode!r}")

    def train_step(self, states, actions) -> float:
        """One Adam step on the mean Gaussian NLL; returns the pre-step loss."""
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        batch = states.shape[0]
        raw = nn.mlp_forward(self.trunk, states)
        mean = raw[:, : self.action_dim]
        raw_ls = raw[:, self.action_dim:]
        log_std = np.clip(raw_ls, LOG_STD_MIN, LOG_STD_MAX)
        std = np.exp(log_std)
        z = (actions - mean) / std
        nll = 0.5 * z * z + log_std + 0.5 * np.log(2.0 * np.pi)
        loss = float(np.sum(nll) / batch)
        if not np.isfinite(loss):
            raise NumericsError("non-finite behavioural-cloning loss, step rejected")
        d_mean = (mean - actions) / (std * std) / batch
        inside = (raw_ls > LOG_STD_MIN) & (raw_ls < LOG_STD_MAX)
        d_log_std = (1.0 - z * z) / batch * inside
        upstream = np.concatenate([d_mean, d_log_std], axis=1)
        grads, _ = nn.mlp_backward(self.trunk, states, upstream)
        self.trunk, self.opt = nn.adam_step(self.opt, self.trunk, grads)
        return loss


# --- TD3 with N critics -------------------------------------------------------

class Td3nAgent:
    """Deterministic actor with an ensemble of critics."""

    def __init__(self, state_dim: int, action_dim: int, action_bound: float,
                 hyper: Td3Hyper, rng: np.random.Generator):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.action_bound = float(action_bound)
        self.hyper = hyper
        self.actor = nn.mlp_init([state_dim, *hyper.hidden, action_dim], rng,
                                 output_activation="tanh")
        self.actor_target = self.actor.copy()
        self.actor_opt = nn.adam_init(self.actor, lr=hyper.actor_lr)
        self.ensemble = CriticEnsemble(hyper.n_critics, state_dim, action_dim,
                                       hyper.hidden, rng, lr=hyper.critic_lr)
        self.update_count = 0

    def action(self, state, mode: str = "eval", rng: np.random.Generator | None = None) -> np.ndarray:
        a = self.action_bound * nn.mlp_forward(self.actor, state)
        if mode == "eval":
            return a
        if mode == "explore":
            if rng is None:
                raise ConfigurationError("explore mode requires an rng")
            noise = rng.normal(0.0, self.hyper.exploration_noise_std, size=a.shape)
            return np.clip(a + noise, -self.action_bound, self.action_bound)
        raise ConfigurationError(f"unknown action mode {mode!r}")

    def td_targets(self, batch: Batch, target_mode: str, rng: np.random.Generator) -> np.ndarray:
        """Pessimistic TD targets with clipped-noise target policy smoothing."""
        hyp = self.hyper
        next_mu = self.action_bound * nn.mlp_forward(self.actor_target, batch.next_states)
        noise = np.clip(
            rng.normal(0.0, hyp.target_noise_std, size=next_mu.shape),
            -hyp.target_noise_clip, hyp.target_noise_clip,
        )
        next_actions = np.clip(next_mu + noise, -self.action_bound, self.action_bound)
        if target_mode == "min_all":
            indices = None
        elif target_mode == "min_random2":
            indices = rng.choice(self.ensemble.n, size=2, replace=False)
        else:
            raise ConfigurationError(f"unknown target mode {target_mode!r}")
        q_next = self.ensemble.target_values(batch.next_states, next_actions, indices)
        min_q = q_next.min(axis=0)
        y = batch.rewards + hyp.gamma * (1.0 - batch.dones) * min_q
        if not np.all(np.isfinite(y)):
            raise NumericsError("non-finite TD target, update rejected")
        return y

    def critic_update(self, batch: Batch, target_mode: str, rng: np.random.Generator) -> float:
        y = self.td_targets(batch, target_mode, rng)
        loss = self.ensemble.regress(batch.states, batch.actions, y)
        self.ensemble.soft_update_targets(self.hyper.tau)
        return loss

    def actor_update(self, batch: Batch) -> float:
        """Ascend the batch mean of the ensemble-mean critic value."""
        states = batch.states
        batch_size = states.shape[0]
        net_out = nn.mlp_forward(self.actor, states)
        actions = self.action_bound * net_out
        d_action = self.ensemble.action_value_input_grads(states, actions)
        d_action /= self.ensemble.n * batch_size
        mean_value = float(np.mean(self.ensemble.values(states, actions)))
        # descend on loss = -mean value
        upstream = -self.action_bound * d_action
        grads, _ = nn.mlp_backward(self.actor, states, upstream)
        self.actor, self.actor_opt = nn.adam_step(self.actor_opt, self.actor, grads)
        self.actor_target = nn.soft_update(self.actor_target, self.actor, self.hyper.tau)
        return -mean_value

    def update(self, batch: Batch, target_mode: str, rng: np.random.Generator) -> tuple[float, float | None]:
        critic_loss = self.critic_update(batch, target_mode, rng)
        self.update_count += 1
        actor_loss = None
        if self.update_count % self.hyper.policy_delay == 0:
            actor_loss = self.actor_update(batch)
        return critic_loss, actor_loss


# --- offline training --------------------------------------------------------

@dataclass
class TrainLogRow:
    step: int
    critic_loss: float
    actor_loss: float
    bc_loss: float


def train_offline(agent: Td3nAgent, bc: GaussianPolicy, buffer: ReplayBuffer,
                  n_steps: int, seed: int, log_every: int = 1000) -> list[TrainLogRow]:
    """Run n_steps of TD3 (min-over-all targets) and of BC, independently.

    The two policies draw batches from separate seeded streams, so the
    BC parameters depend only on (buffer contents, seed) and are
    unchanged by anything the RL side does.
    """
    td3_seq, bc_seq = np.random.SeedSequence([seed]).spawn(2)
    rng_td3 = np.random.default_rng(td3_seq)
    rng_bc = np.random.default_rng(bc_seq)
    log: list[TrainLogRow] = []
    last_actor_loss = float("nan")
    for step in range(1, n_steps + 1):
        batch = buffer.sample(agent.hyper.batch_size, rng_td3)
        critic_loss, actor_loss = agent.update(batch, "min_all", rng_td3)
        if actor_loss is not None:
            last_actor_loss = actor_loss
        bc_batch = buffer.sample(agent.hyper.batch_size, rng_bc)
        bc_loss = bc.train_step(bc_batch.states, bc_batch.actions)
        if step % log_every == 0 or step == n_steps:
            log.append(TrainLogRow(step, critic_loss, last_actor_loss, bc_loss))
    return log


def train_bc_only(bc: GaussianPolicy, buffer: ReplayBuffer, n_steps: int, seed: int,
                  batch_size: int = 256) -> None:
    """The BC half of train_offline on its own (used to check independence)."""
    _, bc_seq = np.random.SeedSequence([seed]).spawn(2)
    rng_bc = np.random.default_rng(bc_seq)
    for _ in range(n_steps):
        batch = buffer.sample(batch_size, rng_bc)
        bc.train_step(batch.states, batch.actions)


# --- checkpoints --------------------------------------------------------------

def save_checkpoint(directory, agent: Td3nAgent, bc: GaussianPolicy) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    nn.save_params(directory / "actor.bin", agent.actor)
    nn.save_params(directory / "actor_target.bin", agent.actor_target)
    for i in range(agent.ensemble.n):
        nn.save_params(directory / f"critic_{i}.bin", agent.ensemble.member(i))
        nn.save_params(directory / f"critic_{i}_target.bin", agent.ensemble.target_member(i))
    nn.save_params(directory / "bc.bin", bc.trunk)
    hyper = asdict(agent.hyper)
    hyper["hidden"] = list(agent.hyper.hidden)
    meta = {
        "state_dim": agent.state_dim,
        "action_dim": agent.action_dim,
        "action_bound": agent.action_bound,
        "hyper": hyper,
    }
    with open(directory / "hyper.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(directory) -> tuple[Td3nAgent, GaussianPolicy]:
    directory = Path(directory)
    hyper_file = directory / "hyper.json"
    if not hyper_file.exists():
        raise ConfigurationError(f"missing checkpoint file: {hyper_file}")
    meta = json.loads(hyper_file.read_text())
    raw_hyper = dict(meta["hyper"])
    raw_hyper["hidden"] = tuple(raw_hyper["hidden"])
    hyper = Td3Hyper(**raw_hyper)
    rng = np.random.default_rng(0)
    agent = Td3nAgent(meta["state_dim"], meta["action_dim"], meta["action_bound"], hyper, rng)
    bc = GaussianPolicy(meta["state_dim"], meta["action_dim"], meta["action_bound"],
                        hyper.hidden, rng, lr=hyper.bc_lr)

    def read(name, activations):
        path = directory / name
        if not path.exists():
            raise ConfigurationError(f"missing checkpoint file: {path}")
        return nn.load_params(path, activations)

    agent.actor = read("actor.bin", agent.actor.activations)
    agent.actor_target = read("actor_target.bin", agent.actor.activations)
    agent.actor_opt = nn.adam_init(agent.actor, lr=hyper.actor_lr)
    acts = agent.ensemble.activations
    for i in range(hyper.n_critics):
        agent.ensemble.set_member(
            i,
            read(f"critic_{i}.bin", acts),
            read(f"critic_{i}_target.bin", acts),
        )
    bc.trunk = read("bc.bin", bc.trunk.activations)
    bc.opt = nn.adam_init(bc.trunk, lr=hyper.bc_lr)
    return agent, bc


def params_digest(params: MlpParams) -> bytes:
    """Stable byte-level fingerprint of a parameter set."""
    import hashlib

    h = hashlib.sha256()
    for w, b in zip(params.weights, params.biases):
        h.update(np.ascontiguousarray(w, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return h.digest()
