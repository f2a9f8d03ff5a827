"""Multi-agent DDPG with per-role rewards.

Each agent owns a decentralized actor (own observation -> 2D action) and a
centralized critic over the concatenation of every agent's observation
followed by every agent's action. Pursuers, scouts and evaders all train
at the same time in the shared world.
"""

from dataclasses import dataclass, field
import json
import logging
import math
import os
import struct
from pathlib import Path

import numpy as np

from . import env as world
from . import neural
from .metrics import EpisodeRecorder, SENSOR_RANGE, distance_stats
from .rewards import compute_all_rewards

log = logging.getLogger(__name__)

ACTION_DIM = 2


class TrainingAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.95
    tau: float = 0.01
    batch_size: int = 1024
    buffer_capacity: int = 1_000_000
    update_every: int = 100
    actor_lr: float = 0.01
    critic_lr: float = 0.01
    optimizer: str = "adam"
    hidden: tuple = (64, 64)
    grad_clip: float = 0.5
    noise_start: float = 0.3
    noise_end: float = 0.05
    noise_decay_fraction: float = 0.5
    episodes: int = 1000
    seed: int = 0
    checkpoint_every: int = 0  # 0: initial and final checkpoints only
    trajectory_every: int = 0  # 0: no per-step trajectory CSVs
    progress_every: int = 100
    sensor_range: float = SENSOR_RANGE
    coverage_scouts_only: bool = False
    coverage_resolution: int = 300

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        self.validate()

    def validate(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if not 1 <= self.batch_size <= self.buffer_capacity:
            raise ValueError("batch_size must lie in [1, buffer_capacity]")
        if self.update_every < 1:
            raise ValueError("update_every must be >= 1")
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.noise_start < 0 or self.noise_end < 0:
            raise ValueError("noise std must be >= 0")
        if not 0 < self.noise_decay_fraction <= 1:
            raise ValueError("noise_decay_fraction must lie in (0, 1]")
        if self.coverage_resolution < 100:
            raise ValueError("coverage_resolution must be >= 100")

    def noise_std(self, episode):
        """Linear decay from noise_start to noise_end, then constant."""
        horizon = self.noise_decay_fraction * self.episodes
        if horizon <= 0 or episode >= horizon:
            return self.noise_end
        return self.noise_start + (self.noise_end - self.noise_start) * (episode / horizon)


# --- replay ----------------------------------------------------------------


@dataclass
class Transition:
    obs: list
    actions: np.ndarray  # (n, 2)
    rewards: np.ndarray  # (n,)
    next_obs: list


@dataclass
class Batch:
    obs: list  # per agent (K, d_i)
    actions: np.ndarray  # (K, n, 2)
    rewards: np.ndarray  # (K, n)
    next_obs: list

    def __len__(self):
        return len(self.rewards)

    def __getitem__(self, j):
        return Transition([o[j] for o in self.obs], self.actions[j], self.rewards[j], [o[j] for o in self.next_obs])

    def joint_obs(self):
        return np.concatenate(self.obs, axis=1)

    def joint_next_obs(self):
        return np.concatenate(self.next_obs, axis=1)


class ReplayBuffer:
    """FIFO ring of transitions; storage grows on demand up to ``capacity``."""

    def __init__(self, capacity, obs_dims):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.obs_dims = [int(d) for d in obs_dims]
        self.n_agents = len(self.obs_dims)
        self.cursor = 0
        self.size = 0
        self._alloc(min(self.capacity, 1024))

    def _alloc(self, rows):
        def grow(old, shape):
            new = np.zeros(shape)
            if old is not None:
                new[: len(old)] = old
            return new

        n = self.n_agents
        self._obs = [grow(getattr(self, "_obs", [None] * n)[k], (rows, d)) for k, d in enumerate(self.obs_dims)]
        self._next = [grow(getattr(self, "_next", [None] * n)[k], (rows, d)) for k, d in enumerate(self.obs_dims)]
        self._act = grow(getattr(self, "_act", None), (rows, n, ACTION_DIM))
        self._rew = grow(getattr(self, "_rew", None), (rows, n))

    def __len__(self):
        return self.size

    def push(self, t):
        n = self.n_agents
        if len(t.obs) != n or len(t.next_obs) != n or np.shape(t.actions) != (n, ACTION_DIM) or np.shape(t.rewards) != (n,):
            raise ValueError(f"transition arity does not match {n} agents")
        if self.cursor >= len(self._rew):
            self._alloc(min(self.capacity, 2 * len(self._rew)))
        c = self.cursor
        for k in range(n):
            self._obs[k][c] = t.obs[k]
            self._next[k][c] = t.next_obs[k]
        self._act[c] = t.actions
        self._rew[c] = t.rewards
        self.cursor = (c + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return self

    def gather(self, idx):
        return Batch([o[idx] for o in self._obs], self._act[idx], self._rew[idx], [o[idx] for o in self._next])

    def sample(self, k, rng):
        """Uniform with replacement."""
        if self.size < k or self.size == 0:
            raise ValueError(f"cannot sample {k} transitions from a buffer holding {self.size}")
        return self.gather(rng.integers(0, self.size, size=k))

    def contents(self):
        """All stored transitions, oldest first."""
        if self.size < self.capacity:
            order = np.arange(self.size)
        else:
            order = (np.arange(self.size) + self.cursor) % self.capacity
        b = self.gather(order)
        return [b[j] for j in range(len(b))]

    # raw binary dump: header then float64 arrays for the filled rows
    def save(self, path):
        with open(path, "wb") as f:
            f.write(struct.pack("<4QI", self.capacity, self.size, self.cursor, len(self._rew), self.n_agents))
            f.write(struct.pack(f"<{self.n_agents}I", *self.obs_dims))
            for a in self._obs + self._next + [self._act, self._rew]:
                f.write(np.ascontiguousarray(a[: self.size], dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            capacity, size, cursor, rows, n = struct.unpack("<4QI", f.read(36))
            dims = struct.unpack(f"<{n}I", f.read(4 * n))
            buf = cls(capacity, dims)
            buf._alloc(max(rows, 1))

            def read(shape):
                count = int(np.prod(shape))
                return np.frombuffer(f.read(8 * count), dtype="<f8").reshape(shape)

            for k, d in enumerate(dims):
                buf._obs[k][:size] = read((size, d))
            for k, d in enumerate(dims):
                buf._next[k][:size] = read((size, d))
            buf._act[:size] = read((size, n, ACTION_DIM))
            buf._rew[:size] = read((size, n))
        buf.size, buf.cursor = size, cursor
        return buf


# --- learners ----------------------------------------------------------------


@dataclass
class AgentLearner:
    role: world.Role
    actor: neural.MlpParams
    target_actor: neural.MlpParams
    critic: neural.MlpParams
    target_critic: neural.MlpParams
    actor_opt: neural.AdamState
    critic_opt: neural.AdamState


def critic_input_dim(obs_dims):
    return sum(obs_dims) + ACTION_DIM * len(obs_dims)


def make_learners(world_cfg, train_cfg, rng, zero_init=False):
    roles = world_cfg.roles()
    obs_dims = [world_cfg.obs_dim(r) for r in roles]
    critic_in = critic_input_dim(obs_dims)
    hidden = list(train_cfg.hidden)
    learners = []
    for role, d in zip(roles, obs_dims):
        if zero_init:
            actor = neural.zeros_mlp([d, *hidden, ACTION_DIM], "tanh")
            critic = neural.zeros_mlp([critic_in, *hidden, 1])
        else:
            actor = neural.init_mlp([d, *hidden, ACTION_DIM], rng, "tanh")
            critic = neural.init_mlp([critic_in, *hidden, 1], rng)
        if critic.layer_dims[0] != sum(obs_dims) + ACTION_DIM * len(roles):
            raise AssertionError("critic must see every observation and every action")
        learners.append(AgentLearner(
            role, actor, actor.copy(), critic, critic.copy(),
            neural.AdamState.for_params(actor, train_cfg.actor_lr, train_cfg.optimizer),
            neural.AdamState.for_params(critic, train_cfg.critic_lr, train_cfg.optimizer),
        ))
    return learners


def _critic_in(joint_obs, actions):
    return np.concatenate([joint_obs, actions.reshape(len(actions), -1)], axis=1)


def td_targets(batch, learners, gamma, agents=None):
    """y_i = r_i + gamma * Q'_i(O', A') with A' from every agent's target actor."""
    next_actions = np.stack([neural.forward(l.target_actor, o)[0] for l, o in zip(learners, batch.next_obs)], axis=1)
    x = _critic_in(batch.joint_next_obs(), next_actions)
    agents = range(len(learners)) if agents is None else agents
    out = {}
    for i in agents:
        q = neural.forward(learners[i].target_critic, x)[0][:, 0]
        out[i] = batch.rewards[:, i] + gamma * q
    return out


def critic_gradient(learner, batch, y):
    x = _critic_in(batch.joint_obs(), batch.actions)
    q, cache = neural.forward(learner.critic, x)
    err = q[:, 0] - y
    loss = float(np.mean(err * err))
    if not math.isfinite(loss):
        raise neural.NonFiniteError("non-finite critic loss")
    grads, _ = neural.backward(learner.critic, cache, (2.0 / len(y)) * err[:, None])
    return grads, loss


def critic_update(learner, batch, y, grad_clip=None):
    """One optimizer step on the mean squared TD error; returns the pre-step loss."""
    grads, loss = critic_gradient(learner, batch, y)
    neural.adam_step(learner.critic, neural.clip_grads(grads, grad_clip), learner.critic_opt)
    return loss


def actor_gradient(i, batch, learners):
    """Gradient of -mean Q_i w.r.t. actor i, with a_i = mu_i(o_i) and the other
    agents' actions taken from the batch. Returns (grads, mean Q)."""
    me = learners[i]
    a_i, a_cache = neural.forward(me.actor, batch.obs[i])
    actions = batch.actions.copy()
    actions[:, i, :] = a_i
    x = _critic_in(batch.joint_obs(), actions)
    q, c_cache = neural.forward(me.critic, x)
    k = len(q)
    _, dx = neural.backward(me.critic, c_cache, np.full((k, 1), -1.0 / k))
    start = sum(o.shape[1] for o in batch.obs) + ACTION_DIM * i
    grads, _ = neural.backward(me.actor, a_cache, dx[:, start:start + ACTION_DIM])
    return grads, float(np.mean(q))


def actor_update(i, batch, learners, grad_clip=None):
    """One ascent step on Q_i through actor i; the critic is left untouched."""
    grads, objective = actor_gradient(i, batch, learners)
    neural.adam_step(learners[i].actor, neural.clip_grads(grads, grad_clip), learners[i].actor_opt)
    return objective


def soft_update(live, target, tau):
    if not live.same_shape(target):
        raise ValueError("live and target networks differ in shape")
    for p, t in zip(live.params(), target.params()):
        t[...] = tau * p + (1.0 - tau) * t
    return target


def select_actions(learners, joint_obs, noise_std=0.0, rng=None):
    """Each agent acts on its own observation only."""
    if len(joint_obs) != len(learners):
        raise ValueError("one observation per agent required")
    a = np.stack([neural.forward(l.actor, o)[0] for l, o in zip(learners, joint_obs)])
    if noise_std > 0:
        a = a + rng.normal(0.0, noise_std, size=a.shape)
    return np.clip(a, -1.0, 1.0)


# --- training loop -------------------------------------------------------------


@dataclass
class LossRecord:
    episode: int
    step: int
    agent: int
    critic_loss: float
    actor_objective: float


@dataclass
class TrainResult:
    learners: list
    logs: list
    losses: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)


class Trainer:
    """Holds the full mutable state of one training run."""

    def __init__(self, world_cfg, reward_cfg, train_cfg):
        self.world_cfg = world_cfg
        self.reward_cfg = reward_cfg
        self.cfg = train_cfg
        seeds = np.random.SeedSequence(train_cfg.seed).spawn(3)
        init_rng = np.random.default_rng(seeds[0])
        self.noise_rng = np.random.default_rng(seeds[1])
        self.sample_rng = np.random.default_rng(seeds[2])
        self.learners = make_learners(world_cfg, train_cfg, init_rng)
        self.obs_dims = [world_cfg.obs_dim(r) for r in world_cfg.roles()]
        self.buffer = ReplayBuffer(train_cfg.buffer_capacity, self.obs_dims)
        self.episode = 0
        self.total_steps = 0
        self.losses = []

    def episode_seed(self, episode):
        return [int(self.cfg.seed), int(episode), 0x5EED]

    def run_episode(self):
        ep = self.episode
        cfg = self.cfg
        state, obs = world.reset(self.world_cfg, seed=self.episode_seed(ep))
        rec = EpisodeRecorder(ep, state, cfg.sensor_range, cfg.coverage_scouts_only, cfg.coverage_resolution)
        noise = cfg.noise_std(ep)
        for t in range(self.world_cfg.episode_length):
            actions = select_actions(self.learners, obs, noise, self.noise_rng)
            state, next_obs, info = world.step(state, actions)
            breakdowns = compute_all_rewards(state, info, self.reward_cfg)
            rewards = np.array([b.total for b in breakdowns])
            self.buffer.push(Transition(obs, actions, rewards, next_obs))
            rec.record(t, state, breakdowns)
            obs = next_obs
            self.total_steps += 1
            if self.total_steps % cfg.update_every == 0 and len(self.buffer) >= cfg.batch_size:
                self.update(ep, t)
        self.episode += 1
        return rec.finish()

    def update(self, ep, t):
        cfg = self.cfg
        try:
            for i, learner in enumerate(self.learners):
                batch = self.buffer.sample(cfg.batch_size, self.sample_rng)
                y = td_targets(batch, self.learners, cfg.gamma, agents=[i])[i]
                closs = critic_update(learner, batch, y, cfg.grad_clip or None)
                aobj = actor_update(i, batch, self.learners, cfg.grad_clip or None)
                self.losses.append(LossRecord(ep, t, i, closs, aobj))
            for learner in self.learners:
                soft_update(learner.actor, learner.target_actor, cfg.tau)
                soft_update(learner.critic, learner.target_critic, cfg.tau)
        except neural.NonFiniteError as exc:
            raise TrainingAborted(f"episode {ep} step {t}: {exc}") from exc

    # --- checkpoints -------------------------------------------------------

    def save_checkpoint(self, directory, run_config=None):
        from .config import snapshot

        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for i, l in enumerate(self.learners):
            save_learner(d / f"agent_{i:02d}.spnn", l)
        self.buffer.save(d / "buffer.bin")
        manifest = {
            "format": 1,
            "episode": self.episode,
            "total_steps": self.total_steps,
            "n_agents": len(self.learners),
            "roles": [world.Role(l.role).label for l in self.learners],
            "config": snapshot(self.world_cfg, self.reward_cfg, self.cfg) if run_config is None else run_config,
            "rng": {"noise": self.noise_rng.bit_generator.state, "sample": self.sample_rng.bit_generator.state},
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return d

    @classmethod
    def from_checkpoint(cls, directory, train_cfg=None):
        from .config import parse_snapshot

        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        world_cfg, reward_cfg, saved_train = parse_snapshot(manifest["config"])
        tr = cls(world_cfg, reward_cfg, train_cfg or saved_train)
        tr.learners = [load_learner(d / f"agent_{i:02d}.spnn", world.Role(r))
                       for i, r in enumerate(world.Role.from_label(x) for x in manifest["roles"])]
        tr.buffer = ReplayBuffer.load(d / "buffer.bin")
        tr.episode = manifest["episode"]
        tr.total_steps = manifest["total_steps"]
        tr.noise_rng.bit_generator.state = manifest["rng"]["noise"]
        tr.sample_rng.bit_generator.state = manifest["rng"]["sample"]
        return tr


def save_learner(path, learner):
    with open(path, "wb") as f:
        neural.write_record(f, learner.actor, learner.actor_opt)
        neural.write_record(f, learner.target_actor)
        neural.write_record(f, learner.critic, learner.critic_opt)
        neural.write_record(f, learner.target_critic)


def load_learner(path, role):
    with open(path, "rb") as f:
        actor, actor_opt = neural.read_record(f)
        target_actor, _ = neural.read_record(f)
        critic, critic_opt = neural.read_record(f)
        target_critic, _ = neural.read_record(f)
    return AgentLearner(role, actor, target_actor, critic, target_critic, actor_opt, critic_opt)


def checkpoint_name(episode):
    return f"ep_{episode:06d}"


def train(world_cfg, reward_cfg, train_cfg, output_dir=None, trainer=None, on_episode=None, run_config=None):
    """Run (or continue) training.

    With ``output_dir`` set, checkpoints go to ``output_dir/checkpoints``;
    ``on_episode(log, trainer)`` is called after every episode.
    """
    tr = trainer or Trainer(world_cfg, reward_cfg, train_cfg)
    cfg = tr.cfg
    result = TrainResult(tr.learners, [], tr.losses)
    ckpt_root = Path(output_dir) / "checkpoints" if output_dir is not None else None

    def checkpoint():
        if ckpt_root is not None:
            result.checkpoints.append(tr.save_checkpoint(ckpt_root / checkpoint_name(tr.episode), run_config))

    if trainer is None:
        checkpoint()
    while tr.episode < cfg.episodes:
        ep_log = tr.run_episode()
        result.logs.append(ep_log)
        if on_episode is not None:
            on_episode(ep_log, tr)
        done = tr.episode == cfg.episodes
        if done or (cfg.checkpoint_every and tr.episode % cfg.checkpoint_every == 0):
            checkpoint()
    result.learners = tr.learners
    return result


def evaluate(learners, world_cfg, reward_cfg, episodes, seed=0, sensor_range=SENSOR_RANGE,
             scouts_only=False, coverage_resolution=300):
    """Noise-free rollouts; never touches learner parameters."""
    logs = []
    for ep in range(episodes):
        state, obs = world.reset(world_cfg, seed=[int(seed), ep, 0xE7A1])
        rec = EpisodeRecorder(ep, state, sensor_range, scouts_only, coverage_resolution)
        for t in range(world_cfg.episode_length):
            actions = select_actions(learners, obs, 0.0)
            state, obs, info = world.step(state, actions)
            rec.record(t, state, compute_all_rewards(state, info, reward_cfg))
        logs.append(rec.finish())
    return logs
