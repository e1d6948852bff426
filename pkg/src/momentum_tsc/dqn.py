"""DQN agent: replay buffer, epsilon-greedy policy, TD targets and the training loop."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict, fields
from typing import Callable, Optional, Sequence

import numpy as np

from .neural import QNetwork, Adam, copy_parameters, forward, loss_and_gradient
from .seeding import derive_seed


@dataclass
class Hyperparams:
    lr: float = 1e-3
    gamma: float = 0.99
    target_sync_interval: int = 500
    eps_start: float = 0.05
    eps_end: float = 0.01
    eps_decay_horizon: int = 80_000
    replay_capacity: int = 50_000
    batch_size: int = 32
    learn_start: int = 1_000
    total_train_steps: int = 100_000
    eval_frequency: int = 10_000
    eval_episodes: int = 2
    hidden: tuple = (64, 64)

    def validate(self) -> "Hyperparams":
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0 <= self.eps_end <= self.eps_start <= 1:
            raise ValueError("need 0 <= eps_end <= eps_start <= 1")
        if not 1 <= self.batch_size <= self.replay_capacity:
            raise ValueError("need 1 <= batch_size <= replay_capacity")
        for name in ("target_sync_interval", "eval_frequency", "eps_decay_horizon"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.total_train_steps < 0 or self.learn_start < 0 or self.eval_episodes < 0:
            raise ValueError("step counts must be non-negative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def field_names(cls) -> set:
        return {f.name for f in fields(cls)}


@dataclass
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions stored column-wise."""

    def __init__(self, capacity: int, obs_size: int):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_size))
        self.next_obs = np.zeros((capacity, obs_size))
        self.actions = np.zeros(capacity, dtype=np.intp)
        self.rewards = np.zeros(capacity)
        self.terminals = np.zeros(capacity, dtype=bool)
        self.inserted = 0

    def __len__(self) -> int:
        return min(self.inserted, self.capacity)

    def add(self, t: Transition) -> None:
        i = self.inserted % self.capacity
        self.obs[i] = t.obs
        self.next_obs[i] = t.next_obs
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.terminals[i] = t.terminal
        self.inserted += 1

    def transitions(self) -> list:
        """Stored transitions, oldest first."""
        n = len(self)
        start = self.inserted - n
        out = []
        for k in range(start, self.inserted):
            i = k % self.capacity
            out.append(Transition(self.obs[i].copy(), int(self.actions[i]), float(self.rewards[i]),
                                  self.next_obs[i].copy(), bool(self.terminals[i])))
        return out

    def sample(self, batch_size: int, rng: np.random.Generator):
        """Uniform with replacement; returns (obs, actions, rewards, next_obs, terminals)."""
        idx = rng.integers(0, len(self), size=batch_size)
        return self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.terminals[idx]


def select_action(net: QNetwork, obs, epsilon: float, rng: np.random.Generator) -> int:
    # one uniform draw per call whatever the branch, so streams stay aligned
    if rng.random() < epsilon:
        return int(rng.integers(net.n_outputs))
    return int(np.argmax(forward(net, obs)))


def epsilon_at(step: int, hp: Hyperparams) -> float:
    frac = min(1.0, step / hp.eps_decay_horizon)
    return hp.eps_start + frac * (hp.eps_end - hp.eps_start)


def td_target(target_net: QNetwork, transition: Transition, gamma: float) -> float:
    if transition.terminal:
        return float(transition.reward)
    return float(transition.reward + gamma * np.max(forward(target_net, transition.next_obs)))


def td_targets(target_net: QNetwork, rewards, next_obs, terminals, gamma: float) -> np.ndarray:
    next_q = forward(target_net, next_obs).max(axis=1)
    return rewards + gamma * np.where(terminals, 0.0, next_q)


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    g = 0.0
    for r in reversed(rewards):
        g = r + gamma * g
    return g


class DQNAgent:
    def __init__(self, obs_size: int, n_actions: int, hp: Hyperparams, seed: int,
                 layer_sizes: Optional[Sequence[int]] = None):
        self.hp = hp.validate()
        sizes = tuple(layer_sizes) if layer_sizes else (obs_size, *hp.hidden, n_actions)
        self.online = QNetwork(sizes, seed=derive_seed(seed, "init"))
        self.target = self.online.clone()
        self.optimizer = Adam(self.online.params.size, lr=hp.lr)
        self.buffer = ReplayBuffer(hp.replay_capacity, obs_size)
        self.rng = np.random.default_rng(derive_seed(seed, "agent"))
        self.train_steps = 0
        self.env_steps = 0

    def act(self, obs, epsilon: float) -> int:
        return select_action(self.online, obs, epsilon, self.rng)

    def ready(self) -> bool:
        return len(self.buffer) >= max(self.hp.batch_size, self.hp.learn_start)


def train_step(agent: DQNAgent, batch=None) -> Optional[float]:
    """One gradient step on the mean squared TD error; ``None`` if the buffer is underfull.

    The target network is synchronised after every ``target_sync_interval``-th step.
    """
    if batch is None:
        if not agent.ready():
            return None
        batch = agent.buffer.sample(agent.hp.batch_size, agent.rng)
    obs, actions, rewards, next_obs, terminals = batch
    targets = td_targets(agent.target, rewards, next_obs, terminals, agent.hp.gamma)
    loss, grad = loss_and_gradient(agent.online, obs, actions, targets)
    agent.optimizer.step(agent.online, grad)
    agent.train_steps += 1
    if agent.train_steps % agent.hp.target_sync_interval == 0:
        copy_parameters(agent.online, agent.target)
    return loss


def greedy_policy(net: QNetwork):
    def policy(env, obs):
        return int(np.argmax(forward(net, obs)))
    return policy


def evaluate(net: QNetwork, env, seeds: Sequence[int], gamma: float) -> list:
    """Greedy episodes; returns one record per seed.

    Records are EpisodeReports when the environment provides ``report`` and
    plain ``{"episode_return": ...}`` dicts otherwise.
    """
    out = []
    for s in seeds:
        obs = env.reset(s)
        done = False
        rewards = []
        while not done:
            obs, r, done, _ = env.step(int(np.argmax(forward(net, obs))))
            rewards.append(r)
        if hasattr(env, "report"):
            out.append(env.report(gamma))
        else:
            out.append({"episode_return": discounted_return(rewards, gamma)})
    return out


EVAL_METRICS = ("mean_waiting", "mean_queue", "throughput", "mean_travel_time", "co2_total")


def _eval_row(step: int, eps: float, losses: list, reports: list) -> dict:
    row = {"step": step, "epsilon": eps,
           "mean_td_loss": float(np.mean(losses)) if losses else math.nan}
    rec = [r if isinstance(r, dict) else r.as_dict() for r in reports]
    row["eval_return"] = float(np.mean([r["episode_return"] for r in rec])) if rec else math.nan
    for name in EVAL_METRICS:
        vals = [r[name] for r in rec if name in r]
        row[f"eval_{name}"] = float(np.mean(vals)) if vals else math.nan
    return row


TRAINING_LOG_FIELDS = ["step", "epsilon", "mean_td_loss", "eval_return"] + [f"eval_{m}" for m in EVAL_METRICS]


def run_training(env_factory: Callable[[], object], hp: Hyperparams, seed: int,
                 progress: Optional[Callable[[dict], None]] = None,
                 step_hook: Optional[Callable[[DQNAgent], None]] = None):
    """Train a DQN agent; returns ``(agent, log)``.

    Training episodes draw fresh demand from ``derive_seed(seed, "train", k)``;
    the periodic greedy evaluation reuses one fixed set of seeds so successive
    log rows are comparable. ``step_hook(agent)`` runs after every environment step.
    """
    hp.validate()
    env = env_factory()
    eval_env = env_factory()
    agent = DQNAgent(env.obs_size, env.n_actions, hp, seed)
    eval_seeds = [derive_seed(seed, "train-eval", i) for i in range(hp.eval_episodes)]
    log = []

    def evaluate_now(losses):
        reports = evaluate(agent.online, eval_env, eval_seeds, hp.gamma)
        row = _eval_row(agent.env_steps, epsilon_at(agent.env_steps, hp), losses, reports)
        log.append(row)
        if progress:
            progress(row)

    evaluate_now([])
    episode = 0
    obs = env.reset(derive_seed(seed, "train", episode))
    losses: list = []
    while agent.env_steps < hp.total_train_steps:
        eps = epsilon_at(agent.env_steps, hp)
        action = agent.act(obs, eps)
        next_obs, reward, done, _ = env.step(action)
        agent.buffer.add(Transition(obs, action, reward, next_obs, done))
        agent.env_steps += 1
        loss = train_step(agent)
        if loss is not None:
            losses.append(loss)
        if step_hook:
            step_hook(agent)
        if done:
            episode += 1
            obs = env.reset(derive_seed(seed, "train", episode))
        else:
            obs = next_obs
        if agent.env_steps % hp.eval_frequency == 0:
            evaluate_now(losses)
            losses = []
    if log[-1]["step"] != agent.env_steps:
        evaluate_now(losses)
    return agent, log
