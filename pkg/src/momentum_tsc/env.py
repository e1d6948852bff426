"""Gym-style wrapper tying the simulator, features and a reward together."""
from __future__ import annotations

from dataclasses import replace
from typing import Callable, Optional

import numpy as np

from . import microsim
from .emissions import EpisodeReport
from .microsim import SimConfig, SimState
from .rewards import RewardFunction, RewardKind, build_observation, initial_observation


class TrafficSignalEnv:
    n_actions = 2

    def __init__(self, config: SimConfig, reward: Optional[RewardFunction] = None,
                 record_trace: bool = False):
        self.config = config.validate()
        self.reward_fn = reward or RewardFunction(RewardKind.MBRF)
        self.record_trace = record_trace
        self.state: Optional[SimState] = None
        self.last_measurements = None
        self.last_queues = (0,) * len(microsim.APPROACHES)
        self.rewards: list = []

    @property
    def obs_size(self) -> int:
        return 3 + 2 * len(microsim.APPROACHES)

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        cfg = self.config if seed is None else replace(self.config, seed=int(seed))
        self.state = microsim.init_sim(cfg, record_trace=self.record_trace)
        self.reward_fn.reset()
        self.rewards = []
        self.last_measurements = None
        self.last_queues = (0,) * len(self.state.lanes)
        return initial_observation(self.state.signal, cfg, len(self.state.lanes))

    def step(self, action: int):
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        _, m = microsim.step(self.state, int(action))
        self.last_measurements = m
        self.last_queues = m.lane_halted_end
        reward = self.reward_fn(m)
        self.rewards.append(reward)
        obs = build_observation(m, self.state.signal, self.state.config)
        return obs, reward, self.state.episode_done(), m

    def report(self, gamma: float = 1.0) -> EpisodeReport:
        from .dqn import discounted_return
        return microsim.episode_report(self.state, discounted_return(self.rewards, gamma))


Policy = Callable[[TrafficSignalEnv, np.ndarray], int]


def run_episode(env: TrafficSignalEnv, policy: Policy, seed: int, gamma: float = 1.0) -> EpisodeReport:
    obs = env.reset(seed)
    done = False
    while not done:
        obs, _, done, _ = env.step(policy(env, obs))
    return env.report(gamma)


def controller_policy(controller) -> Policy:
    def policy(env: TrafficSignalEnv, obs: np.ndarray) -> int:
        return controller.act(env.last_queues, env.state.clock)
    return policy
