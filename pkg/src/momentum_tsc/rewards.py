"""State features and reward functions for the signal-control MDP."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .emissions import REFERENCE_MASS
from .microsim import SimConfig, StepMeasurements, SignalState


class RewardKind(str, enum.Enum):
    MBRF = "mbrf"
    NEG_WAITING = "wait"
    NEG_QUEUE = "queue"
    DIFF_WAITING = "diff"

    @classmethod
    def parse(cls, name: str) -> "RewardKind":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown reward {name!r}; valid: {[k.value for k in cls]}") from None


def observation_size(n_lanes: int = 4) -> int:
    return 2 + 1 + 2 * n_lanes


def build_observation(measurements: StepMeasurements, signal: SignalState, config: SimConfig) -> np.ndarray:
    """Feature vector ``[phase one-hot (2), min-green flag, densities, queues]``.

    During yellow the one-hot still marks the phase whose green is ending.
    """
    n = len(measurements.lane_density)
    obs = np.zeros(observation_size(n))
    obs[signal.phase] = 1.0
    obs[2] = 1.0 if (not signal.in_yellow and signal.phase_elapsed >= config.g_min - 1e-9) else 0.0
    cap = config.lane_capacity
    obs[3:3 + n] = np.clip(measurements.lane_density, 0.0, 1.0)
    obs[3 + n:] = np.clip(np.asarray(measurements.lane_halted) / cap, 0.0, 1.0)
    return obs


def initial_observation(signal: SignalState, config: SimConfig, n_lanes: int = 4) -> np.ndarray:
    obs = np.zeros(observation_size(n_lanes))
    obs[signal.phase] = 1.0
    obs[2] = 1.0 if signal.phase_elapsed >= config.g_min else 0.0
    return obs


def mbrf_reward(zone_vehicles, mass_scaling: bool = False) -> float:
    """Mean (mass-weighted) speed of vehicles in the detection zone.

    Masses are taken relative to a 1500 kg car when scaling is on and are 1
    otherwise. An empty zone gives 0.
    """
    if not zone_vehicles:
        return 0.0
    if mass_scaling:
        total = sum(mass / REFERENCE_MASS * speed for mass, speed in zone_vehicles)
    else:
        total = sum(speed for _, speed in zone_vehicles)
    return total / len(zone_vehicles)


def neg_waiting_reward(total_wait: float) -> float:
    return -total_wait


def neg_queue_reward(halted_total: float) -> float:
    return -halted_total


def diff_waiting_reward(prev_wait: float, curr_wait: float) -> tuple:
    """Returns ``(prev_wait - curr_wait, curr_wait)``; the second item is the new accumulator."""
    return prev_wait - curr_wait, curr_wait


@dataclass
class RewardFunction:
    """Stateful wrapper so every reward kind can be driven the same way per control step."""

    kind: RewardKind = RewardKind.MBRF
    mass_scaling: bool = False
    prev_wait: float = 0.0

    def reset(self) -> None:
        self.prev_wait = 0.0

    def __call__(self, m: StepMeasurements) -> float:
        if self.kind is RewardKind.MBRF:
            return mbrf_reward(m.zone_vehicles, self.mass_scaling)
        if self.kind is RewardKind.NEG_WAITING:
            return neg_waiting_reward(m.total_wait)
        if self.kind is RewardKind.NEG_QUEUE:
            return neg_queue_reward(m.halted_total)
        reward, self.prev_wait = diff_waiting_reward(self.prev_wait, m.total_wait)
        return reward
