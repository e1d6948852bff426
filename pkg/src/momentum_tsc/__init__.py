"""Momentum-based reward signal control: simulator, DQN agent and baselines."""

__version__ = "0.1.0"
