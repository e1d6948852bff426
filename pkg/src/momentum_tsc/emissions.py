"""CO2 surrogate and episode-level traffic metrics.

The emission model is a speed/acceleration polynomial scaled by vehicle mass
relative to a 1500 kg passenger car. Absolute grams are only meaningful for
comparing controllers against each other inside this simulator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

REFERENCE_MASS = 1500.0


@dataclass(frozen=True)
class EmissionParams:
    idle: float = 0.45          # g/s
    linear: float = 0.03        # g/m
    quadratic: float = 0.002    # g s / m^2
    cubic: float = 0.0001       # g s^2 / m^3
    accel_coupling: float = 0.06  # g s^2 / m^2
    mass_scale: float = 1.0

    def __post_init__(self):
        if self.idle <= 0:
            raise ValueError("idle emission intercept must be positive")
        if self.mass_scale <= 0:
            raise ValueError("mass_scale must be positive")

    @classmethod
    def for_mass(cls, mass: float, **coefficients) -> "EmissionParams":
        return cls(mass_scale=mass / REFERENCE_MASS, **coefficients)


CAR_EMISSIONS = EmissionParams()


def co2_rate(speed: float, accel: float, params: EmissionParams = CAR_EMISSIONS) -> float:
    """Instantaneous CO2 emission rate in g/s.

    Idling emits ``params.idle * params.mass_scale``; only positive
    acceleration adds to the rate.
    """
    if speed < 0:
        raise ValueError(f"speed must be non-negative, got {speed}")
    p = params
    base = p.idle + speed * (p.linear + speed * (p.quadratic + speed * p.cubic))
    if accel > 0:
        base += p.accel_coupling * accel * speed
    return p.mass_scale * max(p.idle, base)


@dataclass
class EpisodeReport:
    mean_waiting: float = 0.0
    mean_queue: float = 0.0
    throughput: int = 0
    mean_travel_time: float = 0.0
    co2_total: float = 0.0
    episode_return: float = 0.0
    seed: int = 0
    spawned: int = 0
    blocked: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricsAccumulator:
    """Collects per-sub-step quantities and turns them into an EpisodeReport.

    ``add_substep`` is fed once per simulation sub-step; ``finalize`` adds the
    waiting time still held by vehicles that never left the network.
    """

    substeps: int = 0
    halted_sum: float = 0.0
    throughput: int = 0
    travel_time_sum: float = 0.0
    exited_wait_sum: float = 0.0
    co2_total: float = 0.0
    spawned: int = 0
    blocked: int = 0

    def add_substep(self, halted_total: int, exit_records, co2_increment: float,
                    spawned: int = 0, blocked: int = 0) -> None:
        """``exit_records`` is an iterable of (travel_time, cumulative_wait)."""
        self.substeps += 1
        self.halted_sum += halted_total
        for travel, wait in exit_records:
            self.throughput += 1
            self.travel_time_sum += travel
            self.exited_wait_sum += wait
        self.co2_total += co2_increment
        self.spawned += spawned
        self.blocked += blocked

    def finalize(self, in_network_wait: float, episode_return: float = 0.0,
                 seed: int = 0) -> EpisodeReport:
        total_wait = self.exited_wait_sum + in_network_wait
        done = self.throughput
        return EpisodeReport(
            mean_waiting=total_wait / done if done else 0.0,
            mean_queue=self.halted_sum / self.substeps if self.substeps else 0.0,
            throughput=done,
            mean_travel_time=self.travel_time_sum / done if done else 0.0,
            co2_total=self.co2_total,
            episode_return=episode_return,
            seed=seed,
            spawned=self.spawned,
            blocked=self.blocked,
        )


def report_is_finite(report: EpisodeReport) -> bool:
    return all(math.isfinite(float(v)) for v in asdict(report).values())
