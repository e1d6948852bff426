"""Classical controllers: Max Pressure, Longest Queue First and fixed-time.

All take per-lane halted counts and a lane -> phase map and return the
requested phase; min/max green masking happens in the simulator.
"""
from __future__ import annotations

from dataclasses import dataclass

from .microsim import PHASE_OF_APPROACH, APPROACHES, N_PHASES

DEFAULT_PHASE_MAP = tuple(PHASE_OF_APPROACH[a] for a in APPROACHES)


def max_pressure_action(queues, phase_map=DEFAULT_PHASE_MAP, downstream=None) -> int:
    """Phase with the largest sum of (incoming queue - downstream occupancy).

    Outgoing lanes are unmodelled sinks, so ``downstream`` defaults to zero.
    Ties go to the lower phase index.
    """
    if downstream is None:
        downstream = [0] * len(queues)
    pressure = [0.0] * N_PHASES
    for q, d, phase in zip(queues, downstream, phase_map):
        pressure[phase] += q - d
    best = 0
    for phase in range(1, N_PHASES):
        if pressure[phase] > pressure[best]:
            best = phase
    return best


def lqf_action(queues, phase_map=DEFAULT_PHASE_MAP) -> int:
    """Phase serving the single longest queue (first lane wins ties)."""
    best_lane = 0
    for i, q in enumerate(queues):
        if q > queues[best_lane]:
            best_lane = i
    return phase_map[best_lane]


def fixed_time_action(clock: float, cycle: float) -> int:
    return 0 if (clock % cycle) < cycle / 2 else 1


@dataclass(frozen=True)
class ControllerKind:
    name: str                 # "maxpressure" | "lqf" | "fixed"
    cycle: float = 0.0

    @classmethod
    def parse(cls, spec: str) -> "ControllerKind":
        spec = spec.strip().lower()
        if spec in ("maxpressure", "max_pressure", "mp"):
            return cls("maxpressure")
        if spec in ("lqf", "longest_queue", "longestqueuefirst"):
            return cls("lqf")
        if spec.startswith("fixed"):
            _, _, cycle = spec.partition(":")
            return cls("fixed", float(cycle) if cycle else 40.0)
        raise ValueError(f"unknown controller {spec!r}; valid: maxpressure, lqf, fixed:CYCLE")

    def validate(self, g_min: float) -> "ControllerKind":
        if self.name == "fixed" and self.cycle < 2 * g_min:
            raise ValueError(f"fixed-time cycle {self.cycle} must be >= 2*g_min ({2 * g_min})")
        return self

    @property
    def label(self) -> str:
        return f"fixed:{self.cycle:g}" if self.name == "fixed" else self.name

    def act(self, queues, clock: float, phase_map=DEFAULT_PHASE_MAP) -> int:
        if self.name == "maxpressure":
            return max_pressure_action(queues, phase_map)
        if self.name == "lqf":
            return lqf_action(queues, phase_map)
        return fixed_time_action(clock, self.cycle)
