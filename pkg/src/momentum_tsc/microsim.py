"""Discrete-time microsimulation of a four-arm, two-phase intersection.

One incoming lane per approach (N, S, E, W). Vehicles follow single-file
kinematics with bounded acceleration and braking; a vehicle only picks a speed
from which it can still stop behind its leader (and, when facing red or yellow,
before the stop line) using at most its maximum deceleration. Vehicles that
cross the stop line spend a fixed traversal time in the junction and then leave
the network.

The state is mutated in place by ``step``; all functions also return it so they
can be chained.
"""
from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import dataclass, field, replace, asdict
from typing import Optional

import numpy as np

from .emissions import EmissionParams, MetricsAccumulator, EpisodeReport, co2_rate, REFERENCE_MASS

APPROACHES = ("N", "S", "E", "W")
PHASE_OF_APPROACH = {"N": 0, "S": 0, "E": 1, "W": 1}
N_PHASES = 2
INF = math.inf


class ConfigError(ValueError):
    """Raised for invalid simulator or experiment configuration."""


@dataclass(frozen=True)
class VehicleClass:
    name: str
    mass: float
    length: float
    max_speed: float
    max_accel: float
    max_decel: float
    emission_scale: float = 0.0

    def __post_init__(self):
        for attr in ("mass", "length", "max_speed", "max_accel", "max_decel"):
            if not getattr(self, attr) > 0:
                raise ConfigError(f"vehicle class {self.name!r}: {attr} must be > 0")
        if self.emission_scale <= 0:
            object.__setattr__(self, "emission_scale", self.mass / REFERENCE_MASS)
        # cached: co2_rate is evaluated for every vehicle on every sub-step
        object.__setattr__(self, "emissions", EmissionParams(mass_scale=self.emission_scale))


CAR = VehicleClass("car", mass=1500.0, length=5.0, max_speed=13.89, max_accel=2.6, max_decel=4.5)
TRUCK = VehicleClass("truck", mass=8000.0, length=10.0, max_speed=11.11, max_accel=1.2, max_decel=4.0)
BUS = VehicleClass("bus", mass=12000.0, length=12.0, max_speed=11.11, max_accel=1.0, max_decel=4.0)
MOTORCYCLE = VehicleClass("motorcycle", mass=200.0, length=2.5, max_speed=13.89, max_accel=3.0, max_decel=4.5)

DEFAULT_CLASSES = {c.name: c for c in (CAR, TRUCK, BUS, MOTORCYCLE)}
HETEROGENEOUS_MIXTURE = {"car": 0.5, "truck": 0.2, "bus": 0.15, "motorcycle": 0.15}


@dataclass(slots=True, eq=False)
class Vehicle:
    id: int
    vclass: VehicleClass
    lane: int
    position: float
    speed: float
    spawn_time: float
    cumulative_wait: float = 0.0
    exited: bool = False
    accel: float = 0.0
    hard_stops: int = 0
    exit_time: float = 0.0


@dataclass(slots=True, eq=False)
class LaneState:
    id: int
    approach: str
    length: float
    served_by_phase: int
    vehicles: list = field(default_factory=list)  # front (nearest stop line) first


@dataclass(slots=True)
class SignalState:
    phase: int = 0
    phase_elapsed: float = 0.0
    in_yellow: bool = False
    yellow_remaining: float = 0.0
    pending_phase: int = 0


@dataclass
class SimConfig:
    g_min: float = 5.0
    g_max: float = 50.0
    yellow: float = 2.0
    control_interval: float = 5.0
    sim_step: float = 1.0
    lane_length: float = 150.0
    detection_zone: float = 100.0
    halt_speed_threshold: float = 0.1
    min_gap: float = 2.5
    junction_time: float = 2.0
    episode_duration: float = 1000.0
    arrival_rate_range: tuple = (0.05, 0.20)
    class_mixture: dict = field(default_factory=lambda: {"car": 1.0})
    vehicle_classes: dict = field(default_factory=lambda: dict(DEFAULT_CLASSES))
    seed: int = 0

    def validate(self) -> "SimConfig":
        if not self.g_min < self.g_max:
            raise ConfigError(f"g_min ({self.g_min}) must be < g_max ({self.g_max})")
        if self.sim_step <= 0:
            raise ConfigError("sim_step must be > 0")
        for name in ("control_interval", "yellow", "episode_duration", "junction_time"):
            value = getattr(self, name)
            ratio = value / self.sim_step
            if value <= 0 or abs(ratio - round(ratio)) > 1e-9:
                raise ConfigError(f"{name} ({value}) must be a positive multiple of sim_step ({self.sim_step})")
        if self.yellow > self.control_interval:
            raise ConfigError(f"yellow ({self.yellow}) must be <= control_interval ({self.control_interval})")
        ratio = self.episode_duration / self.control_interval
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("episode_duration must be a multiple of control_interval")
        if self.g_max < self.control_interval:
            raise ConfigError("g_max must be >= control_interval")
        if self.lane_length <= 0 or not 0 < self.detection_zone <= self.lane_length:
            raise ConfigError("need 0 < detection_zone <= lane_length")
        if self.halt_speed_threshold < 0 or self.min_gap < 0:
            raise ConfigError("halt_speed_threshold and min_gap must be non-negative")
        lo, hi = self.arrival_rate_range
        if not 0 <= lo <= hi:
            raise ConfigError(f"arrival_rate_range must satisfy 0 <= low <= high, got {self.arrival_rate_range}")
        unknown = set(self.class_mixture) - set(self.vehicle_classes)
        if unknown:
            raise ConfigError(f"class_mixture names unknown vehicle classes: {sorted(unknown)}")
        if any(p < 0 for p in self.class_mixture.values()):
            raise ConfigError("class_mixture probabilities must be non-negative")
        if abs(sum(self.class_mixture.values()) - 1.0) > 1e-9:
            raise ConfigError(f"class_mixture must sum to 1, got {sum(self.class_mixture.values())}")
        return self

    @property
    def substeps_per_action(self) -> int:
        return int(round(self.control_interval / self.sim_step))

    @property
    def steps_per_episode(self) -> int:
        return int(round(self.episode_duration / self.control_interval))

    @property
    def lane_capacity(self) -> int:
        car = self.vehicle_classes.get("car", CAR)
        return max(1, int(self.lane_length // (car.length + self.min_gap)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arrival_rate_range"] = list(self.arrival_rate_range)
        return d


@dataclass
class StepMeasurements:
    lane_density: tuple        # interval mean, fraction of lane length occupied
    lane_halted: tuple         # interval mean halted count
    lane_halted_end: tuple     # halted count at interval end
    zone_vehicles: list        # (mass kg, interval-mean speed m/s) per vehicle seen in the zone
    total_wait: float          # sum of cumulative_wait over in-network vehicles at interval end
    halted_total: int          # halted vehicles at interval end
    co2: float
    spawned: int
    blocked: int
    exited: int
    phase: int
    phase_elapsed: float
    in_yellow: bool


class TraceRecorder:
    """Per-sub-step records for offline checks, written as two CSV files."""

    SIGNAL_FIELDS = (["t", "phase", "in_yellow", "phase_elapsed", "yellow_remaining", "pending_phase"]
                     + [f"queue_{a}" for a in APPROACHES] + [f"density_{a}" for a in APPROACHES]
                     + ["spawns", "exits", "blocked", "co2", "total_wait", "in_network"])
    VEHICLE_FIELDS = ["t", "vehicle", "lane", "class", "mass", "length", "position", "speed",
                      "cumulative_wait", "halted", "in_zone", "crossed", "facing"]

    def __init__(self):
        self.signal_rows: list = []
        self.vehicle_rows: list = []

    def write(self, prefix) -> tuple:
        sig_path, veh_path = f"{prefix}_signal.csv", f"{prefix}_vehicles.csv"
        for path, header, rows in ((sig_path, self.SIGNAL_FIELDS, self.signal_rows),
                                   (veh_path, self.VEHICLE_FIELDS, self.vehicle_rows)):
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                w.writerows(rows)
        return sig_path, veh_path


@dataclass(eq=False)
class SimState:
    config: SimConfig
    lanes: list
    signal: SignalState
    rng: np.random.Generator
    arrival_rates: tuple
    tick: int = 0
    spawned_count: int = 0
    exited_count: int = 0
    blocked_count: int = 0
    travel_time_sum: float = 0.0
    co2_total: float = 0.0
    junction: list = field(default_factory=list)
    next_id: int = 0
    hard_stops: int = 0
    red_crossings: int = 0
    metrics: MetricsAccumulator = field(default_factory=MetricsAccumulator)
    trace: Optional[TraceRecorder] = None

    @property
    def clock(self) -> float:
        return self.tick * self.config.sim_step

    def in_network(self) -> int:
        return sum(len(lane.vehicles) for lane in self.lanes) + len(self.junction)

    def all_vehicles(self):
        for lane in self.lanes:
            yield from lane.vehicles
        yield from self.junction

    def in_network_wait(self) -> float:
        return sum(v.cumulative_wait for v in self.all_vehicles())

    def episode_done(self) -> bool:
        return self.clock >= self.config.episode_duration - 1e-9


def stream(seed: int, name: str) -> np.random.Generator:
    """Deterministic generator for a named stream of a seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), zlib.crc32(name.encode())]))


def init_sim(config: SimConfig, record_trace: bool = False) -> SimState:
    config.validate()
    rng = stream(config.seed, "demand")
    lo, hi = config.arrival_rate_range
    rates = tuple(float(r) for r in rng.uniform(lo, hi, size=len(APPROACHES)))
    lanes = [LaneState(i, a, config.lane_length, PHASE_OF_APPROACH[a]) for i, a in enumerate(APPROACHES)]
    return SimState(config=config, lanes=lanes, signal=SignalState(), rng=rng, arrival_rates=rates,
                    trace=TraceRecorder() if record_trace else None)


# --- kinematics -------------------------------------------------------------

def braking_distance(speed: float, decel: float, dt: float) -> float:
    """Distance covered while braking at full rate to standstill in steps of ``dt``.

    Positions advance by the mean of old and new speed each step, so the
    final partial step covers more ground than continuous braking would.
    """
    if speed <= 0:
        return 0.0
    bdt = decel * dt
    k = math.floor(speed / bdt)
    return dt * ((k + 0.5) * speed - bdt * k * (k + 1) / 2)


def stoppable_speed(distance: float, decel: float, dt: float) -> float:
    """Largest speed whose braking distance fits in ``distance``."""
    if distance <= 0:
        return 0.0
    bdt2 = decel * dt * dt
    k = math.floor(math.sqrt(2 * distance / bdt2))
    return (distance / dt + decel * dt * k * (k + 1) / 2) / (k + 0.5)


def safe_speed(speed: float, distance: float, decel: float, dt: float) -> float:
    """Largest next speed u such that moving this step and then braking fits in ``distance``.

    Solves ``(speed + u) / 2 * dt + braking_distance(u) <= distance``; the left side
    is piecewise linear in u with breakpoints at multiples of ``decel * dt``.
    """
    c = distance - 0.5 * speed * dt
    if c <= 0:
        return 0.0
    bdt2 = decel * dt * dt
    k = math.floor((math.sqrt(1 + 8 * c / bdt2) - 1) / 2)
    return (c + bdt2 * k * (k + 1) / 2) / (dt * (k + 1))


def advance_vehicle(vehicle: Vehicle, leader_gap: float, stop_line_distance: float,
                    facing_green: bool, dt: float) -> Vehicle:
    """One kinematic update.

    ``leader_gap`` is the free distance to the leader's rear minus the minimum
    gap (``inf`` without a leader). The stop line only constrains when not
    facing green. If no bounded-braking speed keeps the vehicle behind the
    constraint (a light turning yellow right in front of it), the vehicle is
    held exactly at the constraint and ``hard_stops`` is incremented.
    """
    vc = vehicle.vclass
    v = vehicle.speed
    lo = max(0.0, v - vc.max_decel * dt)
    new = min(vc.max_speed, v + vc.max_accel * dt)
    limit = leader_gap if facing_green else min(leader_gap, stop_line_distance)
    if limit < INF:
        cap = safe_speed(v, limit, vc.max_decel, dt)
        new = max(lo, min(new, cap))
    dx = 0.5 * (v + new) * dt
    if dx > limit:
        if dx > limit + 1e-9:
            vehicle.hard_stops += 1
            new = 0.0
        dx = max(limit, 0.0)
    vehicle.accel = (new - v) / dt
    vehicle.speed = new
    vehicle.position += dx
    return vehicle


# --- signal -----------------------------------------------------------------

def apply_action(state: SimState, action: int) -> SimState:
    """Apply a phase request at a control boundary.

    Requests are masked while green is younger than ``g_min``; a switch is
    forced when holding green for another interval would exceed ``g_max``.
    """
    if action not in (0, 1):
        raise ValueError(f"action must be 0 or 1, got {action!r}")
    sig = state.signal
    cfg = state.config
    if sig.in_yellow:
        return state
    if sig.phase_elapsed + cfg.control_interval > cfg.g_max + 1e-9:
        target = 1 - sig.phase
    elif action != sig.phase and sig.phase_elapsed >= cfg.g_min - 1e-9:
        target = action
    else:
        return state
    sig.in_yellow = True
    sig.yellow_remaining = cfg.yellow
    sig.pending_phase = target
    return state


def _advance_signal(sig: SignalState, cfg: SimConfig) -> None:
    dt = cfg.sim_step
    if sig.in_yellow:
        sig.yellow_remaining -= dt
        if sig.yellow_remaining <= 1e-9:
            sig.phase = sig.pending_phase
            sig.in_yellow = False
            sig.yellow_remaining = 0.0
            sig.phase_elapsed = 0.0
    else:
        sig.phase_elapsed += dt


# --- demand -----------------------------------------------------------------

def spawn_vehicles(state: SimState, dt: float) -> tuple:
    """Poisson arrivals per approach; returns (spawned, blocked) for this sub-step."""
    cfg = state.config
    rng = state.rng
    names = list(cfg.class_mixture)
    probs = np.array([cfg.class_mixture[n] for n in names], dtype=float)
    cum = np.cumsum(probs)
    counts = rng.poisson(np.asarray(state.arrival_rates) * dt)
    spawned = blocked = 0
    sig = state.signal
    for lane, n in zip(state.lanes, counts):
        for _ in range(int(n)):
            u = rng.random()
            vc = cfg.vehicle_classes[names[min(int(np.searchsorted(cum, u, side="right")), len(names) - 1)]]
            room = INF
            if lane.vehicles:
                last = lane.vehicles[-1]
                room = last.position - last.vclass.length - cfg.min_gap
                if room < 0:
                    blocked += 1
                    continue
            green = not sig.in_yellow and sig.phase == lane.served_by_phase
            if not green:
                room = min(room, lane.length)
            speed = vc.max_speed if room == INF else min(vc.max_speed, stoppable_speed(room, vc.max_decel, dt))
            lane.vehicles.append(Vehicle(state.next_id, vc, lane.id, 0.0, speed, state.clock))
            state.next_id += 1
            spawned += 1
    state.spawned_count += spawned
    state.blocked_count += blocked
    return spawned, blocked


def insert_vehicle(state: SimState, lane_id: int, position: float, speed: float = 0.0,
                   vclass: VehicleClass = CAR) -> Vehicle:
    """Place a vehicle directly (scenario setup and tests); keeps lane ordering."""
    lane = state.lanes[lane_id]
    if not 0 <= position <= lane.length:
        raise ValueError(f"position {position} outside lane [0, {lane.length}]")
    veh = Vehicle(state.next_id, vclass, lane_id, float(position), float(speed), state.clock)
    lane.vehicles.append(veh)
    lane.vehicles.sort(key=lambda v: -v.position)
    for lead, follow in zip(lane.vehicles, lane.vehicles[1:]):
        if follow.position > lead.position - lead.vclass.length - state.config.min_gap + 1e-9:
            lane.vehicles.remove(veh)
            raise ValueError("inserted vehicle violates minimum spacing")
    state.next_id += 1
    state.spawned_count += 1
    state.metrics.spawned += 1
    return veh


# --- stepping ---------------------------------------------------------------

def _substep(state: SimState, zone: dict, lane_density: list, lane_halted: list) -> tuple:
    cfg = state.config
    dt = cfg.sim_step
    sig = state.signal
    t_end = (state.tick + 1) * dt
    trace = state.trace
    spawned, blocked = spawn_vehicles(state, dt)

    halted_by_lane = [0] * len(state.lanes)
    co2 = 0.0
    threshold = cfg.halt_speed_threshold
    zone_start = cfg.lane_length - cfg.detection_zone
    min_gap = cfg.min_gap
    crossed = []
    for lane in state.lanes:
        served = sig.phase == lane.served_by_phase
        green = served and not sig.in_yellow
        facing = "G" if green else ("Y" if served else "R")
        leader_back = INF
        occupied = 0.0
        n_cross = 0
        halted = 0
        for veh in lane.vehicles:
            vc = veh.vclass
            gap = leader_back - min_gap - veh.position
            leader_back = veh.position - vc.length
            advance_vehicle(veh, gap, lane.length - veh.position, green, dt)
            occupied += vc.length + min_gap
            co2 += co2_rate(veh.speed, veh.accel, vc.emissions) * dt
            is_halted = veh.speed < threshold
            if is_halted:
                veh.cumulative_wait += dt
                halted += 1
            did_cross = veh.position > lane.length
            if did_cross:
                n_cross += 1
                if not green:
                    state.red_crossings += 1
            in_zone = not did_cross and veh.position >= zone_start
            if in_zone:
                rec = zone.get(veh.id)
                if rec is None:
                    zone[veh.id] = [vc.mass, veh.speed, 1]
                else:
                    rec[1] += veh.speed
                    rec[2] += 1
            if trace is not None:
                trace.vehicle_rows.append((t_end, veh.id, lane.id, vc.name, vc.mass, vc.length, veh.position,
                                           veh.speed, veh.cumulative_wait, int(is_halted), int(in_zone),
                                           int(did_cross), facing))
        if n_cross:
            moved = lane.vehicles[:n_cross]
            del lane.vehicles[:n_cross]
            for veh in moved:
                veh.exit_time = t_end + cfg.junction_time
                crossed.append(veh)
            # crossers leave the lane, so they do not count as occupying it
            occupied -= sum(v.vclass.length + min_gap for v in moved)
        density = min(1.0, occupied / lane.length)
        lane_density[lane.id] += density
        lane_halted[lane.id] += halted
        halted_by_lane[lane.id] = halted

    exits = []
    staying = []
    for veh in state.junction:
        co2 += co2_rate(veh.speed, 0.0, veh.vclass.emissions) * dt
        if veh.exit_time <= t_end + 1e-9:
            veh.exited = True
            travel = t_end - veh.spawn_time
            state.exited_count += 1
            state.travel_time_sum += travel
            exits.append((travel, veh.cumulative_wait))
        else:
            staying.append(veh)
            if trace is not None:
                vc = veh.vclass
                trace.vehicle_rows.append((t_end, veh.id, veh.lane, vc.name, vc.mass, vc.length, veh.position,
                                           veh.speed, veh.cumulative_wait, 0, 0, 0, "J"))
    staying.extend(crossed)
    state.junction = staying
    state.co2_total += co2

    halted_total = sum(halted_by_lane)
    state.metrics.add_substep(halted_total, exits, co2, spawned, blocked)

    if trace is not None:
        trace.signal_rows.append(
            (t_end, sig.phase, int(sig.in_yellow), sig.phase_elapsed, sig.yellow_remaining, sig.pending_phase,
             *halted_by_lane, *(lane_density_now(state, i) for i in range(len(state.lanes))),
             spawned, len(exits), blocked, co2, state.in_network_wait(), state.in_network()))

    _advance_signal(sig, cfg)
    state.tick += 1
    return spawned, blocked, len(exits), halted_by_lane, co2


def lane_density_now(state: SimState, lane_id: int) -> float:
    lane = state.lanes[lane_id]
    occupied = sum(v.vclass.length + state.config.min_gap for v in lane.vehicles)
    return min(1.0, occupied / lane.length)


def step(state: SimState, action: int) -> tuple:
    """Advance one control interval. Returns (state, StepMeasurements)."""
    cfg = state.config
    apply_action(state, action)
    n_lanes = len(state.lanes)
    zone: dict = {}
    density = [0.0] * n_lanes
    halted = [0.0] * n_lanes
    spawned = blocked = exited = 0
    co2 = 0.0
    halted_end = [0] * n_lanes
    n_sub = cfg.substeps_per_action
    for _ in range(n_sub):
        s, b, e, halted_end, c = _substep(state, zone, density, halted)
        spawned += s
        blocked += b
        exited += e
        co2 += c
    sig = state.signal
    measurements = StepMeasurements(
        lane_density=tuple(d / n_sub for d in density),
        lane_halted=tuple(h / n_sub for h in halted),
        lane_halted_end=tuple(halted_end),
        zone_vehicles=[(rec[0], rec[1] / rec[2]) for rec in zone.values()],
        total_wait=state.in_network_wait(),
        halted_total=sum(halted_end),
        co2=co2,
        spawned=spawned,
        blocked=blocked,
        exited=exited,
        phase=sig.phase,
        phase_elapsed=sig.phase_elapsed,
        in_yellow=sig.in_yellow,
    )
    return state, measurements


def episode_report(state: SimState, episode_return: float = 0.0, seed: Optional[int] = None) -> EpisodeReport:
    return state.metrics.finalize(state.in_network_wait(), episode_return,
                                  state.config.seed if seed is None else seed)


def snapshot(state: SimState) -> bytes:
    """Canonical serialized form of the dynamic state (used for determinism checks)."""
    def veh(v: Vehicle) -> list:
        return [v.id, v.vclass.name, v.lane, v.position, v.speed, v.spawn_time, v.cumulative_wait,
                v.exited, v.accel, v.exit_time]

    data = {
        "config": state.config.to_dict(),
        "tick": state.tick,
        "signal": asdict(state.signal),
        "rates": list(state.arrival_rates),
        "lanes": [[veh(v) for v in lane.vehicles] for lane in state.lanes],
        "junction": [veh(v) for v in state.junction],
        "counts": [state.spawned_count, state.exited_count, state.blocked_count, state.next_id],
        "sums": [state.travel_time_sum, state.co2_total],
        "rng": state.rng.bit_generator.state,
    }
    return json.dumps(data, sort_keys=True, default=str).encode()


def with_overrides(config: SimConfig, **overrides) -> SimConfig:
    return replace(config, **overrides)
