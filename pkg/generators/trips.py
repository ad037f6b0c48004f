"""
Trip Generator

Simulates trucks driving shortest-path routes over a road network. Every segment
gets a 10 Hz jerk-limited velocity profile: accelerate from the entry speed to a
cruise speed, hold it, then slow to the exit speed. Speed changes are S-curves
with |a| <= MAX_ACCEL and |da/dt| <= MAX_JERK. Boundary speeds come from the turn
rule and are then made reachable with a backward and a forward pass, so the
exit speed of one segment is the entry speed of the next.

Ground-truth energy is the trapezoidal integral of the power model over the dense
profile; one fuel unit is 0.386 MJ.
"""

import logging
import math
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Optional, Sequence

import networkx as nx
import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from models import SegmentLabel, TripRecord, VehicleParams
from models.config import DataConfig
from pinn.physics import PhysicsConstants, instantaneous_power, joules_to_fuel
from services.featurization import departure_of
from services.road_network import RoadNetwork, turn_angle
from storage import write_csv, write_jsonl
from . import settings
from .base import BaseGenerator

logger = logging.getLogger(__name__)

KMH = 1.0 / 3.6


@dataclass
class SegmentProfile:
    t: np.ndarray  # s, from 0 to duration inclusive
    v: np.ndarray  # m/s
    a: np.ndarray  # m/s^2
    jerk: np.ndarray  # m/s^3, of the phase each sample falls in
    duration: float
    fallback: bool = False


def _change_phases(v0: float, v1: float, a_max: float, j_max: float) -> list[tuple[float, float]]:
    """(duration, jerk) phases of a symmetric S-curve from v0 to v1, starting and ending at a = 0."""
    dv = abs(v1 - v0)
    if dv < 1e-12:
        return []
    s = 1.0 if v1 > v0 else -1.0
    if dv >= a_max * a_max / j_max:
        ramp = a_max / j_max
        return [(ramp, s * j_max), (dv / a_max - ramp, 0.0), (ramp, -s * j_max)]
    ramp = math.sqrt(dv / j_max)
    return [(ramp, s * j_max), (ramp, -s * j_max)]


def transition_distance(v0: float, v1: float, a_max: float = settings.MAX_ACCEL, j_max: float = settings.MAX_JERK) -> float:
    """Distance an S-curve speed change covers; symmetric in v0 and v1."""
    duration = sum(d for d, _ in _change_phases(v0, v1, a_max, j_max))
    return duration * (v0 + v1) / 2.0


def max_reachable(v0: float, length: float, cap: float) -> float:
    """Highest speed in [v0, cap] reachable from (or brakeable to) v0 within `length` meters."""
    if cap <= v0 or transition_distance(v0, cap) <= length:
        return cap
    lo, hi = v0, cap
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if transition_distance(v0, mid) <= length:
            lo = mid
        else:
            hi = mid
    return lo


def turn_speed(angle_deg: float, full_speed: float) -> float:
    """Full speed going straight, falling linearly to the turn speed at 90 degrees and beyond."""
    slow = settings.TURN_SPEED_KMH * KMH
    share = min(angle_deg, settings.FULL_TURN_DEG) / settings.FULL_TURN_DEG
    return full_speed - (full_speed - slow) * share if full_speed > slow else full_speed


def plan_boundary_speeds(lengths: Sequence[float], cruise: Sequence[float], angles: Sequence[float]) -> list[float]:
    """
    Speeds at the n+1 segment boundaries of a trip.

    Args:
        lengths: Segment lengths (m)
        cruise: Cruise speed of each segment (m/s)
        angles: Turn angle at each of the n-1 inner boundaries (degrees)
    """
    n = len(lengths)
    end = settings.TRIP_END_SPEED_KMH * KMH
    b = [min(end, cruise[0])]
    b += [turn_speed(angles[i - 1], min(cruise[i - 1], cruise[i])) for i in range(1, n)]
    b.append(min(end, cruise[-1]))

    for i in reversed(range(n)):
        if b[i] > b[i + 1]:
            b[i] = min(b[i], max_reachable(b[i + 1], lengths[i], b[i]))
    for i in range(n):
        if b[i + 1] > b[i]:
            b[i + 1] = min(b[i + 1], max_reachable(b[i], lengths[i], b[i + 1]))
    return b


def _integrate(phases: list[tuple[float, float, Optional[float]]], v_start: float, hz: float):
    starts, a0, v0 = [], [], []
    t = a = 0.0
    v = v_start
    for duration, j, a_override in phases:
        if a_override is not None:
            a = a_override
        starts.append(t)
        a0.append(a)
        v0.append(v)
        v += a * duration + 0.5 * j * duration ** 2
        a += j * duration
        t += duration

    grid = np.arange(0.0, t, 1.0 / hz)
    grid = np.append(grid, t) if grid.size == 0 or grid[-1] < t else grid
    starts, a0, v0 = np.array(starts), np.array(a0), np.array(v0)
    jerks = np.array([j for _, j, _ in phases])
    k = np.clip(np.searchsorted(starts, grid, side="right") - 1, 0, len(phases) - 1)
    tau = grid - starts[k]
    acc = a0[k] + jerks[k] * tau
    vel = v0[k] + a0[k] * tau + 0.5 * jerks[k] * tau ** 2
    return grid, vel, acc, jerks[k], t


def segment_profile(
    length: float,
    entry: float,
    exit: float,
    cruise: float,
    hz: float = settings.SAMPLE_HZ,
) -> SegmentProfile:
    """
    Dense profile over one segment: S-curve to a peak speed, cruise, S-curve to the exit speed.

    The peak is the cruise speed when the segment is long enough, otherwise the
    highest speed whose two transitions still fit. When even the direct
    entry -> exit transition does not fit, a constant-acceleration ramp is used
    and the profile is flagged as a fallback.
    """
    a_max, j_max = settings.MAX_ACCEL, settings.MAX_JERK
    floor = max(entry, exit)
    cruise = max(cruise, floor)
    need = lambda peak: transition_distance(entry, peak) + transition_distance(peak, exit)

    if need(floor) > length * (1.0 + 1e-9):
        duration = 2.0 * length / (entry + exit)
        ramp_a = (exit - entry) / duration
        t, v, a, j, total = _integrate([(duration, 0.0, ramp_a)], entry, hz)
        return SegmentProfile(t=t, v=v, a=a, jerk=j, duration=total, fallback=True)

    if need(cruise) <= length:
        peak = cruise
    else:
        lo, hi = floor, cruise
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if need(mid) <= length else (lo, mid)
        peak = lo

    phases = [(d, j, None) for d, j in _change_phases(entry, peak, a_max, j_max)]
    hold = max(length - need(peak), 0.0) / peak
    if hold > 0:
        phases.append((hold, 0.0, None))
    phases += [(d, j, None) for d, j in _change_phases(peak, exit, a_max, j_max)]
    t, v, a, j, total = _integrate(phases, entry, hz)
    return SegmentProfile(t=t, v=v, a=a, jerk=j, duration=total)


def profile_energy(
    profile: SegmentProfile,
    vehicle: VehicleParams,
    grade: float,
    consts: PhysicsConstants = PhysicsConstants(),
) -> float:
    """Trapezoidal integral of power over the profile (J); negative on steep descents."""
    p = instantaneous_power(profile.v, profile.a, vehicle, grade, consts)
    return float(trapezoid(p, profile.t))


def check_profile_bounds(profile: SegmentProfile, tol: float = 1e-9) -> bool:
    return bool(
        np.all(np.abs(profile.a) <= settings.MAX_ACCEL + tol)
        and np.all(np.abs(profile.jerk) <= settings.MAX_JERK + tol)
    )


def simulate_trip(
    net: RoadNetwork,
    path: Sequence[str],
    vehicle: VehicleParams,
    seed: int,
    trip_id: str = "trip",
    departure_at: datetime = settings.DEPARTURE_WINDOW[0],
) -> tuple[TripRecord, list[SegmentProfile]]:
    """
    Drive `path` once and label every segment.

    Returns:
        (trip record with time and fuel labels, dense profile of each segment)
    """
    net.validate_path(list(path))
    rng = np.random.default_rng(seed)
    segs = [net[s] for s in path]
    cruise = [s.speed_limit * KMH * rng.uniform(*settings.CRUISE_FACTOR) for s in segs]
    angles = [turn_angle(a, b) for a, b in zip(segs, segs[1:])]
    bounds = plan_boundary_speeds([s.length for s in segs], cruise, angles)

    labels, profiles, fallbacks = [], [], 0
    for i, seg in enumerate(segs):
        profile = segment_profile(seg.length, bounds[i], bounds[i + 1], cruise[i])
        if profile.fallback:
            fallbacks += 1
        elif not check_profile_bounds(profile):
            raise RuntimeError(f"trip {trip_id}: profile of {seg.id} breaks the acceleration/jerk bounds")
        energy = profile_energy(profile, vehicle, seg.grade)
        labels.append(SegmentLabel(
            segment_id=seg.id,
            travel_time=profile.duration,
            fuel_units=joules_to_fuel(energy),
            entry_speed=bounds[i],
            exit_speed=bounds[i + 1],
        ))
        profiles.append(profile)

    if fallbacks:
        logger.warning("trip %s: %d segments fell back to a constant-acceleration ramp", trip_id, fallbacks)
    record = TripRecord(
        trip_id=trip_id,
        departure_at=departure_at,
        departure=departure_of(departure_at),
        vehicle=vehicle,
        segments=labels,
        energy_labeled=True,
        fallback_segments=fallbacks,
    )
    return record, profiles


class TripGenerator(BaseGenerator):
    """Random trucks on random routes; trip k is simulated with its own derived seed."""

    def __init__(self, net: RoadNetwork, config: DataConfig, keep_profiles: bool = False):
        super().__init__(config.seed)
        self.net = net
        self.config = config
        self.keep_profiles = keep_profiles
        self.profiles: dict[str, list[SegmentProfile]] = {}
        self._count = 0
        self._nodes = list(net.nodes)

    def _trip_length(self) -> int:
        cfg = self.config
        shape = settings.TRIP_LENGTH_GAMMA_SHAPE
        n = round(self.rng.gamma(shape, cfg.mean_trip_segments / shape))
        return int(np.clip(n, cfg.min_trip_segments, cfg.max_trip_segments))

    def _route(self, target: int) -> list[str]:
        graph = self.net.graph
        weight = lambda u, v, d: self.net[d["segment_id"]].length
        cur = self._nodes[self.rng.integers(len(self._nodes))]
        path: list[str] = []
        while len(path) < target:
            waypoint = cur
            while waypoint == cur:
                waypoint = self._nodes[self.rng.integers(len(self._nodes))]
            nodes = nx.shortest_path(graph, cur, waypoint, weight=weight)
            path.extend(graph.edges[u, v]["segment_id"] for u, v in zip(nodes, nodes[1:]))
            cur = waypoint
        return path[:target]

    def _vehicle(self) -> VehicleParams:
        mean, sd = settings.VEHICLE_MASS_KG
        mass = float(np.clip(self.rng.normal(mean, sd), *settings.VEHICLE_MASS_BOUNDS_KG))
        return VehicleParams(
            mass=round(mass, 2),
            frontal_area=settings.FRONTAL_AREA_M2,
            drag_coeff=settings.DRAG_COEFF,
            powertrain_efficiency=settings.POWERTRAIN_EFFICIENCY,
            rolling_coeff=settings.ROLLING_COEFF,
        )

    def generate_one(self) -> TripRecord:
        k = self._count
        self._count += 1
        trip_seed = int(np.random.SeedSequence([self.config.seed, k]).generate_state(1)[0])
        path = self._route(self._trip_length())
        vehicle = self._vehicle()
        start, end = settings.DEPARTURE_WINDOW
        departure_at = self.fake.date_time_between(start_date=start, end_date=end).replace(microsecond=0)
        trip_id = self.fake.uuid4()
        record, profiles = simulate_trip(self.net, path, vehicle, trip_seed, trip_id, departure_at)
        if self.keep_profiles:
            self.profiles[trip_id] = profiles
        return record

    def save(self, records: list[TripRecord], path: Path) -> int:
        return write_jsonl(records, path)

    def save_profiles(self, records: list[TripRecord], path: Path):
        """Sidecar of dense profiles keyed by (trip_id, segment_index)."""
        frames = []
        for trip in records:
            for i, (label, prof) in enumerate(zip(trip.segments, self.profiles.get(trip.trip_id, []))):
                frames.append(pd.DataFrame({
                    "trip_id": trip.trip_id,
                    "segment_index": i,
                    "segment_id": label.segment_id,
                    "t": prof.t,
                    "v": prof.v,
                    "a": prof.a,
                }))
        columns = ["trip_id", "segment_index", "segment_id", "t", "v", "a"]
        df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=columns)
        write_csv(df[columns], path)


def summarize_trips(trips: Sequence[TripRecord]) -> dict:
    lengths = np.array([len(t.segments) for t in trips])
    return {
        "trips": len(trips),
        "segments": int(lengths.sum()) if len(trips) else 0,
        "mean_segments": float(lengths.mean()) if len(trips) else 0.0,
        "min_segments": int(lengths.min()) if len(trips) else 0,
        "max_segments": int(lengths.max()) if len(trips) else 0,
        "energy_labeled": sum(t.energy_labeled for t in trips),
        "fallback_segments": sum(t.fallback_segments for t in trips),
        "total_hours": sum(s.travel_time for t in trips for s in t.segments) / 3600.0,
    }
