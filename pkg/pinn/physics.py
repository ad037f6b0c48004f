"""
Physics decoder.

Maps pseudo velocity profiles (one row of n uniformly time-spaced samples per
segment) to time step, acceleration, jerk, power, energy and travel time. All
functions take batches: v is N x n, per-segment quantities are N x 1 columns.

Power per sample:

    p = (m/eta) * (a*v + climb + c_rr*g*v) + (A / (2*eta)) * c_air * rho * v^3

where climb is g*(h/L)*v in "grade" mode and the constant g*h in "literal" mode.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from models import RoadSegment, VehicleParams
from pinn.autograd import Node, add, as_node, constant, div, matmul, mul

FUEL_UNIT_JOULES = 0.386e6  # thermal energy of 10 ml diesel


@dataclass(frozen=True)
class PhysicsConstants:
    gravity: float = 9.81
    air_density: float = 1.225


@lru_cache(maxsize=8)
def _pair_weights(n: int) -> np.ndarray:
    c = np.full((n, 1), 2.0)
    c[0, 0] = c[-1, 0] = 1.0
    return c


@lru_cache(maxsize=8)
def _difference_matrix(n: int) -> np.ndarray:
    """v @ D gives central differences, one-sided at both ends (no division by the step)."""
    if n < 2:
        raise ValueError("profiles need at least two samples")
    D = np.zeros((n, n))
    D[0, 0], D[1, 0] = -1.0, 1.0
    D[n - 2, n - 1], D[n - 1, n - 1] = -1.0, 1.0
    for j in range(1, n - 1):
        D[j - 1, j] = -0.5
        D[j + 1, j] = 0.5
    return D


def delta_t(v, length) -> Node:
    """Time step between samples: 2L / sum_j (v_j + v_{j+1})."""
    v, length = as_node(v), as_node(length)
    return div(mul(length, 2.0), matmul(v, constant(_pair_weights(v.shape[1]))))


def acceleration(v, dt) -> Node:
    v = as_node(v)
    return div(matmul(v, constant(_difference_matrix(v.shape[1]))), dt)


def jerk(a, dt) -> Node:
    return acceleration(a, dt)


@dataclass
class PowerTerms:
    """Per-segment coefficients of the power model, each N x 1."""

    k_mass: np.ndarray  # m / eta
    k_rate: np.ndarray  # multiplies v inside the mass term
    k_const: np.ndarray  # added inside the mass term
    k_aero: np.ndarray  # multiplies v^3

    @classmethod
    def build(
        cls,
        mass,
        efficiency,
        frontal_area,
        drag_coeff,
        rolling_coeff,
        length,
        elevation,
        consts: PhysicsConstants = PhysicsConstants(),
        elevation_mode: str = "grade",
    ) -> "PowerTerms":
        col = lambda x: np.asarray(x, dtype=np.float64).reshape(-1, 1)
        mass, efficiency, frontal_area = col(mass), col(efficiency), col(frontal_area)
        drag_coeff, rolling_coeff, length, elevation = col(drag_coeff), col(rolling_coeff), col(length), col(elevation)
        g = consts.gravity
        if elevation_mode == "grade":
            k_rate = g * elevation / length + rolling_coeff * g
            k_const = np.zeros_like(k_rate)
        elif elevation_mode == "literal":
            k_rate = rolling_coeff * g
            k_const = g * elevation
        else:
            raise ValueError(f"unknown elevation mode {elevation_mode!r}")
        return cls(
            k_mass=mass / efficiency,
            k_rate=k_rate,
            k_const=k_const,
            k_aero=frontal_area * drag_coeff * consts.air_density / (2.0 * efficiency),
        )

    @classmethod
    def for_segment(
        cls,
        vehicle: VehicleParams,
        seg: RoadSegment,
        consts: PhysicsConstants = PhysicsConstants(),
        elevation_mode: str = "grade",
    ) -> "PowerTerms":
        return cls.build(
            vehicle.mass, vehicle.powertrain_efficiency, vehicle.frontal_area, vehicle.drag_coeff,
            vehicle.rolling_coeff, seg.length, seg.elevation_change, consts, elevation_mode,
        )


def power(v, a, terms: PowerTerms) -> Node:
    v, a = as_node(v), as_node(a)
    inner = add(add(mul(a, v), mul(constant(terms.k_rate), v)), constant(terms.k_const))
    cube = mul(mul(v, v), v)
    return add(mul(constant(terms.k_mass), inner), mul(constant(terms.k_aero), cube))


def energy(p, dt) -> Node:
    """Trapezoidal sum over the n-1 intervals, in joules."""
    p = as_node(p)
    return mul(dt, mul(matmul(p, constant(_pair_weights(p.shape[1]))), 0.5))


def travel_time(v, dt) -> Node:
    return mul(dt, float(as_node(v).shape[1] - 1))


@dataclass
class Decoded:
    dt: Node
    accel: Node
    jerk: Node
    power: Node
    energy: Node  # J, N x 1
    time: Node  # s, N x 1


def decode(v, length, terms: PowerTerms) -> Decoded:
    v = as_node(v)
    dt = delta_t(v, length)
    a = acceleration(v, dt)
    j = jerk(a, dt)
    p = power(v, a, terms)
    return Decoded(dt=dt, accel=a, jerk=j, power=p, energy=energy(p, dt), time=travel_time(v, dt))


def instantaneous_power(
    v: np.ndarray,
    a: np.ndarray,
    vehicle: VehicleParams,
    grade: float,
    consts: PhysicsConstants = PhysicsConstants(),
) -> np.ndarray:
    """Power model in grade form on plain arrays (W)."""
    g = consts.gravity
    eta = vehicle.powertrain_efficiency
    tractive = vehicle.mass / eta * (a * v + g * grade * v + vehicle.rolling_coeff * g * v)
    aero = vehicle.frontal_area / (2.0 * eta) * vehicle.drag_coeff * consts.air_density * v ** 3
    return tractive + aero


def joules_to_fuel(joules):
    return joules / FUEL_UNIT_JOULES


def fuel_to_joules(fuel_units):
    return fuel_units * FUEL_UNIT_JOULES
