"""
Synthetic trips: velocity profiles, energy labels, query windows and split plans
"""

from datetime import datetime

import numpy as np
import pandas as pd
import pytest
from scipy.integrate import trapezoid

from conftest import make_segment
from errors import DataError, NetworkValidationError
from generators import (
    TripGenerator,
    make_queries,
    make_split,
    make_test_queries,
    mask_energy,
    segment_profile,
    simulate_trip,
    summarize_trips,
    trip_query,
)
from generators import settings
from generators.trips import KMH, check_profile_bounds, plan_boundary_speeds, profile_energy, turn_speed
from models import SegmentLabel, TripRecord, VehicleParams
from pinn.physics import instantaneous_power, joules_to_fuel
from services import RoadNetwork
from services.featurization import departure_of
from storage import read_jsonl


def fake_trip(trip_id: str, n: int, departure_at: datetime = datetime(2020, 9, 2, 11, 0), labeled: bool = True):
    segments = [
        SegmentLabel(
            segment_id=f"s{i}",
            travel_time=10.0,
            fuel_units=1.0 + i if labeled else None,
            entry_speed=10.0,
            exit_speed=10.0,
        )
        for i in range(n)
    ]
    return TripRecord(
        trip_id=trip_id,
        departure_at=departure_at,
        departure=departure_of(departure_at),
        vehicle=VehicleParams(),
        segments=segments,
        energy_labeled=labeled,
    )


@pytest.mark.parametrize("length, entry, exit, cruise", [
    (1000.0, 4.0, 4.0, 25.0),
    (300.0, 4.0, 12.0, 25.0),
    (150.0, 10.0, 10.0, 20.0),
    (800.0, 20.0, 5.0, 15.0),
    (1500.0, 0.5, 22.0, 22.0),
])
def test_profiles_respect_the_comfort_bounds(length, entry, exit, cruise):
    profile = segment_profile(length, entry, exit, cruise)
    assert not profile.fallback
    assert check_profile_bounds(profile)
    assert profile.v[0] == pytest.approx(entry)
    assert profile.v[-1] == pytest.approx(exit, abs=1e-6)
    assert (profile.v >= -1e-9).all()
    assert profile.v.max() <= max(cruise, entry, exit) + 1e-9
    assert trapezoid(profile.v, profile.t) == pytest.approx(length, rel=1e-3)
    assert profile.t[-1] == pytest.approx(profile.duration)


def test_samples_are_ten_hertz():
    profile = segment_profile(500.0, 5.0, 5.0, 15.0)
    steps = np.diff(profile.t)
    np.testing.assert_allclose(steps[:-1], 1.0 / settings.SAMPLE_HZ)
    assert 0 < steps[-1] <= 1.0 / settings.SAMPLE_HZ + 1e-12


def test_short_segment_falls_back_to_a_ramp():
    profile = segment_profile(10.0, 5.0, 20.0, 20.0)
    assert profile.fallback
    assert profile.duration == pytest.approx(2 * 10.0 / 25.0)
    np.testing.assert_allclose(profile.a, (20.0 - 5.0) / profile.duration)


def test_constant_speed_energy():
    v, length, grade = 20.0, 1000.0, 0.01
    profile = segment_profile(length, v, v, v)
    np.testing.assert_allclose(profile.v, v)
    truck = VehicleParams()
    expected = instantaneous_power(np.array(v), np.array(0.0), truck, grade) * length / v
    assert profile_energy(profile, truck, grade) == pytest.approx(float(expected), rel=1e-9)


def test_descent_can_recover_energy():
    profile = segment_profile(1000.0, 15.0, 15.0, 15.0)
    assert profile_energy(profile, VehicleParams(), -0.015) < 0


@pytest.mark.parametrize("angle, expected_kmh", [(0.0, 72.0), (45.0, 43.5), (90.0, 15.0), (170.0, 15.0)])
def test_turn_speed(angle, expected_kmh):
    assert turn_speed(angle, 72.0 * KMH) == pytest.approx(expected_kmh * KMH)


def test_slow_roads_are_not_sped_up_for_turns():
    assert turn_speed(90.0, 10.0 * KMH) == pytest.approx(10.0 * KMH)


def test_boundary_speeds_slow_for_sharp_turns():
    end = settings.TRIP_END_SPEED_KMH * KMH
    straight = plan_boundary_speeds([1500.0, 1500.0], [20.0, 20.0], [0.0])
    assert straight == pytest.approx([end, 20.0, end])
    corner = plan_boundary_speeds([1500.0, 1500.0], [20.0, 20.0], [90.0])
    assert corner[1] == pytest.approx(15.0 * KMH)


def test_boundary_speeds_are_reachable():
    b = plan_boundary_speeds([40.0, 40.0, 2000.0], [25.0, 25.0, 25.0], [0.0, 0.0])
    for i, length in enumerate([40.0, 40.0, 2000.0]):
        profile = segment_profile(length, b[i], b[i + 1], 25.0)
        assert not profile.fallback


@pytest.fixture
def corner_net() -> RoadNetwork:
    return RoadNetwork([
        make_segment("east", "n0", "n1", length=1500.0, speed_limit=80.0, direction_angle=90.0),
        make_segment("north", "n1", "n2", length=1500.0, speed_limit=80.0, direction_angle=0.0, elevation_change=12.0),
        make_segment("ahead", "n2", "n3", length=900.0, speed_limit=60.0, direction_angle=0.0),
    ])


def test_simulated_trip_is_continuous(corner_net):
    record, profiles = simulate_trip(corner_net, ["east", "north", "ahead"], VehicleParams(), seed=1)
    labels = record.segments
    assert record.energy_labeled and record.fallback_segments == 0
    for prev, nxt, p_prev, p_next in zip(labels, labels[1:], profiles, profiles[1:]):
        assert prev.exit_speed == nxt.entry_speed
        assert p_prev.v[-1] == pytest.approx(p_next.v[0], abs=1e-6)
    assert labels[0].exit_speed == pytest.approx(15.0 * KMH)
    assert labels[0].entry_speed == pytest.approx(settings.TRIP_END_SPEED_KMH * KMH)


def test_simulated_labels_match_the_profiles(corner_net):
    vehicle = VehicleParams(mass=30000.0)
    record, profiles = simulate_trip(corner_net, ["east", "north"], vehicle, seed=2)
    for label, profile, sid in zip(record.segments, profiles, ["east", "north"]):
        assert label.travel_time == pytest.approx(profile.duration)
        expected = joules_to_fuel(profile_energy(profile, vehicle, corner_net[sid].grade))
        assert label.fuel_units == pytest.approx(expected)
    assert record.segments[1].fuel_units > record.segments[0].fuel_units  # uphill


def test_simulated_trip_needs_a_connected_path(corner_net):
    with pytest.raises(NetworkValidationError):
        simulate_trip(corner_net, ["east", "ahead"], VehicleParams(), seed=1)


def test_trip_generator_is_reproducible(tmp_path, grid_net, data_config):
    first = TripGenerator(grid_net, data_config).generate_batch(5)
    second = TripGenerator(grid_net, data_config).generate_batch(5)
    assert [t.model_dump() for t in first] == [t.model_dump() for t in second]
    gen = TripGenerator(grid_net, data_config)
    gen.save(first, tmp_path / "trips.jsonl")
    assert read_jsonl(tmp_path / "trips.jsonl", TripRecord) == first


def test_generated_trips_stay_in_range(grid_net, grid_trips, data_config):
    low, high = settings.VEHICLE_MASS_BOUNDS_KG
    start, end = settings.DEPARTURE_WINDOW
    for trip in grid_trips:
        assert data_config.min_trip_segments <= len(trip.segments) <= data_config.max_trip_segments
        assert low <= trip.vehicle.mass <= high
        assert start <= trip.departure_at <= end
        assert trip.departure == departure_of(trip.departure_at)
        grid_net.validate_path(trip.path)


def test_profile_sidecar(tmp_path, grid_net, data_config):
    gen = TripGenerator(grid_net, data_config, keep_profiles=True)
    trips = gen.generate_batch(2)
    gen.save_profiles(trips, tmp_path / "profiles.csv")
    df = pd.read_csv(tmp_path / "profiles.csv")
    assert list(df.columns) == ["trip_id", "segment_index", "segment_id", "t", "v", "a"]
    assert set(df["trip_id"]) == {t.trip_id for t in trips}


def test_summary(grid_trips):
    stats = summarize_trips(grid_trips)
    assert stats["trips"] == len(grid_trips)
    assert stats["segments"] == sum(len(t.segments) for t in grid_trips)
    assert stats["energy_labeled"] == len(grid_trips)


@pytest.mark.parametrize("n, expected", [(30, 3), (20, 1), (19, 0), (26, 2)])
def test_sliding_windows(n, expected):
    assert len(make_queries([fake_trip("t", n)], length=20, step=5)) == expected


def test_windows_depart_when_the_truck_gets_there():
    trip = fake_trip("t", 30, departure_at=datetime(2020, 9, 2, 11, 59))
    queries = make_queries([trip], length=20, step=5)
    assert queries[0].query.departure.slot == 2
    assert queries[1].query.departure.slot == 2  # 11:59 + 50 s
    assert queries[2].query.departure.slot == 3  # 11:59 + 100 s
    assert queries[1].query.path == [f"s{i}" for i in range(5, 25)]
    assert queries[1].segment_fuel == [1.0 + i for i in range(5, 25)]


def test_test_windows_do_not_overlap():
    trips = [fake_trip("a", 30), fake_trip("b", 12)]
    sets = make_test_queries(trips, [1, 10, 20])
    assert len(sets[1]) == 42
    assert len(sets[10]) == 4
    assert len(sets[20]) == 1
    assert trip_query(trips[0]).query.path == [f"s{i}" for i in range(30)]


def test_unlabeled_windows_carry_no_fuel():
    queries = make_queries([fake_trip("t", 20, labeled=False)], length=20)
    assert queries[0].segment_fuel is None and not queries[0].has_energy


def test_split_plan_sizes():
    trips = [fake_trip(f"t{i}", 1) for i in range(800)]
    plan = make_split(trips, seed=7, energy_label_fraction=0.05)
    assert len(plan.test_trip_ids) == 160
    assert len(plan.repeats) == settings.SPLIT_REPEATS
    for r in plan.repeats:
        assert len(r.train_trip_ids) == 480
        assert len(r.validation_trip_ids) == 160
        train = set(r.train_trip_ids)
        assert sum(t in train for t in r.labeled_trip_ids) == 24
        assert len(r.labeled_trip_ids) == 32
    assert plan.repeats[0].train_trip_ids != plan.repeats[1].train_trip_ids


def test_split_plan_is_reproducible():
    trips = [fake_trip(f"t{i}", 1) for i in range(50)]
    assert make_split(trips, seed=3) == make_split(trips, seed=3)
    assert make_split(trips, seed=3).test_trip_ids != make_split(trips, seed=4).test_trip_ids


def test_split_needs_enough_trips():
    with pytest.raises(DataError):
        make_split([fake_trip(f"t{i}", 1) for i in range(9)], seed=1)


def test_mask_energy_keeps_only_the_labeled_trips():
    trips = [fake_trip("keep", 3), fake_trip("drop", 3)]
    masked = {t.trip_id: t for t in mask_energy(trips, ["keep"])}
    assert masked["keep"].energy_labeled
    assert not masked["drop"].energy_labeled
    assert all(s.fuel_units is None for s in masked["drop"].segments)
    assert [s.travel_time for s in masked["drop"].segments] == [10.0] * 3
