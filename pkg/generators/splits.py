"""
Splits and Query Windows

20% of trips are held out for testing once. The rest is re-split 75/25 into
train/validation for every repeat (60/20 of the whole), and in every repeat only
a fraction of train and of validation trips keep their energy labels. Test trips
always keep both labels.
"""

import logging
from datetime import timedelta
from typing import Iterable, Sequence

import numpy as np

from errors import DataError
from models import LabeledQuery, QuerySpec, SplitPlan, SplitRepeat, TripRecord
from services.featurization import departure_of
from . import settings

logger = logging.getLogger(__name__)


def make_split(
    trips: Sequence[TripRecord],
    seed: int,
    energy_label_fraction: float = 0.05,
    repeats: int = settings.SPLIT_REPEATS,
) -> SplitPlan:
    if len(trips) < 10:
        raise DataError(f"need at least 10 trips to split, got {len(trips)}")
    ids = [t.trip_id for t in trips]
    order = np.random.default_rng(seed).permutation(len(ids))
    n_test = round(settings.TEST_FRACTION * len(ids))
    test = [ids[i] for i in order[:n_test]]
    rest = [ids[i] for i in order[n_test:]]

    plan_repeats = []
    for r in range(repeats):
        rng = np.random.default_rng([seed, r])
        shuffled = [rest[i] for i in rng.permutation(len(rest))]
        n_train = round(settings.TRAIN_SHARE_OF_REST * len(shuffled))
        train, val = shuffled[:n_train], shuffled[n_train:]
        labeled = []
        for part in (train, val):
            k = round(energy_label_fraction * len(part))
            labeled += [part[i] for i in sorted(rng.choice(len(part), size=k, replace=False))]
        plan_repeats.append(SplitRepeat(
            repeat=r,
            train_trip_ids=train,
            validation_trip_ids=val,
            labeled_trip_ids=labeled,
        ))
    return SplitPlan(
        seed=seed,
        energy_label_fraction=energy_label_fraction,
        test_trip_ids=test,
        repeats=plan_repeats,
    )


def mask_energy(trips: Iterable[TripRecord], labeled_ids: Iterable[str]) -> list[TripRecord]:
    """Drop fuel labels from every trip not in `labeled_ids`."""
    keep = set(labeled_ids)
    return [t if t.trip_id in keep else t.without_energy() for t in trips]


def _window(trip: TripRecord, start: int, length: int) -> LabeledQuery:
    segments = trip.segments[start:start + length]
    elapsed = sum(s.travel_time for s in trip.segments[:start])
    departure = departure_of(trip.departure_at + timedelta(seconds=elapsed))
    return LabeledQuery(
        trip_id=trip.trip_id,
        query=QuerySpec(path=[s.segment_id for s in segments], departure=departure, vehicle=trip.vehicle),
        segment_times=[s.travel_time for s in segments],
        segment_fuel=[s.fuel_units for s in segments] if trip.energy_labeled else None,
    )


def trip_query(trip: TripRecord) -> LabeledQuery:
    return _window(trip, 0, len(trip.segments))


def make_queries(trips: Sequence[TripRecord], length: int = 20, step: int = 5) -> list[LabeledQuery]:
    """
    Sliding sub-trips of `length` segments, `step` apart.

    A sub-trip departs when the truck reaches its first segment. Trips shorter than
    `length` contribute nothing.
    """
    queries, skipped = [], 0
    for trip in trips:
        n = len(trip.segments)
        if n < length:
            skipped += 1
            continue
        queries.extend(_window(trip, start, length) for start in range(0, n - length + 1, step))
    if skipped:
        logger.info("make_queries: %d trips shorter than %d segments skipped", skipped, length)
    return queries


def make_test_queries(trips: Sequence[TripRecord], lengths: Sequence[int]) -> dict[int, list[LabeledQuery]]:
    """Non-overlapping windows of each length; trips shorter than a length are skipped for it."""
    out = {}
    for length in lengths:
        out[length] = []
        skipped = 0
        for trip in trips:
            n = len(trip.segments)
            if n < length:
                skipped += 1
                continue
            out[length].extend(_window(trip, start, length) for start in range(0, n - length + 1, length))
        if skipped:
            logger.warning("test length %d: %d trips too short, skipped", length, skipped)
    return out
