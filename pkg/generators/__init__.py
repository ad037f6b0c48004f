from .network import NetworkGenerator, gen_network
from .trips import SegmentProfile, TripGenerator, segment_profile, simulate_trip, summarize_trips
from .splits import make_queries, make_split, make_test_queries, mask_energy, trip_query

__all__ = [
    "NetworkGenerator",
    "gen_network",
    "TripGenerator",
    "SegmentProfile",
    "segment_profile",
    "simulate_trip",
    "summarize_trips",
    "make_split",
    "make_queries",
    "make_test_queries",
    "mask_energy",
    "trip_query",
]
