"""
Synthetic Data Settings

Every distribution, bound and rule the generators use. Values are inventions
sized for a heavy diesel truck fleet on a mixed urban/highway grid.
"""

from datetime import datetime

# Road network
SEGMENT_LENGTH_M = (200.0, 1500.0)
ELEVATION_CHANGE_M = 15.0  # |h| bound
DIRECTION_JITTER_DEG = 10.0
BRIDGE_PROBABILITY = 0.05
STREET_SPEED_SHARE = 0.8  # chance an edge keeps its street's speed limit

# (km/h, weight)
SPEED_LIMITS = [
    (30, 0.15),
    (50, 0.30),
    (70, 0.25),
    (90, 0.18),
    (110, 0.12),
]

ROAD_TYPE_BY_SPEED = {
    30: "residential",
    50: "tertiary",
    70: "secondary",
    90: "primary",
    110: "motorway",
}

# (min, max) lanes per direction
LANES_BY_SPEED = {
    30: (1, 1),
    50: (1, 2),
    70: (2, 2),
    90: (2, 3),
    110: (3, 4),
}

ENDPOINT_TYPES = [
    ("signal", 0.35),
    ("stop_sign", 0.25),
    ("junction", 0.35),
    ("ramp", 0.05),
]
RAMP_PROBABILITY_NEAR_MOTORWAY = 0.5

# Vehicles
VEHICLE_MASS_KG = (23257.71, 7844.85)  # mean, sd
VEHICLE_MASS_BOUNDS_KG = (12500.0, 36500.0)
FRONTAL_AREA_M2 = 10.5
DRAG_COEFF = 0.6
POWERTRAIN_EFFICIENCY = 0.56
ROLLING_COEFF = 0.006

# Trips
DEPARTURE_WINDOW = (datetime(2020, 8, 10), datetime(2021, 2, 13))
TRIP_LENGTH_GAMMA_SHAPE = 4.0

# Driving profile
SAMPLE_HZ = 10.0
MAX_ACCEL = 1.0  # m/s^2
MAX_JERK = 0.6  # m/s^3
CRUISE_FACTOR = (0.85, 1.0)  # cruise = speed limit x U(a, b)
TURN_SPEED_KMH = 15.0  # speed through turns of 90 degrees or more
FULL_TURN_DEG = 90.0
TRIP_END_SPEED_KMH = 15.0

# Splits
TEST_FRACTION = 0.2
TRAIN_SHARE_OF_REST = 0.75  # 60/20 of the whole
SPLIT_REPEATS = 10
