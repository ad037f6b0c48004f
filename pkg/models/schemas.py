from pydantic import BaseModel, ConfigDict, Field, model_validator
from datetime import datetime
from typing import Optional
from enum import Enum


class RoadType(str, Enum):
    RESIDENTIAL = "residential"
    TERTIARY = "tertiary"
    SECONDARY = "secondary"
    PRIMARY = "primary"
    MOTORWAY = "motorway"


class EndpointType(str, Enum):
    SIGNAL = "signal"
    STOP_SIGN = "stop_sign"
    JUNCTION = "junction"
    RAMP = "ramp"


class RoadSegment(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    from_node: str
    to_node: str
    length: float = Field(gt=0)  # m
    speed_limit: float = Field(gt=0)  # km/h
    elevation_change: float = 0.0  # m, signed
    road_type: RoadType
    lane_count: int = Field(ge=1, le=8)
    is_bridge: bool = False
    start_endpoint_type: EndpointType
    end_endpoint_type: EndpointType
    direction_angle: float = Field(ge=0.0, lt=360.0)  # degrees clockwise from north

    @property
    def grade(self) -> float:
        return self.elevation_change / self.length


class VehicleParams(BaseModel):
    """Physical parameters of the power model; defaults describe the reference diesel truck."""

    model_config = ConfigDict(frozen=True)

    mass: float = Field(default=23257.71, gt=0)  # kg
    frontal_area: float = Field(default=10.5, gt=0)  # m^2
    drag_coeff: float = Field(default=0.6, gt=0)
    powertrain_efficiency: float = Field(default=0.56, gt=0, le=1)
    rolling_coeff: float = Field(default=0.006, gt=0)


class DepartureTime(BaseModel):
    model_config = ConfigDict(frozen=True)

    day: int = Field(ge=0, le=6)  # Monday = 0
    slot: int = Field(ge=0, le=5)  # four-hour slot of the day


class QuerySpec(BaseModel):
    """An eco-toll query: a path, when it starts and which vehicle drives it."""

    path: list[str] = Field(min_length=1)
    departure: DepartureTime
    vehicle: VehicleParams = Field(default_factory=VehicleParams)


class SegmentLabel(BaseModel):
    segment_id: str
    travel_time: float = Field(gt=0)  # s
    fuel_units: Optional[float] = None  # 10 ml diesel equivalents
    entry_speed: float = Field(ge=0)  # m/s
    exit_speed: float = Field(ge=0)  # m/s


class TripRecord(BaseModel):
    trip_id: str
    departure_at: datetime
    departure: DepartureTime
    vehicle: VehicleParams
    segments: list[SegmentLabel] = Field(min_length=1)
    energy_labeled: bool = True
    fallback_segments: int = 0

    @model_validator(mode="after")
    def _fuel_iff_labeled(self):
        present = [s.fuel_units is not None for s in self.segments]
        if self.energy_labeled and not all(present):
            raise ValueError(f"trip {self.trip_id}: labeled trip is missing fuel on some segments")
        if not self.energy_labeled and any(present):
            raise ValueError(f"trip {self.trip_id}: unlabeled trip carries fuel values")
        return self

    @property
    def path(self) -> list[str]:
        return [s.segment_id for s in self.segments]

    def without_energy(self) -> "TripRecord":
        segments = [s.model_copy(update={"fuel_units": None}) for s in self.segments]
        return self.model_copy(update={"segments": segments, "energy_labeled": False})


class LabeledQuery(BaseModel):
    """A query together with its per-segment labels (fuel may be missing)."""

    trip_id: str
    query: QuerySpec
    segment_times: list[float]
    segment_fuel: Optional[list[float]] = None

    @model_validator(mode="after")
    def _labels_match_path(self):
        n = len(self.query.path)
        if len(self.segment_times) != n:
            raise ValueError(f"query of {n} segments has {len(self.segment_times)} time labels")
        if self.segment_fuel is not None and len(self.segment_fuel) != n:
            raise ValueError(f"query of {n} segments has {len(self.segment_fuel)} fuel labels")
        return self

    @property
    def has_energy(self) -> bool:
        return self.segment_fuel is not None

    @property
    def path_time(self) -> float:
        return sum(self.segment_times)

    @property
    def path_fuel(self) -> Optional[float]:
        return None if self.segment_fuel is None else sum(self.segment_fuel)


class SplitRepeat(BaseModel):
    repeat: int
    train_trip_ids: list[str]
    validation_trip_ids: list[str]
    labeled_trip_ids: list[str]


class SplitPlan(BaseModel):
    seed: int
    energy_label_fraction: float = Field(gt=0, le=1)
    test_trip_ids: list[str]
    repeats: list[SplitRepeat]

    @model_validator(mode="after")
    def _test_is_disjoint(self):
        test = set(self.test_trip_ids)
        for r in self.repeats:
            train, val = set(r.train_trip_ids), set(r.validation_trip_ids)
            if test & train or test & val or train & val:
                raise ValueError(f"repeat {r.repeat}: test/train/validation sets overlap")
            if not set(r.labeled_trip_ids) <= train | val:
                raise ValueError(f"repeat {r.repeat}: labeled trips outside train/validation")
        return self


class TrainingLogRow(BaseModel):
    epoch: int
    train_loss: float
    val_energy_mape: Optional[float] = None
    val_time_mape: Optional[float] = None
    stopped: bool = False


class EvalRow(BaseModel):
    method: str
    path_len: int
    mape_mean: Optional[float] = None  # percent
    mape_sd: Optional[float] = None
    n_repeats: int = 0


class PredictionRecord(BaseModel):
    query_index: int
    energy_j: float
    fuel_units: float
    time_s: float
