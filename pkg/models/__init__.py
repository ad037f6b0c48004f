from .schemas import (
    RoadType,
    EndpointType,
    RoadSegment,
    VehicleParams,
    DepartureTime,
    QuerySpec,
    SegmentLabel,
    TripRecord,
    LabeledQuery,
    SplitRepeat,
    SplitPlan,
    TrainingLogRow,
    EvalRow,
    PredictionRecord,
)

__all__ = [
    "RoadType",
    "EndpointType",
    "RoadSegment",
    "VehicleParams",
    "DepartureTime",
    "QuerySpec",
    "SegmentLabel",
    "TripRecord",
    "LabeledQuery",
    "SplitRepeat",
    "SplitPlan",
    "TrainingLogRow",
    "EvalRow",
    "PredictionRecord",
]
