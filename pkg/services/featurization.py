"""
Featurization

Turns eco-toll queries into subpath windows. Every segment's feature row is

    [ node2vec embedding (32) | categorical embeddings (20) | numeric (6) ]

with numeric = [mass, speed_limit, length, turn_angle, direction_angle, elevation_change]
z-scored with training-set statistics. A window of half-width w around segment i
holds the rows of path[i-w .. i+w]; positions outside the path are zero rows with
mask false.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from errors import FeatureStatsError, UnknownSegmentError
from models import DepartureTime, QuerySpec, RoadSegment, VehicleParams
from services.embedding import EmbeddingTable
from services.road_network import RoadNetwork, turn_angle
from storage import write_csv

logger = logging.getLogger(__name__)

# Distinct (path, departure, vehicle) blocks kept per featurizer, least recently used evicted
BLOCK_CACHE_SIZE = 4096

NUMERIC_FEATURES = ["mass", "speed_limit", "length", "turn_angle", "direction_angle", "elevation_change"]

# (name, embedding width)
CATEGORICAL_FEATURES = [
    ("road_type", 4),
    ("start_ep_type", 4),
    ("end_ep_type", 4),
    ("lane_count", 2),
    ("is_bridge", 2),
    ("day", 2),
    ("time_slot", 2),
]
CATEGORICAL_DIM = sum(width for _, width in CATEGORICAL_FEATURES)

# Closed vocabularies: one row per value, no OOV row.
FIXED_VOCABS = {"day": [str(d) for d in range(7)], "time_slot": [str(s) for s in range(6)]}

OOV = "<oov>"
SLOT_HOURS = 4


def time_slot(timestamp: datetime) -> int:
    """Six equal slots per day: 00-04 -> 0, ..., 20-24 -> 5."""
    return timestamp.hour // SLOT_HOURS


def departure_of(timestamp: datetime) -> DepartureTime:
    return DepartureTime(day=timestamp.weekday(), slot=time_slot(timestamp))


def feature_width(embedding_dim: int) -> int:
    return embedding_dim + CATEGORICAL_DIM + len(NUMERIC_FEATURES)


def raw_numeric(seg: RoadSegment, next_seg: Optional[RoadSegment], vehicle: VehicleParams) -> np.ndarray:
    angle = 0.0 if next_seg is None else turn_angle(seg, next_seg)
    return np.array([
        vehicle.mass,
        seg.speed_limit,
        seg.length,
        angle,
        seg.direction_angle,
        seg.elevation_change,
    ])


def _raw_categories(seg: RoadSegment, departure: DepartureTime) -> list[str]:
    return [
        seg.road_type.value,
        seg.start_endpoint_type.value,
        seg.end_endpoint_type.value,
        str(seg.lane_count),
        str(int(seg.is_bridge)),
        str(departure.day),
        str(departure.slot),
    ]


@dataclass
class FeatureStats:
    mean: np.ndarray
    sd: np.ndarray

    @classmethod
    def fit(cls, queries: Sequence[QuerySpec], net: RoadNetwork) -> "FeatureStats":
        rows = [
            raw_numeric(net[a], net[b] if b else None, q.vehicle)
            for q in queries
            for a, b in zip(q.path, q.path[1:] + [None])
        ]
        if not rows:
            raise FeatureStatsError("cannot fit feature statistics on zero segments")
        data = np.vstack(rows)
        sd = data.std(axis=0)
        return cls(mean=data.mean(axis=0), sd=np.where(sd > 0, sd, 1.0))

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.mean) / self.sd

    def save(self, path: str | Path):
        df = pd.DataFrame({"feature": NUMERIC_FEATURES, "mean": self.mean, "sd": self.sd})
        write_csv(df, Path(path))

    @classmethod
    def load(cls, path: str | Path) -> "FeatureStats":
        path = Path(path)
        if not path.exists():
            raise FeatureStatsError(f"feature statistics not found: {path}")
        df = pd.read_csv(path, float_precision="round_trip")
        if list(df.columns) != ["feature", "mean", "sd"] or df["feature"].tolist() != NUMERIC_FEATURES:
            raise FeatureStatsError(f"{path}: expected rows for {', '.join(NUMERIC_FEATURES)}")
        if (df["sd"] <= 0).any():
            raise FeatureStatsError(f"{path}: standard deviations must be positive")
        return cls(mean=df["mean"].to_numpy(np.float64), sd=df["sd"].to_numpy(np.float64))


def numeric_features(
    seg: RoadSegment,
    next_seg: Optional[RoadSegment],
    vehicle: VehicleParams,
    stats: Optional[FeatureStats],
) -> np.ndarray:
    """Normalized numeric block of one segment; the last segment of a path has turn angle 0."""
    if stats is None:
        raise FeatureStatsError("numeric features need fitted normalization statistics")
    return stats.normalize(raw_numeric(seg, next_seg, vehicle))


class CategoricalVocab:
    """
    Category -> table row for each categorical feature.

    Open vocabularies reserve row 0 for unseen values; day and time slot are closed.
    """

    def __init__(self, rows: dict[str, dict[str, int]]):
        self.rows = rows

    @classmethod
    def fit(cls, net: RoadNetwork, segment_ids: Sequence[str]) -> "CategoricalVocab":
        seen: dict[str, set[str]] = {name: set() for name, _ in CATEGORICAL_FEATURES[:5]}
        placeholder = DepartureTime(day=0, slot=0)
        for sid in dict.fromkeys(segment_ids):
            for (name, _), value in zip(CATEGORICAL_FEATURES[:5], _raw_categories(net[sid], placeholder)):
                seen[name].add(value)
        rows = {
            name: {OOV: 0, **{c: i + 1 for i, c in enumerate(sorted(values))}}
            for name, values in seen.items()
        }
        for name, values in FIXED_VOCABS.items():
            rows[name] = {c: i for i, c in enumerate(values)}
        return cls(rows)

    def size(self, feature: str) -> int:
        return len(self.rows[feature])

    def table_sizes(self) -> dict[str, int]:
        return {name: self.size(name) for name, _ in CATEGORICAL_FEATURES}

    def codes(self, seg: RoadSegment, departure: DepartureTime) -> np.ndarray:
        return np.array([
            self.rows[name].get(value, 0)
            for (name, _), value in zip(CATEGORICAL_FEATURES, _raw_categories(seg, departure))
        ], dtype=np.intp)

    def save(self, path: str | Path):
        records = [
            {"feature": name, "category": category, "row_index": row}
            for name, _ in CATEGORICAL_FEATURES
            for category, row in sorted(self.rows[name].items(), key=lambda kv: kv[1])
        ]
        write_csv(pd.DataFrame(records, columns=["feature", "category", "row_index"]), Path(path))

    @classmethod
    def load(cls, path: str | Path) -> "CategoricalVocab":
        path = Path(path)
        if not path.exists():
            raise FeatureStatsError(f"categorical vocabulary not found: {path}")
        df = pd.read_csv(path, dtype={"category": str}, keep_default_na=False)
        rows: dict[str, dict[str, int]] = {name: {} for name, _ in CATEGORICAL_FEATURES}
        for rec in df.itertuples(index=False):
            if rec.feature not in rows:
                raise FeatureStatsError(f"{path}: unknown categorical feature {rec.feature!r}")
            rows[rec.feature][rec.category] = int(rec.row_index)
        for name, table in rows.items():
            if sorted(table.values()) != list(range(len(table))) or not table:
                raise FeatureStatsError(f"{path}: rows of {name!r} are not 0..n-1")
        return cls(rows)


@dataclass
class CategoricalEmbedder:
    """Vocabulary plus the current value of each categorical embedding table."""

    vocab: CategoricalVocab
    tables: dict[str, np.ndarray]

    def embed(self, codes: np.ndarray) -> np.ndarray:
        return np.concatenate([self.tables[name][codes[j]] for j, (name, _) in enumerate(CATEGORICAL_FEATURES)])


@dataclass
class SubpathTensor:
    X: np.ndarray
    mask: np.ndarray
    center_index: int


class Featurizer:
    """Everything needed to featurize queries against one network."""

    def __init__(
        self,
        net: RoadNetwork,
        embeddings: EmbeddingTable,
        stats: FeatureStats,
        vocab: CategoricalVocab,
        cache_size: int = BLOCK_CACHE_SIZE,
    ):
        self.net = net
        self.embeddings = embeddings
        self.stats = stats
        self.vocab = vocab
        self.cache_size = cache_size
        self._blocks: OrderedDict = OrderedDict()

    @property
    def width(self) -> int:
        return feature_width(self.embeddings.dim)

    def _segments(self, path: Sequence[str]) -> list[RoadSegment]:
        for sid in path:
            if sid not in self.net or sid not in self.embeddings:
                raise UnknownSegmentError(sid)
        return [self.net[sid] for sid in path]

    def path_blocks(self, q: QuerySpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Embedding rows, categorical codes and normalized numerics for each path segment."""
        key = (tuple(q.path), q.departure, q.vehicle)
        if key in self._blocks:
            self._blocks.move_to_end(key)
            return self._blocks[key]
        segs = self._segments(q.path)
        emb = np.vstack([self.embeddings.vector(s.id) for s in segs])
        codes = np.vstack([self.vocab.codes(s, q.departure) for s in segs])
        nums = np.vstack([
            numeric_features(s, n, q.vehicle, self.stats) for s, n in zip(segs, segs[1:] + [None])
        ])
        self._blocks[key] = (emb, codes, nums)
        while len(self._blocks) > self.cache_size:
            self._blocks.popitem(last=False)
        return emb, codes, nums

    def cached_blocks(self) -> int:
        return len(self._blocks)


def build_subpaths(
    q: QuerySpec,
    w: int,
    featurizer: Featurizer,
    cat: CategoricalEmbedder,
) -> list[SubpathTensor]:
    """One (2w+1) x 58 window per path segment, centered on that segment."""
    emb, codes, nums = featurizer.path_blocks(q)
    rows = np.hstack([emb, np.vstack([cat.embed(c) for c in codes]), nums])
    n, width = rows.shape
    out = []
    for i in range(n):
        X = np.zeros((2 * w + 1, width))
        mask = np.zeros(2 * w + 1, dtype=bool)
        for r, j in enumerate(range(i - w, i + w + 1)):
            if 0 <= j < n:
                X[r] = rows[j]
                mask[r] = True
        out.append(SubpathTensor(X=X, mask=mask, center_index=w))
    return out


@dataclass
class SegmentBatch:
    """
    Index form of every subpath window in a list of queries.

    Window rows are flattened segment-major: row s*l + r is position r of the window
    centred on segment s, with l = 2w+1. Categorical codes stay as table rows so the
    model can gather from its trainable tables.
    """

    window: int
    emb_rows: np.ndarray  # (N*l, d)
    code_rows: np.ndarray  # (N*l, 7) int
    numeric_rows: np.ndarray  # (N*l, 6)
    mask: np.ndarray  # (N, l) bool
    length: np.ndarray  # (N, 1) m
    elevation: np.ndarray  # (N, 1) m
    mass: np.ndarray  # (N, 1) kg
    frontal_area: np.ndarray  # (N, 1)
    drag_coeff: np.ndarray  # (N, 1)
    efficiency: np.ndarray  # (N, 1)
    rolling_coeff: np.ndarray  # (N, 1)
    path_index: np.ndarray  # (N,) int
    n_paths: int

    @property
    def n_segments(self) -> int:
        return self.mask.shape[0]

    @property
    def window_len(self) -> int:
        return 2 * self.window + 1

    @property
    def center_rows(self) -> np.ndarray:
        return np.arange(self.n_segments) * self.window_len + self.window

    @classmethod
    def from_queries(cls, queries: Sequence[QuerySpec], featurizer: Featurizer, window: int) -> "SegmentBatch":
        if not queries:
            raise ValueError("cannot batch zero queries")
        l = 2 * window + 1
        offsets = np.arange(-window, window + 1)
        emb_parts, code_parts, num_parts, mask_parts = [], [], [], []
        physics: dict[str, list] = {k: [] for k in (
            "length", "elevation", "mass", "frontal_area", "drag_coeff", "efficiency", "rolling_coeff"
        )}
        path_index = []

        for k, q in enumerate(queries):
            emb, codes, nums = featurizer.path_blocks(q)
            n = emb.shape[0]
            # Row n is the zero padding row.
            emb = np.vstack([emb, np.zeros((1, emb.shape[1]))])
            codes = np.vstack([codes, np.zeros((1, codes.shape[1]), dtype=np.intp)])
            nums = np.vstack([nums, np.zeros((1, nums.shape[1]))])

            idx = np.arange(n)[:, None] + offsets[None, :]
            inside = (idx >= 0) & (idx < n)
            flat = np.where(inside, idx, n).ravel()
            emb_parts.append(emb[flat])
            code_parts.append(codes[flat])
            num_parts.append(nums[flat])
            mask_parts.append(inside)

            segs = [featurizer.net[s] for s in q.path]
            v = q.vehicle
            physics["length"].extend(s.length for s in segs)
            physics["elevation"].extend(s.elevation_change for s in segs)
            physics["mass"].extend([v.mass] * n)
            physics["frontal_area"].extend([v.frontal_area] * n)
            physics["drag_coeff"].extend([v.drag_coeff] * n)
            physics["efficiency"].extend([v.powertrain_efficiency] * n)
            physics["rolling_coeff"].extend([v.rolling_coeff] * n)
            path_index.extend([k] * n)

        col = {k: np.asarray(vals, dtype=np.float64).reshape(-1, 1) for k, vals in physics.items()}
        return cls(
            window=window,
            emb_rows=np.vstack(emb_parts),
            code_rows=np.vstack(code_parts),
            numeric_rows=np.vstack(num_parts),
            mask=np.vstack(mask_parts).reshape(-1, l),
            path_index=np.asarray(path_index, dtype=np.intp),
            n_paths=len(queries),
            **col,
        )
