"""
Evaluation

Path-level MAPE by path length, aggregated over split repeats, and the
lookup-table baseline: segments are binned by their categorical codes and by
floor(x / width) of each numeric feature, and every bin stores its mean fuel
rate per meter. A query segment takes the rate of its own bin or, on a miss, of
the nearest stored bin.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from errors import DataError
from models import EvalRow, LabeledQuery, QuerySpec
from services.featurization import raw_numeric
from services.road_network import RoadNetwork
from storage import write_csv, write_json

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["method", "path_len", "mape_mean", "mape_sd", "n_repeats"]
MAPE_GUARD = 1e-6

CATEGORY_KEYS = ["road_type", "start_ep_type", "end_ep_type", "lane_count", "is_bridge", "day", "time_slot"]

# numeric feature -> bin width
BIN_WIDTHS = {
    "mass": 10000.0,
    "speed_limit": 10.0,
    "length": 100.0,
    "turn_angle": 45.0,
    "direction_angle": 45.0,
    "elevation_change": 10.0,
}
BIN_KEYS = [f"{name}_bin" for name in BIN_WIDTHS]


def _segment_rows(q: QuerySpec, net: RoadNetwork) -> list[dict]:
    segs = [net[s] for s in q.path]
    widths = np.array(list(BIN_WIDTHS.values()))
    rows = []
    for seg, nxt in zip(segs, segs[1:] + [None]):
        bins = np.floor(raw_numeric(seg, nxt, q.vehicle) / widths).astype(int)
        row = {
            "road_type": seg.road_type.value,
            "start_ep_type": seg.start_endpoint_type.value,
            "end_ep_type": seg.end_endpoint_type.value,
            "lane_count": str(seg.lane_count),
            "is_bridge": str(int(seg.is_bridge)),
            "day": str(q.departure.day),
            "time_slot": str(q.departure.slot),
            "length": seg.length,
        }
        row.update(zip(BIN_KEYS, bins.tolist()))
        rows.append(row)
    return rows


@dataclass
class LookupTable:
    """Bins sorted by key; `rate` is mean fuel units per meter, `count` the member segments."""

    bins: pd.DataFrame

    def __post_init__(self):
        self.bins = self.bins.sort_values(CATEGORY_KEYS + BIN_KEYS, kind="mergesort").reset_index(drop=True)
        self._exact = {
            tuple(k): i for i, k in enumerate(self.bins[CATEGORY_KEYS + BIN_KEYS].itertuples(index=False, name=None))
        }
        self._by_category: dict[tuple, np.ndarray] = {
            key: idx.to_numpy()
            for key, idx in self.bins.groupby(CATEGORY_KEYS, sort=True).groups.items()
        }
        self._bin_matrix = self.bins[BIN_KEYS].to_numpy(dtype=np.int64)
        self._rates = self.bins["rate"].to_numpy(dtype=np.float64)

    def __len__(self) -> int:
        return len(self.bins)

    def rate(self, categories: tuple, bins: tuple) -> float:
        """Rate of the matching bin, else of the nearest bin (same categories first, lowest key on ties)."""
        hit = self._exact.get(categories + bins)
        if hit is not None:
            return float(self._rates[hit])
        candidates = self._by_category.get(categories)
        if candidates is None:
            candidates = np.arange(len(self.bins))
        diff = self._bin_matrix[candidates] - np.asarray(bins, dtype=np.int64)
        dist2 = (diff * diff).sum(axis=1)
        return float(self._rates[candidates[int(np.argmin(dist2))]])


def build_lookup(queries: Sequence[LabeledQuery], net: RoadNetwork) -> LookupTable:
    """Bin every segment of every energy-labeled query; other queries are ignored."""
    records = []
    for lq in queries:
        if not lq.has_energy:
            continue
        for row, fuel in zip(_segment_rows(lq.query, net), lq.segment_fuel):
            row["rate"] = fuel / row["length"]
            records.append(row)
    if not records:
        raise DataError("lookup table needs at least one energy-labeled segment")
    df = pd.DataFrame(records)
    grouped = df.groupby(CATEGORY_KEYS + BIN_KEYS, sort=True).agg(rate=("rate", "mean"), count=("rate", "size"))
    return LookupTable(grouped.reset_index())


def lookup_predict(table: LookupTable, q: QuerySpec, net: RoadNetwork) -> float:
    """Fuel units for the whole path: bin rate x segment length, summed."""
    total = 0.0
    for row in _segment_rows(q, net):
        categories = tuple(row[k] for k in CATEGORY_KEYS)
        bins = tuple(row[k] for k in BIN_KEYS)
        total += table.rate(categories, bins) * row["length"]
    return total


def mape_percent(pred, true) -> float:
    """MAPE in percent over paths with true value above the guard; NaN if none."""
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    keep = true > MAPE_GUARD
    dropped = int((~keep).sum())
    if dropped:
        logger.warning("excluded %d paths with true energy <= %g from MAPE", dropped, MAPE_GUARD)
    if not keep.any():
        return float("nan")
    return float(100.0 * np.mean(np.abs(pred[keep] - true[keep]) / true[keep]))


def evaluate(
    predict: Callable[[Sequence[LabeledQuery]], np.ndarray],
    test_sets: dict[int, Sequence[LabeledQuery]],
) -> dict[int, float]:
    """
    Energy MAPE (percent) of one method on each path-length bucket of one repeat.

    Args:
        predict: Maps a list of queries to predicted path fuel units
        test_sets: Path length -> test queries

    Returns:
        Path length -> MAPE; empty buckets map to NaN
    """
    out = {}
    for length, queries in sorted(test_sets.items()):
        labeled = [lq for lq in queries if lq.has_energy]
        if not labeled:
            out[length] = float("nan")
            continue
        pred = np.asarray(predict(labeled), dtype=np.float64)
        out[length] = mape_percent(pred, [lq.path_fuel for lq in labeled])
    return out


def aggregate(method: str, per_repeat: Sequence[dict[int, float]], lengths: Sequence[int]) -> list[EvalRow]:
    """Mean and sample sd over the repeats that produced a value for each length."""
    rows = []
    for length in lengths:
        values = np.array([r[length] for r in per_repeat if length in r and np.isfinite(r[length])])
        if values.size == 0:
            rows.append(EvalRow(method=method, path_len=length, n_repeats=0))
            continue
        sd = float(values.std(ddof=1)) if values.size >= 2 else 0.0
        rows.append(EvalRow(
            method=method, path_len=length, mape_mean=float(values.mean()), mape_sd=sd, n_repeats=int(values.size),
        ))
    return rows


def write_report(rows: Sequence[EvalRow], directory: str | Path, name: str = "report", extra: dict | None = None):
    """`<name>.csv` in the report layout plus `<name>.json` with the same rows and any extra fields."""
    directory = Path(directory)
    df = pd.DataFrame([r.model_dump() for r in rows], columns=REPORT_COLUMNS)
    write_csv(df, directory / f"{name}.csv")
    payload = {"rows": [r.model_dump() for r in rows]}
    payload.update(extra or {})
    write_json(payload, directory / f"{name}.json")
