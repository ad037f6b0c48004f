"""
Grid Road Network Generator

Intersections sit on a rows x cols grid named n{row}_{col}; every grid edge
becomes two directed segments sharing length, speed limit, road type, lanes and
bridge flag, with opposite elevation change and headings 180 degrees apart.
Each grid row and column is a "street" with its own usual speed limit, so fast
corridors run across the map.
"""

from pathlib import Path

from models import RoadSegment
from services.road_network import RoadNetwork, save_network
from . import settings
from .base import BaseGenerator


def _heading(deg: float) -> float:
    """Degrees clockwise from north, rounded to 0.01 and kept in [0, 360)."""
    return round(float(deg) % 360.0, 2) % 360.0


class NetworkGenerator(BaseGenerator):
    def __init__(self, rows: int, cols: int, seed: int | None = 42):
        if rows < 2 or cols < 2:
            raise ValueError(f"grid must be at least 2x2, got {rows}x{cols}")
        super().__init__(seed)
        self.rows = rows
        self.cols = cols

    def _speed_limit(self) -> int:
        speeds, weights = zip(*settings.SPEED_LIMITS)
        return int(self.rng.choice(speeds, p=[w / sum(weights) for w in weights]))

    def _endpoint_type(self, near_motorway: bool) -> str:
        if near_motorway and self.rng.random() < settings.RAMP_PROBABILITY_NEAR_MOTORWAY:
            return "ramp"
        types, weights = zip(*settings.ENDPOINT_TYPES)
        return str(self.rng.choice(types, p=[w / sum(weights) for w in weights]))

    def _grid_edges(self) -> list[tuple[tuple[int, int], tuple[int, int], float]]:
        """(from, to, base heading) for every undirected edge, heading east or south."""
        edges = []
        for r in range(self.rows):
            for c in range(self.cols):
                if c + 1 < self.cols:
                    edges.append(((r, c), (r, c + 1), 90.0))
                if r + 1 < self.rows:
                    edges.append(((r, c), (r + 1, c), 180.0))
        return edges

    def generate_one(self) -> RoadNetwork:
        row_speed = [self._speed_limit() for _ in range(self.rows)]
        col_speed = [self._speed_limit() for _ in range(self.cols)]

        drawn = []
        for a, b, heading in self._grid_edges():
            street = row_speed[a[0]] if heading == 90.0 else col_speed[a[1]]
            speed = street if self.rng.random() < settings.STREET_SPEED_SHARE else self._speed_limit()
            lo, hi = settings.LANES_BY_SPEED[speed]
            drawn.append(dict(
                a=a,
                b=b,
                speed=speed,
                length=round(float(self.rng.uniform(*settings.SEGMENT_LENGTH_M)), 1),
                elevation=round(float(self.rng.uniform(-settings.ELEVATION_CHANGE_M, settings.ELEVATION_CHANGE_M)), 2),
                lanes=int(self.rng.integers(lo, hi + 1)),
                bridge=bool(self.rng.random() < settings.BRIDGE_PROBABILITY),
                direction=_heading(
                    heading + self.rng.uniform(-settings.DIRECTION_JITTER_DEG, settings.DIRECTION_JITTER_DEG)
                ),
            ))

        near_motorway = set()
        for e in drawn:
            if settings.ROAD_TYPE_BY_SPEED[e["speed"]] == "motorway":
                near_motorway.update((e["a"], e["b"]))
        node_type = {
            (r, c): self._endpoint_type((r, c) in near_motorway)
            for r in range(self.rows)
            for c in range(self.cols)
        }

        name = lambda rc: f"n{rc[0]}_{rc[1]}"
        segments = []
        for e in drawn:
            for src, dst, sign, direction in (
                (e["a"], e["b"], 1.0, e["direction"]),
                (e["b"], e["a"], -1.0, _heading(e["direction"] + 180.0)),
            ):
                segments.append(RoadSegment(
                    id=f"s{len(segments)}",
                    from_node=name(src),
                    to_node=name(dst),
                    length=e["length"],
                    speed_limit=float(e["speed"]),
                    elevation_change=sign * e["elevation"] + 0.0,
                    road_type=settings.ROAD_TYPE_BY_SPEED[e["speed"]],
                    lane_count=e["lanes"],
                    is_bridge=e["bridge"],
                    start_endpoint_type=node_type[src],
                    end_endpoint_type=node_type[dst],
                    direction_angle=direction,
                ))

        nodes = [name((r, c)) for r in range(self.rows) for c in range(self.cols)]
        return RoadNetwork(segments, nodes=nodes)

    def save(self, net: RoadNetwork, path: Path):
        save_network(net, path)


def gen_network(rows: int, cols: int, seed: int = 42) -> RoadNetwork:
    return NetworkGenerator(rows, cols, seed).generate_one()
