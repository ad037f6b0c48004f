"""
Road Network

Directed road graph with per-segment static attributes, its edge-to-vertex dual
(line graph) and the two-CSV file format:

    nodes.csv     id
    segments.csv  id,from_node,to_node,length_m,speed_limit_kmh,elev_change_m,road_type,
                  lane_count,is_bridge,start_ep_type,end_ep_type,direction_deg

A RoadNetwork is immutable once built and safe to share between threads.
"""

import re
from pathlib import Path
from types import MappingProxyType
from typing import Iterable

import networkx as nx
import pandas as pd
from pydantic import ValidationError

from errors import DomainError, NetworkParseError, NetworkValidationError
from models import RoadSegment
from storage import write_csv

SEGMENT_COLUMNS = [
    "id", "from_node", "to_node", "length_m", "speed_limit_kmh", "elev_change_m",
    "road_type", "lane_count", "is_bridge", "start_ep_type", "end_ep_type", "direction_deg",
]
NODE_COLUMNS = ["id"]


class RoadNetwork:
    def __init__(
        self,
        segments: Iterable[RoadSegment],
        nodes: Iterable[str] | None = None,
        allow_self_loops: bool = False,
    ):
        segments = list(segments)
        by_id: dict[str, RoadSegment] = {}
        endpoints: dict[tuple[str, str], str] = {}
        for seg in segments:
            if seg.id in by_id:
                raise NetworkValidationError(f"duplicate segment id {seg.id!r}")
            if seg.from_node == seg.to_node and not allow_self_loops:
                raise NetworkValidationError(f"segment {seg.id!r} is a self-loop on {seg.from_node!r}")
            pair = (seg.from_node, seg.to_node)
            if pair in endpoints:
                raise NetworkValidationError(
                    f"segments {endpoints[pair]!r} and {seg.id!r} both run {pair[0]} -> {pair[1]}"
                )
            endpoints[pair] = seg.id
            by_id[seg.id] = seg

        if nodes is None:
            node_list = list(dict.fromkeys(n for s in segments for n in (s.from_node, s.to_node)))
        else:
            node_list = list(dict.fromkeys(nodes))
            known = set(node_list)
            for seg in segments:
                for node in (seg.from_node, seg.to_node):
                    if node not in known:
                        raise NetworkValidationError(
                            f"segment {seg.id!r} references unknown node {node!r}"
                        )

        graph = nx.DiGraph()
        graph.add_nodes_from(node_list)
        for seg in segments:
            graph.add_edge(seg.from_node, seg.to_node, segment_id=seg.id)

        outgoing: dict[str, list[str]] = {n: [] for n in node_list}
        for seg in segments:
            outgoing[seg.from_node].append(seg.id)

        self._segments = MappingProxyType(by_id)
        self._nodes = tuple(node_list)
        self._adjacency = MappingProxyType(
            {seg.id: tuple(outgoing[seg.to_node]) for seg in segments}
        )
        self._graph = nx.freeze(graph)

    @property
    def segments(self):
        return self._segments

    @property
    def nodes(self) -> tuple[str, ...]:
        return self._nodes

    @property
    def adjacency(self):
        return self._adjacency

    @property
    def graph(self) -> nx.DiGraph:
        return self._graph

    def __len__(self) -> int:
        return len(self._segments)

    def __contains__(self, segment_id: str) -> bool:
        return segment_id in self._segments

    def __getitem__(self, segment_id: str) -> RoadSegment:
        return self._segments[segment_id]

    def successors(self, segment_id: str) -> tuple[str, ...]:
        return self._adjacency[segment_id]

    def is_adjacent(self, a: str, b: str) -> bool:
        return self._segments[a].to_node == self._segments[b].from_node

    def validate_path(self, path: list[str]):
        for seg_id in path:
            if seg_id not in self._segments:
                raise NetworkValidationError(f"path references unknown segment {seg_id!r}")
        for a, b in zip(path, path[1:]):
            if not self.is_adjacent(a, b):
                raise NetworkValidationError(f"path step {a!r} -> {b!r} is not connected")


def line_graph(net: RoadNetwork) -> nx.DiGraph:
    """Edge-to-vertex dual: one vertex per segment, edge (a, b) iff to_node(a) == from_node(b)."""
    dual = nx.line_graph(net.graph)
    names = {(s.from_node, s.to_node): s.id for s in net.segments.values()}
    lg = nx.DiGraph()
    lg.add_nodes_from(net.segments.keys())
    lg.add_edges_from(
        sorted((names[(u[0], u[1])], names[(v[0], v[1])]) for u, v in dual.edges())
    )
    return lg


def turn_angle(a: RoadSegment, b: RoadSegment) -> float:
    """Absolute heading change from `a` onto `b`, folded into [0, 180] degrees."""
    if a.to_node != b.from_node:
        raise DomainError(f"segment {b.id!r} does not follow {a.id!r}")
    diff = abs(b.direction_angle - a.direction_angle) % 360.0
    return min(diff, 360.0 - diff)


def _parse_bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("1", "true", "yes"):
        return True
    if value in ("0", "false", "no"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _read_table(path: Path, columns: list[str]) -> pd.DataFrame:
    if not path.exists():
        raise NetworkParseError(path, 0, "file not found")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise NetworkParseError(path, int(match.group(1)) if match else 0, str(e)) from e
    if list(df.columns) != columns:
        raise NetworkParseError(path, 1, f"expected header {','.join(columns)}")
    return df


def load_network(path: str | Path, allow_self_loops: bool = False) -> RoadNetwork:
    """Load `nodes.csv` + `segments.csv` from a directory (or the directory of a segments file)."""
    path = Path(path)
    directory = path if path.is_dir() else path.parent
    nodes_df = _read_table(directory / "nodes.csv", NODE_COLUMNS)
    seg_path = directory / "segments.csv"
    seg_df = _read_table(seg_path, SEGMENT_COLUMNS)

    segments = []
    for i, row in enumerate(seg_df.itertuples(index=False), start=2):
        try:
            fields = dict(
                id=row.id.strip(),
                from_node=row.from_node.strip(),
                to_node=row.to_node.strip(),
                length=float(row.length_m),
                speed_limit=float(row.speed_limit_kmh),
                elevation_change=float(row.elev_change_m),
                road_type=row.road_type.strip(),
                lane_count=int(row.lane_count),
                is_bridge=_parse_bool(row.is_bridge),
                start_endpoint_type=row.start_ep_type.strip(),
                end_endpoint_type=row.end_ep_type.strip(),
                direction_angle=float(row.direction_deg),
            )
        except (ValueError, AttributeError) as e:
            raise NetworkParseError(seg_path, i, str(e)) from e
        try:
            segments.append(RoadSegment(**fields))
        except ValidationError as e:
            raise NetworkValidationError(f"{seg_path}:{i}: {e.errors()[0]['msg']} ({fields['id']})") from e

    nodes = [n.strip() for n in nodes_df["id"]]
    return RoadNetwork(segments, nodes=nodes, allow_self_loops=allow_self_loops)


def save_network(net: RoadNetwork, directory: str | Path):
    directory = Path(directory)
    write_csv(pd.DataFrame({"id": list(net.nodes)}), directory / "nodes.csv")
    rows = [
        {
            "id": s.id,
            "from_node": s.from_node,
            "to_node": s.to_node,
            "length_m": s.length,
            "speed_limit_kmh": s.speed_limit,
            "elev_change_m": s.elevation_change,
            "road_type": s.road_type.value,
            "lane_count": s.lane_count,
            "is_bridge": int(s.is_bridge),
            "start_ep_type": s.start_endpoint_type.value,
            "end_ep_type": s.end_endpoint_type.value,
            "direction_deg": s.direction_angle,
        }
        for s in net.segments.values()
    ]
    write_csv(pd.DataFrame(rows, columns=SEGMENT_COLUMNS), directory / "segments.csv")
