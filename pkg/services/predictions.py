"""
Prediction Service - Estimates eco-toll and travel time for query files with a trained checkpoint
"""
import json
from pathlib import Path
from typing import Optional, Sequence

from pydantic import TypeAdapter, ValidationError

from errors import DataError
from models import PredictionRecord, QuerySpec
from pinn.physics import joules_to_fuel
from services.embedding import EmbeddingTable
from services.road_network import RoadNetwork
from services.training import load_checkpoint
from storage import get_writer


BATCH_SIZE = 256

_QUERY_LIST = TypeAdapter(list[QuerySpec])


class PredictionService:
    """Wraps one checkpoint; answers QuerySpec lists with per-path energy and time"""

    def __init__(self, checkpoint_dir: str | Path, net: RoadNetwork, embeddings: EmbeddingTable):
        self.checkpoint_dir = Path(checkpoint_dir)
        self.net = net
        self.model, self.featurizer = load_checkpoint(self.checkpoint_dir, net, embeddings)

    @staticmethod
    def load_queries(path: str | Path) -> list[QuerySpec]:
        """
        Read a JSON array of query objects.

        Args:
            path: File with `[{"path": [...], "departure": {"day": .., "slot": ..}, "vehicle": {...}}, ...]`

        Returns:
            Parsed queries, in file order
        """
        path = Path(path)
        if not path.exists():
            raise DataError(f"query file not found: {path}")
        try:
            return _QUERY_LIST.validate_json(path.read_bytes())
        except ValidationError as e:
            raise DataError(f"{path}: {e}") from e

    def predict(self, queries: Sequence[QuerySpec], batch_size: int = BATCH_SIZE) -> list[PredictionRecord]:
        """
        Estimate every query. Paths must be connected in the network.

        Returns:
            One record per query, `query_index` matching the input position
        """
        for q in queries:
            self.net.validate_path(q.path)
        energy_j, time_s = self.model.predict_queries(list(queries), self.featurizer, batch_size)
        fuel = joules_to_fuel(energy_j)
        return [
            PredictionRecord(query_index=i, energy_j=float(e), fuel_units=float(f), time_s=float(t))
            for i, (e, f, t) in enumerate(zip(energy_j, fuel, time_s))
        ]

    @staticmethod
    def save(records: Sequence[PredictionRecord], path: str | Path):
        with get_writer(Path(path)) as f:
            f.write(json.dumps([r.model_dump() for r in records], indent=2) + "\n")

    def process_query_file(self, input_path: str | Path, output_path: Optional[str | Path] = None) -> dict:
        """
        Predict a query file and write the records next to it (or to `output_path`).

        Returns:
            Summary of the processed file
        """
        queries = self.load_queries(input_path)
        records = self.predict(queries) if queries else []
        output_path = Path(output_path) if output_path else Path(input_path).with_suffix(".predictions.json")
        self.save(records, output_path)
        return {
            "total_queries": len(queries),
            "total_segments": sum(len(q.path) for q in queries),
            "total_fuel_units": sum(r.fuel_units for r in records),
            "total_time_s": sum(r.time_s for r in records),
            "output": str(output_path),
        }
