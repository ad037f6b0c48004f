"""
Prediction service: checkpoint loading, query files and per-path estimates
"""

import json

import numpy as np
import pytest

from errors import DataError, NetworkValidationError
from models import QuerySpec
from pinn.physics import joules_to_fuel
from services.predictions import PredictionService
from services.training import save_checkpoint


@pytest.fixture
def service(tmp_path, grid_net, grid_embeddings, grid_model, grid_featurizer) -> PredictionService:
    save_checkpoint(tmp_path / "ckpt", grid_model, grid_featurizer)
    return PredictionService(tmp_path / "ckpt", grid_net, grid_embeddings)


def write_queries(path, queries: list[QuerySpec]):
    path.write_text(json.dumps([q.model_dump(mode="json") for q in queries]))
    return path


def test_predictions_match_the_model(service, grid_model, grid_featurizer, whole_trip_queries):
    queries = [lq.query for lq in whole_trip_queries[:4]]
    records = service.predict(queries)
    energy, time = grid_model.predict_queries(queries, grid_featurizer)
    assert [r.query_index for r in records] == [0, 1, 2, 3]
    np.testing.assert_allclose([r.energy_j for r in records], energy, rtol=1e-12)
    np.testing.assert_allclose([r.fuel_units for r in records], joules_to_fuel(energy), rtol=1e-12)
    np.testing.assert_allclose([r.time_s for r in records], time, rtol=1e-12)


def test_process_query_file(tmp_path, service, whole_trip_queries):
    queries = [lq.query for lq in whole_trip_queries[:3]]
    path = write_queries(tmp_path / "queries.json", queries)
    summary = service.process_query_file(path)
    assert summary["total_queries"] == 3
    assert summary["total_segments"] == sum(len(q.path) for q in queries)
    out = tmp_path / "queries.predictions.json"
    assert summary["output"] == str(out)
    records = json.loads(out.read_text())
    assert [r["query_index"] for r in records] == [0, 1, 2]
    assert summary["total_time_s"] == pytest.approx(sum(r["time_s"] for r in records))
    assert set(records[0]) == {"query_index", "energy_j", "fuel_units", "time_s"}


def test_explicit_output_and_empty_file(tmp_path, service):
    path = tmp_path / "empty.json"
    path.write_text("[]")
    summary = service.process_query_file(path, tmp_path / "out" / "preds.json")
    assert summary["total_queries"] == 0 and summary["total_fuel_units"] == 0
    assert json.loads((tmp_path / "out" / "preds.json").read_text()) == []


def test_vehicle_defaults_to_the_reference_truck(tmp_path, service, whole_trip_queries):
    path = tmp_path / "q.json"
    path.write_text(json.dumps([{"path": whole_trip_queries[0].query.path[:3], "departure": {"day": 1, "slot": 4}}]))
    (query,) = service.load_queries(path)
    assert query.vehicle.mass == pytest.approx(23257.71)


def test_disconnected_path_is_rejected(service, grid_net, whole_trip_queries):
    path = whole_trip_queries[0].query.path
    broken = QuerySpec(path=[path[0], path[2]], departure=whole_trip_queries[0].query.departure)
    if grid_net.is_adjacent(path[0], path[2]):
        pytest.skip("segments happen to connect")
    with pytest.raises(NetworkValidationError):
        service.predict([broken])


@pytest.mark.parametrize("content", ["not json", '[{"path": []}]', '[{"path": ["x"], "departure": {"day": 9, "slot": 0}}]'])
def test_bad_query_files(tmp_path, service, content):
    path = tmp_path / "bad.json"
    path.write_text(content)
    with pytest.raises(DataError):
        service.load_queries(path)


def test_missing_query_file_and_checkpoint(tmp_path, service, grid_net, grid_embeddings):
    with pytest.raises(DataError):
        service.load_queries(tmp_path / "nope.json")
    with pytest.raises(DataError):
        PredictionService(tmp_path / "no-checkpoint", grid_net, grid_embeddings)
