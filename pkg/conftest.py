"""
Shared fixtures: a hand-built three-segment road, a small generated grid with
embeddings and simulated trips, and a featurizer/model pair on top of them.
"""

from datetime import datetime

import pytest

from generators import TripGenerator, gen_network, make_queries, trip_query
from models import DepartureTime, QuerySpec, RoadSegment, VehicleParams
from models.config import DataConfig, ModelConfig, WalkConfig
from pinn.model import EcoPiNN
from services import CategoricalVocab, FeatureStats, Featurizer, RoadNetwork, embed_network


def make_segment(seg_id: str, a: str, b: str, **overrides) -> RoadSegment:
    fields = dict(
        id=seg_id,
        from_node=a,
        to_node=b,
        length=500.0,
        speed_limit=50.0,
        elevation_change=0.0,
        road_type="secondary",
        lane_count=2,
        is_bridge=False,
        start_endpoint_type="junction",
        end_endpoint_type="junction",
        direction_angle=90.0,
    )
    fields.update(overrides)
    return RoadSegment(**fields)


@pytest.fixture
def line_net() -> RoadNetwork:
    """n0 -> n1 -> n2 -> n3, heading east, then north-east, then north."""
    return RoadNetwork([
        make_segment("a", "n0", "n1", direction_angle=90.0),
        make_segment("b", "n1", "n2", direction_angle=45.0, road_type="primary", speed_limit=70.0),
        make_segment("c", "n2", "n3", direction_angle=0.0, elevation_change=5.0, is_bridge=True),
    ])


@pytest.fixture
def departure() -> DepartureTime:
    return DepartureTime(day=2, slot=2)


@pytest.fixture
def truck() -> VehicleParams:
    return VehicleParams()


@pytest.fixture(scope="session")
def walk_config() -> WalkConfig:
    return WalkConfig(dim=8, walk_length=8, walks_per_node=2, context_size=3, epochs=2, seed=5)


@pytest.fixture(scope="session")
def grid_net() -> RoadNetwork:
    return gen_network(3, 3, seed=7)


@pytest.fixture(scope="session")
def grid_embeddings(grid_net, walk_config):
    return embed_network(grid_net, walk_config)


@pytest.fixture(scope="session")
def data_config() -> DataConfig:
    return DataConfig(
        rows=3, cols=3, n_trips=12, mean_trip_segments=25.0,
        min_trip_segments=20, max_trip_segments=40, seed=3,
    )


@pytest.fixture(scope="session")
def grid_trips(grid_net, data_config):
    return TripGenerator(grid_net, data_config).generate_batch(data_config.n_trips)


@pytest.fixture(scope="session")
def grid_queries(grid_trips):
    return make_queries(grid_trips, length=5, step=5)


@pytest.fixture(scope="session")
def model_config() -> ModelConfig:
    return ModelConfig(window=1, embedding_dim=8, profile_len=10, ffn_hidden=8, seed=11)


@pytest.fixture(scope="session")
def grid_featurizer(grid_net, grid_embeddings, grid_queries) -> Featurizer:
    stats = FeatureStats.fit([lq.query for lq in grid_queries], grid_net)
    vocab = CategoricalVocab.fit(grid_net, [s for lq in grid_queries for s in lq.query.path])
    return Featurizer(grid_net, grid_embeddings, stats, vocab)


@pytest.fixture
def grid_model(model_config, grid_featurizer) -> EcoPiNN:
    return EcoPiNN(model_config, grid_featurizer.vocab.table_sizes())


@pytest.fixture(scope="session")
def whole_trip_queries(grid_trips):
    return [trip_query(t) for t in grid_trips]


@pytest.fixture
def eleven_am() -> datetime:
    return datetime(2020, 9, 2, 11, 0)


def query_on(path, departure=None, vehicle=None) -> QuerySpec:
    return QuerySpec(
        path=list(path),
        departure=departure or DepartureTime(day=0, slot=2),
        vehicle=vehicle or VehicleParams(),
    )
