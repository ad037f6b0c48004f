"""
Featurization: numeric/categorical features, subpath windows and batching
"""

from datetime import datetime

import numpy as np
import pytest

from conftest import query_on
from errors import FeatureStatsError, UnknownSegmentError
from models import VehicleParams
from services import CategoricalVocab, EmbeddingTable, FeatureStats, Featurizer, SegmentBatch, build_subpaths, time_slot
from services.featurization import (
    CATEGORICAL_DIM,
    NUMERIC_FEATURES,
    OOV,
    CategoricalEmbedder,
    departure_of,
    feature_width,
    numeric_features,
    raw_numeric,
)


@pytest.fixture
def line_embeddings(line_net) -> EmbeddingTable:
    ids = list(line_net.segments)
    vectors = np.arange(len(ids) * 4, dtype=np.float64).reshape(len(ids), 4) + 1.0
    return EmbeddingTable(dim=4, segment_ids=ids, vectors=vectors)


@pytest.fixture
def line_featurizer(line_net, line_embeddings) -> Featurizer:
    q = query_on(["a", "b", "c"])
    stats = FeatureStats.fit([q], line_net)
    vocab = CategoricalVocab.fit(line_net, ["a", "b"])
    return Featurizer(line_net, line_embeddings, stats, vocab)


@pytest.mark.parametrize("hour, slot", [(0, 0), (3, 0), (4, 1), (11, 2), (12, 3), (19, 4), (23, 5)])
def test_time_slot(hour, slot):
    assert time_slot(datetime(2020, 9, 2, hour, 59)) == slot


def test_departure_of(eleven_am):
    dep = departure_of(eleven_am)
    assert (dep.day, dep.slot) == (2, 2)  # a Wednesday


def test_feature_width_matches_layout():
    assert CATEGORICAL_DIM == 20
    assert feature_width(32) == 58


def test_raw_numeric_uses_turn_into_next_segment(line_net, truck):
    row = raw_numeric(line_net["a"], line_net["b"], truck)
    assert row.tolist() == [truck.mass, 50.0, 500.0, 45.0, 90.0, 0.0]
    last = raw_numeric(line_net["c"], None, truck)
    assert last[3] == 0.0
    assert last[5] == 5.0


def test_feature_stats_standardize_training_segments(line_net):
    queries = [query_on(["a", "b", "c"]), query_on(["b"], vehicle=VehicleParams(mass=30000.0))]
    stats = FeatureStats.fit(queries, line_net)
    rows = np.vstack([
        stats.normalize(raw_numeric(line_net[a], line_net[b] if b else None, q.vehicle))
        for q in queries
        for a, b in zip(q.path, q.path[1:] + [None])
    ])
    assert np.allclose(rows.mean(axis=0), 0.0)
    assert (stats.sd > 0).all()


def test_constant_feature_keeps_unit_scale(line_net):
    stats = FeatureStats.fit([query_on(["a", "b", "c"])], line_net)
    assert stats.sd[NUMERIC_FEATURES.index("mass")] == 1.0


def test_feature_stats_file_round_trip(tmp_path, line_net):
    stats = FeatureStats.fit([query_on(["a", "b", "c"])], line_net)
    stats.save(tmp_path / "stats.csv")
    loaded = FeatureStats.load(tmp_path / "stats.csv")
    assert np.array_equal(loaded.mean, stats.mean)
    assert np.array_equal(loaded.sd, stats.sd)


def test_missing_stats_are_an_error(tmp_path, line_net, truck):
    with pytest.raises(FeatureStatsError):
        numeric_features(line_net["a"], None, truck, None)
    with pytest.raises(FeatureStatsError):
        FeatureStats.load(tmp_path / "missing.csv")
    with pytest.raises(FeatureStatsError):
        FeatureStats.fit([], line_net)


def test_vocab_reserves_row_zero_for_unseen_values(line_net, departure):
    vocab = CategoricalVocab.fit(line_net, ["a", "b"])
    assert vocab.rows["road_type"] == {OOV: 0, "primary": 1, "secondary": 2}
    assert vocab.rows["is_bridge"] == {OOV: 0, "0": 1}
    codes = vocab.codes(line_net["c"], departure)
    assert codes[0] == 2  # secondary
    assert codes[4] == 0  # bridge never seen in training
    assert codes[5] == departure.day
    assert codes[6] == departure.slot


def test_vocab_sizes(line_net):
    sizes = CategoricalVocab.fit(line_net, ["a", "b", "c"]).table_sizes()
    assert sizes["day"] == 7
    assert sizes["time_slot"] == 6
    assert sizes["is_bridge"] == 3


def test_vocab_file_round_trip(tmp_path, line_net):
    vocab = CategoricalVocab.fit(line_net, ["a", "b", "c"])
    vocab.save(tmp_path / "vocab.csv")
    assert CategoricalVocab.load(tmp_path / "vocab.csv").rows == vocab.rows


def test_subpath_windows_pad_outside_the_path(line_featurizer):
    vocab = line_featurizer.vocab
    tables = {name: np.ones((size, 2 if name not in ("road_type", "start_ep_type", "end_ep_type") else 4))
              for name, size in vocab.table_sizes().items()}
    cat = CategoricalEmbedder(vocab=vocab, tables=tables)
    subs = build_subpaths(query_on(["a", "b", "c"]), 1, line_featurizer, cat)
    assert len(subs) == 3
    width = feature_width(4)
    assert all(s.X.shape == (3, width) for s in subs)
    assert subs[0].mask.tolist() == [False, True, True]
    assert subs[1].mask.tolist() == [True, True, True]
    assert subs[2].mask.tolist() == [True, True, False]
    assert not subs[0].X[0].any()
    assert subs[0].X[1, :4].tolist() == line_featurizer.embeddings.vector("a").tolist()
    assert subs[2].X[1, :4].tolist() == line_featurizer.embeddings.vector("c").tolist()


def test_window_zero_has_only_the_center(line_featurizer):
    cat = CategoricalEmbedder(
        vocab=line_featurizer.vocab,
        tables={name: np.zeros((size, 4)) for name, size in line_featurizer.vocab.table_sizes().items()},
    )
    subs = build_subpaths(query_on(["a", "b"]), 0, line_featurizer, cat)
    assert [s.X.shape[0] for s in subs] == [1, 1]
    assert all(s.mask.tolist() == [True] for s in subs)


def test_unknown_segment(line_featurizer):
    with pytest.raises(UnknownSegmentError):
        line_featurizer.path_blocks(query_on(["a", "zz"]))


def test_block_cache_evicts_least_recently_used(line_net, line_featurizer):
    small = Featurizer(line_net, line_featurizer.embeddings, line_featurizer.stats, line_featurizer.vocab, cache_size=2)
    paths = [["a"], ["a", "b"], ["b", "c"]]
    first = small.path_blocks(query_on(paths[0]))
    small.path_blocks(query_on(paths[1]))
    # touching ["a"] again makes ["a", "b"] the oldest entry
    assert small.path_blocks(query_on(paths[0])) is first
    small.path_blocks(query_on(paths[2]))
    assert small.cached_blocks() == 2
    assert small.path_blocks(query_on(paths[0])) is first
    for i in range(5):
        small.path_blocks(query_on(["c"], vehicle=VehicleParams(mass=20000.0 + i)))
    assert small.cached_blocks() == 2


def test_batch_lines_up_with_windows(line_featurizer):
    queries = [query_on(["a", "b", "c"]), query_on(["b"])]
    batch = SegmentBatch.from_queries(queries, line_featurizer, window=1)
    assert batch.n_segments == 4
    assert batch.n_paths == 2
    assert batch.path_index.tolist() == [0, 0, 0, 1]
    assert batch.mask.tolist() == [
        [False, True, True],
        [True, True, True],
        [True, True, False],
        [False, True, False],
    ]
    assert batch.emb_rows.shape == (12, 4)
    emb = line_featurizer.embeddings
    centers = batch.emb_rows[batch.center_rows]
    assert np.array_equal(centers, np.vstack([emb.vector(s) for s in ["a", "b", "c", "b"]]))
    assert not batch.emb_rows[0].any()
    assert batch.length[:, 0].tolist() == [500.0, 500.0, 500.0, 500.0]
    assert batch.elevation[:, 0].tolist() == [0.0, 0.0, 5.0, 0.0]


def test_batch_needs_queries(line_featurizer):
    with pytest.raises(ValueError):
        SegmentBatch.from_queries([], line_featurizer, window=1)
