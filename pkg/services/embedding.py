"""
Segment Embeddings

node2vec over the line graph: second-order biased random walks, then skip-gram
with negative sampling (gensim Word2Vec). The learned input matrix is the
embedding table; the output matrix is kept alongside for inspection only.

File format: CSV `segment_id,v0..v{dim-1}`.
"""

import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import networkx as nx
import numpy as np
import pandas as pd
from gensim.models import Word2Vec
from gensim.models.callbacks import CallbackAny2Vec

from errors import EmbeddingLoadError, UnknownSegmentError
from models.config import WalkConfig
from services.road_network import RoadNetwork, line_graph
from storage import write_csv

logger = logging.getLogger(__name__)


@dataclass
class EmbeddingTable:
    dim: int
    segment_ids: list[str]
    vectors: np.ndarray
    context_vectors: Optional[np.ndarray] = None
    loss_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.shape != (len(self.segment_ids), self.dim):
            raise EmbeddingLoadError(
                f"embedding matrix {self.vectors.shape} does not match "
                f"{len(self.segment_ids)} segments x {self.dim} dims"
            )
        if not np.isfinite(self.vectors).all():
            raise EmbeddingLoadError("embedding table contains non-finite entries")
        self._index = {sid: i for i, sid in enumerate(self.segment_ids)}

    def __contains__(self, segment_id: str) -> bool:
        return segment_id in self._index

    def __len__(self) -> int:
        return len(self.segment_ids)

    def index(self, segment_id: str) -> int:
        try:
            return self._index[segment_id]
        except KeyError:
            raise UnknownSegmentError(segment_id) from None

    def vector(self, segment_id: str) -> np.ndarray:
        return self.vectors[self.index(segment_id)]


def _stable_hash(token) -> int:
    return zlib.crc32(str(token).encode("utf-8"))


def _walk_from(lg: nx.DiGraph, start: str, cfg: WalkConfig, rng: np.random.Generator) -> list[str]:
    walk = [start]
    while len(walk) < cfg.walk_length:
        cur = walk[-1]
        nbrs = sorted(lg.successors(cur))
        if not nbrs:
            break
        if len(walk) == 1:
            walk.append(nbrs[rng.integers(len(nbrs))])
            continue
        prev = walk[-2]
        weights = np.array([
            1.0 / cfg.p if x == prev else 1.0 if lg.has_edge(prev, x) else 1.0 / cfg.q
            for x in nbrs
        ])
        walk.append(nbrs[rng.choice(len(nbrs), p=weights / weights.sum())])
    return walk


def generate_walks(lg: nx.DiGraph, cfg: WalkConfig, seed: Optional[int] = None) -> list[list[str]]:
    """
    Biased second-order random walks, `walks_per_node` from every vertex.

    Each walk draws from its own generator seeded by (seed, vertex index, walk index),
    so any subset of walks can be regenerated independently.

    Returns:
        Walks ordered by walk index, then by vertex order in `lg`.
    """
    seed = cfg.seed if seed is None else seed
    vertices = list(lg.nodes)
    walks = []
    for k in range(cfg.walks_per_node):
        for i, v in enumerate(vertices):
            rng = np.random.default_rng([seed, i, k])
            walks.append(_walk_from(lg, v, cfg, rng))
    return walks


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _window_pairs(walks: list[list[int]], context_size: int) -> tuple[np.ndarray, np.ndarray]:
    centers, contexts = [], []
    for walk in walks:
        w = np.asarray(walk)
        for offset in range(1, context_size + 1):
            if offset >= len(w):
                break
            centers.extend((w[:-offset], w[offset:]))
            contexts.extend((w[offset:], w[:-offset]))
    if not centers:
        return np.empty(0, dtype=int), np.empty(0, dtype=int)
    return np.concatenate(centers), np.concatenate(contexts)


def skipgram_objective(
    vectors: np.ndarray,
    context_vectors: np.ndarray,
    walks: list[list[int]],
    cfg: WalkConfig,
    seed: int = 0,
) -> float:
    """
    Mean negative-sampling loss over all (center, context) pairs within the window.

    Walks are given as row indices into `vectors`; negatives are drawn from the
    corpus unigram distribution raised to 3/4 with a fixed generator, so repeated
    calls on the same corpus score the same sample.
    """
    centers, contexts = _window_pairs(walks, cfg.context_size)
    if centers.size == 0:
        return 0.0
    counts = np.bincount(np.concatenate([np.asarray(w) for w in walks]), minlength=len(vectors))
    noise = counts ** 0.75
    noise = noise / noise.sum()
    rng = np.random.default_rng(seed)
    negatives = rng.choice(len(vectors), size=(centers.size, cfg.negatives_per_positive), p=noise)

    u = vectors[centers]
    pos = np.einsum("ij,ij->i", u, context_vectors[contexts])
    neg = np.einsum("ij,ikj->ik", u, context_vectors[negatives])
    loss = -np.log(_sigmoid(pos) + 1e-12) - np.log(_sigmoid(-neg) + 1e-12).sum(axis=1)
    return float(loss.mean())


class _EpochObjective(CallbackAny2Vec):
    """Scores the skip-gram objective after every epoch."""

    def __init__(self, walks: list[list[str]], cfg: WalkConfig):
        self.walks = walks
        self.cfg = cfg
        self.history: list[float] = []

    def _score(self, model: Word2Vec) -> float:
        idx = model.wv.key_to_index
        walks = [[idx[t] for t in walk] for walk in self.walks]
        return skipgram_objective(
            model.wv.vectors.astype(np.float64),
            model.syn1neg.astype(np.float64),
            walks,
            self.cfg,
            seed=self.cfg.seed,
        )

    def on_train_begin(self, model):
        self.history.append(self._score(model))

    def on_epoch_end(self, model):
        self.history.append(self._score(model))
        logger.debug("skip-gram epoch %d objective %.6f", len(self.history) - 1, self.history[-1])


def train_skipgram(walks: list[list[str]], cfg: WalkConfig, track_loss: bool = False) -> EmbeddingTable:
    """
    Fit skip-gram with negative sampling on a walk corpus.

    Single worker, fixed seed, no subsampling and full-width windows; the learning
    rate decays linearly from `cfg.learning_rate` to 0.

    Args:
        walks: Walk corpus of segment ids
        cfg: Walk/skip-gram settings
        track_loss: Record the objective before training and after every epoch

    Returns:
        Table with one row per distinct segment id, in order of first appearance
    """
    if not walks:
        raise ValueError("cannot train skip-gram on an empty walk corpus")

    callback = _EpochObjective(walks, cfg) if track_loss else None
    model = Word2Vec(
        sentences=walks,
        vector_size=cfg.dim,
        window=cfg.context_size,
        min_count=1,
        sample=0,
        sg=1,
        hs=0,
        negative=cfg.negatives_per_positive,
        ns_exponent=0.75,
        alpha=cfg.learning_rate,
        min_alpha=0.0,
        epochs=cfg.epochs,
        seed=cfg.seed,
        workers=1,
        hashfxn=_stable_hash,
        shrink_windows=False,
        callbacks=[callback] if callback else (),
    )

    segment_ids = list(dict.fromkeys(t for walk in walks for t in walk))
    rows = [model.wv.key_to_index[s] for s in segment_ids]
    return EmbeddingTable(
        dim=cfg.dim,
        segment_ids=segment_ids,
        vectors=model.wv.vectors[rows].astype(np.float64),
        context_vectors=model.syn1neg[rows].astype(np.float64),
        loss_history=callback.history if callback else [],
    )


def embed_network(net: RoadNetwork, cfg: WalkConfig, track_loss: bool = False) -> EmbeddingTable:
    lg = line_graph(net)
    walks = generate_walks(lg, cfg)
    logger.info("generated %d walks over %d segments", len(walks), lg.number_of_nodes())
    table = train_skipgram(walks, cfg, track_loss)
    order = list(net.segments.keys())
    rows = [table.index(s) for s in order]
    return EmbeddingTable(
        dim=table.dim,
        segment_ids=order,
        vectors=table.vectors[rows],
        context_vectors=table.context_vectors[rows],
        loss_history=table.loss_history,
    )


def save_embeddings(table: EmbeddingTable, path: str | Path):
    df = pd.DataFrame(table.vectors, columns=[f"v{i}" for i in range(table.dim)])
    df.insert(0, "segment_id", table.segment_ids)
    write_csv(df, Path(path))


def load_embeddings(
    path: str | Path,
    net: Optional[RoadNetwork] = None,
    dim: Optional[int] = None,
) -> EmbeddingTable:
    """
    Read an embedding CSV, optionally checking it against a network and a dimension.

    Raises:
        EmbeddingLoadError: on a missing file, a bad header, a dimension mismatch or
            a network segment without a vector
    """
    path = Path(path)
    if not path.exists():
        raise EmbeddingLoadError(f"embedding file not found: {path}")
    df = pd.read_csv(path, dtype={"segment_id": str}, float_precision="round_trip")
    columns = list(df.columns)
    if not columns or columns[0] != "segment_id":
        raise EmbeddingLoadError(f"{path}: first column must be segment_id")
    found_dim = len(columns) - 1
    if columns[1:] != [f"v{i}" for i in range(found_dim)]:
        raise EmbeddingLoadError(f"{path}: vector columns must be v0..v{found_dim - 1}")
    if dim is not None and found_dim != dim:
        raise EmbeddingLoadError(f"{path}: embeddings have {found_dim} dims, expected {dim}")
    if df["segment_id"].duplicated().any():
        raise EmbeddingLoadError(f"{path}: duplicate segment ids")

    table = EmbeddingTable(
        dim=found_dim,
        segment_ids=df["segment_id"].tolist(),
        vectors=df[columns[1:]].to_numpy(dtype=np.float64),
    )
    if net is not None:
        missing = [s for s in net.segments if s not in table]
        if missing:
            raise EmbeddingLoadError(
                f"{path}: {len(missing)} network segments have no embedding (first: {missing[0]!r})"
            )
    return table
