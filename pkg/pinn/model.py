"""
Eco-PiNN network.

A single-head attention encoder turns each segment's subpath window into a
positive pseudo velocity profile; the physics decoder (or, for the ablation, a
plain linear head) turns that profile into energy and travel time. The whole
forward pass runs on one batched graph per SegmentBatch.
"""

import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from errors import DataError, ShapeError
from models import QuerySpec, RoadSegment, VehicleParams
from models.config import ModelConfig
from pinn import autograd as ag
from pinn.autograd import Node
from pinn.physics import FUEL_UNIT_JOULES, PhysicsConstants, PowerTerms, decode
from services.featurization import (
    CATEGORICAL_FEATURES,
    CategoricalEmbedder,
    CategoricalVocab,
    Featurizer,
    SegmentBatch,
    SubpathTensor,
    feature_width,
)
from storage import get_writer, write_csv

logger = logging.getLogger(__name__)

CHECKPOINT_HEADER = "# eco-toll-checkpoint v1"
PARAM_COLUMNS = ["name", "rows", "cols", "row", "col", "value"]


@dataclass
class BatchOutput:
    velocity: Node  # N x n, m/s
    energy_j: Node  # N x 1
    time_s: Node  # N x 1
    jerk: Optional[Node]  # N x n, None for the linear decoder

    @property
    def fuel(self) -> Node:
        return ag.div(self.energy_j, FUEL_UNIT_JOULES)


class EcoPiNN:
    """
    Encoder + decoder parameters and the batched forward pass.

    Args:
        config: Architecture and physics settings
        table_sizes: Row count of each categorical embedding table
    """

    def __init__(self, config: ModelConfig, table_sizes: dict[str, int]):
        self.config = config
        self.table_sizes = dict(table_sizes)
        self.width = feature_width(config.embedding_dim)
        self.constants = PhysicsConstants(gravity=config.gravity, air_density=config.air_density)
        self.params: dict[str, Node] = {}
        self._init_params(np.random.default_rng(config.seed))

    def _shapes(self) -> list[tuple[str, tuple[int, int]]]:
        F, H, n = self.width, self.config.ffn_hidden, self.config.profile_len
        shapes = [
            ("attn.M_Q", (F, F)),
            ("attn.M_K", (F, F)),
            ("attn.M_V", (F, F)),
            ("attn.M_O", (F, F)),
            ("ln1.gain", (1, F)),
            ("ln1.bias", (1, F)),
            ("ffn.W1", (F, H)),
            ("ffn.b1", (1, H)),
            ("ffn.W2", (H, F)),
            ("ffn.b2", (1, F)),
            ("ln2.gain", (1, F)),
            ("ln2.bias", (1, F)),
            ("head.W", (F, n)),
            ("head.b", (1, n)),
        ]
        shapes += [(f"cat.{name}", (self.table_sizes[name], width)) for name, width in CATEGORICAL_FEATURES]
        if self.config.decoder == "linear":
            shapes += [("linear.W", (n, 2)), ("linear.b", (1, 2))]
        return shapes

    def _init_params(self, rng: np.random.Generator):
        for name, (rows, cols) in self._shapes():
            if name.endswith(".gain"):
                value = np.ones((rows, cols))
            elif name.startswith("ln") or name in ("ffn.b1", "ffn.b2"):
                value = np.zeros((rows, cols))
            elif name == "head.b":
                # softplus^-1 of the initial speed
                value = np.full((rows, cols), np.log(np.expm1(self.config.init_speed)))
            elif name.startswith("cat."):
                value = rng.normal(0.0, 1.0, size=(rows, cols))
            else:
                # a bias row has fan-in 1; linear.b takes the fan-in of linear.W instead
                fan_in = rows if name != "linear.b" else self.config.profile_len
                bound = 1.0 / np.sqrt(fan_in)
                value = rng.uniform(-bound, bound, size=(rows, cols))
            self.params[name] = ag.parameter(value)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.params.items()}

    def restore(self, values: dict[str, np.ndarray]):
        for k, v in values.items():
            self.params[k].value = v.copy()

    def categorical_embedder(self, vocab: CategoricalVocab) -> CategoricalEmbedder:
        return CategoricalEmbedder(
            vocab=vocab,
            tables={name: self.params[f"cat.{name}"].value for name, _ in CATEGORICAL_FEATURES},
        )

    # encoder

    def _encode_rows(self, X: Node, mask: np.ndarray) -> Node:
        """
        Encode windows given as flattened rows.

        Args:
            X: (N*l) x F window rows, segment-major
            mask: N x l, True where the row is a real segment
        """
        N, l = mask.shape
        if X.shape != (N * l, self.width):
            raise ShapeError("encode", X.shape, (N * l, self.width))
        if not mask[:, (l - 1) // 2].all():
            raise ShapeError("encode: center row masked", mask.shape)
        p = self.params
        X = ag.mul(X, ag.constant(mask.reshape(-1, 1).astype(np.float64)))
        owner = np.repeat(np.arange(N), l)
        center = ag.gather_rows(X, np.arange(N) * l + (l - 1) // 2)

        q = ag.matmul(center, p["attn.M_Q"])
        k = ag.matmul(X, p["attn.M_K"])
        v = ag.matmul(X, p["attn.M_V"])
        scores = ag.row_sum(ag.mul(ag.gather_rows(q, owner), k))
        scores = ag.mul(ag.reshape(scores, N, l), 1.0 / np.sqrt(self.width))
        weights = ag.reshape(ag.masked_softmax(scores, mask), N * l, 1)
        attended = ag.segment_sum(ag.mul(v, weights), owner, N)
        attended = ag.matmul(attended, p["attn.M_O"])

        h = ag.layer_norm(ag.add(center, attended), p["ln1.gain"], p["ln1.bias"])
        ff = ag.relu(ag.add(ag.matmul(h, p["ffn.W1"]), p["ffn.b1"]))
        ff = ag.add(ag.matmul(ff, p["ffn.W2"]), p["ffn.b2"])
        h = ag.layer_norm(ag.add(h, ff), p["ln2.gain"], p["ln2.bias"])
        return ag.softplus(ag.add(ag.matmul(h, p["head.W"]), p["head.b"]))

    def batch_rows(self, batch: SegmentBatch) -> Node:
        blocks = [ag.constant(batch.emb_rows)]
        for j, (name, _) in enumerate(CATEGORICAL_FEATURES):
            blocks.append(ag.gather_rows(self.params[f"cat.{name}"], batch.code_rows[:, j]))
        blocks.append(ag.constant(batch.numeric_rows))
        return ag.concat_cols(blocks)

    def encode_batch(self, batch: SegmentBatch) -> Node:
        return self._encode_rows(self.batch_rows(batch), batch.mask)

    def encode(self, sub: SubpathTensor) -> Node:
        """Pseudo velocity profile (1 x n) of one prepared window."""
        return self._encode_rows(ag.constant(sub.X), sub.mask.reshape(1, -1))

    # decoder

    def _decode(self, velocity: Node, terms: PowerTerms, length: np.ndarray) -> BatchOutput:
        if self.config.decoder == "linear":
            out = ag.add(ag.matmul(velocity, self.params["linear.W"]), self.params["linear.b"])
            fuel = ag.matmul(out, ag.constant(np.array([[1.0], [0.0]])))
            time = ag.matmul(out, ag.constant(np.array([[0.0], [1.0]])))
            return BatchOutput(velocity=velocity, energy_j=ag.mul(fuel, FUEL_UNIT_JOULES), time_s=time, jerk=None)
        decoded = decode(velocity, ag.constant(length), terms)
        return BatchOutput(velocity=velocity, energy_j=decoded.energy, time_s=decoded.time, jerk=decoded.jerk)

    def forward(self, batch: SegmentBatch) -> BatchOutput:
        if batch.window != self.config.window:
            raise ShapeError("forward: window mismatch", (batch.window,), (self.config.window,))
        terms = PowerTerms.build(
            batch.mass, batch.efficiency, batch.frontal_area, batch.drag_coeff, batch.rolling_coeff,
            batch.length, batch.elevation, self.constants, self.config.elevation_mode,
        )
        return self._decode(self.encode_batch(batch), terms, batch.length)

    def predict_segment(self, X: SubpathTensor, vehicle: VehicleParams, seg: RoadSegment):
        """
        Returns:
            (energy in J, travel time in s, jerk vector or None)
        """
        terms = PowerTerms.for_segment(vehicle, seg, self.constants, self.config.elevation_mode)
        out = self._decode(self.encode(X), terms, np.array([[seg.length]]))
        jerk = None if out.jerk is None else out.jerk.value[0].copy()
        return out.energy_j.item(), out.time_s.item(), jerk

    def predict_queries(
        self,
        queries: Sequence[QuerySpec],
        featurizer: Featurizer,
        batch_size: int = 256,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Path energy (J) and time (s) for each query, by summing segment predictions."""
        energy, time = [], []
        for start in range(0, len(queries), batch_size):
            chunk = queries[start:start + batch_size]
            batch = SegmentBatch.from_queries(chunk, featurizer, self.config.window)
            out = self.forward(batch)
            energy.append(np.bincount(batch.path_index, out.energy_j.value[:, 0], minlength=len(chunk)))
            time.append(np.bincount(batch.path_index, out.time_s.value[:, 0], minlength=len(chunk)))
        if not energy:
            return np.empty(0), np.empty(0)
        return np.concatenate(energy), np.concatenate(time)

    def predict_path(self, q: QuerySpec, featurizer: Featurizer) -> tuple[float, float]:
        energy, time = self.predict_queries([q], featurizer)
        return float(energy[0]), float(time[0])

    # persistence

    def save(self, directory: str | Path):
        directory = Path(directory)
        frames = []
        for name in sorted(self.params):
            value = self.params[name].value
            rows, cols = value.shape
            r, c = np.divmod(np.arange(value.size), cols)
            frames.append(pd.DataFrame({
                "name": name, "rows": rows, "cols": cols, "row": r, "col": c, "value": value.ravel(),
            }))
        write_csv(pd.concat(frames, ignore_index=True)[PARAM_COLUMNS], directory / "params.csv", CHECKPOINT_HEADER)
        with get_writer(directory / "model_config.toml") as f:
            for key, value in self.config.model_dump(mode="json").items():
                f.write(f"{key} = {json.dumps(value)}\n")
            for name, size in sorted(self.table_sizes.items()):
                f.write(f"table_size.{name} = {size}\n")

    @classmethod
    def load(cls, directory: str | Path) -> "EcoPiNN":
        directory = Path(directory)
        params_path, config_path = directory / "params.csv", directory / "model_config.toml"
        for path in (params_path, config_path):
            if not path.exists():
                raise DataError(f"checkpoint file not found: {path}")

        raw = tomllib.loads(config_path.read_text(encoding="utf-8"))
        sizes = raw.pop("table_size", {})
        model = cls(ModelConfig.model_validate(raw), sizes)

        with open(params_path, encoding="utf-8") as f:
            header = f.readline().rstrip("\n")
        if header != CHECKPOINT_HEADER:
            raise DataError(f"{params_path}: unsupported checkpoint header {header!r}")
        df = pd.read_csv(params_path, skiprows=1, float_precision="round_trip")
        if list(df.columns) != PARAM_COLUMNS:
            raise DataError(f"{params_path}: expected columns {','.join(PARAM_COLUMNS)}")
        for name, group in df.groupby("name", sort=True):
            if name not in model.params:
                raise DataError(f"{params_path}: unexpected parameter {name!r}")
            shape = model.params[name].shape
            if (int(group["rows"].iloc[0]), int(group["cols"].iloc[0])) != shape or len(group) != shape[0] * shape[1]:
                raise DataError(f"{params_path}: parameter {name!r} does not have shape {shape}")
            value = np.zeros(shape)
            value[group["row"].to_numpy(), group["col"].to_numpy()] = group["value"].to_numpy(np.float64)
            model.params[name].value = value
        missing = set(model.params) - set(df["name"].unique())
        if missing:
            raise DataError(f"{params_path}: missing parameters {sorted(missing)}")
        return model


def params_equal(a: EcoPiNN, b: EcoPiNN) -> bool:
    return a.params.keys() == b.params.keys() and all(
        np.array_equal(a.params[k].value, b.params[k].value) for k in a.params
    )


