"""
Training Service

Multitask objective over mini-batches of labeled queries:

    L = w_e * L_energy + w_t * L_time + w_jerk * L_jerk

Each task loss is the path-level MAPE plus the per-path mean of segment Huber
errors. Energy is measured in fuel units (10 ml diesel), time in seconds. Paths
without energy labels drop out of the energy task but still feed time and jerk.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from errors import DataError, TrainingDivergedError
from models import LabeledQuery, TrainingLogRow
from models.config import LossWeights, TrainConfig
from pinn import autograd as ag
from pinn.autograd import Node
from pinn.model import BatchOutput, EcoPiNN
from pinn.optim import AdamState, adam_step
from pinn.physics import joules_to_fuel
from services.embedding import EmbeddingTable
from services.featurization import CategoricalVocab, FeatureStats, Featurizer, SegmentBatch
from services.road_network import RoadNetwork
from storage import write_csv

logger = logging.getLogger(__name__)

MAPE_GUARD = 1e-6
LOG_COLUMNS = ["epoch", "train_loss", "val_energy_mape", "val_time_mape", "stopped"]


def huber(err, delta: float = 1.0):
    """Quadratic inside |err| < delta, linear outside; works on scalars and arrays."""
    err = np.asarray(err, dtype=np.float64)
    a = np.abs(err)
    out = np.where(a < delta, 0.5 * err * err, delta * (a - 0.5 * delta))
    return float(out) if out.ndim == 0 else out


def path_mape(pred, true, guard: float = MAPE_GUARD) -> float:
    """
    Mean of |pred - true| / true over paths.

    Paths whose true value is at or below `guard` are left out and counted in a
    warning. Returns NaN when nothing is left.
    """
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    keep = true > guard
    dropped = int((~keep).sum())
    if dropped:
        logger.warning("path_mape: excluded %d paths with true value <= %g", dropped, guard)
    if not keep.any():
        return float("nan")
    return float(np.mean(np.abs(pred[keep] - true[keep]) / true[keep]))


@dataclass
class BatchTargets:
    seg_time: np.ndarray  # (N, 1) s
    seg_fuel: np.ndarray  # (N, 1) fuel units, NaN where unlabeled
    path_time: np.ndarray  # (P, 1)
    path_fuel: np.ndarray  # (P, 1), NaN where unlabeled
    energy_labeled: np.ndarray  # (P,) bool
    path_index: np.ndarray  # (N,)

    @classmethod
    def from_queries(cls, queries: Sequence[LabeledQuery]) -> "BatchTargets":
        seg_time, seg_fuel, path_index = [], [], []
        for k, lq in enumerate(queries):
            n = len(lq.query.path)
            seg_time.extend(lq.segment_times)
            seg_fuel.extend(lq.segment_fuel if lq.has_energy else [np.nan] * n)
            path_index.extend([k] * n)
        seg_time = np.asarray(seg_time, dtype=np.float64).reshape(-1, 1)
        seg_fuel = np.asarray(seg_fuel, dtype=np.float64).reshape(-1, 1)
        path_index = np.asarray(path_index, dtype=np.intp)
        labeled = np.array([lq.has_energy for lq in queries], dtype=bool)
        return cls(
            seg_time=seg_time,
            seg_fuel=seg_fuel,
            path_time=np.bincount(path_index, seg_time[:, 0], minlength=len(queries)).reshape(-1, 1),
            path_fuel=np.where(
                labeled, np.bincount(path_index, np.nan_to_num(seg_fuel[:, 0]), minlength=len(queries)), np.nan
            ).reshape(-1, 1),
            energy_labeled=labeled,
            path_index=path_index,
        )


def _per_segment_weights(path_index: np.ndarray, keep_paths: np.ndarray) -> np.ndarray:
    """1 / (n_seg(path) * n_paths) for segments of kept paths, 0 elsewhere."""
    counts = np.bincount(path_index, minlength=len(keep_paths)).astype(np.float64)
    n_paths = int(keep_paths.sum())
    w = np.zeros(len(path_index))
    if n_paths:
        kept = keep_paths[path_index]
        w[kept] = 1.0 / (counts[path_index[kept]] * n_paths)
    return w.reshape(-1, 1)


def task_loss(
    seg_pred: Node,
    seg_true: np.ndarray,
    path_index: np.ndarray,
    path_true: np.ndarray,
    keep_paths: np.ndarray,
    delta: float,
) -> Optional[Node]:
    """
    Path MAPE plus mean-over-paths of mean-over-segments Huber error.

    Args:
        seg_pred: N x 1 segment predictions
        seg_true: N x 1 segment labels (values on dropped paths are ignored)
        path_index: Path of each segment
        path_true: P x 1 path labels
        keep_paths: P booleans; paths taking part in this task
        delta: Huber threshold

    Returns:
        Scalar node, or None when no path takes part
    """
    above = path_true[:, 0] > MAPE_GUARD
    dropped = int((keep_paths & ~above).sum())
    if dropped:
        logger.warning("task_loss: excluded %d paths with true value <= %g", dropped, MAPE_GUARD)
    keep_paths = keep_paths & above
    if not keep_paths.any():
        return None
    kept = np.flatnonzero(keep_paths)
    seg_true = np.nan_to_num(seg_true)

    path_pred = ag.segment_sum(seg_pred, path_index, len(keep_paths))
    path_pred = ag.gather_rows(path_pred, kept)
    truth = path_true[kept]
    mape = ag.mean(ag.div(ag.absolute(ag.sub(path_pred, truth)), truth))

    weights = _per_segment_weights(path_index, keep_paths)
    seg_err = ag.huber(ag.sub(seg_pred, seg_true), delta)
    return ag.add(mape, ag.total(ag.mul(seg_err, weights)))


def jerk_penalty(jerk: Node, path_index: np.ndarray, n_paths: int) -> Node:
    """Mean over paths of mean over segments of the summed squared jerk."""
    weights = _per_segment_weights(path_index, np.ones(n_paths, dtype=bool))
    return ag.total(ag.mul(ag.row_sum(ag.square(jerk)), weights))


def total_loss(out: BatchOutput, targets: BatchTargets, weights: LossWeights) -> tuple[Node, dict]:
    """
    Weighted multitask loss. Terms with weight 0 are not built at all.

    Returns:
        (loss node, dict of the unweighted term values and flags)
    """
    n_paths = len(targets.energy_labeled)
    terms: list[Node] = []
    parts: dict = {}

    if weights.energy > 0:
        l_e = task_loss(
            out.fuel, targets.seg_fuel, targets.path_index,
            targets.path_fuel, targets.energy_labeled, weights.huber_delta,
        )
        if l_e is None:
            parts["energy_empty"] = True
            logger.debug("energy task empty: no labeled path in batch of %d", n_paths)
        else:
            parts["energy"] = l_e.item()
            terms.append(ag.mul(l_e, weights.energy))

    if weights.time > 0:
        l_t = task_loss(
            out.time_s, targets.seg_time, targets.path_index, targets.path_time,
            np.ones(n_paths, dtype=bool), weights.huber_delta,
        )
        if l_t is None:
            parts["time_empty"] = True
            logger.debug("time task empty: no labeled path in batch of %d", n_paths)
        else:
            parts["time"] = l_t.item()
            terms.append(ag.mul(l_t, weights.time))

    if weights.jerk > 0 and out.jerk is not None:
        l_j = jerk_penalty(out.jerk, targets.path_index, n_paths)
        parts["jerk"] = l_j.item()
        terms.append(ag.mul(l_j, weights.jerk))

    if not terms:
        return ag.constant(0.0), parts
    loss = terms[0]
    for t in terms[1:]:
        loss = ag.add(loss, t)
    return loss, parts


def evaluate_queries(
    model: EcoPiNN,
    queries: Sequence[LabeledQuery],
    featurizer: Featurizer,
    batch_size: int = 256,
) -> pd.DataFrame:
    """Path-level predictions next to path-level labels, one row per query."""
    energy_j, time_s = model.predict_queries([lq.query for lq in queries], featurizer, batch_size)
    return pd.DataFrame({
        "trip_id": [lq.trip_id for lq in queries],
        "path_len": [len(lq.query.path) for lq in queries],
        "pred_energy_j": energy_j,
        "pred_fuel": joules_to_fuel(energy_j),
        "pred_time_s": time_s,
        "true_fuel": [lq.path_fuel if lq.has_energy else np.nan for lq in queries],
        "true_time_s": [lq.path_time for lq in queries],
    })


def validation_metrics(frame: pd.DataFrame) -> tuple[Optional[float], Optional[float]]:
    labeled = frame["true_fuel"].notna()
    energy = path_mape(frame.loc[labeled, "pred_fuel"], frame.loc[labeled, "true_fuel"]) if labeled.any() else None
    time = path_mape(frame["pred_time_s"], frame["true_time_s"]) if len(frame) else None
    return energy, time


def _selection_key(energy: Optional[float], time: Optional[float]) -> tuple:
    nan_last = lambda x: float("inf") if x is None or np.isnan(x) else x
    if energy is None:
        return (nan_last(time),)
    return (nan_last(energy), nan_last(time))


@dataclass
class TrainingResult:
    model: EcoPiNN
    log: list[TrainingLogRow] = field(default_factory=list)
    best_epoch: int = -1


def _diagnostic(batch_queries: Sequence[LabeledQuery], out: BatchOutput, parts: dict) -> dict:
    v = out.velocity.value
    return {
        "trip_ids": sorted({lq.trip_id for lq in batch_queries}),
        "n_queries": len(batch_queries),
        "loss_terms": {k: (float(x) if isinstance(x, float) else x) for k, x in parts.items()},
        "velocity_min": float(np.nanmin(v)) if v.size else None,
        "velocity_max": float(np.nanmax(v)) if v.size else None,
        "nonfinite_energy": int((~np.isfinite(out.energy_j.value)).sum()),
        "nonfinite_time": int((~np.isfinite(out.time_s.value)).sum()),
    }


def train(
    model: EcoPiNN,
    train_queries: Sequence[LabeledQuery],
    val_queries: Sequence[LabeledQuery],
    featurizer: Featurizer,
    cfg: TrainConfig,
    weights: LossWeights,
) -> TrainingResult:
    """
    Adam with early stopping on validation MAPE.

    Selection metric is the energy MAPE of labeled validation paths with time MAPE
    as tie-break; with no labeled validation path it is the time MAPE alone. The
    model returned holds the parameters of the best epoch.

    Raises:
        TrainingDivergedError: if a batch loss is not finite
    """
    if not train_queries:
        raise DataError("training set is empty")
    state = AdamState(learning_rate=cfg.learning_rate)
    result = TrainingResult(model=model)
    best_key: Optional[tuple] = None
    best_params = model.snapshot()
    since_best = 0

    for epoch in range(cfg.max_epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_queries))
        losses = []
        empty = {"energy_empty": 0, "time_empty": 0}
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            chunk = [train_queries[i] for i in order[start:start + cfg.batch_size]]
            batch = SegmentBatch.from_queries([lq.query for lq in chunk], featurizer, model.config.window)
            out = model.forward(batch)
            loss, parts = total_loss(out, BatchTargets.from_queries(chunk), weights)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch, b, _diagnostic(chunk, out, parts))
            losses.append(value)
            for flag in empty:
                empty[flag] += bool(parts.get(flag))
            if loss.requires_grad:
                model.zero_grad()
                ag.backward(loss)
                adam_step(model.params, state)

        for flag, count in empty.items():
            if count:
                logger.info("epoch %d: %s in %d of %d batches, contributed 0", epoch, flag, count, len(losses))

        frame = evaluate_queries(model, val_queries, featurizer) if val_queries else pd.DataFrame()
        val_e, val_t = validation_metrics(frame) if len(frame) else (None, None)
        key = _selection_key(val_e, val_t)
        if best_key is None or key < best_key:
            best_key, best_params, since_best = key, model.snapshot(), 0
            result.best_epoch = epoch
        else:
            since_best += 1
        stopped = since_best >= cfg.patience
        result.log.append(TrainingLogRow(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            val_energy_mape=val_e,
            val_time_mape=val_t,
            stopped=stopped,
        ))
        logger.info(
            "epoch %d loss %.6f val energy %s time %s", epoch, result.log[-1].train_loss,
            "n/a" if val_e is None else f"{val_e:.4f}", "n/a" if val_t is None else f"{val_t:.4f}",
        )
        if stopped:
            break

    model.restore(best_params)
    return result


def write_training_log(rows: Sequence[TrainingLogRow], path: str | Path):
    df = pd.DataFrame([r.model_dump() for r in rows], columns=LOG_COLUMNS)
    df["stopped"] = df["stopped"].astype(int)
    write_csv(df, Path(path))


def save_checkpoint(directory: str | Path, model: EcoPiNN, featurizer: Featurizer):
    directory = Path(directory)
    model.save(directory)
    featurizer.stats.save(directory / "feature_stats.csv")
    featurizer.vocab.save(directory / "vocab.csv")


def load_checkpoint(directory: str | Path, net: RoadNetwork, embeddings: EmbeddingTable) -> tuple[EcoPiNN, Featurizer]:
    directory = Path(directory)
    if not (directory / "params.csv").exists():
        raise DataError(f"no checkpoint in {directory}")
    model = EcoPiNN.load(directory)
    stats = FeatureStats.load(directory / "feature_stats.csv")
    vocab = CategoricalVocab.load(directory / "vocab.csv")
    return model, Featurizer(net, embeddings, stats, vocab)
