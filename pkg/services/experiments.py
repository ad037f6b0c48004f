"""
Experiment Runner

Trains and evaluates every method on every split repeat and writes the MAPE
report, or sweeps one setting (jerk weight, energy weight, window size) over a
grid. Repeats are independent, so with `experiment.workers > 1` they run in a
process pool; each worker reloads the generated data from disk.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from errors import DataError, EcoTollError
from generators.splits import make_queries, make_split, make_test_queries, mask_energy, trip_query
from models import LabeledQuery, SplitPlan, SplitRepeat, TripRecord
from models.config import RunConfig
from pinn.model import EcoPiNN
from pinn.physics import joules_to_fuel
from services.embedding import EmbeddingTable, load_embeddings
from services.evaluation import aggregate, build_lookup, evaluate, lookup_predict, write_report
from services.featurization import CategoricalVocab, FeatureStats, Featurizer
from services.road_network import RoadNetwork, load_network
from services.training import (
    TrainingResult,
    load_checkpoint,
    save_checkpoint,
    train,
    write_training_log,
)
from storage import (
    echo_config,
    get_embeddings_path,
    get_network_dir,
    get_repeat_dir,
    get_reports_dir,
    get_split_path,
    get_trips_path,
    read_json,
    read_jsonl,
    write_csv,
    write_json,
)

logger = logging.getLogger(__name__)

MODEL_METHODS = ("eco_pinn", "ci_encoder_fc")
SWEEP_COLUMNS = ["sweep", "value", "repeat", "path_len", "mape"]
REPEAT_COLUMNS = ["method", "repeat", "path_len", "mape"]

# sweep mode -> (config section, key, grid field in ExperimentConfig)
SWEEPS = {
    "jerk": ("loss", "jerk", "sweep_jerk"),
    "energy_weight": ("loss", "energy", "sweep_energy_weight"),
    "window": ("model", "window", "sweep_window"),
}


@dataclass
class ExperimentContext:
    """Generated data one run works on."""

    net: RoadNetwork
    embeddings: EmbeddingTable
    trips: list[TripRecord]
    plan: SplitPlan

    @cached_property
    def by_id(self) -> dict[str, TripRecord]:
        return {t.trip_id: t for t in self.trips}

    def select(self, trip_ids: Sequence[str]) -> list[TripRecord]:
        return [self.by_id[t] for t in trip_ids]

    def repeat(self, k: int) -> SplitRepeat:
        for r in self.plan.repeats:
            if r.repeat == k:
                return r
        raise DataError(f"split plan has no repeat {k}")

    def test_sets(self, lengths: Sequence[int]) -> dict[int, list[LabeledQuery]]:
        return make_test_queries(self.select(self.plan.test_trip_ids), lengths)


def load_context(config: RunConfig) -> ExperimentContext:
    """
    Load network, embeddings, trips and split plan for a run.

    A split for a label fraction that has not been used before is drawn from the
    trips and saved.

    Raises:
        DataError: if network, embeddings or trips have not been generated yet
    """
    trips_path, split_path = get_trips_path(config), get_split_path(config)
    if not trips_path.exists():
        raise DataError(f"{trips_path} not found; run `gen-data` first")
    net = load_network(get_network_dir(config))
    embeddings = load_embeddings(get_embeddings_path(config), net=net, dim=config.embedding.dim)
    trips = read_jsonl(trips_path, TripRecord)
    if split_path.exists():
        plan = SplitPlan.model_validate(read_json(split_path))
    else:
        plan = make_split(trips, config.data.seed, config.training.energy_label_fraction)
        write_json(plan.model_dump(mode="json"), split_path)
        logger.info("wrote split plan %s", split_path)
    known = {t.trip_id for t in trips}
    missing = [t for t in plan.test_trip_ids if t not in known]
    if missing:
        raise DataError(f"{split_path}: {len(missing)} trip ids are not in {trips_path}")
    return ExperimentContext(net=net, embeddings=embeddings, trips=trips, plan=plan)


def method_config(config: RunConfig, method: str) -> RunConfig:
    """The run config a method trains under; the two model methods differ only in the decoder."""
    if method not in MODEL_METHODS:
        return config
    decoder = "physics" if method == "eco_pinn" else "linear"
    update = {"model": config.model.model_copy(update={"decoder": decoder})}
    if config.checkpoint_dir and method == "ci_encoder_fc":
        update["checkpoint_dir"] = str(Path(config.checkpoint_dir) / method)
    return config.model_copy(update=update)


def repeat_queries(ctx: ExperimentContext, k: int, config: RunConfig) -> tuple[list[LabeledQuery], list[LabeledQuery]]:
    """Sliding training and validation queries of repeat `k`, energy labels masked per the plan."""
    r = ctx.repeat(k)
    cfg = config.training
    train_trips = mask_energy(ctx.select(r.train_trip_ids), r.labeled_trip_ids)
    val_trips = mask_energy(ctx.select(r.validation_trip_ids), r.labeled_trip_ids)
    return (
        make_queries(train_trips, cfg.subpath_len, cfg.subpath_step),
        make_queries(val_trips, cfg.subpath_len, cfg.subpath_step),
    )


def train_repeat(ctx: ExperimentContext, k: int, config: RunConfig) -> TrainingResult:
    """Fit featurization on the training queries, train, and checkpoint into the repeat directory."""
    train_q, val_q = repeat_queries(ctx, k, config)
    if not train_q:
        raise DataError(f"repeat {k}: no training trip has {config.training.subpath_len} segments")
    stats = FeatureStats.fit([lq.query for lq in train_q], ctx.net)
    vocab = CategoricalVocab.fit(ctx.net, [s for lq in train_q for s in lq.query.path])
    featurizer = Featurizer(ctx.net, ctx.embeddings, stats, vocab)
    model = EcoPiNN(config.model, vocab.table_sizes())
    labeled = sum(lq.has_energy for lq in train_q)
    logger.info("repeat %d: %d training queries (%d with energy), %d validation", k, len(train_q), labeled, len(val_q))

    result = train(model, train_q, val_q, featurizer, config.training, config.loss)
    out_dir = get_repeat_dir(config, k)
    save_checkpoint(out_dir, result.model, featurizer)
    write_training_log(result.log, out_dir / "training_log.csv")
    echo_config(out_dir, config)
    return result


def model_predictor(model: EcoPiNN, featurizer: Featurizer):
    def predict(queries: Sequence[LabeledQuery]) -> np.ndarray:
        energy_j, _ = model.predict_queries([lq.query for lq in queries], featurizer)
        return joules_to_fuel(energy_j)
    return predict


def evaluate_checkpoint(ctx: ExperimentContext, k: int, config: RunConfig, lengths: Sequence[int]) -> dict[int, float]:
    model, featurizer = load_checkpoint(get_repeat_dir(config, k), ctx.net, ctx.embeddings)
    return evaluate(model_predictor(model, featurizer), ctx.test_sets(lengths))


def lookup_repeat(ctx: ExperimentContext, k: int, lengths: Sequence[int]) -> dict[int, float]:
    """Lookup baseline of repeat `k`, built from the whole labeled train/validation trips."""
    r = ctx.repeat(k)
    labeled = ctx.select(sorted(set(r.labeled_trip_ids)))
    table = build_lookup([trip_query(t) for t in labeled], ctx.net)
    logger.info("repeat %d: lookup table with %d bins from %d trips", k, len(table), len(labeled))

    def predict(queries: Sequence[LabeledQuery]) -> np.ndarray:
        return np.array([lookup_predict(table, lq.query, ctx.net) for lq in queries])

    return evaluate(predict, ctx.test_sets(lengths))


def run_repeat(
    ctx: ExperimentContext,
    config: RunConfig,
    method: str,
    k: int,
    train_models: bool = True,
) -> dict[int, float]:
    lengths = config.experiment.test_lengths
    if method == "nrel":
        return lookup_repeat(ctx, k, lengths)
    cfg = method_config(config, method)
    if train_models:
        train_repeat(ctx, k, cfg)
    return evaluate_checkpoint(ctx, k, cfg, lengths)


_WORKER_CONTEXTS: dict[str, ExperimentContext] = {}


def _repeat_job(config_data: dict, method: str, k: int, train_models: bool) -> dict[int, float]:
    config = RunConfig.model_validate(config_data)
    key = str(get_trips_path(config))
    if key not in _WORKER_CONTEXTS:
        _WORKER_CONTEXTS[key] = load_context(config)
    return run_repeat(_WORKER_CONTEXTS[key], config, method, k, train_models)


@dataclass
class RepeatOutcome:
    method: str
    repeat: int
    mape: dict[int, float] = field(default_factory=dict)
    error: Optional[str] = None


def run_jobs(
    ctx: ExperimentContext,
    jobs: Sequence[tuple[RunConfig, str, int]],
    workers: int = 1,
    train_models: bool = True,
) -> list[RepeatOutcome]:
    """
    Run (config, method, repeat) jobs and collect outcomes in job order.

    A job that raises a pipeline error is recorded as failed; other exceptions
    propagate.
    """
    outcomes = [RepeatOutcome(method=m, repeat=k) for _, m, k in jobs]
    if workers <= 1:
        for outcome, (cfg, method, k) in zip(outcomes, jobs):
            try:
                outcome.mape = run_repeat(ctx, cfg, method, k, train_models)
            except EcoTollError as e:
                logger.error("%s repeat %d failed: %s", method, k, e)
                outcome.error = str(e)
        return outcomes

    with ProcessPoolExecutor(max_workers=workers) as executor:
        futures = [
            executor.submit(_repeat_job, cfg.model_dump(mode="json"), method, k, train_models)
            for cfg, method, k in jobs
        ]
        for outcome, future in zip(outcomes, futures):
            try:
                outcome.mape = future.result()
            except EcoTollError as e:
                logger.error("%s repeat %d failed: %s", outcome.method, outcome.repeat, e)
                outcome.error = str(e)
    return outcomes


def _repeat_ids(ctx: ExperimentContext, config: RunConfig) -> list[int]:
    available = sorted(r.repeat for r in ctx.plan.repeats)
    if config.experiment.repeats > len(available):
        logger.warning("config asks for %d repeats, split plan has %d", config.experiment.repeats, len(available))
    return available[:config.experiment.repeats]


def _require_checkpoints(config: RunConfig, methods: Sequence[str], repeats: Sequence[int]):
    missing = [
        str(get_repeat_dir(method_config(config, m), k))
        for m in methods if m in MODEL_METHODS
        for k in repeats
        if not (get_repeat_dir(method_config(config, m), k) / "params.csv").exists()
    ]
    if missing:
        raise DataError(f"no checkpoint in {missing[0]}" + (f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))


def run_experiment(
    config: RunConfig,
    ctx: Optional[ExperimentContext] = None,
    methods: Optional[Sequence[str]] = None,
    train_models: bool = True,
    name: str = "report",
) -> Path:
    """
    Evaluate every method on every repeat and write `<name>.csv` / `<name>.json`.

    Args:
        config: Effective run config
        ctx: Preloaded data; loaded from the run directory when omitted
        methods: Subset of `eco_pinn`, `ci_encoder_fc`, `nrel`; defaults to the config's list
        train_models: Train model methods first; otherwise evaluate existing checkpoints
        name: Report file stem

    Returns:
        The reports directory

    Raises:
        DataError: if `train_models` is off and a needed checkpoint is missing
    """
    ctx = ctx or load_context(config)
    methods = list(methods or config.experiment.methods)
    repeats = _repeat_ids(ctx, config)
    if not train_models:
        _require_checkpoints(config, methods, repeats)

    jobs = [(config, m, k) for m in methods for k in repeats]
    outcomes = run_jobs(ctx, jobs, config.experiment.workers, train_models)

    lengths = config.experiment.test_lengths
    rows, long_rows = [], []
    for method in methods:
        done = [o for o in outcomes if o.method == method and o.error is None]
        rows += aggregate(method, [o.mape for o in done], lengths)
        long_rows += [
            {"method": method, "repeat": o.repeat, "path_len": n, "mape": o.mape.get(n, np.nan)}
            for o in done for n in lengths
        ]
    failures = [{"method": o.method, "repeat": o.repeat, "error": o.error} for o in outcomes if o.error]
    if failures:
        logger.warning("%d of %d repeat runs failed; report is partial", len(failures), len(outcomes))

    reports = get_reports_dir(config)
    write_csv(pd.DataFrame(long_rows, columns=REPEAT_COLUMNS), reports / f"{name}_repeats.csv")
    write_report(rows, reports, name, extra={"partial": bool(failures), "failures": failures})
    echo_config(reports, config)
    return reports


def sweep_config(config: RunConfig, mode: str, value) -> RunConfig:
    """Config with one swept setting replaced; the energy-weight sweep keeps w_e + w_t = 1."""
    if mode not in SWEEPS:
        raise ValueError(f"unknown sweep mode {mode!r}; expected one of {sorted(SWEEPS)}")
    section, key, _ = SWEEPS[mode]
    data = config.model_dump(mode="json")
    data[section][key] = value
    if mode == "energy_weight":
        data["loss"]["time"] = 1.0 - value
    if config.checkpoint_dir:
        data["checkpoint_dir"] = str(Path(config.checkpoint_dir) / f"{mode}-{value}")
    return RunConfig.model_validate(data)


def run_sweep(
    config: RunConfig,
    mode: str,
    ctx: Optional[ExperimentContext] = None,
    values: Optional[Sequence] = None,
) -> Path:
    """Train and evaluate Eco-PiNN at every grid value; writes `sweep_<mode>.csv` in long format."""
    if mode not in SWEEPS:
        raise ValueError(f"unknown sweep mode {mode!r}; expected one of {sorted(SWEEPS)}")
    ctx = ctx or load_context(config)
    grid = list(values if values is not None else getattr(config.experiment, SWEEPS[mode][2]))
    repeats = _repeat_ids(ctx, config)

    jobs, job_values = [], []
    for value in grid:
        cfg = sweep_config(config, mode, value)
        for k in repeats:
            jobs.append((cfg, "eco_pinn", k))
            job_values.append(value)
    outcomes = run_jobs(ctx, jobs, config.experiment.workers)

    rows = [
        {"sweep": mode, "value": value, "repeat": o.repeat, "path_len": n, "mape": o.mape.get(n, np.nan)}
        for value, o in zip(job_values, outcomes) if o.error is None
        for n in config.experiment.test_lengths
    ]
    failed = sum(o.error is not None for o in outcomes)
    if failed:
        logger.warning("sweep %s: %d of %d runs failed", mode, failed, len(outcomes))
    reports = get_reports_dir(config)
    write_csv(pd.DataFrame(rows, columns=SWEEP_COLUMNS), reports / f"sweep_{mode}.csv")
    return reports
