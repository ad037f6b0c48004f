"""
Run-directory layout and deterministic file IO.

Everything a run produces lives under `<workdir>/<data-hash>/`; training output
for one model/loss configuration lives in `train-<train-hash>/` below it.
Writers go through a temp file so a crashed run never leaves half a file.
"""

import hashlib
import json
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Iterable, TypeVar

import pandas as pd
from pydantic import BaseModel

from models.config import RunConfig

FLOAT_FORMAT = "%.17g"

M = TypeVar("M", bound=BaseModel)


def config_hash(*sections: BaseModel) -> str:
    payload = json.dumps([s.model_dump(mode="json") for s in sections], sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


def get_run_dir(config: RunConfig) -> Path:
    return Path(config.workdir) / config_hash(config.data)


def get_network_dir(config: RunConfig) -> Path:
    return Path(config.network_dir) if config.network_dir else get_run_dir(config) / "network"


def get_trips_path(config: RunConfig) -> Path:
    return Path(config.trips_path) if config.trips_path else get_run_dir(config) / "trips.jsonl"


def get_split_path(config: RunConfig) -> Path:
    return get_run_dir(config) / f"split-{config.training.energy_label_fraction:g}.json"


def get_embeddings_path(config: RunConfig) -> Path:
    if config.embeddings_path:
        return Path(config.embeddings_path)
    return get_run_dir(config) / f"embeddings-{config_hash(config.embedding)}.csv"


def get_train_dir(config: RunConfig) -> Path:
    if config.checkpoint_dir:
        return Path(config.checkpoint_dir)
    digest = config_hash(config.embedding, config.model, config.training, config.loss)
    return get_run_dir(config) / f"train-{digest}"


def get_repeat_dir(config: RunConfig, repeat: int) -> Path:
    return get_train_dir(config) / f"repeat-{repeat}"


def get_reports_dir(config: RunConfig) -> Path:
    return get_train_dir(config) / "reports"


@contextmanager
def get_writer(path: Path):
    """Yield a text handle on a temp file and move it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    handle = open(tmp, "w", encoding="utf-8", newline="")
    try:
        yield handle
        handle.close()
        os.replace(tmp, path)
    finally:
        if not handle.closed:
            handle.close()
        if tmp.exists():
            tmp.unlink()


def write_csv(df: pd.DataFrame, path: Path, header_line: str | None = None):
    with get_writer(path) as f:
        if header_line:
            f.write(header_line + "\n")
        df.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_json(obj, path: Path):
    with get_writer(path) as f:
        f.write(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def read_json(path: Path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def write_jsonl(records: Iterable[BaseModel], path: Path) -> int:
    count = 0
    with get_writer(path) as f:
        for record in records:
            f.write(record.model_dump_json() + "\n")
            count += 1
    return count


def read_jsonl(path: Path, model: type[M]) -> list[M]:
    with open(path, encoding="utf-8") as f:
        return [model.model_validate_json(line) for line in f if line.strip()]


def echo_config(directory: Path, config: RunConfig):
    """Write the effective config next to the outputs it produced."""
    write_json(config.model_dump(mode="json"), Path(directory) / "config.json")
