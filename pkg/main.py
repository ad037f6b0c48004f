#!/usr/bin/env python3
"""
Eco-Toll Estimation Pipeline

Generate synthetic truck trips, embed the road network, train the
physics-informed estimator and evaluate it against the lookup-table baseline.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent))

import pandas as pd

from errors import ConfigError, DataError, EcoTollError, TrainingDivergedError
from generators import NetworkGenerator, TripGenerator, make_split, summarize_trips
from models.config import LossWeights, RunConfig, TrainConfig, load_config
from services import embed_network, load_embeddings, load_network, save_embeddings
from services.experiments import SWEEPS, load_context, method_config, run_experiment, run_sweep, train_repeat
from services.predictions import PredictionService
from storage import (
    echo_config,
    get_embeddings_path,
    get_network_dir,
    get_repeat_dir,
    get_run_dir,
    get_split_path,
    get_train_dir,
    get_trips_path,
    write_csv,
    write_json,
)

EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 2, 3, 4

# flag prefix per config section that gets one flag per field
FIELD_FLAGS = {"training": ("", TrainConfig), "loss": ("loss-", LossWeights)}


def model_method(config: RunConfig) -> str:
    return "eco_pinn" if config.model.decoder == "physics" else "ci_encoder_fc"


def generate_data(config: RunConfig, keep_profiles: bool = False):
    """Build the grid network, simulate trips and draw the split plan"""
    cfg = config.data
    run_dir = get_run_dir(config)

    print(f"\n📊 Generating data in {run_dir}...")
    print(f"   - {cfg.rows}x{cfg.cols} grid network")
    print(f"   - {cfg.n_trips} trips (~{cfg.mean_trip_segments:.0f} segments each)\n")

    print("🛣️  Generating road network...")
    network_gen = NetworkGenerator(cfg.rows, cfg.cols, cfg.seed)
    net = network_gen.generate_one()
    network_gen.save(net, get_network_dir(config))
    print(f"   {len(net.nodes)} intersections, {len(net)} segments")

    print("🚚 Simulating trips...")
    trip_gen = TripGenerator(net, cfg, keep_profiles=keep_profiles)
    trips = []
    for i in range(cfg.n_trips):
        trips.append(trip_gen.generate_one())
        if (i + 1) % 100 == 0 or i + 1 == cfg.n_trips:
            print(f"   Trip {i + 1}/{cfg.n_trips}")
    trip_gen.save(trips, get_trips_path(config))
    if keep_profiles:
        trip_gen.save_profiles(trips, run_dir / "profiles.csv")

    print("✂️  Drawing split plan...")
    plan = make_split(trips, cfg.seed, config.training.energy_label_fraction)
    write_json(plan.model_dump(mode="json"), get_split_path(config))
    echo_config(run_dir, config)

    stats = summarize_trips(trips)
    print(f"\n📈 Trip Statistics:")
    print("-" * 40)
    print(f"   Trips:                  {stats['trips']:>8,}")
    print(f"   Segments traversed:     {stats['segments']:>8,}")
    print(f"   Mean segments per trip: {stats['mean_segments']:>8.2f}")
    print(f"   Shortest / longest:     {stats['min_segments']:>4} / {stats['max_segments']}")
    print(f"   Driving hours:          {stats['total_hours']:>8.1f}")
    print(f"   Fallback profiles:      {stats['fallback_segments']:>8,}")
    print("-" * 40)
    print(f"   Test trips: {len(plan.test_trip_ids)}, repeats: {len(plan.repeats)}")
    print("\n✅ Data generation complete!")


def embed(config: RunConfig, track_loss: bool = False):
    net = load_network(get_network_dir(config))
    print(f"\n🧭 Embedding {len(net)} segments (dim {config.embedding.dim})...")
    table = embed_network(net, config.embedding, track_loss=track_loss)
    path = get_embeddings_path(config)
    save_embeddings(table, path)
    if track_loss:
        history = pd.DataFrame({"epoch": range(len(table.loss_history)), "objective": table.loss_history})
        write_csv(history, path.with_name(path.stem + "_objective.csv"))
        print(f"   Objective: {table.loss_history[0]:.4f} -> {table.loss_history[-1]:.4f}")
    print(f"\n✅ Embeddings written to {path}")


def train_models(config: RunConfig, repeat: Optional[int] = None):
    config = method_config(config, model_method(config))
    ctx = load_context(config)
    repeats = [repeat] if repeat is not None else [r.repeat for r in ctx.plan.repeats][:config.experiment.repeats]
    print(f"\n🧠 Training {model_method(config)} on {len(repeats)} repeat(s)...")
    for k in repeats:
        result = train_repeat(ctx, k, config)
        best = result.log[result.best_epoch]
        energy = "n/a" if best.val_energy_mape is None else f"{100 * best.val_energy_mape:.2f}%"
        print(f"   Repeat {k}: best epoch {result.best_epoch} of {len(result.log)}, val energy MAPE {energy}")
    echo_config(get_train_dir(config), config)
    print(f"\n✅ Checkpoints in {get_train_dir(config)}")


def print_report(reports: Path, name: str):
    report = json.loads((reports / f"{name}.json").read_text(encoding="utf-8"))
    print(f"\n📊 MAPE by path length ({reports / f'{name}.csv'}):")
    print("-" * 50)
    for row in report["rows"]:
        value = "n/a" if row["mape_mean"] is None else f"{row['mape_mean']:6.2f} ({row['mape_sd']:.2f})"
        print(f"   {row['method']:15} {row['path_len']:>4}   {value}   n={row['n_repeats']}")
    print("-" * 50)
    if report.get("partial"):
        print(f"   ⚠️  partial report: {len(report['failures'])} repeat run(s) failed")


def predict(config: RunConfig, queries: Path, output: Optional[Path], repeat: int):
    net = load_network(get_network_dir(config))
    embeddings = load_embeddings(get_embeddings_path(config), net=net, dim=config.embedding.dim)
    checkpoint = get_repeat_dir(method_config(config, model_method(config)), repeat)
    service = PredictionService(checkpoint, net, embeddings)
    summary = service.process_query_file(queries, output)
    print(f"\n🔮 Predicted {summary['total_queries']} queries ({summary['total_segments']} segments)")
    print(f"   Fuel units: {summary['total_fuel_units']:.3f}")
    print(f"   Time:       {summary['total_time_s']:.1f} s")
    print(f"\n✅ Predictions written to {summary['output']}")


def _field_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("training and loss overrides")
    for section, (prefix, model) in FIELD_FLAGS.items():
        for name, info in model.model_fields.items():
            group.add_argument(
                f"--{prefix}{name.replace('_', '-')}",
                dest=f"{section}.{name}",
                type=info.annotation,
                default=None,
                help=f"{section}.{name} (default: {info.get_default(call_default_factory=True)})",
            )


def _overrides(args: argparse.Namespace) -> list[str]:
    overrides = list(args.set or [])
    for section, (_, model) in FIELD_FLAGS.items():
        for name in model.model_fields:
            value = getattr(args, f"{section}.{name}", None)
            if value is not None:
                overrides.append(f"{section}.{name}={json.dumps(value)}")
    return overrides


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", type=Path, help="TOML run config")
    common.add_argument(
        "--set", action="append", metavar="SECTION.KEY=VALUE",
        help="Override any config key (repeatable); flags win over the file",
    )
    common.add_argument("--quiet", "-q", action="store_true", help="Only log warnings")
    _field_flags(common)

    parser = argparse.ArgumentParser(
        description="Physics-informed eco-toll estimation for trucks",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python main.py gen-data -c configs/desk.toml          # Network, trips and split plan
  python main.py embed -c configs/desk.toml             # Segment embeddings
  python main.py train -c configs/desk.toml --repeat 0  # Train one repeat
  python main.py evaluate -c configs/desk.toml          # MAPE report from checkpoints
  python main.py baseline -c configs/desk.toml          # Lookup-table report
  python main.py experiment -c configs/desk.toml        # Train + evaluate every method
  python main.py sweep -c configs/desk.toml --mode jerk # Jerk-weight grid
  python main.py predict -c configs/desk.toml --queries q.json
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", parents=[common], help="Generate network, trips and split plan")
    gen.add_argument("--profiles", action="store_true", help="Also write dense velocity profiles")

    emb = sub.add_parser("embed", parents=[common], help="Train segment embeddings")
    emb.add_argument("--track-loss", action="store_true", help="Record the skip-gram objective per epoch")

    tr = sub.add_parser("train", parents=[common], help="Train the configured model")
    tr.add_argument("--repeat", type=int, help="Train only this split repeat")

    ev = sub.add_parser("evaluate", parents=[common], help="Evaluate saved checkpoints")
    ev.add_argument(
        "--methods", nargs="+", choices=["eco_pinn", "ci_encoder_fc", "nrel"],
        help="Methods to evaluate (default: the configured model)",
    )

    sub.add_parser("baseline", parents=[common], help="Evaluate the lookup-table baseline")
    sub.add_parser("experiment", parents=[common], help="Train and evaluate every configured method")

    sw = sub.add_parser("sweep", parents=[common], help="Train and evaluate over one setting's grid")
    sw.add_argument("--mode", required=True, choices=sorted(SWEEPS))

    pr = sub.add_parser("predict", parents=[common], help="Estimate energy and time for a query file")
    pr.add_argument("--queries", required=True, type=Path, help="JSON list of queries")
    pr.add_argument("--output", "-o", type=Path, help="Output JSON (default: <queries>.predictions.json)")
    pr.add_argument("--repeat", type=int, default=0, help="Checkpoint repeat to use (default: 0)")
    return parser


def run(args: argparse.Namespace):
    config = load_config(args.config, _overrides(args))

    if args.command == "gen-data":
        generate_data(config, keep_profiles=args.profiles)
    elif args.command == "embed":
        embed(config, track_loss=args.track_loss)
    elif args.command == "train":
        train_models(config, args.repeat)
    elif args.command == "evaluate":
        methods = args.methods or [model_method(config)]
        print_report(run_experiment(config, methods=methods, train_models=False), "report")
    elif args.command == "baseline":
        print_report(run_experiment(config, methods=["nrel"], name="baseline"), "baseline")
    elif args.command == "experiment":
        print_report(run_experiment(config), "report")
    elif args.command == "sweep":
        reports = run_sweep(config, args.mode)
        print(f"\n✅ Sweep written to {reports / f'sweep_{args.mode}.csv'}")
    elif args.command == "predict":
        predict(config, args.queries, args.output, args.repeat)


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="[%(asctime)s] %(levelname)s %(name)s: %(message)s",
        datefmt="%H:%M:%S",
    )
    try:
        run(args)
    except ConfigError as e:
        print(f"❌ Config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as e:
        print(f"❌ {e}", file=sys.stderr)
        print(json.dumps(e.diagnostic, indent=2, default=str), file=sys.stderr)
        return EXIT_DIVERGED
    except DataError as e:
        print(f"❌ Data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except EcoTollError as e:
        print(f"❌ {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
