"""Command-line entry point: ``nrelaggs <subcommand> ...``.

Every command writes into ``--out`` (a directory) and leaves a
``manifest.json`` there recording the exact invocation.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import MissingCheckpoint, NRelaggsError
from .evaluation import ENGINES, Protocol, default_grid, grid_search, run_benchmark
from .model import NRelaggsConfig, build_model, extract_features, load_checkpoint, save_checkpoint, train
from .preprocess import (
    PreprocessorState,
    build_instances,
    class_labels,
    collate,
    fit_preprocessor,
    generate_aggregation_plan,
    write_bundle,
)
from .relaggs import relaggs_propositionalize
from .schema import class_distribution, load_database, table_statistics


def _parse_config(value: str | None) -> NRelaggsConfig | None:
    if value is None:
        return None
    text = Path(value).read_text() if os.path.isfile(value) else value
    return NRelaggsConfig.from_dict(json.loads(text))


def _write_manifest(args, out: Path, extra: dict | None = None) -> None:
    manifest = {
        "command": args.command,
        "schema": str(args.schema),
        "data_dir": str(args.data_dir) if args.data_dir else None,
        "engine": getattr(args, "engine", None),
        "seed": args.seed,
        "config": _parse_config(args.config).to_dict() if getattr(args, "config", None) else None,
        "config_grid": None,
        "out": str(out),
        "version": __version__,
        "argv": sys.argv[1:],
    }
    if manifest["config"] is None and args.command in ("train", "evaluate"):
        engine = "nrelaggs" if args.command == "train" else args.engine
        manifest["config_grid"] = [c.to_dict() if c else None for c in default_grid(engine)]
    manifest.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _write_matrix(path: Path, matrix: np.ndarray, targets: list[str], prefix: str) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{prefix}{i}" for i in range(matrix.shape[1])] + ["target"])
        for row, target in zip(matrix, targets):
            w.writerow([repr(float(v)) for v in row] + [target])


def _prepare(args):
    db = load_database(args.schema, args.data_dir)
    plan = generate_aggregation_plan(db)
    return db, plan, db.instance_keys()


def _target_labels(db, keys) -> list[str]:
    index = dict(zip(db.instance_keys(), db.labels()))
    return [index[k] for k in keys]


def cmd_ingest(args) -> None:
    db, plan, keys = _prepare(args)
    state = fit_preprocessor(db, keys)
    batch = collate(build_instances(db, state, plan, keys))
    out = args.out
    write_bundle(out / "bundles.bin", batch)
    (out / "preprocessor.json").write_text(json.dumps(state.to_dict(), indent=1) + "\n")
    lines = [f"{'table':<24}{'#columns':>10}{'#rows':>10}"]
    for name, n_cols, n_rows in table_statistics(db):
        lines.append(f"{name:<24}{n_cols:>10}{n_rows:>10}")
    dist = ", ".join(f"{label}({count})" for label, count in class_distribution(db).items())
    lines.append(f"target {db.target_table}.{db.target_attribute}: {dist}")
    (out / "stats.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


def _model_features(args, db, plan, keys):
    if not args.checkpoint:
        raise MissingCheckpoint("the nrelaggs engine needs --checkpoint from `nrelaggs train`")
    if not Path(args.checkpoint).is_file():
        raise MissingCheckpoint(f"checkpoint {args.checkpoint} does not exist")
    model, extra = load_checkpoint(args.checkpoint, plan)
    state = PreprocessorState.from_dict(extra["preprocessor"])
    batch = collate(build_instances(db, state, plan, keys))
    if args.dump_bundles:
        write_bundle(args.out / "bundles.bin", batch)
    return extract_features(model, batch, getattr(args, "layer", "pre_predictor"))


def cmd_propositionalize(args) -> None:
    db, plan, keys = _prepare(args)
    if args.engine == "relaggs":
        state = fit_preprocessor(db, keys)
        batch = collate(build_instances(db, state, plan, keys))
        if args.dump_bundles:
            write_bundle(args.out / "bundles.bin", batch)
        matrix = relaggs_propositionalize(batch, plan)
        prefix = "f"
    else:
        matrix = _model_features(args, db, plan, keys)
        prefix = "e"
    _write_matrix(args.out / "propositional.csv", matrix, _target_labels(db, keys), prefix)
    print(f"wrote {matrix.shape[0]} x {matrix.shape[1]} matrix to {args.out / 'propositional.csv'}")


def cmd_train(args) -> None:
    db, plan, keys = _prepare(args)
    config = _parse_config(args.config)
    if config is None:
        config = grid_search(db, default_grid("nrelaggs"), keys, seed=args.seed)
    config = NRelaggsConfig.from_dict({**config.to_dict(), "seed": args.seed})
    state = fit_preprocessor(db, keys)
    instances = build_instances(db, state, plan, keys)
    if args.dump_bundles:
        write_bundle(args.out / "bundles.bin", collate(instances))
    model = build_model(collate(instances[:1]).widths, plan, config)
    train(model, instances, None, config)
    negative, positive = class_labels(db)
    save_checkpoint(
        args.out / "model.npz",
        model,
        extra={"preprocessor": state.to_dict(), "classes": [negative, positive], "history": model.history},
    )
    print(f"trained {model.history['epochs_run']} epochs (best {model.history['best_epoch']}); "
          f"checkpoint at {args.out / 'model.npz'}")


def cmd_evaluate(args) -> None:
    db, plan, keys = _prepare(args)
    protocol = Protocol(folds=args.folds, repeats=args.repeats, seed=args.seed, jobs=args.jobs, config=_parse_config(args.config))
    report = run_benchmark(db, args.engine, protocol, dataset=Path(args.schema).parent.name)
    (args.out / "report.json").write_text(report.to_json() + "\n")
    (args.out / "summary.csv").write_text(report.summary_csv())
    print(report.summary_csv(), end="")


def cmd_extract_features(args) -> None:
    db, plan, keys = _prepare(args)
    matrix = _model_features(args, db, plan, keys)
    _write_matrix(args.out / "features.csv", matrix, _target_labels(db, keys), "e")
    print(f"wrote {matrix.shape[0]} x {matrix.shape[1]} features to {args.out / 'features.csv'}")


COMMANDS = {
    "ingest": cmd_ingest,
    "propositionalize": cmd_propositionalize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "extract-features": cmd_extract_features,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nrelaggs", description="Propositionalize relational databases.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--schema", required=True, type=Path, help="JSON schema descriptor")
        p.add_argument("--data-dir", type=Path, help="directory of table CSVs (default: next to the schema)")
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
        p.add_argument("--dump-bundles", action="store_true", help="also write the instance bundle container")
        p.add_argument("--config", help="fixed hyperparameters (JSON file or inline JSON), bypasses grid search")
        return p

    common(sub.add_parser("ingest", help="load, validate and bundle a database"))
    p = common(sub.add_parser("propositionalize", help="write a propositional CSV"))
    p.add_argument("--engine", required=True, choices=["relaggs", "nrelaggs"])
    p.add_argument("--checkpoint", type=Path)
    common(sub.add_parser("train", help="train a model on every instance and save a checkpoint"))
    p = common(sub.add_parser("evaluate", help="repeated stratified cross-validation"))
    p.add_argument("--engine", required=True, choices=list(ENGINES))
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--repeats", type=int, default=2)
    p = common(sub.add_parser("extract-features", help="export a trained model's intermediate layer"))
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--layer", default="pre_predictor")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args)
        _write_manifest(args, args.out)
    except NRelaggsError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
