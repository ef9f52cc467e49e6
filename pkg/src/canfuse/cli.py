"""Command-line front end for the detection pipeline.

Stages write their artifacts into a shared directory so expensive steps
(predictor training, the genetic search) run once and cheap steps reuse
the files:

    generate        -> traffic.csv
    ingest          -> frames.bin, splits.bin, normalizer.bin
    train-predictor -> predictor.bin
    extract         -> fused.bin
    optimize        -> subspace.json, subspace.txt, ga_history.csv
    train           -> model.bin
    evaluate        -> eval_report.json, eval_report.txt
    ttest           -> ttest_report.json, ttest_report.txt
    report          -> report/ (figures + metrics.csv)

Exit codes: 0 success, 1 validation error, 2 runtime failure. A JSON
config passed via --config takes precedence over command-line flags;
the CANFUSE_ARTIFACTS environment variable sets the default artifact
directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import ga, report, spatial, stats, synth
from .errors import CanfuseError, ConfigError, ParseError, ValidationError
from .fusion import FusedMatrix, apply_mask, assemble, parse_mask
from .ingest import (
    LABEL_ANOMALOUS,
    LABEL_NORMAL,
    FrameTable,
    Normalizer,
    SplitSpec,
    apply_normalizer,
    fit_normalizer,
    load_splits,
    parse_log,
    save_splits,
    split,
    write_log,
)
from .ml import DtParams, RandomForest, RfParams, evaluate as evaluate_model, train_rf
from .temporal import temporal_features

ENV_OUT_DIR = "CANFUSE_ARTIFACTS"
DEFAULT_OUT_DIR = "artifacts"
DEFAULT_SEED = 7
DEFAULT_FILTER_SIZE = 7500

ARTIFACTS = {
    "traffic": "traffic.csv",
    "frames": "frames.bin",
    "splits": "splits.bin",
    "normalizer": "normalizer.bin",
    "predictor": "predictor.bin",
    "fused": "fused.bin",
    "subspace": "subspace.json",
    "subspace_text": "subspace.txt",
    "ga_history": "ga_history.csv",
    "model": "model.bin",
}


class _Parser(argparse.ArgumentParser):
    """Argument errors become validation errors (exit code 1)."""

    def error(self, message):
        raise ValidationError(message)


def _out_dir(args) -> Path:
    path = Path(args.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _artifact(args, key: str) -> Path:
    return _out_dir(args) / ARTIFACTS[key]


def _require(args, key: str, produced_by: str) -> Path:
    path = _artifact(args, key)
    if not path.exists():
        raise ValidationError(
            f"missing artifact {path.name} in {path.parent}; run `canfuse {produced_by}` first"
        )
    return path


def _apply_config_overrides(args) -> None:
    """Values from --config take precedence over command-line flags."""
    if not getattr(args, "config", None):
        return
    path = Path(args.config)
    if not path.exists():
        raise ValidationError(f"config file {path} not found")
    try:
        overrides = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(overrides, dict):
        raise ValidationError("config file must hold a JSON object")
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise ValidationError(f"config key {key!r} matches no flag of this command")
        setattr(args, dest, value)


def _label_value(name: str) -> int:
    return LABEL_ANOMALOUS if name == "anomalous" else LABEL_NORMAL


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--out-dir",
        default=os.environ.get(ENV_OUT_DIR, DEFAULT_OUT_DIR),
        help="artifact directory (env %s; default %%(default)s)" % ENV_OUT_DIR,
    )
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED,
                        help="random seed (default %(default)s)")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker thread cap (default %(default)s)")
    parser.add_argument("--format", choices=("text", "json"), default="text",
                        help="stdout format (default %(default)s)")
    parser.add_argument("--config", default=None,
                        help="JSON file whose values override the flags")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_generate(args) -> int:
    if not Path(args.traffic_config).exists():
        raise ValidationError(f"traffic config {args.traffic_config} not found")
    profile, attack = synth.load_config(args.traffic_config)
    if args.override_seed:
        profile = synth.TrafficProfile(profile.ids, profile.duration, profile.jitter, args.seed)
    table = synth.generate(profile, attack)
    output = Path(args.output) if args.output else _artifact(args, "traffic")
    output.parent.mkdir(parents=True, exist_ok=True)
    write_log(table, output)
    n_anom = int(table.label.sum())
    info = {
        "output": str(output),
        "frames": len(table),
        "anomalous": n_anom,
        "anomalous_fraction": n_anom / len(table) if len(table) else 0.0,
    }
    _emit(args, info, f"wrote {len(table)} frames ({n_anom} anomalous) to {output}")
    return 0


def cmd_ingest(args) -> int:
    if not Path(args.input).exists():
        raise ValidationError(f"input log {args.input} not found")
    table = parse_log(
        args.input,
        default_label=_label_value(args.label),
        header_rows=args.skip_header,
    )
    if len(table) < 10:
        raise ValidationError(f"input has only {len(table)} frames; need at least 10")
    spec = SplitSpec(args.train_frac, args.val_frac, args.test_frac, args.seed)
    train_idx, val_idx, test_idx = split(len(table), spec)
    raw = table.raw_matrix()
    norm = fit_normalizer(raw, train_idx)

    table.save(_artifact(args, "frames"))
    save_splits(_artifact(args, "splits"), train_idx, val_idx, test_idx, spec)
    norm.save(_artifact(args, "normalizer"))
    if args.export_csv:
        write_log(table, args.export_csv)
    info = {
        "frames": len(table),
        "anomalous": int(table.label.sum()),
        "train": len(train_idx),
        "val": len(val_idx),
        "test": len(test_idx),
    }
    _emit(args, info,
          f"ingested {info['frames']} frames ({info['anomalous']} anomalous); "
          f"split {info['train']}/{info['val']}/{info['test']}")
    return 0


def cmd_train_predictor(args) -> int:
    if not Path(args.input).exists():
        raise ValidationError(f"input log {args.input} not found")
    table = parse_log(args.input, default_label=_label_value(args.label),
                      header_rows=args.skip_header)
    if int(table.label.sum()) > 0:
        raise ValidationError(
            "predictor training requires attack-free input; "
            f"{int(table.label.sum())} frames are labeled anomalous"
        )
    raw = table.raw_matrix()
    norm = fit_normalizer(raw, np.arange(len(table)))
    fields = apply_normalizer(norm, raw)
    model = spatial.train(
        fields,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        momentum=args.momentum,
        seed=args.seed,
    )
    model.save(_artifact(args, "predictor"))
    info = {
        "parameters": model.parameter_count,
        "epochs": model.epochs,
        "final_mae": model.final_mae,
    }
    _emit(args, info,
          f"trained predictor: {model.parameter_count} parameters, "
          f"final training MAE {model.final_mae:.6f}")
    return 0


def _load_pipeline_inputs(args):
    table = FrameTable.load(_require(args, "frames", "ingest"))
    train_idx, val_idx, test_idx, _ = load_splits(_require(args, "splits", "ingest"))
    norm = Normalizer.load(_require(args, "normalizer", "ingest"))
    predictor = spatial.PredictorModel.load(_require(args, "predictor", "train-predictor"))
    raw_norm = apply_normalizer(norm, table.raw_matrix())
    pe = spatial.extract_pe(predictor, raw_norm)
    return table, raw_norm, pe, train_idx, val_idx, test_idx


def _filter_size_from(args) -> int:
    if getattr(args, "subspace", None):
        info = _read_subspace(args.subspace)
        return int(info["filter_size"])
    return args.filter_size


def _read_subspace(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"subspace artifact {path} not found; run `canfuse optimize` first")
    return json.loads(path.read_text())


def cmd_extract(args) -> int:
    table, raw_norm, pe, *_ = _load_pipeline_inputs(args)
    filter_size = _filter_size_from(args)
    se, ratio = temporal_features(table.can_id, filter_size)
    fused = assemble(raw_norm, se, ratio, pe, table.label, filter_size)
    fused.save(_artifact(args, "fused"))
    if args.export_csv:
        fused.to_csv(args.export_csv)
    info = {"rows": len(fused), "columns": len(fused.columns), "filter_size": filter_size}
    _emit(args, info,
          f"assembled {len(fused)}x{len(fused.columns)} fused matrix at filter size {filter_size}")
    return 0


def cmd_optimize(args) -> int:
    table, raw_norm, pe, train_idx, val_idx, _ = _load_pipeline_inputs(args)
    config = ga.GaConfig(
        population=args.population,
        generations=args.generations,
        crossover_rate=args.crossover_rate,
        mutation_rate=args.mutation_rate,
        seed=args.seed,
    )
    ctx = ga.GaContext(
        table.can_id, raw_norm, pe, table.label, train_idx, val_idx,
        dt_params=DtParams(max_depth=args.ga_max_depth),
        threads=args.threads,
    )
    print(
        f"optimizing with population size {config.population}, "
        f"crossover rate {config.crossover_rate}, mutation rate {config.mutation_rate}, "
        f"generations {config.generations}"
    )
    history_rows: list[dict] = []

    def on_generation(s: ga.GenerationStats):
        print(s.line())
        history_rows.append({
            "generation": s.generation,
            "best_fitness": s.best_fitness,
            "mean_fitness": s.mean_fitness,
            "best_filter_size": s.best_filter_size,
            "best_popcount": s.best_popcount,
        })

    best, _history = ga.run(config, ctx, on_generation=on_generation)
    info = ga.subspace_dict(best)
    _artifact(args, "subspace").write_text(json.dumps(info, indent=2) + "\n")
    _artifact(args, "subspace_text").write_text(ga.subspace_text(best))
    with open(_artifact(args, "ga_history"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(history_rows[0].keys()))
        writer.writeheader()
        writer.writerows(history_rows)
    _emit(args, info,
          f"best subspace: filter size {info['filter_size']}, "
          f"{len(info['features'])} features, fitness {info['fitness']:.4f}")
    return 0


def _mask_for_train(args, fused: FusedMatrix) -> np.ndarray:
    if args.subspace:
        info = _read_subspace(args.subspace)
        if fused.filter_size is not None and int(info["filter_size"]) != int(fused.filter_size):
            raise ValidationError(
                f"fused matrix was extracted at filter size {fused.filter_size} but the "
                f"subspace wants {info['filter_size']}; re-run `canfuse extract "
                f"--subspace {args.subspace}`"
            )
        return parse_mask(info["mask"], fused.columns)
    if args.mask:
        return parse_mask(args.mask, fused.columns)
    return np.ones(len(fused.columns), dtype=bool)


def cmd_train(args) -> int:
    fused = FusedMatrix.load(_require(args, "fused", "extract"))
    train_idx, _, _, _ = load_splits(_require(args, "splits", "ingest"))
    mask = _mask_for_train(args, fused)
    masked = apply_mask(fused, mask)
    params = RfParams(
        n_trees=args.n_trees,
        max_depth=args.max_depth,
        min_samples_split=args.min_samples_split,
    )
    model = train_rf(
        masked.values[train_idx], masked.labels[train_idx],
        params, seed=args.seed, threads=args.threads,
    )
    model.save(
        _artifact(args, "model"),
        meta={
            "mask": "".join("1" if m else "0" for m in mask),
            "columns": list(masked.columns),
            "filter_size": fused.filter_size,
        },
    )
    info = {
        "trees": params.n_trees,
        "features": len(masked.columns),
        "train_rows": len(train_idx),
    }
    _emit(args, info,
          f"trained forest of {params.n_trees} trees on {len(train_idx)} rows "
          f"x {len(masked.columns)} features")
    return 0


def _split_rows(args, train_idx, val_idx, test_idx):
    return {"train": train_idx, "val": val_idx, "test": test_idx}[args.split]


def cmd_evaluate(args) -> int:
    fused = FusedMatrix.load(_require(args, "fused", "extract"))
    train_idx, val_idx, test_idx, _ = load_splits(_require(args, "splits", "ingest"))
    model, meta = RandomForest.load(_require(args, "model", "train"))
    mask = parse_mask(meta["mask"], fused.columns)
    masked = apply_mask(fused, mask)
    rows = _split_rows(args, train_idx, val_idx, test_idx)
    rep = evaluate_model(model, masked.values[rows], masked.labels[rows])
    out = _out_dir(args)
    (out / "eval_report.json").write_text(rep.to_json() + "\n")
    (out / "eval_report.txt").write_text(rep.to_text() + "\n")
    _emit(args, rep.to_dict(), rep.to_text())
    return 0


def cmd_ttest(args) -> int:
    fused = FusedMatrix.load(_require(args, "fused", "extract"))
    raw_mask = np.zeros(len(fused.columns), dtype=bool)
    raw_mask[:11] = True
    params = RfParams(
        n_trees=args.n_trees,
        max_depth=args.max_depth,
        min_samples_split=args.min_samples_split,
    )

    def trainer(x, y):
        return train_rf(x, y, params, seed=args.seed, threads=args.threads)

    result = stats.five_by_two_cv(
        fused.values,
        fused.values[:, raw_mask],
        fused.labels,
        trainer,
        trainer,
        metric=args.metric,
        seed=args.seed,
    )
    out = _out_dir(args)
    (out / "ttest_report.json").write_text(result.to_json() + "\n")
    (out / "ttest_report.txt").write_text(result.to_text() + "\n")
    _emit(args, result.to_dict(), result.to_text())
    return 0


def cmd_report(args) -> int:
    fused = FusedMatrix.load(_require(args, "fused", "extract"))
    train_idx, val_idx, test_idx, _ = load_splits(_require(args, "splits", "ingest"))
    model, meta = RandomForest.load(_require(args, "model", "train"))
    out = _out_dir(args) / "report"
    out.mkdir(parents=True, exist_ok=True)

    mask = parse_mask(meta["mask"], fused.columns)
    masked = apply_mask(fused, mask)
    rows = test_idx
    labels = fused.labels[rows]

    fused_report = evaluate_model(model, masked.values[rows], masked.labels[rows])
    fused_scores = model.predict_proba(masked.values[rows])

    raw_params = RfParams(
        n_trees=min(model.params.n_trees, args.n_trees),
        max_depth=model.params.max_depth,
        min_samples_split=model.params.min_samples_split,
    )
    raw_model = train_rf(
        fused.values[train_idx][:, :11], fused.labels[train_idx],
        raw_params, seed=args.seed, threads=args.threads,
    )
    raw_report = evaluate_model(raw_model, fused.values[rows][:, :11], labels)
    raw_scores = raw_model.predict_proba(fused.values[rows][:, :11])

    report.write_metrics_csv(
        out / "metrics.csv",
        [("fused", fused_report), ("raw", raw_report)],
    )
    report.render_roc(
        out / "roc.png",
        [("fused", labels, fused_scores), ("raw", labels, raw_scores)],
    )
    se_col = fused.columns.index("SE")
    ratio_col = fused.columns.index("RATIO")
    pe_cols = [fused.columns.index(f"PE{i}") for i in range(1, 9)]
    report.render_pe_distributions(
        out / "pe_by_class.png", fused.values[:, pe_cols], fused.labels
    )
    report.render_window_profile(
        out / "window_profile.png",
        fused.values[:, se_col],
        fused.values[:, ratio_col],
        fused.labels,
        int(fused.filter_size or DEFAULT_FILTER_SIZE),
    )
    history_path = _artifact(args, "ga_history")
    rendered = ["metrics.csv", "roc.png", "pe_by_class.png", "window_profile.png"]
    if history_path.exists():
        with open(history_path, newline="", encoding="utf-8") as fh:
            history = list(csv.DictReader(fh))
        if history:
            report.render_ga_history(out / "ga_history.png", history)
            rendered.append("ga_history.png")
    info = {"report_dir": str(out), "files": rendered}
    _emit(args, info, f"wrote {', '.join(rendered)} to {out}")
    return 0


def _emit(args, payload: dict, text: str) -> None:
    if getattr(args, "format", "text") == "json":
        print(json.dumps(payload, indent=2, sort_keys=True, default=str))
    else:
        print(text)


# ---------------------------------------------------------------------------
# Parser assembly


def build_parser() -> _Parser:
    parser = _Parser(prog="canfuse", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic labeled CAN log")
    p.add_argument("--traffic-config", required=True,
                   help="JSON file with profile and optional attack sections")
    p.add_argument("--output", default=None, help="output log path (default out-dir/traffic.csv)")
    p.add_argument("--override-seed", action="store_true",
                   help="replace the profile seed with --seed")
    _add_common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ingest", help="parse a log into frame table, splits and normalizer")
    p.add_argument("--input", required=True, help="CAN log to parse")
    p.add_argument("--label", choices=("normal", "anomalous"), default="normal",
                   help="label for rows without an R/T flag (default %(default)s)")
    p.add_argument("--skip-header", type=int, default=0, help="leading non-comment lines to skip")
    p.add_argument("--train-frac", type=float, default=0.70)
    p.add_argument("--val-frac", type=float, default=0.15)
    p.add_argument("--test-frac", type=float, default=0.15)
    p.add_argument("--export-csv", default=None, help="also re-export the parsed frames as CSV")
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train-predictor", help="train the payload predictor on attack-free traffic")
    p.add_argument("--input", required=True, help="attack-free CAN log")
    p.add_argument("--label", choices=("normal", "anomalous"), default="normal")
    p.add_argument("--skip-header", type=int, default=0)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--momentum", type=float, default=0.9)
    _add_common(p)
    p.set_defaults(func=cmd_train_predictor)

    p = sub.add_parser("extract", help="assemble the fused 21-column feature matrix")
    p.add_argument("--filter-size", type=int, default=DEFAULT_FILTER_SIZE,
                   help="temporal window size in frames (default %(default)s)")
    p.add_argument("--subspace", default=None,
                   help="take the filter size from an optimize artifact")
    p.add_argument("--export-csv", default=None, help="also export the fused matrix as CSV")
    _add_common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("optimize", help="search filter size and feature mask jointly")
    p.add_argument("--population", type=int, default=25)
    p.add_argument("--generations", type=int, default=5)
    p.add_argument("--crossover-rate", type=float, default=0.9)
    p.add_argument("--mutation-rate", type=float, default=0.1)
    p.add_argument("--ga-max-depth", type=int, default=12,
                   help="decision-tree depth cap inside the search (default %(default)s)")
    _add_common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("train", help="train the final random forest on masked features")
    p.add_argument("--mask", default=None,
                   help="feature mask as a 21-bit string or comma-separated names")
    p.add_argument("--subspace", default=None, help="take mask and filter size from optimize output")
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--min-samples-split", type=int, default=2)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score the trained model on a split")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ttest", help="5x2cv paired t-test: fused vs raw features")
    p.add_argument("--metric", choices=("accuracy", "f1"), default="accuracy")
    p.add_argument("--n-trees", type=int, default=25)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--min-samples-split", type=int, default=2)
    _add_common(p)
    p.set_defaults(func=cmd_ttest)

    p = sub.add_parser("report", help="render figures and metrics.csv from artifacts")
    p.add_argument("--n-trees", type=int, default=25,
                   help="tree cap for the raw-feature baseline retrain (default %(default)s)")
    _add_common(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config_overrides(args)
        return args.func(args)
    except (ValidationError, ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CanfuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"unexpected failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
