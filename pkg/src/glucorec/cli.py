"""Command-line entry point.

Subcommands mirror the pipeline stages: ingest, synth, preprocess,
extract, stats, train, eval, experiment, serve, and an end-to-end
pipeline runner driven by one JSON config. Failures print a
machine-readable JSON object on stderr; exit codes are 0 (success),
2 (bad arguments or config), 3 (missing prerequisites such as
checkpoints), 1 (anything else).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, GlucorecError
from .ingest import (
    SubjectFile,
    SyntheticConfig,
    generate_synthetic,
    parse,
    parse_canonical_csv,
    write_canonical_csv,
)
from .preprocess import realign_meals, split
from .recexamples import (
    ExampleClass,
    Scenario,
    count_examples,
    dataset_stats,
    extract,
    render_count_table,
    write_examples,
)
from .models import ModelConfig, default_model_config, load_checkpoint, save_checkpoint
from .timeseries import interpolate_gaps
from .training import (
    TrainConfig,
    evaluate,
    horizon_experiment,
    load_ohio_test_exclusions,
    prepare_subject,
    train_all,
)

logger = logging.getLogger(__name__)

SCENARIO_NAMES = [s.value for s in Scenario]
CLASS_NAMES = [c.value for c in ExampleClass]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3


def _fail(code: int, message: str, details: list[str] | None = None) -> int:
    payload = {"error": True, "message": message}
    if details:
        payload["details"] = details
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _load_preprocessed_streams(data_dir: Path):
    paths = sorted(data_dir.glob("*.csv"))
    if not paths:
        raise ConfigError(f"no subject CSV files in {data_dir}")
    return [interpolate_gaps(parse_canonical_csv(p)) for p in paths]


def _model_config_from_dict(architecture: str, scenario: Scenario,
                            example_class: ExampleClass,
                            overrides: dict) -> ModelConfig:
    cfg = default_model_config(architecture, scenario, example_class)
    known = set(ModelConfig.__dataclass_fields__)
    unknown = set(overrides) - known
    if unknown:
        raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
    return replace(cfg, **overrides)


def _train_config(seeds: tuple[int, ...], scenario: Scenario,
                  example_class: ExampleClass, architecture: str,
                  overrides: dict) -> TrainConfig:
    known_train = {"learning_rate", "batch_size", "patience", "max_epochs",
                   "model"}
    unknown = set(overrides) - known_train
    if unknown:
        raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
    model = _model_config_from_dict(architecture, scenario, example_class,
                                    overrides.get("model", {}))
    return TrainConfig(
        scenario=scenario, example_class=example_class,
        architecture=architecture,
        learning_rate=overrides.get("learning_rate", 0.001),
        batch_size=overrides.get("batch_size", 64),
        patience=overrides.get("patience", 10),
        max_epochs=overrides.get("max_epochs", 200),
        seeds=seeds, model=model)


# -- subcommands ---------------------------------------------------------------

def cmd_ingest(args) -> int:
    fmt = "canonical-csv" if args.format == "csv" else args.format
    stream = parse(SubjectFile(args.infile, fmt), subject_id=args.subject_id)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_canonical_csv(stream, args.out)
    print(f"wrote {args.out} ({len(stream)} grid steps, "
          f"subject {stream.subject_id})")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = SyntheticConfig.from_json(args.config)
    stream = generate_synthetic(cfg, subject_id=args.subject_id)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_canonical_csv(stream, args.out)
    print(f"wrote {args.out} ({cfg.days} days, subject {stream.subject_id})")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    stream = parse_canonical_csv(args.infile)
    realigned, report = realign_meals(stream)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_canonical_csv(realigned, args.out)
    if args.report:
        _write_json(Path(args.report), report.to_dict())
    print(f"meals: {report.meals_shifted} shifted, {report.meals_added} "
          f"added, {report.meals_unchanged} unchanged")
    return EXIT_OK


def cmd_extract(args) -> int:
    stream = interpolate_gaps(parse_canonical_csv(args.infile))
    scenario = Scenario(args.scenario)
    example_class = ExampleClass(args.example_class)
    datasets = extract(stream, scenario, example_class)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{scenario.value}_{example_class.value}"
    for split_name, ds in datasets.items():
        write_examples(ds, out_dir / f"{stem}_{split_name}.examples.csv")
    table = count_examples(datasets)
    _write_json(out_dir / f"{stem}_counts.json", table)
    print(render_count_table(
        table, f"{scenario.value} ({example_class.value}) examples"))
    return EXIT_OK


def cmd_stats(args) -> int:
    streams = [parse_canonical_csv(p) for p in args.infiles]
    stats = dataset_stats(streams)
    if args.out:
        _write_json(Path(args.out), stats)
    for scenario_name, block in stats.items():
        total = block["total"]
        if total["count"]:
            print(f"{scenario_name}: {total['count']} events, "
                  f"mean {total['mean']:.1f}, std {total['std']:.1f}")
        else:
            print(f"{scenario_name}: 0 events")
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = {}
    if args.config:
        overrides = json.loads(Path(args.config).read_text(encoding="utf-8"))
    scenario = Scenario(args.scenario)
    example_class = ExampleClass(args.example_class)
    seeds = tuple(range(args.seed, args.seed + args.seeds))
    cfg = _train_config(seeds, scenario, example_class, args.arch, overrides)
    streams = _load_preprocessed_streams(Path(args.infile))
    subjects = [prepare_subject(s, scenario, example_class) for s in streams]
    checkpoints, skipped = train_all(cfg, subjects)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for ckpt in checkpoints:
        save_checkpoint(ckpt, out_dir / f"{ckpt.checkpoint_id}.ckpt")
    manifest = {
        "scenario": scenario.value, "example_class": example_class.value,
        "architecture": args.arch, "seeds": list(cfg.seeds),
        "skipped_subjects": skipped,
        "checkpoints": sorted(c.checkpoint_id for c in checkpoints),
        "inputs": {p.name: _sha256(p)
                   for p in sorted(Path(args.infile).glob("*.csv"))},
    }
    _write_json(out_dir / "manifest.json", manifest)
    print(f"trained {len(checkpoints)} checkpoints -> {out_dir} "
          f"(skipped: {skipped or 'none'})")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt_dir = Path(args.checkpoints)
    paths = sorted(ckpt_dir.glob("*.ckpt"))
    if not paths:
        return _fail(EXIT_MISSING, f"no checkpoints found in {ckpt_dir}")
    checkpoints = [load_checkpoint(p) for p in paths]
    streams = _load_preprocessed_streams(Path(args.data))
    exclusions = load_ohio_test_exclusions() if args.ohio_exclusions else {}
    groups: dict[tuple, list] = {}
    for ckpt in checkpoints:
        key = (ckpt.config.scenario, ckpt.config.example_class,
               ckpt.config.architecture)
        groups.setdefault(key, []).append(ckpt)
    reports = []
    for (scenario, example_class, arch), group in sorted(
            groups.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value,
                                            kv[0][2])):
        subjects = [prepare_subject(s, scenario, example_class)
                    for s in streams]
        cfg = TrainConfig(scenario=scenario, example_class=example_class,
                          architecture=arch)
        report = evaluate(
            group, subjects, cfg,
            exclude_subjects=exclusions.get(scenario.value, []),
            exclude_added_label_events=args.exclude_added_meals)
        reports.append(report.to_dict())
        print(report.render_text())
        print()
    _write_json(Path(args.report), {"reports": reports})
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.kind != "horizons":
        return _fail(EXIT_USAGE, f"unknown experiment {args.kind!r}",
                     ["valid experiments: horizons"])
    spec = json.loads(Path(args.config).read_text(encoding="utf-8"))
    known = {"data_dir", "scenario", "example_class", "architecture",
             "seeds", "train"}
    unknown = set(spec) - known
    if unknown:
        raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
    scenario = Scenario(spec.get("scenario", "carbs-all"))
    example_class = ExampleClass(spec.get("example_class", "inertial"))
    arch = spec.get("architecture", "nbeats")
    cfg = _train_config(tuple(spec.get("seeds", [0])), scenario,
                        example_class, arch, spec.get("train", {}))
    streams = _load_preprocessed_streams(Path(spec["data_dir"]))
    subjects = [prepare_subject(s, scenario, example_class) for s in streams]
    table = horizon_experiment(cfg, subjects)
    _write_json(Path(args.out), table)
    for row in table["rows"]:
        if not row["available"]:
            print(f"tau={row['tau']}: unavailable (insufficient examples)")
            continue
        a = row["all_horizons"]["mean"]
        s = row["single_horizon"]["mean"]
        print(f"tau={row['tau']}: all-horizons RMSE {a['rmse']:.2f} "
              f"vs single-horizon RMSE {s['rmse']:.2f}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    checkpoints = os.environ.get("GLUCOREC_CHECKPOINTS", args.checkpoints)
    data = os.environ.get("GLUCOREC_DATA", args.data)
    port = int(os.environ.get("GLUCOREC_PORT", args.port))
    app = create_app(checkpoints, data)
    uvicorn.run(app, host=args.host, port=port, log_level="info")
    return EXIT_OK


PIPELINE_KEYS = {"out_dir", "subjects", "data_dir", "scenarios",
                 "example_classes", "architectures", "seeds", "train"}


def _validate_pipeline_config(spec: dict) -> list[str]:
    problems = []
    for key in set(spec) - PIPELINE_KEYS:
        problems.append(f"unknown key {key!r}")
    if "out_dir" not in spec:
        problems.append("missing required key 'out_dir'")
    if ("subjects" in spec) == ("data_dir" in spec):
        problems.append("exactly one of 'subjects' or 'data_dir' is required")
    for name in spec.get("scenarios", []):
        if name not in SCENARIO_NAMES:
            problems.append(
                f"unknown scenario {name!r}; valid: {SCENARIO_NAMES}")
    for name in spec.get("example_classes", []):
        if name not in CLASS_NAMES:
            problems.append(f"unknown example class {name!r}; valid: {CLASS_NAMES}")
    for arch in spec.get("architectures", []):
        if arch not in ("lstm", "nbeats"):
            problems.append(f"unknown architecture {arch!r}; valid: lstm, nbeats")
    if not isinstance(spec.get("seeds", [0]), list):
        problems.append("'seeds' must be a list of integers")
    return problems


def cmd_pipeline(args) -> int:
    spec = json.loads(Path(args.config).read_text(encoding="utf-8"))
    problems = _validate_pipeline_config(spec)
    if problems:
        return _fail(EXIT_USAGE, "invalid pipeline config", problems)

    out_dir = Path(spec["out_dir"])
    raw_dir = out_dir / "raw"
    pre_dir = out_dir / "preprocessed"
    for d in (raw_dir, pre_dir):
        d.mkdir(parents=True, exist_ok=True)

    if "subjects" in spec:
        for i, subject_spec in enumerate(spec["subjects"]):
            subject_spec = dict(subject_spec)
            subject_id = subject_spec.pop("subject_id", f"synth-{i}")
            stream = generate_synthetic(SyntheticConfig(**subject_spec),
                                        subject_id=subject_id)
            write_canonical_csv(stream, raw_dir / f"{subject_id}.csv")
        raw_paths = sorted(raw_dir.glob("*.csv"))
    else:
        raw_paths = sorted(Path(spec["data_dir"]).glob("*.csv"))
        if not raw_paths:
            return _fail(EXIT_USAGE, f"no CSV files in {spec['data_dir']}")

    realign_reports = {}
    for path in raw_paths:
        stream = parse_canonical_csv(path)
        realigned, report = realign_meals(stream)
        write_canonical_csv(realigned, pre_dir / path.name)
        realign_reports[path.stem] = report.to_dict()
    _write_json(out_dir / "preprocess_report.json", realign_reports)

    streams = _load_preprocessed_streams(pre_dir)
    seeds = tuple(spec.get("seeds", [0]))
    scenarios = [Scenario(s) for s in spec.get("scenarios", ["carbs-all"])]
    classes = [ExampleClass(c)
               for c in spec.get("example_classes", ["inertial"])]
    architectures = spec.get("architectures", ["nbeats"])
    results = {}
    for scenario in scenarios:
        for example_class in classes:
            subjects = [prepare_subject(s, scenario, example_class)
                        for s in streams]
            for arch in architectures:
                cfg = _train_config(seeds, scenario, example_class, arch,
                                    spec.get("train", {}))
                checkpoints, skipped = train_all(cfg, subjects)
                ckpt_dir = (out_dir / "checkpoints"
                            / f"{scenario.value}_{example_class.value}_{arch}")
                ckpt_dir.mkdir(parents=True, exist_ok=True)
                for ckpt in checkpoints:
                    save_checkpoint(ckpt,
                                    ckpt_dir / f"{ckpt.checkpoint_id}.ckpt")
                report = evaluate(checkpoints, subjects, cfg)
                key = f"{scenario.value}/{example_class.value}/{arch}"
                results[key] = report.to_dict()
                print(report.render_text())
                print()
    _write_json(out_dir / "eval_report.json", results)
    print(f"pipeline complete -> {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glucorec",
        description="Carbohydrate and bolus recommendation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert a subject file to canonical CSV")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", choices=["ohio-xml", "csv"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--subject-id")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic subject")
    p.add_argument("--config", required=True, help="SyntheticConfig JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--subject-id")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="realign meals to boluses")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("extract", help="build recommendation examples")
    p.add_argument("--scenario", choices=SCENARIO_NAMES, required=True)
    p.add_argument("--class", dest="example_class", choices=CLASS_NAMES,
                   required=True)
    p.add_argument("--in", dest="infile", required=True,
                   help="preprocessed canonical CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("stats", help="label event statistics")
    p.add_argument("--in", dest="infiles", nargs="+", required=True)
    p.add_argument("--out", help="write JSON here")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="pre-train and fine-tune models")
    p.add_argument("--scenario", choices=SCENARIO_NAMES, required=True)
    p.add_argument("--class", dest="example_class", choices=CLASS_NAMES,
                   required=True)
    p.add_argument("--arch", choices=["lstm", "nbeats"], default="nbeats")
    p.add_argument("--seeds", type=int, default=10, help="number of seeds")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--in", dest="infile", required=True,
                   help="directory of preprocessed subject CSVs")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--config", help="JSON with train/model overrides")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score checkpoints on test data")
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--data", required=True,
                   help="directory of preprocessed subject CSVs")
    p.add_argument("--report", required=True, help="output JSON path")
    p.add_argument("--ohio-exclusions", action="store_true",
                   help="apply the per-scenario test-time subject "
                        "exclusions shipped for the real dataset")
    p.add_argument("--exclude-added-meals", action="store_true",
                   help="score only examples whose label meal was "
                        "self-reported (pre-processing ablation)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run a named experiment")
    p.add_argument("kind", choices=["horizons"])
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output JSON path")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("serve", help="run the what-if HTTP service")
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("pipeline", help="synth -> preprocess -> extract -> "
                                        "train -> eval, from one JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("GLUCOREC_LOG", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_USAGE, str(exc))
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING, str(exc))
    except GlucorecError as exc:
        return _fail(1, f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
