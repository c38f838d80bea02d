"""Command-line front end: ``overtake <command> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 sweep finished with failed cells.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import core_types as ct
from .core_types import ManifestError, TraceError
from .evaluation import EvaluationError, balanced_split, evaluate, fuse_file_scores, report_from_file_scores
from .features import (
    CropConfig,
    FeatureError,
    FeatureMatrix,
    FeatureMode,
    StandardizeError,
    WindowConfig,
    featurize_dataset,
    load_features,
    manifest_from_provenance,
    save_features,
)
from .learners import (
    ClassifierKind,
    TrainConfig,
    TrainingError,
    load_model,
    predict_posterior,
    save_model,
    train,
)
from .seeding import derive_seed
from .sweep import (
    DEFAULT_CONDITION_A,
    DEFAULT_FUSION,
    TRAIN_GROUPS,
    Member,
    SweepError,
    SweepGrid,
    build_report,
    load_records,
    run_sweep,
    sha256_json,
    write_atomic,
)
from .synthgen import DatasetConfig, demo_config, generate_dataset
from .trigger import TriggerRule, WindowOutOfBounds, crop_log, scan

log = logging.getLogger("overtake")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PARTIAL = 0, 1, 2, 3
DATA_ERRORS = (TraceError, ManifestError, FeatureError, StandardizeError, EvaluationError, TrainingError,
               SweepError, WindowOutOfBounds, OSError, json.JSONDecodeError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    d = argparse.SUPPRESS if suppress else None
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=d, help="master seed (default 0)")
    g.add_argument("--out-dir", type=Path, default=d, help="output directory")
    g.add_argument("--workers", type=int, default=argparse.SUPPRESS if suppress else 1,
                   help="parallel worker processes (default 1)")
    g.add_argument("--config", type=Path, default=d, help="JSON config for the command")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="overtake", description=__doc__.splitlines()[0], parents=[_global_flags(False)])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    common = [_global_flags(True)]

    p = sub.add_parser("generate", parents=common, help="write a synthetic dataset and manifest")
    p.add_argument("--per-class", type=int, default=50,
                   help="overtake and no-overtake files per truck in the demo config (default 50)")

    p = sub.add_parser("scan", parents=common, help="find trigger instants and cut logged segments")
    p.add_argument("traces", nargs="+", type=Path)
    p.add_argument("--min-speed", type=float, default=50.0)
    p.add_argument("--max-dist", type=float, default=200.0)
    p.add_argument("--min-rel-speed", type=float, default=0.1)
    p.add_argument("--refractory", type=float, default=45.0)

    p = sub.add_parser("featurize", parents=common, help="crop and window a dataset into a feature file")
    p.add_argument("--manifest", type=Path, required=True)
    _feature_flags(p)
    p.add_argument("--output", type=Path, help="feature CSV path (default derived from the config)")

    p = sub.add_parser("train", parents=common, help="train one classifier on the training split")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--kind", default=None, help="ANN, RF, SVMLinear or SVMRbf (default RF)")
    p.add_argument("--train-group", choices=TRAIN_GROUPS, default="all")
    p.add_argument("--condition-a", default=DEFAULT_CONDITION_A)
    p.add_argument("--all-files", action="store_true", help="train on every file instead of the split")
    p.add_argument("--output", type=Path)

    p = sub.add_parser("eval", parents=common, help="score the held-out files with trained model(s)")
    p.add_argument("--model", type=Path, nargs="+", required=True)
    p.add_argument("--features", type=Path, nargs="+", required=True)
    p.add_argument("--manifest", type=Path, help="manifest to cross-check against the feature provenance")

    p = sub.add_parser("fuse", parents=common, help="average per-file scores of evaluated models")
    p.add_argument("reports", type=Path, nargs="+")
    p.add_argument("--name", default="fused")

    p = sub.add_parser("sweep", parents=common, help="run the crop/window/classifier grid")
    p.add_argument("--manifest", type=Path)
    p.add_argument("--start", type=float, nargs="+", dest="starttriggers")
    p.add_argument("--end", type=float, nargs="+", dest="endtriggers")
    p.add_argument("--w", type=float, nargs="+", dest="windows")
    p.add_argument("--mode", nargs="+", dest="modes")
    p.add_argument("--classifiers", nargs="+")
    p.add_argument("--train-groups", nargs="+", choices=TRAIN_GROUPS)
    p.add_argument("--condition-a")

    p = sub.add_parser("report", parents=common, help="tables and curves from sweep records")
    p.add_argument("records", type=Path, help="sweep directory, records directory or record file")
    p.add_argument("--fuse", nargs="+", metavar="KIND[:w[:mode]]",
                   help=f"fusion members (default {' '.join(DEFAULT_FUSION)})")
    p.add_argument("--no-fuse", action="store_true")
    return parser


def _feature_flags(p):
    p.add_argument("--start", type=float, default=None, help="starttrigger in s (default -5)")
    p.add_argument("--end", type=float, default=None, help="endtrigger in s (default 1)")
    p.add_argument("--w", type=float, default=None, help="window size in s (default 0)")
    p.add_argument("--mode", default=None, help="MeanOnly or MeanStd (default MeanStd)")


def _config(args, section: str) -> dict:
    if getattr(args, "config", None) is None:
        return {}
    doc = json.loads(Path(args.config).read_text())
    if not isinstance(doc, dict):
        raise ValueError(f"{args.config}: config must be a JSON object")
    return doc.get(section, doc) if isinstance(doc.get(section), dict) else doc


def _seed(args, default: int = 0) -> int:
    return default if args.seed is None else args.seed


def _out(args, default: str) -> Path:
    return Path(args.out_dir) if args.out_dir is not None else Path(default)


def cmd_generate(args) -> int:
    doc = _config(args, "generate")
    if doc:
        if args.seed is not None:
            doc = {**doc, "master_seed": args.seed}
        config = DatasetConfig.from_json(doc)
    else:
        if args.per_class < 1:
            raise ValueError("--per-class must be positive")
        config = demo_config(_seed(args), args.per_class)
    out = _out(args, "data")
    manifest = generate_dataset(config, out, workers=args.workers)
    counts = manifest.counts()
    c1 = sum(v[1] for v in counts.values())
    print(f"wrote {len(manifest)} traces ({c1} overtake, {len(manifest) - c1} no-overtake) "
          f"for {len(counts)} trucks to {out}")
    print(f"manifest {out / 'manifest.json'} sha256 {sha256_json(manifest.to_json())}")
    return EXIT_OK


def cmd_scan(args) -> int:
    rule = TriggerRule(args.min_speed, args.max_dist, args.min_rel_speed, refractory_s=args.refractory)
    out = _out(args, "segments")
    result = {}
    for path in args.traces:
        trace = ct.load_trace(path)
        times = scan(trace, rule)
        segs, skipped = [], []
        for k, t in enumerate(times):
            try:
                seg = crop_log(trace, t)
            except WindowOutOfBounds as exc:
                skipped.append({"t": t, "reason": str(exc)})
                continue
            name = f"{Path(path).stem}_trigger{k}"
            dest = out / f"{name}.csv"
            dest.parent.mkdir(parents=True, exist_ok=True)
            ct.save_trace(seg.trace.with_meta(file_id=name), dest)
            segs.append(str(dest))
        result[str(path)] = {"triggers": times, "segments": segs, "skipped": skipped}
        print(f"{path}: {len(times)} trigger(s) at {', '.join(f'{t:g}' for t in times) or '-'} s; "
              f"{len(segs)} segment(s) written, {len(skipped)} skipped")
    out.mkdir(parents=True, exist_ok=True)
    write_atomic(out / "triggers.json", json.dumps(result, indent=1) + "\n")
    return EXIT_OK


def _crop_window(args, doc):
    start = args.start if args.start is not None else doc.get("starttrigger_s", -5)
    end = args.end if args.end is not None else doc.get("endtrigger_s", 1)
    w = args.w if args.w is not None else doc.get("w_s", 0)
    mode = args.mode if args.mode is not None else doc.get("feature_mode", "MeanStd")
    return CropConfig(start, end), WindowConfig(w, FeatureMode.parse(mode))


def cmd_featurize(args) -> int:
    doc = _config(args, "featurize")
    ccfg, wcfg = _crop_window(args, doc)
    manifest = ct.load_manifest(args.manifest)
    traces = ct.load_traces(manifest)
    fs = featurize_dataset(traces, ccfg, wcfg)
    name = (f"features_s{ccfg.starttrigger_s:g}_e{ccfg.endtrigger_s:g}_w{wcfg.w_s:g}"
            f"_{wcfg.feature_mode.value}.csv")
    dest = args.output or _out(args, ".") / name
    save_features(fs, dest, ccfg, wcfg, manifest, manifest_path=args.manifest)
    print(f"{len(fs.X)} rows x {len(fs.names)} features from {len(traces)} files -> {dest}")
    return EXIT_OK


def _train_config(args, doc: dict) -> TrainConfig:
    fields = dict(doc)
    if args.kind is not None:
        fields["kind"] = args.kind
    kind = ClassifierKind.parse(fields.get("kind", "RF"))
    fields["kind"] = kind
    fields.setdefault("seed", derive_seed(_seed(args), "model", kind.value))
    return TrainConfig(**fields)


def cmd_train(args) -> int:
    cfg = _train_config(args, _config(args, "train"))
    fs, prov = load_features(args.features)
    manifest = manifest_from_provenance(prov)
    split_seed = _seed(args)
    if args.all_files:
        files = list(range(len(manifest)))
    else:
        files = balanced_split(manifest, seed=split_seed).train_files
        if args.train_group == "A":
            files = [i for i in files if manifest.entries[i].condition == args.condition_a]
    if not files:
        raise TrainingError("no training files selected")
    rows = fs.rows_of(files)
    model = train(FeatureMatrix(fs.X[rows], fs.names, fs.centers[rows], fs.continuous), fs.y[rows], cfg)
    model.meta.update(split_seed=split_seed, train_group="every-file" if args.all_files else args.train_group,
                      train_files=len(files), crop=prov["crop"], window=prov["window"])
    dest = args.output or _out(args, ".") / f"model_{cfg.kind.value}.json"
    Path(dest).parent.mkdir(parents=True, exist_ok=True)
    save_model(model, dest)
    print(f"{cfg.kind.value} trained on {len(files)} files ({int(rows.sum())} rows) -> {dest}")
    if not model.converged:
        print("warning: training stopped at the iteration cap before converging", file=sys.stderr)
    return EXIT_OK


def _roc_csv(roc) -> str:
    return "FPR,TPR\n" + "".join(f"{x:.6f},{y:.6f}\n" for x, y in roc)


def _truck_lines(per_truck: dict) -> list[str]:
    def pct(v):
        return "-" if v is None else f"{100 * v:.1f}%"
    return [f"  {t:>6}: TNR {pct(c['TNR'] if isinstance(c, dict) else c.tnr)}  "
            f"TPR {pct(c['TPR'] if isinstance(c, dict) else c.tpr)}" for t, c in per_truck.items()]


def cmd_eval(args) -> int:
    if len(args.features) not in (1, len(args.model)):
        raise UsageError("give one feature file, or one per model")
    feats = args.features * len(args.model) if len(args.features) == 1 else args.features
    out = _out(args, ".")
    for model_path, feat_path in zip(args.model, feats):
        model = load_model(model_path)
        fs, prov = load_features(feat_path)
        manifest = manifest_from_provenance(prov)
        if args.manifest is not None:
            given = ct.load_manifest(args.manifest, check_files=False)
            if [e.path for e in given.entries] != [e.path for e in manifest.entries]:
                raise ManifestError(f"{args.manifest} does not match the files in {feat_path}")
            manifest = given
        seed = args.seed if args.seed is not None else int(model.meta.get("split_seed", 0))
        test = balanced_split(manifest, seed=seed).test_files
        rows = fs.rows_of(test)
        scores = predict_posterior(model, fs.X[rows])
        cfg = {"model": str(model_path), "features": str(feat_path), "kind": model.kind.value,
               "split_seed": seed, "crop": prov["crop"], "window": prov["window"]}
        rep = evaluate(scores, fs.y[rows], fs.file_index[rows], fs.centers[rows], fs.trucks, fs.file_ids, cfg)
        for f in rep.file_scores:
            f["condition"] = manifest.entries[f["file"]].condition
        stem = Path(model_path).stem
        write_atomic(out / f"{stem}.report.json", json.dumps(rep.to_json(), indent=1) + "\n")
        write_atomic(out / f"{stem}.roc.csv", _roc_csv(rep.roc))
        print(f"{stem}: per-file AUC {_pct(rep.file_auc)} TPR {_pct(rep.file.tpr)} TNR {_pct(rep.file.tnr)}; "
              f"per-sample AUC {_pct(rep.sample_auc)}")
        print("\n".join(_truck_lines(rep.per_truck)))
    return EXIT_OK


def _pct(v) -> str:
    return "-" if v is None else f"{v:.3f}"


def cmd_fuse(args) -> int:
    if len(args.reports) < 2:
        raise UsageError("fusion needs at least two score reports")
    members = []
    for p in args.reports:
        doc = json.loads(Path(p).read_text())
        if "file_scores" not in doc:
            raise EvaluationError(f"{p} holds no per-file scores")
        members.append(doc["file_scores"])
    fused = fuse_file_scores(members)
    rep = report_from_file_scores(fused, {"members": [str(p) for p in args.reports], "rule": "mean"})
    out = _out(args, ".")
    write_atomic(out / f"{args.name}.report.json", json.dumps(rep.to_json(), indent=1) + "\n")
    write_atomic(out / f"{args.name}.roc.csv", _roc_csv(rep.roc))
    print(f"fused {len(args.reports)} members over {len(fused)} files: AUC {_pct(rep.file_auc)} "
          f"TPR {_pct(rep.file.tpr)} TNR {_pct(rep.file.tnr)}")
    print("\n".join(_truck_lines(rep.per_truck)))
    return EXIT_OK


def cmd_sweep(args) -> int:
    doc = _config(args, "sweep")
    manifest = args.manifest or doc.get("manifest")
    if manifest is None:
        raise UsageError("sweep needs --manifest (or 'manifest' in the config)")
    grid = SweepGrid.from_json(doc, starttriggers=_tuple(args.starttriggers), endtriggers=_tuple(args.endtriggers),
                               windows=_tuple(args.windows), modes=_tuple(args.modes),
                               classifiers=_tuple(args.classifiers), train_groups=_tuple(args.train_groups),
                               condition_a=args.condition_a, seed=args.seed)
    out = _out(args, "sweep")
    log.info("sweep: %d cells, %d worker(s), seed %d", grid.size, args.workers, grid.seed)
    res = run_sweep(manifest, grid, out, workers=args.workers, log=log.info)
    print(f"{len(res.records)} run records in {out / 'records'}; summary {res.summary_path}")
    if res.partial:
        print(f"{len(res.failed)} cell(s) failed: {', '.join(res.failed)}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _tuple(v):
    return None if v is None else tuple(v)


def cmd_report(args) -> int:
    doc = _config(args, "report")
    records = load_records(args.records)
    if not records:
        raise SweepError(f"no run records found under {args.records}")
    fusion = None
    if not args.no_fuse and not doc.get("no_fuse", False):
        tokens = args.fuse or doc.get("fuse") or list(DEFAULT_FUSION)
        fusion = [Member.parse(t) for t in tokens]
        if len({m.token for m in fusion}) != len(fusion) or len(fusion) < 2:
            raise UsageError("fusion needs at least two distinct members")
    default_out = args.records / "report" if args.records.is_dir() else args.records.parent / "report"
    out = _out(args, str(default_out))
    written = build_report(records, out, fusion)
    print(written["text"].read_text(), end="")
    print(f"\nreport files in {out}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "scan": cmd_scan, "featurize": cmd_featurize, "train": cmd_train,
            "eval": cmd_eval, "fuse": cmd_fuse, "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("overtake: a command is required")
        if args.workers < 1:
            raise UsageError("--workers must be at least 1")
        logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
