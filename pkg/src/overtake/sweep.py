"""Configuration-grid sweep, distribution-shift mode and report tables.

A sweep cell is one (crop, window, feature mode, classifier, training group)
combination. Training group ``all`` uses every truck's balanced training
files; group ``A`` keeps only trucks whose condition is ``condition_a``. Both
groups are evaluated on the same held-out test files, so comparing them is the
distribution-shift experiment.

Each cell writes one JSON record atomically. The summary CSV is assembled
afterwards in grid order and holds no timings, so reruns with one seed are
byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import core_types as ct
from .core_types import DatasetManifest
from .evaluation import (
    MetricReport,
    SplitPlan,
    balanced_split,
    evaluate,
    fuse_file_scores,
    per_truck_report,
    report_from_file_scores,
)
from .features import (
    END_TRIGGERS,
    START_TRIGGERS,
    WINDOW_SIZES,
    CropConfig,
    FeatureMatrix,
    FeatureMode,
    FeatureSet,
    WindowConfig,
    featurize_dataset,
)
from .learners import ClassifierKind, TrainConfig, model_to_json, predict_posterior, train
from .seeding import derive_seed

TRAIN_GROUPS = ("all", "A")
DEFAULT_CONDITION_A = "mirror-like"
SUMMARY_COLUMNS = (
    "starttrigger_s", "endtrigger_s", "w_s", "feature_mode", "classifier", "train_group", "status",
    "sample_AUC", "sample_TPR", "sample_TNR", "file_AUC", "file_TPR", "file_TNR", "train_files", "test_files",
)


class SweepError(ValueError):
    pass


@dataclass(frozen=True)
class Cell:
    starttrigger_s: float
    endtrigger_s: float
    w_s: float
    feature_mode: str
    classifier: str
    train_group: str = "all"

    @property
    def key(self) -> str:
        return (f"s{self.starttrigger_s:g}_e{self.endtrigger_s:g}_w{self.w_s:g}_{self.feature_mode}"
                f"_{self.classifier}_{self.train_group}")

    @property
    def feature_key(self) -> tuple:
        return (self.starttrigger_s, self.endtrigger_s, self.w_s, self.feature_mode)

    def to_json(self) -> dict:
        return {"starttrigger_s": self.starttrigger_s, "endtrigger_s": self.endtrigger_s, "w_s": self.w_s,
                "feature_mode": self.feature_mode, "classifier": self.classifier,
                "train_group": self.train_group}


@dataclass(frozen=True)
class SweepGrid:
    starttriggers: tuple[float, ...] = START_TRIGGERS
    endtriggers: tuple[float, ...] = END_TRIGGERS
    windows: tuple[float, ...] = WINDOW_SIZES
    modes: tuple[str, ...] = ("MeanStd",)
    classifiers: tuple[str, ...] = tuple(k.value for k in ClassifierKind)
    train_groups: tuple[str, ...] = ("all",)
    condition_a: str = DEFAULT_CONDITION_A
    seed: int = 0

    def __post_init__(self):
        for name in ("starttriggers", "endtriggers", "windows", "modes", "classifiers", "train_groups"):
            vals = tuple(getattr(self, name))
            if not vals:
                raise ValueError(f"grid axis {name!r} is empty")
            object.__setattr__(self, name, vals)
        for s in self.starttriggers:
            for e in self.endtriggers:
                CropConfig(s, e)
        for w in self.windows:
            WindowConfig(w)
        object.__setattr__(self, "modes", tuple(FeatureMode.parse(m).value for m in self.modes))
        object.__setattr__(self, "classifiers", tuple(ClassifierKind.parse(c).value for c in self.classifiers))
        bad = [g for g in self.train_groups if g not in TRAIN_GROUPS]
        if bad:
            raise ValueError(f"unknown train group(s) {bad}; valid: {', '.join(TRAIN_GROUPS)}")

    @property
    def size(self) -> int:
        return (len(self.starttriggers) * len(self.endtriggers) * len(self.windows) * len(self.modes)
                * len(self.classifiers) * len(self.train_groups))

    def cells(self) -> list[Cell]:
        """Grid order: feature configuration outermost so feature matrices are reused."""
        return [Cell(float(s), float(e), float(w), m, c, g)
                for s, e, w, m, c, g in itertools.product(self.starttriggers, self.endtriggers, self.windows,
                                                          self.modes, self.classifiers, self.train_groups)]

    @classmethod
    def from_json(cls, doc: dict, **overrides) -> "SweepGrid":
        keys = {"starttriggers", "endtriggers", "windows", "modes", "classifiers", "train_groups",
                "condition_a", "seed"}
        unknown = set(doc) - keys - {"manifest"}
        if unknown:
            raise ValueError(f"unknown sweep config key(s): {sorted(unknown)}")
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in doc.items() if k in keys}
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)

    def to_json(self) -> dict:
        return {"starttriggers": list(self.starttriggers), "endtriggers": list(self.endtriggers),
                "windows": list(self.windows), "modes": list(self.modes), "classifiers": list(self.classifiers),
                "train_groups": list(self.train_groups), "condition_a": self.condition_a, "seed": self.seed}


def sha256_json(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def write_atomic(path: Path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Experiment:
    """Logged segments, manifest and split shared by every cell of a sweep."""

    def __init__(self, segments, manifest: DatasetManifest, seed: int = 0,
                 condition_a: str = DEFAULT_CONDITION_A):
        self.segments = list(segments)
        self.manifest = manifest
        self.seed = seed
        self.condition_a = condition_a
        self.plan: SplitPlan = balanced_split(manifest, seed=seed)
        self.conditions = [e.condition for e in manifest.entries]
        self.manifest_hash = sha256_json(manifest.to_json())
        self._features = lru_cache(maxsize=4)(self._featurize)

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest, seed: int = 0, condition_a: str = DEFAULT_CONDITION_A):
        return cls(ct.load_traces(manifest), manifest, seed, condition_a)

    def _featurize(self, key) -> FeatureSet:
        s, e, w, m = key
        return featurize_dataset(self.segments, CropConfig(s, e), WindowConfig(w, m))

    def features(self, cell: Cell) -> FeatureSet:
        return self._features(cell.feature_key)

    def train_files(self, group: str) -> list[int]:
        if group == "all":
            return self.plan.train_files
        files = [i for i in self.plan.train_files if self.conditions[i] == self.condition_a]
        if not files:
            raise SweepError(f"no training files with condition {self.condition_a!r}")
        return files

    def run(self, cell: Cell) -> tuple[dict, MetricReport]:
        """Train and evaluate one cell; returns the record body and the report."""
        fs = self.features(cell)
        train_files = self.train_files(cell.train_group)
        test_files = self.plan.test_files
        tr = fs.rows_of(train_files)
        te = fs.rows_of(test_files)
        kind = ClassifierKind.parse(cell.classifier)
        cfg = TrainConfig(kind=kind, seed=derive_seed(self.seed, "model", kind.value))
        Xtr = _matrix(fs, tr)
        model = train(Xtr, fs.y[tr], cfg)
        scores = predict_posterior(model, fs.X[te])
        report = evaluate(scores, fs.y[te], fs.file_index[te], fs.centers[te], fs.trucks, fs.file_ids,
                          config=cell.to_json())
        for f in report.file_scores:
            f["condition"] = self.conditions[f["file"]]
        body = {
            "train": {"files": len(train_files), "rows": int(tr.sum()), "model_seed": cfg.seed,
                      "model_meta": model.meta},
            "test": {"files": len(test_files), "rows": int(te.sum())},
            "metrics": report.to_json(),
            "per_condition": _per_condition(report.file_scores),
            "hashes": {"manifest": self.manifest_hash, "model": sha256_json(model_to_json(model)),
                       "scores": sha256_json(report.file_scores)},
        }
        return body, report


def _matrix(fs: FeatureSet, rows) -> FeatureMatrix:
    return FeatureMatrix(fs.X[rows], fs.names, fs.centers[rows], fs.continuous)


def _per_condition(file_scores: list[dict]) -> dict:
    if not file_scores:
        return {}
    s = [f["score"] for f in file_scores]
    y = [f["label"] for f in file_scores]
    c = [f.get("condition", "") for f in file_scores]
    out = per_truck_report(s, y, c)
    out.pop("all")
    return {k: v.to_json() for k, v in out.items()}


def run_cell(exp: Experiment, cell: Cell) -> dict:
    """Record for one cell; failures are captured, never raised."""
    t0 = time.perf_counter()
    record = {"key": cell.key, "config": cell.to_json(), "seed": exp.seed, "condition_a": exp.condition_a}
    try:
        body, _ = exp.run(cell)
        record.update(status="ok", **body)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        record.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    record["wall_time_s"] = round(time.perf_counter() - t0, 3)
    return record


_WORKER: dict = {}


def _worker_init(manifest_path: str, seed: int, condition_a: str):
    manifest = ct.load_manifest(manifest_path)
    _WORKER["exp"] = Experiment.from_manifest(manifest, seed, condition_a)


def _worker_run(cell: Cell) -> dict:
    return run_cell(_WORKER["exp"], cell)


@dataclass
class SweepResult:
    records: list[dict]
    summary_path: Path
    failed: list[str] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.failed)


def run_sweep(manifest_path, grid: SweepGrid, out_dir, workers: int = 1, log=None) -> SweepResult:
    """Run every grid cell, write ``records/<key>.json`` and ``summary.csv`` under ``out_dir``."""
    out_dir = Path(out_dir)
    rec_dir = out_dir / "records"
    cells = grid.cells()
    manifest = ct.load_manifest(manifest_path)
    records: dict[str, dict] = {}

    def done(rec):
        write_atomic(rec_dir / f"{rec['key']}.json", json.dumps(rec, indent=1) + "\n")
        records[rec["key"]] = rec
        if log:
            log(f"[{len(records)}/{len(cells)}] {rec['key']}: {rec['status']}")

    if workers > 1:
        with ProcessPoolExecutor(workers, initializer=_worker_init,
                                 initargs=(str(manifest_path), grid.seed, grid.condition_a)) as ex:
            for rec in ex.map(_worker_run, cells):
                done(rec)
    else:
        exp = Experiment.from_manifest(manifest, grid.seed, grid.condition_a)
        for cell in cells:
            done(run_cell(exp, cell))
    ordered = [records[c.key] for c in cells]
    summary = out_dir / "summary.csv"
    write_atomic(summary, summary_csv(ordered))
    write_atomic(out_dir / "grid.json", json.dumps({**grid.to_json(), "manifest": str(manifest_path)}, indent=1)
                 + "\n")
    return SweepResult(ordered, summary, [r["key"] for r in ordered if r["status"] != "ok"])


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6f}"


def _csv(rows: Iterable[Sequence], header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def summary_csv(records: Sequence[dict]) -> str:
    rows = []
    for r in records:
        c = r["config"]
        head = [f"{c['starttrigger_s']:g}", f"{c['endtrigger_s']:g}", f"{c['w_s']:g}", c["feature_mode"],
                c["classifier"], c["train_group"], r["status"]]
        if r["status"] == "ok":
            ps, pf = r["metrics"]["per_sample"], r["metrics"]["per_file"]
            tail = [_fmt(ps["AUC"]), _fmt(ps["TPR"]), _fmt(ps["TNR"]), _fmt(pf["AUC"]), _fmt(pf["TPR"]),
                    _fmt(pf["TNR"]), r["train"]["files"], r["test"]["files"]]
        else:
            tail = [""] * 8
        rows.append(head + tail)
    return _csv(rows, SUMMARY_COLUMNS)


# ---------------------------------------------------------------- shift mode

@dataclass(frozen=True)
class ShiftOutcome:
    """Per-file rates of one model trained on condition A only vs all trucks."""

    tnr_b_a_only: float | None
    tnr_b_all: float | None
    tpr_a_only: float | None
    tpr_all: float | None
    per_condition: dict

    @property
    def tnr_improved(self) -> bool:
        return (self.tnr_b_all is not None and self.tnr_b_a_only is not None
                and self.tnr_b_all > self.tnr_b_a_only)

    @property
    def tpr_drop(self) -> float:
        return (self.tpr_a_only or 0.0) - (self.tpr_all or 0.0)


def shift_experiment(exp: Experiment, cell: Cell) -> ShiftOutcome:
    """Compare training groups ``A`` and ``all`` for one configuration.

    TNR is taken over condition-B test files (every condition other than
    ``condition_a``); TPR over all test files.
    """
    out = {}
    for group in ("A", "all"):
        body, rep = exp.run(Cell(**{**cell.to_json(), "train_group": group}))
        neg = [f for f in rep.file_scores if f["condition"] != exp.condition_a and f["label"] == 0]
        tnr_b = sum(f["score"] <= 0.5 for f in neg) / len(neg) if neg else None
        out[group] = (tnr_b, rep.file.tpr, body["per_condition"])
    return ShiftOutcome(out["A"][0], out["all"][0], out["A"][1], out["all"][1],
                        {"A": out["A"][2], "all": out["all"][2]})


# ---------------------------------------------------------------- report

DEFAULT_FUSION = ("RF", "SVMLinear")


@dataclass(frozen=True)
class Member:
    """Fusion member token ``KIND[:w[:mode]]``; w defaults to 2 for RF and 0 otherwise."""

    classifier: str
    w_s: float
    feature_mode: str = "MeanStd"

    @classmethod
    def parse(cls, token: str) -> "Member":
        parts = token.split(":")
        if not 1 <= len(parts) <= 3 or not parts[0]:
            raise ValueError(f"bad fusion member {token!r}; expected KIND[:w[:mode]]")
        kind = ClassifierKind.parse(parts[0]).value
        try:
            w = float(parts[1]) if len(parts) > 1 else (2.0 if kind == "RF" else 0.0)
        except ValueError:
            raise ValueError(f"bad window size in fusion member {token!r}") from None
        mode = FeatureMode.parse(parts[2]).value if len(parts) > 2 else "MeanStd"
        return cls(kind, w, mode)

    @property
    def token(self) -> str:
        return f"{self.classifier}:{self.w_s:g}:{self.feature_mode}"


def load_records(path) -> list[dict]:
    """Records from a sweep directory (``records/*.json``), a records directory or one record file."""
    path = Path(path)
    if path.is_file():
        files = [path]
    else:
        d = path / "records" if (path / "records").is_dir() else path
        files = sorted(d.glob("*.json")) if d.is_dir() else []
    recs = []
    for f in files:
        doc = json.loads(f.read_text())
        if isinstance(doc, dict) and "key" in doc and "config" in doc:
            recs.append(doc)
    return sorted(recs, key=_record_order)


def _record_order(r):
    c = r["config"]
    kinds = [k.value for k in ClassifierKind]
    return (c["starttrigger_s"], c["endtrigger_s"], c["w_s"], c["feature_mode"],
            kinds.index(c["classifier"]) if c["classifier"] in kinds else 99, c["classifier"],
            TRAIN_GROUPS.index(c["train_group"]) if c["train_group"] in TRAIN_GROUPS else 9)


def _truck_columns(records) -> list[str]:
    trucks = set()
    for r in records:
        trucks.update(k for k in r["metrics"]["per_truck"] if k != "all")
    return sorted(trucks) + ["all"]


def fused_records(records: Sequence[dict], members: Sequence[Member]) -> list[dict]:
    """One pseudo-record per (crop, training group) in which every member was run."""
    ok = [r for r in records if r["status"] == "ok"]
    index = {}
    for r in ok:
        c = r["config"]
        index[(c["starttrigger_s"], c["endtrigger_s"], c["train_group"], c["classifier"], c["w_s"],
               c["feature_mode"])] = r
    crops = sorted({(r["config"]["starttrigger_s"], r["config"]["endtrigger_s"], r["config"]["train_group"])
                    for r in ok}, key=lambda k: (k[0], k[1], TRAIN_GROUPS.index(k[2]) if k[2] in TRAIN_GROUPS else 9))
    out = []
    name = "+".join(m.classifier for m in members)
    for s, e, g in crops:
        found = [index.get((s, e, g, m.classifier, m.w_s, m.feature_mode)) for m in members]
        if any(f is None for f in found):
            continue
        fused = fuse_file_scores([f["metrics"]["file_scores"] for f in found])
        rep = report_from_file_scores(fused)
        cfg = {"starttrigger_s": s, "endtrigger_s": e, "w_s": None, "feature_mode": None, "classifier": name,
               "train_group": g, "members": [m.token for m in members]}
        out.append({"key": f"s{s:g}_e{e:g}_{name}_{g}", "config": cfg, "status": "ok", "fused": True,
                    "metrics": rep.to_json(), "per_condition": _per_condition(fused)})
    return out


def _rate_cells(metrics: dict, trucks: Sequence[str]) -> list[str]:
    row = []
    for t in trucks:
        m = metrics["per_truck"].get(t)
        row += ["", ""] if m is None else [_fmt(m["TNR"]), _fmt(m["TPR"])]
    return row


def _config_cells(c: dict) -> list[str]:
    return [f"{c['starttrigger_s']:g}", f"{c['endtrigger_s']:g}",
            "" if c["w_s"] is None else f"{c['w_s']:g}", c["feature_mode"] or "", c["classifier"],
            c["train_group"]]


def build_report(records: Sequence[dict], out_dir, fusion: Sequence[Member] | None = None) -> dict[str, Path]:
    """Write the per-truck table, per-time and ROC curves, shift summary and a text rendering.

    Raises :class:`SweepError` (before writing anything) when there are no usable records.
    """
    ok = [r for r in records if r.get("status") == "ok"]
    if not ok:
        raise SweepError("no successful run records to report on")
    out_dir = Path(out_dir)
    fused = fused_records(ok, fusion) if fusion else []
    rows_src = list(ok) + fused
    trucks = _truck_columns(rows_src)
    written: dict[str, Path] = {}

    config_header = ["starttrigger_s", "endtrigger_s", "w_s", "feature_mode", "classifier", "train_group"]
    header = config_header + [f"{t}_{m}" for t in trucks for m in ("TNR", "TPR")] + ["file_AUC"]
    table = [_config_cells(r["config"]) + _rate_cells(r["metrics"], trucks) + [_fmt(r["metrics"]["per_file"]["AUC"])]
             for r in rows_src]
    written["per_truck"] = out_dir / "per_truck.csv"
    write_atomic(written["per_truck"], _csv(table, header))

    for r in ok:
        pt = [[f"{p['t']:g}", _fmt(p["TPR"]), _fmt(p["TNR"]), p["TP"] + p["FN"], p["TN"] + p["FP"]]
              for p in r["metrics"]["per_time"]]
        write_atomic(out_dir / "per_time" / f"{r['key']}.csv", _csv(pt, ["t", "TPR", "TNR", "positives", "negatives"]))
    for r in rows_src:
        roc = [[_fmt(x), _fmt(y)] for x, y in r["metrics"]["roc_per_file"]]
        write_atomic(out_dir / "roc" / f"{r['key']}.csv", _csv(roc, ["FPR", "TPR"]))
    written["per_time"] = out_dir / "per_time"
    written["roc"] = out_dir / "roc"

    shift_rows = []
    for r in rows_src:
        for cond, m in sorted(r.get("per_condition", {}).items()):
            shift_rows.append(_config_cells(r["config"]) + [cond, _fmt(m["TPR"]), _fmt(m["TNR"]),
                                                           m["TP"] + m["FN"], m["TN"] + m["FP"]])
    if any(r["config"]["train_group"] == "A" for r in rows_src):
        written["shift"] = out_dir / "shift_summary.csv"
        write_atomic(written["shift"], _csv(shift_rows, config_header + ["test_condition", "TPR", "TNR", "positives",
                                                                  "negatives"]))

    written["text"] = out_dir / "report.txt"
    write_atomic(written["text"], render_text(rows_src, trucks, shift_rows if "shift" in written else []))
    return written


def render_text(rows: Sequence[dict], trucks: Sequence[str], shift_rows: Sequence[Sequence]) -> str:
    def pct(x):
        return "  -  " if x is None else f"{100 * x:5.1f}"

    lines = ["Per-file TNR / TPR (%) per truck", ""]
    cfg_w = max(len(_label(r["config"])) for r in rows)
    head = " " * cfg_w + " | " + " | ".join(f"{t:^13}" for t in trucks)
    lines += [head, "-" * len(head)]
    for r in rows:
        cells = []
        for t in trucks:
            m = r["metrics"]["per_truck"].get(t)
            cells.append(f"{pct(m and m['TNR'])} {pct(m and m['TPR'])}  ")
        lines.append(_label(r["config"]).ljust(cfg_w) + " | " + " | ".join(cells))
    if shift_rows:
        lines += ["", "Distribution shift (per-file rates by test condition)", ""]
        for row in shift_rows:
            lines.append(f"{' '.join(str(v) for v in row[:6] if v != ''):<40} test={row[6]:<12} "
                         f"TPR={row[7] or '-':<9} TNR={row[8] or '-'}")
    return "\n".join(lines) + "\n"


def _label(c: dict) -> str:
    w = "" if c["w_s"] is None else f" w={c['w_s']:g}"
    mode = f" {c['feature_mode']}" if c.get("feature_mode") else ""
    return f"{c['classifier']}{w}{mode} [{c['starttrigger_s']:g},{c['endtrigger_s']:g}] {c['train_group']}"


__all__ = [
    "Cell", "SweepGrid", "Experiment", "SweepResult", "SweepError", "ShiftOutcome", "Member", "run_cell",
    "run_sweep", "summary_csv", "shift_experiment", "load_records", "fused_records", "build_report",
    "write_atomic", "DEFAULT_FUSION", "TRAIN_GROUPS",
]
