"""Trigger-anchored crops and sliding-window feature matrices.

Window geometry (normative): a window of ``w`` seconds spans ``L = 10*w + 1``
samples and advances by ``ceil((L - 1) / 2)`` samples (50% overlap). Windows
that would run past the end of the crop are dropped, so a crop of ``N``
samples yields ``floor((N - L) / step) + 1`` windows. For ``w = 0`` the raw
samples are used directly.

Per window, continuous signals give their mean (and population standard
deviation in ``MeanStd`` mode); categorical signals give their majority value,
with ties going to the most recent sample in the window.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import core_types as ct
from .core_types import CanTrace, DatasetManifest, ManeuverLabel, ManifestEntry
from .trigger import LoggedSegment

START_TRIGGERS = (-20, -10, -5)
END_TRIGGERS = (0, 1, 2, 5)
WINDOW_SIZES = (0, 0.5, 1, 2)


class FeatureError(ValueError):
    pass


class FeatureMode(enum.Enum):
    MEAN_ONLY = "MeanOnly"
    MEAN_STD = "MeanStd"

    @classmethod
    def parse(cls, name) -> "FeatureMode":
        if isinstance(name, cls):
            return name
        for m in cls:
            if name in (m.value, m.name):
                return m
        raise ValueError(f"unknown feature mode {name!r}; valid: MeanOnly, MeanStd")


def _on_grid(x: float) -> bool:
    return abs(x * 10 - round(x * 10)) < 1e-9


@dataclass(frozen=True)
class CropConfig:
    starttrigger_s: float = -5
    endtrigger_s: float = 1

    def __post_init__(self):
        s, e = self.starttrigger_s, self.endtrigger_s
        if not (s < 0 <= e):
            raise ValueError(f"need starttrigger < 0 <= endtrigger, got ({s}, {e})")
        if s < -ct.PRE_TRIGGER_S or e > ct.POST_TRIGGER_S or not (_on_grid(s) and _on_grid(e)):
            raise ValueError(f"crop ({s}, {e}) does not lie on the logged [-20, 45] s grid")

    @property
    def n_samples(self) -> int:
        return int(round(ct.SAMPLE_RATE_HZ * (self.endtrigger_s - self.starttrigger_s))) + 1


@dataclass(frozen=True)
class WindowConfig:
    w_s: float = 0
    feature_mode: FeatureMode = FeatureMode.MEAN_STD

    def __post_init__(self):
        if self.w_s < 0 or not _on_grid(self.w_s):
            raise ValueError(f"window size must be a non-negative multiple of 0.1 s, got {self.w_s}")
        object.__setattr__(self, "feature_mode", FeatureMode.parse(self.feature_mode))

    @property
    def length(self) -> int:
        """Samples per window (1 when ``w = 0``)."""
        return int(round(ct.SAMPLE_RATE_HZ * self.w_s)) + 1

    @property
    def step(self) -> int:
        return max(1, math.ceil((self.length - 1) / 2))

    @property
    def n_channels(self) -> int:
        if self.w_s == 0 or self.feature_mode is FeatureMode.MEAN_ONLY:
            return ct.N_CONTINUOUS + ct.N_CATEGORICAL
        return 2 * ct.N_CONTINUOUS + ct.N_CATEGORICAL


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Rows are windows (or raw samples when ``w = 0``)."""

    X: np.ndarray
    names: tuple[str, ...]
    centers: np.ndarray
    continuous: np.ndarray  # bool mask of continuous-derived columns
    standardized: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.X.shape


def channel_names(wcfg: WindowConfig) -> tuple[str, ...]:
    cont = ct.SIGNAL_NAMES[: ct.N_CONTINUOUS]
    cat = ct.SIGNAL_NAMES[ct.N_CONTINUOUS:]
    if wcfg.w_s == 0:
        return ct.SIGNAL_NAMES
    names = tuple(f"{c}_mean" for c in cont)
    if wcfg.feature_mode is FeatureMode.MEAN_STD:
        names += tuple(f"{c}_std" for c in cont)
    return names + tuple(f"{c}_majority" for c in cat)


def crop(segment: LoggedSegment | CanTrace, cfg: CropConfig) -> CanTrace:
    """Samples with ``starttrigger <= t <= endtrigger`` (inclusive endpoints)."""
    tr = segment.trace if isinstance(segment, LoggedSegment) else segment
    i0 = tr.index_of(cfg.starttrigger_s)
    i1 = tr.index_of(cfg.endtrigger_s)
    out = CanTrace(tr.t[i0:i1 + 1], tr.values[i0:i1 + 1], truck_id=tr.truck_id,
                   file_id=tr.file_id, label=tr.label)
    assert len(out) == cfg.n_samples
    return out


def window_count(n_samples: int, w_s: float) -> int:
    """Number of rows produced from ``n_samples`` samples with window ``w_s``."""
    wcfg = WindowConfig(w_s)
    if wcfg.w_s == 0:
        return n_samples
    if n_samples < wcfg.length:
        raise FeatureError(f"{n_samples} samples cannot hold a {w_s} s window ({wcfg.length} samples)")
    return (n_samples - wcfg.length) // wcfg.step + 1


def majority(window: np.ndarray) -> np.ndarray:
    """Majority of 0/1 values along axis -1; ties take the last value."""
    L = window.shape[-1]
    ones = window.sum(axis=-1)
    out = (2 * ones > L).astype(float)
    tie = 2 * ones == L
    out[tie] = window[..., -1][tie]
    return out


def featurize(slice_: CanTrace, wcfg: WindowConfig) -> FeatureMatrix:
    n = len(slice_)
    names = channel_names(wcfg)
    mask = np.array([n.endswith(("_mean", "_std")) or n in ct.SIGNAL_NAMES[: ct.N_CONTINUOUS] for n in names])
    if wcfg.w_s == 0:
        return FeatureMatrix(slice_.values.copy(), names, slice_.t.copy(), mask)
    L, step = wcfg.length, wcfg.step
    count = window_count(n, wcfg.w_s)
    starts = np.arange(count) * step
    idx = starts[:, None] + np.arange(L)
    win = slice_.values[idx]  # (count, L, 10)
    cont = win[:, :, : ct.N_CONTINUOUS]
    parts = [cont.mean(axis=1)]
    if wcfg.feature_mode is FeatureMode.MEAN_STD:
        parts.append(cont.std(axis=1))
    parts.append(majority(np.moveaxis(win[:, :, ct.N_CONTINUOUS:], 1, 2)))
    centers = np.round(slice_.t[starts] + (L - 1) / 2 * ct.SAMPLE_PERIOD_S, 10)
    return FeatureMatrix(np.hstack(parts), names, centers, mask)


class StandardizeError(ValueError):
    pass


@dataclass(frozen=True)
class Standardizer:
    """Per-column z-scoring of continuous-derived columns.

    Uses the population standard deviation of the training rows. Columns
    outside ``mask`` pass through unchanged.
    """

    mean: np.ndarray
    std: np.ndarray
    mask: np.ndarray

    def apply(self, rows):
        if isinstance(rows, FeatureMatrix):
            if rows.standardized:
                raise StandardizeError("feature matrix is already standardized")
            return FeatureMatrix(self.apply(rows.X), rows.names, rows.centers, rows.continuous, True)
        rows = np.asarray(rows, dtype=float)
        if rows.shape[-1] != len(self.mean):
            raise StandardizeError(f"expected {len(self.mean)} columns, got {rows.shape[-1]}")
        out = rows.copy()
        out[..., self.mask] = (rows[..., self.mask] - self.mean[self.mask]) / self.std[self.mask]
        return out

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "mask": self.mask.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "Standardizer":
        return cls(np.array(doc["mean"], float), np.array(doc["std"], float), np.array(doc["mask"], bool))


def fit_standardizer(train_rows, mask=None) -> Standardizer:
    if isinstance(train_rows, FeatureMatrix):
        mask = train_rows.continuous if mask is None else mask
        train_rows = train_rows.X
    X = np.asarray(train_rows, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise StandardizeError("need a nonempty 2-D array of training rows")
    mask = np.ones(X.shape[1], bool) if mask is None else np.asarray(mask, bool)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    dead = np.flatnonzero(mask & ~(std > 0))
    if dead.size:
        raise StandardizeError(f"zero-variance column(s) {dead.tolist()} cannot be standardized")
    mean = np.where(mask, mean, 0.0)
    std = np.where(mask, std, 1.0)
    return Standardizer(mean, std, mask)


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Feature rows of many files, with per-row file index, label and time."""

    X: np.ndarray
    y: np.ndarray
    file_index: np.ndarray
    centers: np.ndarray
    names: tuple[str, ...]
    continuous: np.ndarray
    file_ids: tuple[str, ...] = ()
    trucks: tuple[str, ...] = ()
    file_labels: np.ndarray = field(default_factory=lambda: np.zeros(0, int))

    def rows_of(self, files: Sequence[int]) -> np.ndarray:
        return np.isin(self.file_index, np.asarray(files, int))

    def spans(self) -> list[tuple[int, int]]:
        """Half-open row span per file."""
        edges = np.searchsorted(self.file_index, np.arange(len(self.file_ids) + 1))
        return [(int(edges[i]), int(edges[i + 1])) for i in range(len(self.file_ids))]


def featurize_dataset(segments: Sequence[CanTrace], ccfg: CropConfig, wcfg: WindowConfig) -> FeatureSet:
    """Crop and featurize every logged segment; rows inherit their file's label."""
    Xs, ys, fi, cs = [], [], [], []
    names = channel_names(wcfg)
    mask = None
    for i, seg in enumerate(segments):
        fm = featurize(crop(seg, ccfg), wcfg)
        mask = fm.continuous
        Xs.append(fm.X)
        cs.append(fm.centers)
        lab = -1 if seg.label is None else int(seg.label)
        ys.append(np.full(len(fm.X), lab))
        fi.append(np.full(len(fm.X), i))
    if not Xs:
        raise FeatureError("no segments to featurize")
    return FeatureSet(
        np.vstack(Xs), np.concatenate(ys), np.concatenate(fi), np.concatenate(cs), names, mask,
        tuple(s.file_id for s in segments), tuple(s.truck_id for s in segments),
        np.array([-1 if s.label is None else int(s.label) for s in segments]),
    )


PROVENANCE_SUFFIX = ".provenance.json"
_ID_COLUMNS = ("file_id", "truck", "label", "t_center")


def provenance_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + PROVENANCE_SUFFIX)


def save_features(fs: FeatureSet, path, ccfg: CropConfig, wcfg: WindowConfig, manifest: DatasetManifest,
                  manifest_path=None) -> None:
    """Feature CSV (one row per window) plus a provenance JSON with configs and per-file row spans."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_ID_COLUMNS + tuple(fs.names))
        for i in range(len(fs.X)):
            f = int(fs.file_index[i])
            w.writerow([fs.file_ids[f], fs.trucks[f], int(fs.y[i]), repr(float(fs.centers[i]))]
                       + [repr(float(v)) for v in fs.X[i]])
    files = []
    for (a, b), e, fid in zip(fs.spans(), manifest.entries, fs.file_ids):
        files.append({"file_id": fid, "path": e.path, "truck": e.truck, "label": int(e.label),
                      "condition": e.condition, "rows": [a, b]})
    doc = {
        "crop": {"starttrigger_s": ccfg.starttrigger_s, "endtrigger_s": ccfg.endtrigger_s,
                 "n_samples": ccfg.n_samples},
        "window": {"w_s": wcfg.w_s, "feature_mode": wcfg.feature_mode.value, "length": wcfg.length,
                   "step": wcfg.step},
        "columns": list(fs.names),
        "continuous": [bool(v) for v in fs.continuous],
        "manifest": None if manifest_path is None else str(manifest_path),
        "files": files,
    }
    provenance_path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_features(path) -> tuple[FeatureSet, dict]:
    path = Path(path)
    prov_file = provenance_path(path)
    if not path.exists():
        raise FeatureError(f"feature file not found: {path}")
    if not prov_file.exists():
        raise FeatureError(f"provenance file not found: {prov_file}")
    prov = json.loads(prov_file.read_text())
    names = tuple(prov["columns"])
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != _ID_COLUMNS + names:
        raise FeatureError(f"{path}: header does not match its provenance columns")
    body = rows[1:]
    try:
        X = np.array([[float(v) for v in r[4:]] for r in body], dtype=float).reshape(len(body), len(names))
        y = np.array([int(r[2]) for r in body], dtype=int)
        centers = np.array([float(r[3]) for r in body], dtype=float)
    except ValueError as exc:
        raise FeatureError(f"{path}: malformed row ({exc})") from None
    files = prov["files"]
    file_index = np.empty(len(body), dtype=int)
    for i, f in enumerate(files):
        a, b = f["rows"]
        file_index[a:b] = i
        if any(r[0] != f["file_id"] for r in body[a:b]):
            raise FeatureError(f"{path}: rows {a}..{b} do not belong to file {f['file_id']}")
    if files and files[-1]["rows"][1] != len(body):
        raise FeatureError(f"{path}: {len(body)} rows but provenance covers {files[-1]['rows'][1]}")
    fs = FeatureSet(X, y, file_index, centers, names, np.array(prov["continuous"], bool),
                    tuple(f["file_id"] for f in files), tuple(f["truck"] for f in files),
                    np.array([f["label"] for f in files], int))
    return fs, prov


def manifest_from_provenance(prov: dict) -> DatasetManifest:
    return DatasetManifest(tuple(ManifestEntry(f["path"], f["truck"], ManeuverLabel(f["label"]),
                                               f.get("condition", "")) for f in prov["files"]))
