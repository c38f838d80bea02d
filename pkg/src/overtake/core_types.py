"""Signal catalog, trace containers, dataset manifests and their file formats.

A trace is stored as two arrays: ``t`` (seconds) and ``values`` (n x 10, one
column per CAN signal in catalog order). Logged traces use time relative to
the trigger instant; raw generator output uses absolute time.

On disk a trace is a CSV file plus a ``.meta.json`` sidecar that carries the
truck id, file id and label.
"""

from __future__ import annotations

import csv
import enum
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

SAMPLE_RATE_HZ = 10
SAMPLE_PERIOD_S = 0.1
TIME_TOL = 1e-9

PRE_TRIGGER_S = 20
POST_TRIGGER_S = 45
LOGGED_SAMPLES = (PRE_TRIGGER_S + POST_TRIGGER_S) * SAMPLE_RATE_HZ + 1  # 651

NO_VEHICLE_DIST_M = 255.0  # distance-ahead value when no vehicle is detected


class TraceError(ValueError):
    """Invalid trace content or trace file. ``row`` is 1-based (header excluded)."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ManifestError(ValueError):
    pass


class SignalKind(enum.Enum):
    CONTINUOUS = "continuous"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class SignalDescriptor:
    id: int
    name: str
    kind: SignalKind
    unit: str
    low: float
    high: float

    def contains(self, value: float) -> bool:
        if self.kind is SignalKind.CATEGORICAL:
            return value == 0.0 or value == 1.0
        return self.low <= value <= self.high


# Acceleration and relative-speed ranges are generator conventions; the
# source data only fixes the pedal, distance and speed encodings.
SIGNALS: tuple[SignalDescriptor, ...] = (
    SignalDescriptor(1, "accel_pedal_pct", SignalKind.CONTINUOUS, "%", 0.0, 100.0),
    SignalDescriptor(2, "dist_ahead_m", SignalKind.CONTINUOUS, "m", 0.0, 255.0),
    SignalDescriptor(3, "speed_ahead_kmh", SignalKind.CONTINUOUS, "km/h", 0.0, 255.0),
    SignalDescriptor(4, "rel_speed_kmh", SignalKind.CONTINUOUS, "km/h", -20.0, 20.0),
    SignalDescriptor(5, "speed_kmh", SignalKind.CONTINUOUS, "km/h", 0.0, 255.0),
    SignalDescriptor(6, "lat_acc_ms2", SignalKind.CONTINUOUS, "m/s^2", -10.0, 10.0),
    SignalDescriptor(7, "lon_acc_ms2", SignalKind.CONTINUOUS, "m/s^2", -10.0, 10.0),
    SignalDescriptor(8, "lane_change", SignalKind.CATEGORICAL, "", 0.0, 1.0),
    SignalDescriptor(9, "left_ind", SignalKind.CATEGORICAL, "", 0.0, 1.0),
    SignalDescriptor(10, "right_ind", SignalKind.CATEGORICAL, "", 0.0, 1.0),
)
SIGNAL_NAMES: tuple[str, ...] = tuple(s.name for s in SIGNALS)
N_CONTINUOUS = 7
N_CATEGORICAL = 3
CSV_HEADER: tuple[str, ...] = ("t",) + SIGNAL_NAMES

# column indices into ``CanTrace.values``
PEDAL, DIST, SPEED_AHEAD, REL_SPEED, SPEED, LAT_ACC, LON_ACC, LANE_CHANGE, LEFT_IND, RIGHT_IND = range(10)

_LOWS = np.array([s.low for s in SIGNALS])
_HIGHS = np.array([s.high for s in SIGNALS])


class ManeuverLabel(enum.IntEnum):
    NO_OVERTAKE = 0  # class0
    OVERTAKE = 1  # class1

    @classmethod
    def parse(cls, token) -> "ManeuverLabel":
        if isinstance(token, bool):
            raise ValueError(f"unknown label token {token!r}")
        if isinstance(token, (int, np.integer)) and int(token) in (0, 1):
            return cls(int(token))
        if isinstance(token, str) and token.strip() in ("0", "1"):
            return cls(int(token.strip()))
        raise ValueError(f"unknown label token {token!r}")


@dataclass(frozen=True)
class Sample:
    t: float
    continuous: tuple[float, ...]
    categorical: tuple[int, ...]


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class CanTrace:
    """Multichannel 10 Hz recording.

    ``label`` is ``None`` for unlabeled traces (raw generator output).
    Construction validates every invariant and freezes the arrays.
    """

    t: np.ndarray
    values: np.ndarray
    truck_id: str = ""
    file_id: str = ""
    label: ManeuverLabel | None = None

    def __post_init__(self):
        t = _frozen(self.t)
        values = _frozen(self.values)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", values)
        if self.label is not None:
            object.__setattr__(self, "label", ManeuverLabel.parse(int(self.label)))
        validate_arrays(t, values)

    def __len__(self) -> int:
        return len(self.t)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CanTrace):
            return NotImplemented
        return (
            self.truck_id == other.truck_id
            and self.file_id == other.file_id
            and self.label == other.label
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def sample_rate(self) -> int:
        return SAMPLE_RATE_HZ

    @property
    def samples(self) -> Iterator[Sample]:
        for ti, row in zip(self.t, self.values):
            yield Sample(
                float(ti),
                tuple(float(v) for v in row[:N_CONTINUOUS]),
                tuple(int(v) for v in row[N_CONTINUOUS:]),
            )

    def column(self, name: str) -> np.ndarray:
        return self.values[:, SIGNAL_NAMES.index(name)]

    def index_of(self, t: float) -> int:
        """Index of the sample at time ``t`` (must lie on the sample grid)."""
        k = int(round((t - self.t[0]) / SAMPLE_PERIOD_S))
        if not 0 <= k < len(self.t) or abs(self.t[k] - t) > 1e-6:
            raise IndexError(f"t={t} is not a sample time of this trace")
        return k

    def with_meta(self, **kw) -> "CanTrace":
        fields_ = dict(t=self.t, values=self.values, truck_id=self.truck_id,
                       file_id=self.file_id, label=self.label)
        fields_.update(kw)
        return CanTrace(**fields_)


def validate_arrays(t: np.ndarray, values: np.ndarray) -> None:
    """Raise TraceError (with 1-based row number) on the first violation."""
    if t.ndim != 1 or len(t) == 0:
        raise TraceError("trace must contain at least one sample")
    if values.shape != (len(t), len(SIGNALS)):
        raise TraceError(f"expected values of shape ({len(t)}, {len(SIGNALS)}), got {values.shape}")
    if not np.all(np.isfinite(t)) or not np.all(np.isfinite(values)):
        bad = np.flatnonzero(~(np.isfinite(t) & np.all(np.isfinite(values), axis=1)))[0]
        raise TraceError("non-finite value", row=int(bad) + 1)
    off_grid = np.abs(t / SAMPLE_PERIOD_S - np.round(t / SAMPLE_PERIOD_S)) * SAMPLE_PERIOD_S > TIME_TOL
    if off_grid.any():
        raise TraceError(f"time {t[off_grid.argmax()]!r} is not a multiple of 0.1 s",
                         row=int(off_grid.argmax()) + 1)
    if len(t) > 1:
        dt = np.diff(t)
        bad = np.flatnonzero(dt <= 0)
        if bad.size:
            raise TraceError("time is not strictly increasing", row=int(bad[0]) + 2)
        bad = np.flatnonzero(np.abs(dt - SAMPLE_PERIOD_S) > TIME_TOL)
        if bad.size:
            raise TraceError("sample spacing differs from 0.1 s", row=int(bad[0]) + 2)
    for j, sig in enumerate(SIGNALS):
        col = values[:, j]
        if sig.kind is SignalKind.CATEGORICAL:
            bad = np.flatnonzero((col != 0.0) & (col != 1.0))
        else:
            bad = np.flatnonzero((col < _LOWS[j]) | (col > _HIGHS[j]))
        if bad.size:
            i = int(bad[0])
            raise TraceError(
                f"signal {sig.id} ({sig.name}) value {col[i]!r} outside [{sig.low:g}, {sig.high:g}]",
                row=i + 1,
            )


def _meta_path(path: Path) -> Path:
    return path.with_suffix(".meta.json")


def _fmt(x: float) -> str:
    # repr of a float is the shortest string that round-trips exactly
    if x == 0.0:
        return "0.0"
    return repr(float(x))


def save_trace(trace: CanTrace, path) -> None:
    """Write ``trace`` as CSV plus a ``.meta.json`` sidecar."""
    path = Path(path)
    if len(trace) == 0:
        raise TraceError("trace must contain at least one sample")
    lines = [",".join(CSV_HEADER)]
    for ti, row in zip(trace.t, trace.values):
        cells = [_fmt(ti)] + [_fmt(v) for v in row[:N_CONTINUOUS]] + [str(int(v)) for v in row[N_CONTINUOUS:]]
        lines.append(",".join(cells))
    meta = {
        "truck_id": trace.truck_id,
        "file_id": trace.file_id,
        "label": "" if trace.label is None else str(int(trace.label)),
    }
    try:
        path.write_text("\n".join(lines) + "\n")
        _meta_path(path).write_text(json.dumps(meta, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc


def load_trace(path) -> CanTrace:
    """Parse and validate a trace CSV (and its sidecar if present)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    ts: list[float] = []
    rows: list[list[float]] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise TraceError(f"bad header in {path}; expected {','.join(CSV_HEADER)}")
        for rowno, cells in enumerate(reader, start=1):
            if not cells:
                continue
            if len(cells) != len(CSV_HEADER):
                raise TraceError(f"expected {len(CSV_HEADER)} columns, got {len(cells)}", row=rowno)
            try:
                nums = [float(c) for c in cells]
            except ValueError as exc:
                raise TraceError(f"malformed number ({exc})", row=rowno) from None
            ts.append(nums[0])
            rows.append(nums[1:])
    if not ts:
        raise TraceError(f"{path} contains no samples")
    meta = {"truck_id": "", "file_id": path.stem, "label": ""}
    mp = _meta_path(path)
    if mp.exists():
        meta.update(json.loads(mp.read_text()))
    label = ManeuverLabel.parse(meta["label"]) if meta["label"] != "" else None
    return CanTrace(np.array(ts), np.array(rows), truck_id=str(meta["truck_id"]),
                    file_id=str(meta["file_id"]), label=label)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    truck: str
    label: ManeuverLabel
    condition: str = ""


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    root: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen = set()
        for e in self.entries:
            if e.path in seen:
                raise ManifestError(f"duplicate path {e.path!r}")
            seen.add(e.path)
            if not e.truck:
                raise ManifestError(f"entry {e.path!r} has an empty truck id")

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p

    @property
    def trucks(self) -> list[str]:
        return sorted({e.truck for e in self.entries})

    def counts(self) -> dict[str, tuple[int, int]]:
        """Per truck: (class0 count, class1 count)."""
        c = Counter((e.truck, int(e.label)) for e in self.entries)
        return {tr: (c[(tr, 0)], c[(tr, 1)]) for tr in self.trucks}

    def to_json(self) -> dict:
        return {
            "entries": [
                {"path": e.path, "truck": e.truck, "label": int(e.label), "condition": e.condition}
                for e in self.entries
            ]
        }


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    doc = json.loads(path.read_text())
    if not isinstance(doc, dict) or not isinstance(doc.get("entries"), list):
        raise ManifestError(f"{path}: expected an object with an 'entries' list")
    entries = []
    for i, raw in enumerate(doc["entries"]):
        try:
            label = ManeuverLabel.parse(raw["label"])
        except KeyError:
            raise ManifestError(f"entry {i}: missing label") from None
        except ValueError as exc:
            raise ManifestError(f"entry {i}: {exc}") from None
        entries.append(ManifestEntry(str(raw["path"]), str(raw.get("truck", "")), label,
                                     str(raw.get("condition", "") or "")))
    manifest = DatasetManifest(tuple(entries), root=path.parent)
    if check_files:
        for e in manifest.entries:
            if not manifest.resolve(e).exists():
                raise ManifestError(f"referenced file not found: {e.path}")
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(json.dumps(manifest.to_json(), indent=1) + "\n")


def load_traces(manifest: DatasetManifest) -> list[CanTrace]:
    out = []
    for e in manifest.entries:
        tr = load_trace(manifest.resolve(e))
        out.append(tr.with_meta(truck_id=e.truck, label=e.label, file_id=tr.file_id or Path(e.path).stem))
    return out


def logged_time_axis() -> np.ndarray:
    """The canonical [-20, 45] s axis of a logged segment (651 points)."""
    k = np.arange(LOGGED_SAMPLES)
    return np.round(k * SAMPLE_PERIOD_S - PRE_TRIGGER_S, 10)

