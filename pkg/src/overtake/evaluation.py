"""Hold-out split, TPR/TNR/AUC metrics, per-file and per-time aggregation, fusion.

Rates with a zero denominator are ``None`` (absent), never 0 or 1.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core_types import DatasetManifest
from .learners import DECISION_THRESHOLD
from .seeding import rng_for

SPLIT_RATIO = 0.7


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class SplitPlan:
    """Per-truck balanced training files and the remaining test files.

    File references are indices into the manifest entries.
    """

    train: dict[str, tuple[int, ...]]
    test: dict[str, tuple[int, ...]]
    ratio: float
    seed: int
    test_only_trucks: tuple[str, ...] = ()

    @property
    def train_files(self) -> list[int]:
        return sorted(i for v in self.train.values() for i in v)

    @property
    def test_files(self) -> list[int]:
        return sorted(i for v in self.test.values() for i in v)

    def to_json(self) -> dict:
        return {"ratio": self.ratio, "seed": self.seed,
                "train": {k: list(v) for k, v in self.train.items()},
                "test": {k: list(v) for k, v in self.test.items()},
                "test_only_trucks": list(self.test_only_trucks)}


def balanced_split(manifest: DatasetManifest, ratio: float = SPLIT_RATIO, seed: int = 0) -> SplitPlan:
    """Per truck, ``floor(ratio * min(n_class0, n_class1))`` training files of each class.

    Files are drawn uniformly at random (per truck and class stream) under
    ``seed``; everything else is test. A truck missing one class is test-only.
    """
    if len(manifest) == 0:
        raise EvaluationError("empty manifest")
    by = defaultdict(lambda: ([], []))
    for i, e in enumerate(manifest.entries):
        by[e.truck][int(e.label)].append(i)
    train, test, test_only = {}, {}, []
    for truck in sorted(by):
        c0, c1 = by[truck]
        k = math.floor(ratio * min(len(c0), len(c1)) + 1e-9)
        if not c0 or not c1:
            test_only.append(truck)
        picked = []
        for cls, files in ((0, c0), (1, c1)):
            order = rng_for(seed, "split", truck, cls).permutation(len(files))
            picked += [files[j] for j in order[:k]]
        chosen = set(picked)
        train[truck] = tuple(sorted(picked))
        test[truck] = tuple(i for i in c0 + c1 if i not in chosen)
        test[truck] = tuple(sorted(test[truck]))
    return SplitPlan(train, test, ratio, seed, tuple(test_only))


@dataclass(frozen=True)
class ConfusionCounts:
    TP: int
    FP: int
    TN: int
    FN: int

    @property
    def positives(self) -> int:
        return self.TP + self.FN

    @property
    def negatives(self) -> int:
        return self.TN + self.FP

    @property
    def tpr(self) -> float | None:
        return self.TP / self.positives if self.positives else None

    @property
    def tnr(self) -> float | None:
        return self.TN / self.negatives if self.negatives else None

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.TP + other.TP, self.FP + other.FP, self.TN + other.TN, self.FN + other.FN)

    def to_json(self) -> dict:
        return {"TP": self.TP, "FP": self.FP, "TN": self.TN, "FN": self.FN, "TPR": self.tpr, "TNR": self.tnr}


def _check(scores, labels):
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise EvaluationError(f"scores {s.shape} and labels {y.shape} must be equal-length vectors")
    if len(s) == 0:
        raise EvaluationError("empty input")
    if not np.isin(y, (0, 1)).all():
        raise EvaluationError("labels must be binary")
    return s, y.astype(int)


def confusion(scores, labels, threshold: float = DECISION_THRESHOLD) -> ConfusionCounts:
    s, y = _check(scores, labels)
    pred = s > threshold
    pos = y == 1
    return ConfusionCounts(int(np.sum(pred & pos)), int(np.sum(pred & ~pos)),
                           int(np.sum(~pred & ~pos)), int(np.sum(~pred & pos)))


def roc_points(scores, labels) -> np.ndarray:
    """(FPR, TPR) for thresholds swept from +inf down through each distinct score."""
    s, y = _check(scores, labels)
    n_pos, n_neg = int(y.sum()), int(len(y) - y.sum())
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("ROC needs both classes")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    return np.column_stack([np.r_[0, fp] / n_neg, np.r_[0, tp] / n_pos])


def trapezoid_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def auc_roc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), via midranks."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("AUC needs both classes")
    order = np.argsort(s, kind="stable")
    ss = s[order]
    ranks = np.empty(len(s))
    # midrank of each tie group (1-based)
    bounds = np.r_[0, np.flatnonzero(np.diff(ss) != 0) + 1, len(ss)]
    for a, b in zip(bounds[:-1], bounds[1:]):
        ranks[order[a:b]] = (a + b + 1) / 2.0
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def per_file_score(sample_scores) -> float:
    s = np.asarray(sample_scores, dtype=float)
    if s.size == 0:
        raise EvaluationError("a file needs at least one sample score")
    return float(s.mean())


def per_file_scores(scores, file_index) -> tuple[np.ndarray, np.ndarray]:
    """Mean score per distinct file index, in ascending file order."""
    files, inv = np.unique(np.asarray(file_index), return_inverse=True)
    sums = np.bincount(inv, weights=np.asarray(scores, float))
    return files, sums / np.bincount(inv)


def per_timepoint_metrics(scores, labels, times, threshold: float = DECISION_THRESHOLD) -> dict[float, ConfusionCounts]:
    s, y = _check(scores, labels)
    t = np.round(np.asarray(times, float), 6)
    return {float(tk): confusion(s[t == tk], y[t == tk], threshold) for tk in np.unique(t)}


def fuse(member_scores: Sequence) -> np.ndarray:
    """Elementwise arithmetic mean of aligned member score vectors."""
    arrs = [np.asarray(m, dtype=float) for m in member_scores]
    if not arrs:
        raise EvaluationError("nothing to fuse")
    if len({a.shape for a in arrs}) != 1:
        raise EvaluationError(f"member score lengths differ: {[len(a) for a in arrs]}")
    total = np.zeros_like(arrs[0])
    for a in arrs:
        total += a
    return total / len(arrs)


@dataclass(frozen=True)
class FusionSpec:
    members: tuple[str, ...]
    rule: str = "mean"

    def __post_init__(self):
        if len(self.members) < 2:
            raise ValueError("fusion needs at least two members")
        if len(set(self.members)) != len(self.members):
            raise ValueError("fusion members must be distinct")


def per_truck_report(scores, labels, trucks, threshold: float = DECISION_THRESHOLD) -> dict[str, ConfusionCounts]:
    """Confusion per truck plus the pooled ``"all"`` entry."""
    s, y = _check(scores, labels)
    tr = np.asarray(trucks)
    if tr.shape != s.shape:
        raise EvaluationError("truck ids must align with scores")
    out = {str(t): confusion(s[tr == t], y[tr == t], threshold) for t in sorted(set(tr.tolist()))}
    out["all"] = confusion(s, y, threshold)
    return out


def _auc_or_none(s, y):
    y = np.asarray(y)
    return auc_roc(s, y) if 0 < y.sum() < len(y) else None


@dataclass
class MetricReport:
    """Per-sample and per-file metrics of one evaluated model (or fusion)."""

    sample: ConfusionCounts
    file: ConfusionCounts
    sample_auc: float | None
    file_auc: float | None
    roc: np.ndarray
    per_truck: dict[str, ConfusionCounts]
    per_time: dict[float, ConfusionCounts]
    file_scores: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "per_sample": {**self.sample.to_json(), "AUC": self.sample_auc},
            "per_file": {**self.file.to_json(), "AUC": self.file_auc},
            "roc_per_file": self.roc.tolist(),
            "per_truck": {k: v.to_json() for k, v in self.per_truck.items()},
            "per_time": [{"t": t, **c.to_json()} for t, c in sorted(self.per_time.items())],
            "file_scores": self.file_scores,
        }


def evaluate(scores, labels, file_index, times, file_trucks: Sequence[str], file_ids: Sequence[str] = (),
             config: dict | None = None) -> MetricReport:
    """Build a report from per-row scores of test files.

    ``file_index`` maps each row to its file; ``file_trucks``/``file_ids`` are
    indexed by file.
    """
    s, y = _check(scores, labels)
    fi = np.asarray(file_index)
    files, fscore = per_file_scores(s, fi)
    flabel = np.array([y[fi == f][0] for f in files])
    ftruck = np.array([file_trucks[f] for f in files])
    roc = roc_points(fscore, flabel) if 0 < flabel.sum() < len(flabel) else np.zeros((0, 2))
    fs = [{"file": int(f), "file_id": file_ids[f] if len(file_ids) else str(f), "truck": str(ftruck[k]),
           "label": int(flabel[k]), "score": float(fscore[k])} for k, f in enumerate(files)]
    return MetricReport(
        sample=confusion(s, y), file=confusion(fscore, flabel),
        sample_auc=_auc_or_none(s, y), file_auc=_auc_or_none(fscore, flabel), roc=roc,
        per_truck=per_truck_report(fscore, flabel, ftruck),
        per_time=per_timepoint_metrics(s, y, times), file_scores=fs, config=dict(config or {}),
    )


def report_from_file_scores(file_scores: list[dict], config: dict | None = None) -> MetricReport:
    """Per-file-only report, e.g. for fused scores (per-sample fields mirror per-file)."""
    s = np.array([f["score"] for f in file_scores], float)
    y = np.array([f["label"] for f in file_scores], int)
    tr = np.array([f["truck"] for f in file_scores])
    conf = confusion(s, y)
    auc = _auc_or_none(s, y)
    roc = roc_points(s, y) if 0 < y.sum() < len(y) else np.zeros((0, 2))
    return MetricReport(conf, conf, auc, auc, roc, per_truck_report(s, y, tr), {}, list(file_scores),
                        dict(config or {}))


def fuse_file_scores(members: Sequence[list[dict]]) -> list[dict]:
    """Average per-file scores of several models over the files they share (matched by file id)."""
    keyed = [{f["file_id"]: f for f in m} for m in members]
    common = sorted(set.intersection(*[set(k) for k in keyed]))
    if not common:
        raise EvaluationError("fusion members share no test files")
    out = []
    for fid in common:
        base = keyed[0][fid]
        out.append({**base, "score": float(fuse([[k[fid]["score"]] for k in keyed])[0])})
    return out
