"""Acceptance suite: one PASS/FAIL line per criterion, with runtime against its budget."""

import filecmp
import time

import numpy as np
import pytest

from overtake.cli import main
from overtake.evaluation import auc_roc, confusion, fuse, roc_points, trapezoid_area
from overtake.features import END_TRIGGERS, START_TRIGGERS, WINDOW_SIZES, CropConfig, window_count
from overtake.learners import ClassifierKind, TrainConfig, decide, model_to_json, predict_posterior, train
from overtake.learners import ann
from overtake.sweep import Cell, Experiment, shift_experiment
from overtake.synthgen import demo_config, generate_segments

from conftest import blobs

CROP_SAMPLES = {-20: {0: 201, 1: 211, 2: 221, 5: 251}, -10: {0: 101, 1: 111, 2: 121, 5: 151},
            -5: {0: 51, 1: 61, 2: 71, 5: 101}}
EXPECTED_ROWS = {201: (201, 66, 39, 19), 211: (211, 69, 41, 20), 221: (221, 72, 43, 21), 251: (251, 82, 49, 24),
               101: (101, 32, 19, 9), 111: (111, 36, 21, 10), 121: (121, 39, 23, 11), 151: (151, 49, 29, 14),
               51: (51, 16, 9, 4), 61: (61, 19, 11, 5), 71: (71, 22, 13, 6)}


@pytest.fixture
def verdict(request):
    reporter = request.config.pluginmanager.getplugin("terminalreporter")
    start = time.perf_counter()

    def emit(name, ok, detail, budget_s):
        elapsed = time.perf_counter() - start
        ok = bool(ok) and elapsed < budget_s
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail} [{elapsed:.1f} s / {budget_s:g} s]"
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        else:
            print(line)
        assert ok, line

    return emit


def test_window_table(verdict):
    bad = []
    cells = 0
    for s in START_TRIGGERS:
        for e in END_TRIGGERS:
            n = CropConfig(s, e).n_samples
            cells += len(WINDOW_SIZES)
            if n != CROP_SAMPLES[s][e]:
                bad.append(f"N({s},{e})={n}")
            got = tuple(window_count(n, w) for w in WINDOW_SIZES)
            if got != EXPECTED_ROWS[CROP_SAMPLES[s][e]]:
                bad.append(f"({s},{e})->{got}")
    verdict("window table", cells == 48 and not bad, f"{cells} cells, mismatches: {bad or 'none'}", 1.0)


def pairwise(s, y):
    pos, neg = s[y == 1], s[y == 0]
    diff = pos[:, None] - neg[None, :]
    return ((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size


def test_metric_oracles(verdict):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 201))
        y = rng.integers(0, 2, n)
        y[:2] = (0, 1)
        s = np.round(rng.random(n), int(rng.integers(1, 4)))
        ref = pairwise(s, y)
        worst = max(worst, abs(trapezoid_area(roc_points(s, y)) - ref), abs(auc_roc(s, y) - ref))
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        s, y = rng.random(n), rng.integers(0, 2, n)
        tp = sum(1 for a, b in zip(s, y) if a > 0.5 and b == 1)
        fn = sum(1 for a, b in zip(s, y) if a <= 0.5 and b == 1)
        tn = sum(1 for a, b in zip(s, y) if a <= 0.5 and b == 0)
        fp = n - tp - fn - tn
        c = confusion(s, y)
        want_tpr = tp / (tp + fn) if tp + fn else None
        want_tnr = tn / (tn + fp) if tn + fp else None
        mismatches += (c.TP, c.FN, c.TN, c.FP, c.tpr, c.tnr) != (tp, fn, tn, fp, want_tpr, want_tnr)
    verdict("metric oracles", worst <= 1e-9 and mismatches == 0,
            f"max AUC error {worst:.1e} over 100 sets, {mismatches}/1000 confusion mismatches", 10.0)


def _gradient_error(seed):
    rng = np.random.default_rng(seed)
    X, y = rng.normal(size=(20, 3)), (rng.random(20) < 0.5).astype(float)
    p = ann.init_params(3, 4, rng)
    p.b1 = rng.normal(0, 0.1, 4)
    theta = p.flat()
    ana = ann.loss_and_grad(p, X, y, 0.5)[1].flat()
    num = np.empty_like(theta)
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = 1e-6
        num[i] = (ann.loss_and_grad(ann.MLPParams.unflat(theta + e, 3, 4), X, y, 0.5)[0]
                  - ann.loss_and_grad(ann.MLPParams.unflat(theta - e, 3, 4), X, y, 0.5)[0]) / 2e-6
    return np.linalg.norm(ana - num) / (np.linalg.norm(ana) + np.linalg.norm(num))


def _tree_walk(doc, x):
    i = 0
    while doc["feature"][i] != -1:
        i = doc["left"][i] if x[doc["feature"][i]] <= doc["threshold"][i] else doc["right"][i]
    return doc["value"][i]


def test_learner_sanity(verdict):
    X, y = blobs(200, margin=2.0, seed=0)
    Xh, yh = blobs(200, margin=2.0, seed=1)
    # nearest-centroid oracle: the set really is separable
    c0, c1 = X[y == 0].mean(0), X[y == 1].mean(0)
    oracle = (np.linalg.norm(X - c1, axis=1) < np.linalg.norm(X - c0, axis=1)).astype(int)
    parts, ok = [f"centroid oracle acc {np.mean(oracle == y):.3f}"], np.all(oracle == y)
    for kind in ClassifierKind:
        m = train(X, y, TrainConfig(kind))
        acc = np.mean(decide(predict_posterior(m, X)) == y)
        auc = auc_roc(predict_posterior(m, Xh), yh)
        ok &= acc >= 0.99 and auc >= 0.999
        parts.append(f"{kind.value} acc {acc:.3f} AUC {auc:.4f}")
    grad = max(_gradient_error(s) for s in range(5))
    ok &= grad < 1e-4
    parts.append(f"grad rel err {grad:.1e}")
    Xr, yr = blobs(80, d=4, margin=0.4, seed=3)
    worst = 0.0
    for n_trees in range(1, 6):
        m = train(Xr, yr, TrainConfig("RF", trees=n_trees, seed=n_trees))
        trees = model_to_json(m)["params"]["trees"]
        walked = np.array([np.mean([_tree_walk(t, x) for t in trees]) for x in Xr])
        worst = max(worst, float(np.abs(predict_posterior(m, Xr) - walked).max()))
    ok &= worst == 0.0
    parts.append(f"RF walk diff {worst:g}")
    verdict("learner sanity", ok, "; ".join(parts), 60.0)


@pytest.fixture(scope="module")
def demo_experiment(demo):
    segs, manifest = demo
    return Experiment(segs, manifest, seed=0)


def test_end_to_end(verdict, demo_experiment):
    _, rep = demo_experiment.run(Cell(-5, 1, 2, "MeanStd", "RF"))
    f = rep.file
    ok = rep.file_auc >= 0.90 and f.tpr >= 0.85 and f.tnr >= 0.85
    verdict("end-to-end RF (-5,1,w=2)", ok,
            f"per-file AUC {rep.file_auc:.3f} TPR {f.tpr:.3f} TNR {f.tnr:.3f} on {f.positives + f.negatives} files",
            300.0)


def test_distribution_shift(verdict):
    wins, drops, lines = 0, [], []
    for seed in range(10):
        segs, manifest = generate_segments(demo_config(seed))
        out = shift_experiment(Experiment(segs, manifest, seed=seed), Cell(-5, 1, 2, "MeanStd", "RF"))
        win = out.tnr_improved and out.tpr_drop <= 0.15
        wins += win
        drops.append(out.tpr_drop)
        lines.append(f"{seed}:{out.tnr_b_a_only:.2f}->{out.tnr_b_all:.2f}{'+' if win else '-'}")
    verdict("distribution shift", wins >= 8,
            f"{wins}/10 seeds raise condition-B TNR with TPR drop <= 15 pp (max drop {100 * max(drops):.1f} pp); "
            + " ".join(lines), 900.0)


def test_fusion(verdict, demo_experiment):
    _, rf = demo_experiment.run(Cell(-5, 1, 2, "MeanStd", "RF"))
    _, svm = demo_experiment.run(Cell(-5, 1, 0, "MeanStd", "SVMLinear"))
    a = {f["file_id"]: f for f in rf.file_scores}
    b = {f["file_id"]: f for f in svm.file_scores}
    ids = sorted(a)
    fused = fuse([[a[i]["score"] for i in ids], [b[i]["score"] for i in ids]])
    ok, parts = True, []
    for truck in sorted({a[i]["truck"] for i in ids}):
        neg = [k for k, i in enumerate(ids) if a[i]["truck"] == truck and a[i]["label"] == 0]
        tnr = [np.mean([s[k] <= 0.5 for k in neg]) for s in
               ([a[i]["score"] for i in ids], [b[i]["score"] for i in ids], fused)]
        ok &= tnr[2] >= min(tnr[:2])
        parts.append(f"{truck} {tnr[2]:.3f} (members {tnr[0]:.3f}/{tnr[1]:.3f})")
    rng = np.random.default_rng(99)
    broken = 0
    for _ in range(1000):
        k, n = int(rng.integers(2, 6)), int(rng.integers(1, 50))
        m = rng.random((k, n))
        v = m[0]
        f = fuse(list(m))
        broken += not (np.array_equal(fuse([v, v]), v) and np.all(f >= m.min(0)) and np.all(f <= m.max(0)))
    verdict("fusion", ok and broken == 0, "per-truck fused TNR " + ", ".join(parts)
            + f"; {broken}/1000 vectors break idempotence or bounds", 120.0)


def _pipeline(root):
    args = ["--seed", "5", "--workers", "2"]
    assert main(["generate", "--out-dir", str(root / "data"), *args]) == 0
    assert main(["sweep", "--manifest", str(root / "data" / "manifest.json"), "--start", "-5", "--end", "1",
                 "--w", "0", "2", "--classifiers", "RF", "SVMLinear", "--train-groups", "all", "A",
                 "--out-dir", str(root / "sweep"), *args]) == 0
    assert main(["report", str(root / "sweep"), "--fuse", "RF:2", "SVMLinear:0"]) == 0
    return sorted(p.relative_to(root) for p in root.rglob("*.csv") if "data" not in p.parts)


def test_determinism(verdict, tmp_path):
    a, b = _pipeline(tmp_path / "a"), _pipeline(tmp_path / "b")
    same = a == b and all(filecmp.cmp(tmp_path / "a" / p, tmp_path / "b" / p, shallow=False) for p in a)
    traces = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a" / "data").rglob("*.csv"))
    same_traces = all(filecmp.cmp(tmp_path / "a" / p, tmp_path / "b" / p, shallow=False) for p in traces)
    verdict("determinism", same and same_traces and len(a) > 2,
            f"{len(a)} summary/report CSVs and {len(traces)} traces byte-identical across two runs", 600.0)
