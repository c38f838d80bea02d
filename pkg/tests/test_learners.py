import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from overtake.evaluation import auc_roc
from overtake.learners import (
    ClassifierKind,
    ConvergenceWarning,
    TrainConfig,
    TrainingError,
    decide,
    load_model,
    model_from_json,
    model_to_json,
    predict_posterior,
    save_model,
    train,
)
from overtake.learners import ann, forest, svm
from overtake.seeding import derive_seed

from conftest import blobs

KINDS = list(ClassifierKind)


def fit(kind, X, y, **kw):
    return train(X, y, TrainConfig(kind, **kw))


class TestSanity:
    @pytest.mark.parametrize("kind", KINDS)
    def test_separable_blobs(self, kind):
        X, y = blobs()
        m = fit(kind, X, y)
        assert np.mean(decide(predict_posterior(m, X)) == y) >= 0.99
        Xt, yt = blobs(seed=1)
        assert auc_roc(predict_posterior(m, Xt), yt) >= 0.999

    @pytest.mark.parametrize("kind", KINDS)
    def test_probe_points(self, kind):
        X, y = blobs()
        m = fit(kind, X, y)
        p = predict_posterior(m, np.array([[-2.0, -2.0], [2.0, 2.0]]))
        assert p[0] < 0.1 and p[1] > 0.9

    @pytest.mark.parametrize("kind", KINDS)
    def test_single_class_rejected(self, kind):
        X, _ = blobs(20)
        with pytest.raises(TrainingError, match="single class"):
            fit(kind, X, np.ones(20))

    def test_shape_errors(self):
        X, y = blobs(20)
        with pytest.raises(TrainingError):
            fit("RF", X, y[:-1])
        m = fit("RF", X, y, trees=3)
        with pytest.raises(TrainingError, match="expected 2 features"):
            predict_posterior(m, np.ones((3, 5)))

    @pytest.mark.parametrize("kind", KINDS)
    def test_deterministic(self, kind):
        X, y = blobs(60, d=3, margin=0.6)
        a = predict_posterior(fit(kind, X, y, seed=5), X)
        b = predict_posterior(fit(kind, X, y, seed=5), X)
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("kind", KINDS)
    def test_json_round_trip(self, kind, tmp_path):
        X, y = blobs(60, d=3, margin=0.6)
        m = fit(kind, X, y)
        save_model(m, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        assert np.array_equal(predict_posterior(back, X), predict_posterior(m, X))
        assert back.kind is kind and back.meta == json.loads(json.dumps(m.meta))

    def test_foreign_json_rejected(self):
        with pytest.raises(ValueError):
            model_from_json({"format": "other"})

    def test_decision_rule(self):
        assert decide(0.51) == 1 and decide(0.5) == 0 and decide(0.0) == 0
        assert decide([0.2, 0.7]).tolist() == [0, 1]

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="SVMRbf"):
            TrainConfig("KNN")


class TestANN:
    @settings(max_examples=15)
    @given(st.integers(0, 2**31), st.floats(0, 1))
    def test_gradient_matches_central_differences(self, seed, alpha):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(25, 4))
        y = (rng.random(25) < 0.5).astype(float)
        p = ann.init_params(4, 5, rng)
        p.b1 = rng.normal(0, 0.1, 5)
        _, g = ann.loss_and_grad(p, X, y, alpha)
        theta = p.flat()
        num = np.empty_like(theta)
        h = 1e-6
        for i in range(len(theta)):
            e = np.zeros_like(theta)
            e[i] = h
            lp, _ = ann.loss_and_grad(ann.MLPParams.unflat(theta + e, 4, 5), X, y, alpha)
            lm, _ = ann.loss_and_grad(ann.MLPParams.unflat(theta - e, 4, 5), X, y, alpha)
            num[i] = (lp - lm) / (2 * h)
        ana = g.flat()
        rel = np.linalg.norm(ana - num) / max(np.linalg.norm(ana) + np.linalg.norm(num), 1e-12)
        assert rel < 1e-4

    def test_fast_objective_agrees(self):
        rng = np.random.default_rng(0)
        X, y = rng.normal(size=(30, 3)), (rng.random(30) < 0.5).astype(float)
        p = ann.init_params(3, 4, rng)
        obj = ann._FlatObjective(X, y, 3, 4, 0.3)
        loss, g = obj(p.flat())
        ref_loss, ref_g = ann.loss_and_grad(p, X, y, 0.3)
        assert loss == pytest.approx(ref_loss, abs=1e-12)
        assert np.allclose(g, ref_g.flat(), atol=1e-12)

    def test_iteration_cap_warns(self):
        X, y = blobs(40, margin=0.3)
        with pytest.warns(ConvergenceWarning):
            m = fit("ANN", X, y, ann_max_iterations=3)
        assert not m.converged


def walk(tree_doc, x):
    """Follow a serialized tree by hand."""
    i = 0
    while tree_doc["feature"][i] != -1:
        f = tree_doc["feature"][i]
        i = tree_doc["left"][i] if x[f] <= tree_doc["threshold"][i] else tree_doc["right"][i]
    return tree_doc["value"][i]


class TestForest:
    @pytest.mark.parametrize("n_trees", [1, 3, 5])
    def test_average_of_tree_walks(self, n_trees):
        X, y = blobs(80, d=4, margin=0.4, seed=3)
        m = fit("RF", X, y, trees=n_trees, seed=9)
        docs = model_to_json(m)["params"]["trees"]
        want = [np.mean([walk(t, x) for t in docs]) for x in X[:25]]
        assert np.allclose(predict_posterior(m, X[:25]), want, atol=0)

    def test_tree_seeds_derived_per_tree(self):
        X, y = blobs(50, d=3, margin=0.4)
        full = forest.fit(X, y, n_trees=4, seed=2)
        one = forest.fit(X, y, seed=2, tree_seeds=[derive_seed(2, "tree", 3)])
        assert np.array_equal(full.trees[3].predict(X), one.trees[0].predict(X))

    def test_invariant_to_monotone_transform(self):
        # splits depend only on the order of values; without bootstrap every row is in-bag,
        # so no row can fall between a split midpoint and its transformed image
        X, y = blobs(80, d=3, margin=0.4, seed=4)
        a = predict_posterior(fit("RF", X, y, trees=10, bootstrap=False), X)
        b = predict_posterior(fit("RF", np.exp(X), y, trees=10, bootstrap=False), np.exp(X))
        assert np.array_equal(a, b)

    def test_pure_leaves_give_certainty(self):
        X, y = blobs(40, margin=3.0)
        m = fit("RF", X, y, trees=20)
        p = predict_posterior(m, X)
        assert set(np.round(p[y == 1], 12)) == {1.0} and set(np.round(p[y == 0], 12)) == {0.0}

    def test_max_features_default(self):
        X, y = blobs(30, d=17, margin=1.0)
        assert fit("RF", X, y, trees=2).meta["max_features"] == 4


class TestSVM:
    @pytest.mark.parametrize("kind", ["SVMLinear", "SVMRbf"])
    def test_calibration_monotone(self, kind):
        X, y = blobs(100, d=2, margin=0.5, seed=6)
        m = fit(kind, X, y)
        f = m.decision_values(X)
        p = predict_posterior(m, X)
        order = np.argsort(f)
        assert np.all(np.diff(p[order]) >= -1e-15)
        assert m.calibrator[0] <= 0

    def test_sigmoid_slope_clamped(self):
        # decision values anti-correlated with labels would need A > 0
        f = np.linspace(-2, 2, 40)
        y = (f < 0).astype(float)
        A, _ = svm.fit_sigmoid(f, y)
        assert A == 0.0

    def test_gamma_default(self):
        X, y = blobs(40, d=5, margin=1.0)
        assert fit("SVMRbf", X, y).meta["gamma"] == pytest.approx(0.2)

    def test_linear_matches_kkt(self):
        X, y = blobs(60, d=2, margin=0.5, seed=2)
        res = svm.smo(X, np.where(y == 1, 1.0, -1.0), C=1.0, kernel="linear")
        assert res.converged
        a = res.alpha
        assert np.all(a >= -1e-12) and np.all(a <= 1 + 1e-12)
        assert abs(np.dot(a, np.where(y == 1, 1.0, -1.0))) < 1e-9

    def test_iteration_cap_warns(self):
        X, y = blobs(60, margin=0.2)
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            m = fit("SVMLinear", X, y, svm_max_iterations=2)
        assert any(issubclass(x.category, ConvergenceWarning) for x in w) and not m.converged
