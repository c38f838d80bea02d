"""Posterior-probability classifiers: ANN, RF, linear SVM and RBF SVM.

``train`` fits one of the four kinds and returns an immutable
:class:`TrainedModel`; ``predict_posterior`` maps rows to P(overtake) in
[0, 1] and ``decide`` thresholds a score at 0.5 (strictly greater is class1).

ANN and SVM standardize continuous-derived columns with statistics of the
training rows, stored inside the model; RF consumes raw features.
"""

from __future__ import annotations

import enum
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..features import Standardizer, fit_standardizer
from . import ann, forest, svm

MODEL_FORMAT = "overtake-model"
MODEL_VERSION = 1
DECISION_THRESHOLD = 0.5


class ClassifierKind(enum.Enum):
    ANN = "ANN"
    RF = "RF"
    SVM_LINEAR = "SVMLinear"
    SVM_RBF = "SVMRbf"

    @classmethod
    def parse(cls, name) -> "ClassifierKind":
        if isinstance(name, cls):
            return name
        for k in cls:
            if name in (k.value, k.name):
                return k
        raise ValueError(f"unknown classifier {name!r}; valid: {', '.join(k.value for k in cls)}")


class TrainingError(ValueError):
    pass


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TrainConfig:
    kind: ClassifierKind = ClassifierKind.RF
    seed: int = 0
    hidden_layers: int = 1
    hidden_units: int = 10
    ann_max_iterations: int = 1_000_000
    ann_alpha: float = 1e-4
    ann_learning_rate: float = 0.01
    trees: int = 100
    bootstrap: bool = True
    max_features: int | None = None
    C: float = 1.0
    gamma: float | None = None  # None -> 1 / n_features
    svm_max_iterations: int | None = None  # None -> 1e6 linear, 1e8 rbf
    svm_tolerance: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "kind", ClassifierKind.parse(self.kind))
        if self.hidden_layers != 1:
            raise ValueError("only one hidden layer is supported")
        if self.hidden_units < 1 or self.ann_max_iterations < 1:
            raise ValueError("hidden_units and ann_max_iterations must be positive")
        if self.trees < 1:
            raise ValueError("trees must be >= 1")
        if not self.C > 0 or (self.gamma is not None and not self.gamma > 0):
            raise ValueError("C and gamma must be positive")
        if self.svm_max_iterations is not None and self.svm_max_iterations < 1:
            raise ValueError("svm_max_iterations must be positive")

    @property
    def standardize(self) -> bool:
        return self.kind is not ClassifierKind.RF

    @property
    def svm_iteration_cap(self) -> int:
        if self.svm_max_iterations is not None:
            return self.svm_max_iterations
        return 100_000_000 if self.kind is ClassifierKind.SVM_RBF else 1_000_000

    def to_json(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_json(cls, doc: dict) -> "TrainConfig":
        return cls(**doc)


@dataclass(frozen=True, eq=False)
class TrainedModel:
    kind: ClassifierKind
    config: TrainConfig
    n_features: int
    params: object  # ann.MLPParams | forest.Forest | svm.SVMModel
    standardizer: Standardizer | None = None
    calibrator: tuple[float, float] | None = None  # sigmoid (A, B) for SVMs
    meta: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return bool(self.meta.get("converged", True))

    def decision_values(self, X) -> np.ndarray:
        """Uncalibrated SVM decision values (standardized internally)."""
        if self.kind not in (ClassifierKind.SVM_LINEAR, ClassifierKind.SVM_RBF):
            raise TypeError("decision values exist only for SVM models")
        return self.params.decision(self._prepare(X))

    def _prepare(self, X) -> np.ndarray:
        X = np.asarray(getattr(X, "X", X), dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise TrainingError(f"expected {self.n_features} features, got {X.shape[-1] if X.ndim else 0}")
        return self.standardizer.apply(X) if self.standardizer is not None else X


def train(X, y, cfg: TrainConfig) -> TrainedModel:
    """Fit a classifier; deterministic given (X, y, cfg.seed)."""
    mask = getattr(X, "continuous", None)
    X = np.asarray(getattr(X, "X", X), dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) == 0:
        raise TrainingError("training matrix must be 2-D and nonempty")
    if len(y) != len(X):
        raise TrainingError(f"{len(X)} rows but {len(y)} labels")
    if not np.isin(y, (0, 1)).all():
        raise TrainingError("labels must be 0 or 1")
    if len(np.unique(y)) < 2:
        raise TrainingError("training set contains a single class")
    y = y.astype(float)
    kind = cfg.kind
    std = fit_standardizer(X, mask) if cfg.standardize else None
    Xs = std.apply(X) if std is not None else X
    meta = {"seed": cfg.seed, "n_train": int(len(X)), "converged": True}
    calibrator = None

    if kind is ClassifierKind.ANN:
        res = ann.fit(Xs, y, hidden_units=cfg.hidden_units, max_iterations=cfg.ann_max_iterations,
                      seed=cfg.seed, alpha=cfg.ann_alpha, learning_rate=cfg.ann_learning_rate)
        params = res.params
        meta.update(iterations=res.iterations, converged=res.converged, final_loss=res.loss,
                    activation="relu", optimizer="adam", output="logistic")
    elif kind is ClassifierKind.RF:
        params = forest.fit(Xs, y, n_trees=cfg.trees, max_features=cfg.max_features, seed=cfg.seed,
                            bootstrap=cfg.bootstrap)
        meta.update(impurity="gini", max_features=cfg.max_features or max(1, int(np.sqrt(X.shape[1]))))
    else:
        kernel = "linear" if kind is ClassifierKind.SVM_LINEAR else "rbf"
        gamma = cfg.gamma if cfg.gamma is not None else 1.0 / X.shape[1]
        params, res = svm.fit(Xs, y, kernel=kernel, C=cfg.C, gamma=gamma,
                              max_iterations=cfg.svm_iteration_cap, eps=cfg.svm_tolerance)
        calibrator = svm.fit_sigmoid(params.decision(Xs), y)
        meta.update(iterations=res.iterations, converged=res.converged, kernel=kernel, C=cfg.C, gamma=gamma,
                    n_support=int(len(params.coef)))
    if not meta["converged"]:
        warnings.warn(f"{kind.value} did not converge within its iteration cap", ConvergenceWarning, stacklevel=2)
    return TrainedModel(kind, cfg, X.shape[1], params, std, calibrator, meta)


def predict_posterior(model: TrainedModel, X) -> np.ndarray:
    Xs = model._prepare(X)
    if model.kind is ClassifierKind.ANN:
        p = ann.predict_proba(model.params, Xs)
    elif model.kind is ClassifierKind.RF:
        p = model.params.predict_proba(Xs)
    else:
        A, B = model.calibrator
        p = svm.sigmoid_predict(model.params.decision(Xs), A, B)
    return np.clip(p, 0.0, 1.0)


def decide(score, threshold: float = DECISION_THRESHOLD):
    """class1 iff score > threshold; a score exactly at the threshold is class0."""
    s = np.asarray(score, dtype=float)
    out = (s > threshold).astype(int)
    return int(out) if out.ndim == 0 else out


def model_to_json(model: TrainedModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": model.kind.value,
        "config": model.config.to_json(),
        "n_features": model.n_features,
        "params": model.params.to_json(),
        "standardizer": None if model.standardizer is None else model.standardizer.to_json(),
        "calibrator": None if model.calibrator is None else list(model.calibrator),
        "meta": model.meta,
    }


def model_from_json(doc: dict) -> TrainedModel:
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError("not a serialized overtake model")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')}")
    kind = ClassifierKind.parse(doc["kind"])
    loader = {ClassifierKind.ANN: ann.MLPParams.from_json, ClassifierKind.RF: forest.Forest.from_json}
    params = loader.get(kind, svm.SVMModel.from_json)(doc["params"])
    std = None if doc["standardizer"] is None else Standardizer.from_json(doc["standardizer"])
    cal = None if doc["calibrator"] is None else tuple(doc["calibrator"])
    return TrainedModel(kind, TrainConfig.from_json(doc["config"]), int(doc["n_features"]), params, std, cal,
                        dict(doc["meta"]))


def save_model(model: TrainedModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_json(model)) + "\n")


def load_model(path) -> TrainedModel:
    return model_from_json(json.loads(Path(path).read_text()))


__all__ = [
    "ClassifierKind", "TrainConfig", "TrainedModel", "TrainingError", "ConvergenceWarning",
    "train", "predict_posterior", "decide", "save_model", "load_model", "model_to_json",
    "model_from_json",
]
