"""Cross-validated evaluation: stratified folds, metrics, inner grid search, benchmark runs."""

from __future__ import annotations

import csv
import io
import json
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import rankdata
from sklearn.model_selection import StratifiedKFold, train_test_split

from .errors import LengthMismatch, SingleClass, TooFewInstances
from .model import NRelaggsConfig, build_model, forward, train
from .preprocess import (
    AggregationPlan,
    InstanceBundle,
    build_instances,
    class_labels,
    collate,
    fit_preprocessor,
    generate_aggregation_plan,
)
from .relaggs import relaggs_propositionalize
from .schema import RelationalDatabase

ENGINES = ("majority", "relaggs", "nrelaggs", "fix_nrelaggs")
FACTORS = (0.5, 0.75, 1.0)
PREDICTOR_SHAPES = ((50,), (100,), (100, 50))


# --------------------------------------------------------------------------- splits


@dataclass
class CVSplit:
    folds: dict[str, int]
    k: int
    repetition: int = 0
    seed: int = 0

    def test_keys(self, fold: int) -> list[str]:
        return [key for key, f in self.folds.items() if f == fold]

    def train_keys(self, fold: int) -> list[str]:
        return [key for key, f in self.folds.items() if f != fold]


def stratified_kfold(keys: Sequence, labels: Sequence, k: int, seed: int = 0, repetition: int = 0) -> CVSplit:
    keys = [str(key) for key in keys]
    labels = list(labels)
    if len(keys) != len(labels):
        raise LengthMismatch(f"{len(keys)} keys but {len(labels)} labels")
    if k < 2:
        raise TooFewInstances(f"k={k}: at least two folds are needed")
    smallest = min(np.unique(labels, return_counts=True)[1]) if labels else 0
    if smallest < k:
        if smallest < 2:
            raise TooFewInstances(f"a class has {smallest} member(s); cannot build {k} stratified folds")
        warnings.warn(f"reducing k from {k} to {smallest}: smallest class has {smallest} members", stacklevel=2)
        k = int(smallest)
    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    folds = {}
    for fold, (_, test) in enumerate(splitter.split(np.zeros(len(keys)), labels)):
        for i in test:
            folds[keys[i]] = fold
    return CVSplit({key: folds[key] for key in keys}, k, repetition, seed)


# --------------------------------------------------------------------------- metrics


def accuracy(predicted: Sequence, truth: Sequence) -> float:
    predicted, truth = np.asarray(predicted), np.asarray(truth)
    if predicted.shape != truth.shape:
        raise LengthMismatch(f"{predicted.shape} predictions vs {truth.shape} labels")
    if predicted.size == 0:
        return float("nan")
    return float(np.mean(predicted == truth))


def auroc(scores: Sequence, labels: Sequence) -> float:
    """Mann-Whitney AUROC: P(random positive outscores random negative), ties count 1/2.

    The larger of the two label values is the positive class.
    """
    scores, labels = np.asarray(scores, dtype=np.float64), np.asarray(labels)
    if scores.shape != labels.shape:
        raise LengthMismatch(f"{scores.shape} scores vs {labels.shape} labels")
    classes = np.unique(labels)
    if len(classes) != 2:
        raise SingleClass(f"AUROC needs two classes, got {classes.tolist()}")
    positive = labels == classes[1]
    n_pos, n_neg = int(positive.sum()), int((~positive).sum())
    ranks = rankdata(scores)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


# --------------------------------------------------------------------------- engines


def default_grid(engine: str) -> list[NRelaggsConfig | None]:
    if engine == "majority":
        return [None]
    if engine == "nrelaggs":
        return [
            NRelaggsConfig(generation_factor=g, selection_factor=s, predictor_layers=p)
            for g in FACTORS
            for s in FACTORS
            for p in PREDICTOR_SHAPES
        ]
    if engine in ("fix_nrelaggs", "relaggs"):
        return [NRelaggsConfig(predictor_layers=p) for p in PREDICTOR_SHAPES]
    raise ValueError(f"unknown engine {engine!r}; expected one of {ENGINES}")


PROPOSITIONAL_PLAN = AggregationPlan((), ("propositional",), True)


@dataclass
class FoldTask:
    """Instances of one outer fold, encoded with statistics of that fold's training keys."""

    engine: str
    plan: AggregationPlan
    instances: dict[str, InstanceBundle]

    def labels(self, keys) -> np.ndarray:
        return np.array([self.instances[k].y for k in keys])

    def batch(self, keys):
        return collate([self.instances[k] for k in keys])


def prepare_task(db: RelationalDatabase, engine: str, train_keys, keys=None) -> FoldTask:
    """Fit preprocessing on `train_keys` and build instances for `keys` (default: all)."""
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}; expected one of {ENGINES}")
    keys = list(db.instance_keys() if keys is None else keys)
    plan = generate_aggregation_plan(db)
    state = fit_preprocessor(db, train_keys)
    instances = build_instances(db, state, plan, keys)
    if engine != "relaggs":
        return FoldTask(engine, plan, dict(zip(keys, instances)))
    matrix = relaggs_propositionalize(collate(instances), plan)
    train_set = set(map(str, train_keys))
    rows = np.array([inst.key in train_set for inst in instances])
    mean = matrix[rows].mean(axis=0)
    std = matrix[rows].std(axis=0)
    std[std == 0] = 1
    matrix = ((matrix - mean) / std).astype(np.float32)
    flat = {
        inst.key: InstanceBundle(inst.key, [matrix[i : i + 1]], [np.zeros(0, dtype=np.int64)], inst.y, (-1,))
        for i, inst in enumerate(instances)
    }
    return FoldTask(engine, PROPOSITIONAL_PLAN, flat)


def _validation_split(keys, labels, fraction: float, seed: int):
    n = len(keys)
    n_val = max(2, int(round(fraction * n)))
    _, counts = np.unique(labels, return_counts=True)
    if fraction <= 0 or len(counts) < 2 or counts.min() < 2 or n - n_val < 2:
        return list(keys), []
    fit, val = train_test_split(list(keys), test_size=n_val, stratify=labels, random_state=seed)
    return fit, val


def fit_and_score(task: FoldTask, config: NRelaggsConfig | None, train_keys, test_keys, seed: int) -> np.ndarray:
    """Train on `train_keys` and return raw scores for `test_keys`."""
    y = task.labels(train_keys)
    if task.engine == "majority":
        majority = 1 if (y == 1).sum() >= (y == -1).sum() else -1
        return np.full(len(test_keys), float(majority))
    config = replace(config, seed=seed)
    if task.engine == "fix_nrelaggs":
        config = replace(config, generation_factor=1.0, selection_factor=1.0)
    fit_keys, val_keys = _validation_split(train_keys, y, config.validation_fraction, seed)
    widths = task.instances[train_keys[0]].x_data
    model = build_model([x.shape[1] for x in widths], task.plan, config)
    train(model, [task.instances[k] for k in fit_keys], [task.instances[k] for k in val_keys], config)
    return forward(model, task.batch(test_keys)).astype(np.float64)


def _safe_auroc(scores, labels) -> float:
    try:
        return auroc(scores, labels)
    except SingleClass:
        return float("nan")


def inner_search(task: FoldTask, grid, train_keys, seed: int, inner_folds: int = 3):
    """Mean inner-CV AUROC per config; returns (best index, means)."""
    if len(grid) == 1:
        return 0, [float("nan")]
    labels = task.labels(train_keys)
    split = stratified_kfold(train_keys, labels, inner_folds, seed)
    means = []
    for i, config in enumerate(grid):
        fold_scores = []
        for fold in range(split.k):
            tr, te = split.train_keys(fold), split.test_keys(fold)
            scores = fit_and_score(task, config, tr, te, seed + 7919 * (i + 1) + fold)
            fold_scores.append(_safe_auroc(scores, task.labels(te)))
        means.append(float(np.nanmean(fold_scores)) if not np.all(np.isnan(fold_scores)) else float("nan"))
    ranked = [-np.inf if np.isnan(m) else m for m in means]
    return int(np.argmax(ranked)), means


def grid_search(db: RelationalDatabase, config_grid, train_keys, seed: int = 0, engine: str = "nrelaggs", inner_folds: int = 3):
    """Best config by mean AUROC over a stratified inner CV of `train_keys` (ties: first in grid order)."""
    config_grid = list(config_grid)
    train_keys = [str(k) for k in train_keys]
    task = prepare_task(db, engine, train_keys, train_keys)
    best, _ = inner_search(task, config_grid, train_keys, seed, inner_folds)
    return config_grid[best]


# --------------------------------------------------------------------------- benchmark


@dataclass
class Protocol:
    folds: int = 10
    repeats: int = 2
    inner_folds: int = 3
    seed: int = 0
    jobs: int = 1
    config: NRelaggsConfig | None = None  # fixed config, bypasses grid search
    epochs: int | None = None

    def to_dict(self) -> dict:
        return {
            "folds": self.folds,
            "repeats": self.repeats,
            "inner_folds": self.inner_folds,
            "seed": self.seed,
            "config": self.config.to_dict() if self.config else None,
            "epochs": self.epochs,
        }


@dataclass
class EvalReport:
    engine: str
    dataset: str
    protocol: dict
    folds: list[dict] = field(default_factory=list)
    wall_clock_seconds: float = 0.0
    metadata: dict = field(default_factory=dict)

    def _metric(self, name: str) -> np.ndarray:
        values = np.array([f[name] for f in self.folds if f[name] is not None], dtype=float)
        return values[~np.isnan(values)]

    @property
    def accuracy_mean(self) -> float:
        return float(self._metric("accuracy").mean())

    @property
    def accuracy_std(self) -> float:
        return float(self._metric("accuracy").std())

    @property
    def auroc_mean(self) -> float:
        return float(self._metric("auroc").mean())

    @property
    def auroc_std(self) -> float:
        return float(self._metric("auroc").std())

    def to_dict(self) -> dict:
        return {
            "engine": self.engine,
            "dataset": self.dataset,
            "protocol": self.protocol,
            "accuracy_mean": self.accuracy_mean,
            "accuracy_std": self.accuracy_std,
            "auroc_mean": self.auroc_mean,
            "auroc_std": self.auroc_std,
            "folds": self.folds,
            "wall_clock_seconds": self.wall_clock_seconds,
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    SUMMARY_HEADER = ["engine", "dataset", "folds", "repeats", "accuracy_mean", "accuracy_std", "auroc_mean", "auroc_std"]

    def summary_row(self) -> list:
        return [
            self.engine,
            self.dataset,
            self.protocol["folds"],
            self.protocol["repeats"],
            f"{self.accuracy_mean:.4f}",
            f"{self.accuracy_std:.4f}",
            f"{self.auroc_mean:.4f}",
            f"{self.auroc_std:.4f}",
        ]

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.SUMMARY_HEADER)
        w.writerow(self.summary_row())
        return buf.getvalue()


def _fold_seed(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0] % (2**31))


def _run_fold(db, engine, grid, split: CVSplit, fold: int, protocol: Protocol, epochs) -> dict:
    train_keys, test_keys = split.train_keys(fold), split.test_keys(fold)
    seed = _fold_seed(protocol.seed, split.repetition, fold)
    task = prepare_task(db, engine, train_keys)
    if epochs is not None:
        grid = [replace(c, epochs=epochs) if c is not None else None for c in grid]
    best, inner = inner_search(task, grid, train_keys, seed, protocol.inner_folds)
    config = grid[best]
    scores = fit_and_score(task, config, train_keys, test_keys, seed)
    truth = task.labels(test_keys)
    predicted = np.where(scores >= 0, 1, -1)
    auc = _safe_auroc(scores, truth)
    return {
        "repeat": split.repetition,
        "fold": fold,
        "n_train": len(train_keys),
        "n_test": len(test_keys),
        "accuracy": accuracy(predicted, truth),
        "auroc": None if np.isnan(auc) else auc,
        "config": config.to_dict() if config is not None else None,
        "inner_auroc": [None if np.isnan(m) else m for m in inner],
        "seed": seed,
    }


def run_benchmark(db: RelationalDatabase, engine: str, protocol: Protocol | None = None, dataset: str = "") -> EvalReport:
    """Repeated stratified k-fold evaluation with inner grid search per outer fold."""
    protocol = protocol or Protocol()
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}; expected one of {ENGINES}")
    grid = [protocol.config] if protocol.config is not None and engine != "majority" else default_grid(engine)
    keys = db.instance_keys()
    labels = db.labels()
    class_labels(db)
    start = time.perf_counter()
    splits = [stratified_kfold(keys, labels, protocol.folds, protocol.seed + r, repetition=r) for r in range(protocol.repeats)]
    jobs = [(split, fold) for split in splits for fold in range(split.k)]
    if protocol.jobs == 1:
        folds = [_run_fold(db, engine, grid, s, f, protocol, protocol.epochs) for s, f in jobs]
    else:
        folds = Parallel(n_jobs=protocol.jobs)(
            delayed(_run_fold)(db, engine, grid, s, f, protocol, protocol.epochs) for s, f in jobs
        )
    return EvalReport(
        engine=engine,
        dataset=dataset,
        protocol=protocol.to_dict(),
        folds=folds,
        wall_clock_seconds=time.perf_counter() - start,
        metadata={
            "grid_size": len(grid),
            "final_model": "retrained on the full outer training set with the selected config",
            "preprocessing": "fitted on the outer training set of each fold",
        },
    )


def majority_accuracy(db: RelationalDatabase) -> float:
    """Accuracy of always predicting the most frequent class, on the full target table."""
    labels = db.labels()
    values, counts = np.unique(labels, return_counts=True)
    return float(counts.max() / counts.sum())
