"""Detection metrics, baseline detectors and the user-split comparison run."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from frba.autoencoder import ModelWeights, reconstruction_error, stack_vectors, train_local
from frba.federation import (
    SimulationConfig,
    SimulationReport,
    as_user_streams,
    derive_seed,
    featurize_users,
    run_simulation,
)
from frba.thresholds import MIN_SAMPLES, RiskThresholds, classify_risk_level, compute_thresholds

MODELS = ("frba", "frba_lower", "isolation_forest", "dbscan")
BASELINES = ("isolation_forest", "dbscan")
NOISE = -1


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionCounts":
        t = np.asarray(y_true, dtype=bool)
        p = np.asarray(y_pred, dtype=bool)
        return cls(
            tp=int(np.sum(t & p)),
            fp=int(np.sum(~t & p)),
            tn=int(np.sum(~t & ~p)),
            fn=int(np.sum(t & ~p)),
        )

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn
        )


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float

    def as_dict(self) -> dict[str, float]:
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall, "f1": self.f1}


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def metrics(counts: ConfusionCounts) -> Metrics:
    total = counts.tp + counts.fp + counts.tn + counts.fn
    if total < 1:
        raise ValueError("metrics of empty confusion counts")
    precision = _ratio(counts.tp, counts.tp + counts.fp)
    recall = _ratio(counts.tp, counts.tp + counts.fn)
    return Metrics(
        accuracy=(counts.tp + counts.tn) / total,
        precision=precision,
        recall=recall,
        f1=_ratio(2 * precision * recall, precision + recall),
    )


def macro_average(items: Sequence[Metrics]) -> Metrics:
    return Metrics(*(float(np.mean([getattr(m, k) for m in items])) for k in ("accuracy", "precision", "recall", "f1")))


# -- isolation forest ------------------------------------------------------------

EULER_GAMMA = 0.5772156649015329


def average_path_length(n: int) -> float:
    """c(n): mean unsuccessful-search path length in a BST of n keys."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * (math.log(n - 1) + EULER_GAMMA) - 2.0 * (n - 1) / n


@dataclass
class ITreeNode:
    size: int
    feature: int = -1
    split: float = 0.0
    left: "ITreeNode | None" = None
    right: "ITreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


def _grow(X: np.ndarray, depth: int, limit: int, rng: np.random.Generator) -> ITreeNode:
    n = X.shape[0]
    if n <= 1 or depth >= limit:
        return ITreeNode(n)
    lo, hi = X.min(axis=0), X.max(axis=0)
    varying = np.flatnonzero(hi > lo)
    if varying.size == 0:
        return ITreeNode(n)
    q = int(varying[rng.integers(varying.size)])
    p = float(rng.uniform(lo[q], hi[q]))
    go_left = X[:, q] < p
    return ITreeNode(
        n,
        q,
        p,
        _grow(X[go_left], depth + 1, limit, rng),
        _grow(X[~go_left], depth + 1, limit, rng),
    )


def path_length(node: ITreeNode, x: np.ndarray) -> float:
    depth = 0
    while not node.is_leaf:
        node = node.left if x[node.feature] < node.split else node.right
        depth += 1
    return depth + average_path_length(node.size)


class IsolationForest:
    """Axis-aligned random isolation trees; higher score = more anomalous."""

    def __init__(self, n_trees: int = 100, subsample: int = 256, seed: int = 0):
        if n_trees < 1 or subsample < 1:
            raise ValueError("n_trees and subsample must be >= 1")
        self.n_trees = n_trees
        self.subsample = subsample
        self.seed = seed
        self.trees: list[ITreeNode] = []

    def fit(self, data) -> "IsolationForest":
        X = stack_vectors(data)
        n = X.shape[0]
        if n < self.subsample:
            raise ValueError(f"need at least subsample={self.subsample} points, got {n}")
        rng = np.random.default_rng(self.seed)
        limit = max(1, math.ceil(math.log2(self.subsample))) if self.subsample > 1 else 0
        self.trees = []
        for _ in range(self.n_trees):
            idx = rng.choice(n, size=self.subsample, replace=False)
            self.trees.append(_grow(X[idx], 0, limit, rng))
        return self

    def mean_path_lengths(self, data) -> np.ndarray:
        X = stack_vectors(data)
        return np.array([np.mean([path_length(t, x) for t in self.trees]) for x in X])

    def score(self, data) -> np.ndarray:
        if not self.trees:
            raise RuntimeError("fit the forest before scoring")
        c = average_path_length(self.subsample)
        h = self.mean_path_lengths(data)
        if c == 0.0:
            return np.full(h.shape, 0.5)
        return 2.0 ** (-h / c)


def isolation_forest_scores(data, n_trees: int = 100, subsample: int = 256, seed: int = 0, score_data=None):
    forest = IsolationForest(n_trees, subsample, seed).fit(data)
    return forest.score(data if score_data is None else score_data)


# -- DBSCAN ------------------------------------------------------------------------


def _pairwise_sq(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def dbscan(data, eps: float, min_pts: int) -> np.ndarray:
    """Density clustering; returns cluster ids 0.. or NOISE (-1).

    A point is core when at least ``min_pts`` points (itself included) lie
    within distance ``eps``. Clusters are grown from cores in index order.
    """
    if eps <= 0 or min_pts < 1:
        raise ValueError("eps must be > 0 and min_pts >= 1")
    X = stack_vectors(data)
    n = X.shape[0]
    close = _pairwise_sq(X, X) <= eps * eps
    neighbors = [np.flatnonzero(row) for row in close]
    core = np.array([nb.size >= min_pts for nb in neighbors])
    labels = np.full(n, NOISE, dtype=int)
    cluster = 0
    for i in range(n):
        if labels[i] != NOISE or not core[i]:
            continue
        labels[i] = cluster
        frontier = [i]
        while frontier:
            j = frontier.pop()
            if not core[j]:
                continue
            for k in neighbors[j]:
                if labels[k] == NOISE:
                    labels[k] = cluster
                    frontier.append(k)
        cluster += 1
    return labels


def dbscan_outliers(train, test, eps: float, min_pts: int) -> np.ndarray:
    """True for test points not within ``eps`` of any core point of ``train``."""
    if eps <= 0 or min_pts < 1:
        raise ValueError("eps must be > 0 and min_pts >= 1")
    A = stack_vectors(train)
    B = stack_vectors(test)
    core = (_pairwise_sq(A, A) <= eps * eps).sum(axis=1) >= min_pts
    if not core.any():
        return np.ones(B.shape[0], dtype=bool)
    near = _pairwise_sq(B, A[core]) <= eps * eps
    return ~near.any(axis=1)


# -- experiment ----------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    test_fraction: float = 0.2
    calibration_fraction: float = 0.5
    local_finetune: bool = True
    # "frba" alarms at this risk level or above; "frba_lower" always at 1
    alarm_level: int = 2
    if_trees: int = 100
    if_subsample: int = 256
    if_threshold: float = 0.6
    dbscan_eps: float = 1.0
    dbscan_min_pts: int = 5

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0 or not 0.0 < self.calibration_fraction < 1.0:
            raise ValueError("test_fraction and calibration_fraction must lie in (0, 1)")
        if self.alarm_level not in (1, 2):
            raise ValueError("alarm_level must be 1 or 2")


@dataclass
class ModelResult:
    name: str
    macro: Metrics
    pooled: Metrics
    per_user: dict[str, Metrics]


@dataclass
class ExperimentReport:
    train_users: list[str]
    test_users: list[str]
    results: list[ModelResult]
    simulation: SimulationReport | None = field(default=None, repr=False)
    notes: list[str] = field(default_factory=list)

    def result(self, name: str) -> ModelResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_records(self) -> list[dict]:
        out = []
        for r in self.results:
            out.append({"model": r.name, "scope": "macro", **r.macro.as_dict()})
            out.append({"model": r.name, "scope": "pooled", **r.pooled.as_dict()})
            for uid, m in sorted(r.per_user.items()):
                out.append({"model": r.name, "scope": "user", "user_id": uid, **m.as_dict()})
        return out

    def to_jsonl(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.to_records())

    def to_text(self) -> str:
        lines = [
            f"train users: {len(self.train_users)}  test users: {len(self.test_users)}",
            "",
            f"{'model':<18}{'accuracy':>10}{'precision':>11}{'recall':>9}{'f1':>9}",
        ]
        for r in self.results:
            m = r.macro
            lines.append(f"{r.name:<18}{m.accuracy:>10.4f}{m.precision:>11.4f}{m.recall:>9.4f}{m.f1:>9.4f}")
        lines += ["", "macro-averaged over test users"]
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines) + "\n"


def split_users(user_ids: Sequence[str], test_fraction: float, seed: int) -> tuple[list[str], list[str]]:
    ids = sorted(user_ids)
    perm = np.random.default_rng(seed).permutation(len(ids))
    n_test = max(1, int(round(test_fraction * len(ids))))
    test = sorted(ids[i] for i in perm[:n_test])
    train = sorted(ids[i] for i in perm[n_test:])
    return train, test


def personalize(
    global_w: ModelWeights,
    calib,
    sim_cfg: SimulationConfig,
    seed: int,
    fallback: RiskThresholds | None = None,
    finetune: bool = True,
) -> tuple[ModelWeights, RiskThresholds]:
    """A client's local model and thresholds from its own successful logins.

    Fine-tunes from the global model (proximal term included), then fits
    thresholds on the local errors; with too few samples the global
    ``fallback`` thresholds are used.
    """
    calib = stack_vectors(calib) if len(calib) else np.zeros((0, global_w.n_inputs))
    w = global_w
    if finetune and calib.shape[0]:
        tcfg = replace(sim_cfg.train, rng_seed=seed)
        w, _ = train_local(global_w, calib, tcfg, global_weights=global_w)
    if calib.shape[0] >= MIN_SAMPLES:
        return w, compute_thresholds(reconstruction_error(w, calib), sim_cfg.mad_factor)
    if fallback is None:
        raise ValueError("no personal or global thresholds available")
    return w, fallback


def frba_risk_levels(
    global_w: ModelWeights,
    calib: np.ndarray,
    evalX: np.ndarray,
    cfg: ExperimentConfig,
    seed: int,
    fallback: RiskThresholds | None,
) -> np.ndarray:
    """Client workflow for one test user: fine-tune, fit thresholds, classify."""
    w, thresholds = personalize(global_w, calib, cfg.simulation, seed, fallback, cfg.local_finetune)
    return np.array([classify_risk_level(float(e), thresholds) for e in reconstruction_error(w, evalX)])


def run_experiment(
    dataset,
    models: Sequence[str] = MODELS,
    split_seed: int = 0,
    cfg: ExperimentConfig | None = None,
) -> ExperimentReport:
    """Train F-RBA federatedly on 80% of users; compare on the held-out 20%.

    Each test user's records are split in time: the first part calibrates
    (local fine-tune and thresholds for F-RBA, fitting for the baselines),
    the rest is scored against the ground-truth anomaly flag.
    """
    cfg = cfg or ExperimentConfig()
    unknown = set(models) - set(MODELS)
    if unknown:
        raise ValueError(f"unknown models: {sorted(unknown)}")
    streams = as_user_streams(dataset)
    if len(streams) < 5:
        raise ValueError(f"run_experiment needs at least 5 users, got {len(streams)}")
    train_ids, test_ids = split_users(list(streams), cfg.test_fraction, split_seed)
    assert not set(train_ids) & set(test_ids)

    sim = None
    if {"frba", "frba_lower"} & set(models):
        sim = run_simulation({u: streams[u] for u in train_ids}, cfg.simulation)
    featurized = featurize_users({u: streams[u] for u in test_ids}, cfg.simulation.workers, **cfg.simulation.profile)

    per_model: dict[str, dict[str, ConfusionCounts]] = {m: {} for m in models}
    for uid in test_ids:
        pairs = featurized[uid]
        cut = int(len(pairs) * cfg.calibration_fraction)
        calib = np.vstack([v.values for r, v in pairs[:cut] if r.success])
        evalX = np.vstack([v.values for _, v in pairs[cut:]])
        y = np.array([r.is_anomaly for r, _ in pairs[cut:]])
        uidx = test_ids.index(uid)
        levels = None
        for name in dict.fromkeys(models):
            if name in ("frba", "frba_lower"):
                if levels is None:
                    levels = frba_risk_levels(
                        sim.global_weights,
                        calib,
                        evalX,
                        cfg,
                        derive_seed(split_seed, 0xF0, uidx),
                        sim.global_thresholds,
                    )
                pred = levels >= (cfg.alarm_level if name == "frba" else 1)
            elif name == "isolation_forest":
                forest = IsolationForest(cfg.if_trees, min(cfg.if_subsample, calib.shape[0]), derive_seed(split_seed, 0x1F, uidx))
                pred = forest.fit(calib).score(evalX) > cfg.if_threshold
            else:
                pred = dbscan_outliers(calib, evalX, cfg.dbscan_eps, cfg.dbscan_min_pts)
            per_model[name][uid] = ConfusionCounts.from_predictions(y, pred)

    results = []
    for name in models:
        counts = per_model[name]
        per_user = {u: metrics(c) for u, c in counts.items()}
        pooled = sum(counts.values(), ConfusionCounts())
        results.append(ModelResult(name, macro_average(list(per_user.values())), metrics(pooled), per_user))
    return ExperimentReport(
        train_users=train_ids,
        test_users=test_ids,
        results=results,
        simulation=sim,
        notes=["one-class SVM baseline not implemented"],
    )
