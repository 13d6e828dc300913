"""Compact gradient-boosted trees with logistic loss, recursive feature
elimination, and stratified multi-seed CV ensembles."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ClassTooRare, DimensionMismatch, EmptyData, SingleClass
from .metrics import roc_auc
from .thresholds import binary_f1_curve, longest_run

PROBA_CLIP = 1e-7


@dataclass(frozen=True)
class GbdtConfig:
    n_trees_max: int = 500
    learning_rate: float = 0.1
    max_depth: int = 4
    min_leaf_count: int = 5
    early_stopping_rounds: int = 30
    feature_subsample_fraction: float = 1.0
    rng_seed: int = 0
    l2_reg: float = 1.0

    def __post_init__(self):
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0 < self.feature_subsample_fraction <= 1:
            raise ValueError("feature_subsample_fraction must lie in (0, 1]")
        if self.n_trees_max < 0 or self.min_leaf_count < 1:
            raise ValueError("n_trees_max must be >= 0 and min_leaf_count >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "GbdtConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# ---------------------------------------------------------------------------
# Regression trees
# ---------------------------------------------------------------------------

@dataclass
class Tree:
    """Flat binary tree; ``feature[i] < 0`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return self.value[node]
            go_left = X[rows[inner], f[inner]] <= self.threshold[node[inner]]
            node[inner] = np.where(go_left, self.left[node[inner]], self.right[node[inner]])

    def to_record(self, i: int = 0) -> dict:
        if self.feature[i] < 0:
            return {"leaf": float(self.value[i])}
        return {"feature": int(self.feature[i]), "threshold": float(self.threshold[i]),
                "left": self.to_record(int(self.left[i])),
                "right": self.to_record(int(self.right[i]))}

    @classmethod
    def from_record(cls, rec: dict) -> "Tree":
        feat, thr, left, right, val = [], [], [], [], []

        def visit(r):
            i = len(feat)
            feat.append(-1), thr.append(0.0), left.append(-1), right.append(-1), val.append(0.0)
            if "leaf" in r:
                val[i] = r["leaf"]
            else:
                feat[i], thr[i] = r["feature"], r["threshold"]
                left[i] = visit(r["left"])
                right[i] = visit(r["right"])
            return i

        visit(rec)
        return cls(np.array(feat), np.array(thr, dtype=float), np.array(left),
                   np.array(right), np.array(val, dtype=float))


def _best_split(X, g, h, rows, feats, lam, min_leaf):
    """Exact greedy split over ``feats``; returns (gain, feature, threshold)."""
    n = rows.size
    if n < 2 * min_leaf:
        return 0.0, -1, 0.0
    Xn = X[np.ix_(rows, feats)]
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    gs, hs = g[rows][order], h[rows][order]
    GL = np.cumsum(gs, axis=0)[:-1]
    HL = np.cumsum(hs, axis=0)[:-1]
    G, H = gs.sum(axis=0), hs.sum(axis=0)
    count = np.arange(1, n)[:, None]
    ok = (xs[1:] > xs[:-1]) & (count >= min_leaf) & (n - count >= min_leaf)
    if not ok.any():
        return 0.0, -1, 0.0
    gain = GL ** 2 / (HL + lam) + (G - GL) ** 2 / (H - HL + lam) - G ** 2 / (H + lam)
    gain = np.where(ok, gain, -np.inf)
    k, j = np.unravel_index(int(np.argmax(gain)), gain.shape)
    return float(gain[k, j]), int(feats[j]), float((xs[k, j] + xs[k + 1, j]) / 2.0)


def _grow_tree(X, g, h, feats, cfg: GbdtConfig, importances):
    feat, thr, left, right, val = [], [], [], [], []

    def node(rows, depth):
        i = len(feat)
        feat.append(-1), thr.append(0.0), left.append(-1), right.append(-1)
        val.append(-g[rows].sum() / (h[rows].sum() + cfg.l2_reg))
        if depth < cfg.max_depth:
            gain, f, t = _best_split(X, g, h, rows, feats, cfg.l2_reg, cfg.min_leaf_count)
            if f >= 0 and gain > 1e-12:
                importances[f] += gain
                feat[i], thr[i] = f, t
                mask = X[rows, f] <= t
                left[i] = node(rows[mask], depth + 1)
                right[i] = node(rows[~mask], depth + 1)
        return i

    node(np.arange(X.shape[0]), 0)
    return Tree(np.array(feat), np.array(thr, dtype=float), np.array(left),
                np.array(right), np.array(val, dtype=float))


# ---------------------------------------------------------------------------
# Boosting
# ---------------------------------------------------------------------------

def _sigmoid(m):
    return 0.5 * (1.0 + np.tanh(0.5 * m))


def log_loss_from_margin(margin, y) -> float:
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))


@dataclass
class GbdtModel:
    base_score: float
    learning_rate: float
    n_features: int
    trees: list[Tree] = field(default_factory=list)
    feature_importances: np.ndarray | None = None
    train_loss: list[float] = field(default_factory=list)
    valid_auc: list[float] = field(default_factory=list)

    def margin(self, X, n_trees=None) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionMismatch(f"model expects {self.n_features} features, got {X.shape}")
        out = np.full(X.shape[0], self.base_score)
        for tree in self.trees[:n_trees]:
            out += self.learning_rate * tree.predict(X)
        return out

    def to_dict(self) -> dict:
        return {"base_score": self.base_score, "learning_rate": self.learning_rate,
                "n_features": self.n_features,
                "feature_importances": [float(v) for v in self.feature_importances],
                "trees": [t.to_record() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "GbdtModel":
        return cls(d["base_score"], d["learning_rate"], d["n_features"],
                   [Tree.from_record(r) for r in d["trees"]],
                   np.array(d["feature_importances"], dtype=float))

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")


def predict_proba_gbdt(model: GbdtModel, X) -> np.ndarray:
    """Class-1 probability, clipped to [1e-7, 1 - 1e-7]."""
    return np.clip(_sigmoid(model.margin(X)), PROBA_CLIP, 1.0 - PROBA_CLIP)


def train_gbdt(X, y, valid=None, cfg: GbdtConfig = GbdtConfig()) -> GbdtModel:
    """Newton-boosted trees on logistic loss.

    With ``valid=(X_valid, y_valid)`` boosting stops once validation ROC-AUC
    has not improved for ``cfg.early_stopping_rounds`` rounds, and the model
    is cut back to its best round. Equal AUCs are ranked by validation
    log-loss, so a saturated AUC does not freeze the model at its first
    tree. A tree whose shrunken step would raise
    the training loss is halved until it does not, which keeps the
    training loss non-increasing.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[0] != y.size:
        raise EmptyData(f"bad training data shape {X.shape} / {y.shape}")
    if np.unique(y).size < 2:
        raise SingleClass("training labels contain a single class")
    n, d = X.shape
    rng = np.random.default_rng(cfg.rng_seed)
    prior = y.mean()
    model = GbdtModel(float(np.log(prior / (1.0 - prior))), cfg.learning_rate, d,
                      feature_importances=np.zeros(d))
    margin = np.full(n, model.base_score)
    loss = log_loss_from_margin(margin, y)
    model.train_loss.append(loss)
    if valid is not None:
        Xv = np.asarray(valid[0], dtype=float)
        yv = np.asarray(valid[1]).ravel()
        vmargin = np.full(Xv.shape[0], model.base_score)
        check_auc = np.unique(yv).size == 2
        best_key, best_n = (-np.inf, -np.inf), 0
    n_sub = max(1, int(round(cfg.feature_subsample_fraction * d)))
    for m in range(cfg.n_trees_max):
        p = _sigmoid(margin)
        g, h = p - y, p * (1.0 - p)
        feats = np.arange(d) if n_sub == d else np.sort(rng.choice(d, n_sub, replace=False))
        gains = np.zeros(d)
        tree = _grow_tree(X, g, h, feats, cfg, gains)
        step = tree.predict(X)
        for _ in range(30):
            new_loss = log_loss_from_margin(margin + cfg.learning_rate * step, y)
            if new_loss <= loss:
                break
            tree.value = tree.value * 0.5
            step = step * 0.5
        else:
            break
        if tree.feature[0] < 0 and abs(tree.value[0]) < 1e-15:
            break
        model.trees.append(tree)
        model.feature_importances += gains
        margin = margin + cfg.learning_rate * step
        loss = new_loss
        model.train_loss.append(loss)
        if valid is not None and check_auc:
            vmargin = vmargin + cfg.learning_rate * tree.predict(Xv)
            auc = roc_auc(vmargin, yv)
            model.valid_auc.append(auc)
            key = (auc, -log_loss_from_margin(vmargin, yv))
            if key > best_key:
                best_key, best_n = key, len(model.trees)
            elif len(model.trees) - best_n >= cfg.early_stopping_rounds:
                break
    if valid is not None and check_auc and model.trees:
        model.trees = model.trees[:best_n]
        model.train_loss = model.train_loss[:best_n + 1]
    return model


# ---------------------------------------------------------------------------
# Multiclass (one-vs-rest) and probability matrices
# ---------------------------------------------------------------------------

@dataclass
class OvrModel:
    classes: tuple[int, ...]
    models: list[GbdtModel]

    def to_dict(self) -> dict:
        return {"classes": list(self.classes), "models": [m.to_dict() for m in self.models]}


def train_classifier(X, y, valid=None, cfg: GbdtConfig = GbdtConfig(), classes=None):
    """Binary GBDT for two classes, one-vs-rest GBDTs otherwise."""
    y = np.asarray(y).ravel()
    classes = tuple(int(c) for c in (np.unique(y) if classes is None else classes))
    if classes == (0, 1):
        return train_gbdt(X, y, valid, cfg)
    models = []
    for c in classes:
        v = None if valid is None else (valid[0], (np.asarray(valid[1]) == c).astype(int))
        models.append(train_gbdt(X, (y == c).astype(int), v, cfg))
    return OvrModel(classes, models)


def class_probabilities(model, X) -> np.ndarray:
    """(n, K) probabilities; one-vs-rest margins are softmax-normalized."""
    if isinstance(model, GbdtModel):
        p = predict_proba_gbdt(model, X)
        return np.column_stack([1.0 - p, p])
    margins = np.column_stack([m.margin(X) for m in model.models])
    margins -= margins.max(axis=1, keepdims=True)
    e = np.exp(margins)
    return e / e.sum(axis=1, keepdims=True)


def confidence(proba: np.ndarray) -> np.ndarray:
    """Maximum class probability; for a class-1 vector, ``max(p, 1 - p)``."""
    proba = np.asarray(proba, dtype=float)
    if proba.ndim == 1:
        return np.maximum(proba, 1.0 - proba)
    return proba.max(axis=1)


# ---------------------------------------------------------------------------
# Recursive feature elimination
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RfeResult:
    selected: list[int]
    eliminated: list[int]


def rfe_select(X, y, target_count: int = 30, cfg: GbdtConfig = GbdtConfig(),
               step_fraction: float = 0.1) -> RfeResult:
    """Drop the lowest-gain features (max(1, 10% of those left) per round)
    until ``target_count`` remain. Gain ties drop the later column first."""
    X = np.asarray(X, dtype=float)
    d = X.shape[1]
    if not 0 < target_count <= d:
        raise ValueError(f"target_count must lie in 1..{d}")
    remaining = list(range(d))
    eliminated: list[int] = []
    while len(remaining) > target_count:
        model = train_gbdt(X[:, remaining], y, None, cfg)
        k = min(max(1, int(step_fraction * len(remaining))), len(remaining) - target_count)
        order = sorted(range(len(remaining)),
                       key=lambda i: (model.feature_importances[i], -remaining[i]))
        drop = {remaining[i] for i in order[:k]}
        eliminated += [remaining[i] for i in order[:k]]
        remaining = [f for f in remaining if f not in drop]
    return RfeResult(remaining, eliminated)


# ---------------------------------------------------------------------------
# Stratified CV ensembles
# ---------------------------------------------------------------------------

def stratified_folds(y, folds: int, seed: int) -> np.ndarray:
    """Fold index per row; each class is spread over folds within one row."""
    y = np.asarray(y).ravel()
    rng = np.random.default_rng(seed)
    out = np.empty(y.size, dtype=np.int64)
    offset = 0
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        out[idx] = (np.arange(idx.size) + offset) % folds
        offset += idx.size
    return out


def best_probability_threshold(p, y) -> float:
    """Macro-F1-optimal cut on class-1 probabilities (centre of the longest
    optimal run; the grid includes 0 and 1 so that predicting a single class
    stays possible)."""
    p = np.asarray(p, dtype=float)
    s = np.unique(p)
    cand = np.concatenate([[0.0], (s[:-1] + s[1:]) / 2.0, [1.0]])
    f1 = binary_f1_curve(p, np.asarray(y), cand)
    lo, hi = longest_run(f1 >= f1.max())
    return float((cand[lo] + cand[hi]) / 2.0)


@dataclass
class Ensemble:
    models: list
    fold_thresholds: list[float]
    classes: tuple[int, ...]

    @property
    def threshold(self) -> float | None:
        return float(np.mean(self.fold_thresholds)) if self.fold_thresholds else None

    def probabilities(self, X) -> np.ndarray:
        return np.mean([class_probabilities(m, X) for m in self.models], axis=0)

    def predict(self, X):
        """Returns (labels, class probabilities)."""
        proba = self.probabilities(X)
        if self.classes == (0, 1):
            return (proba[:, 1] > self.threshold).astype(np.int64), proba
        return np.asarray(self.classes)[proba.argmax(axis=1)], proba


def stratified_cv_ensemble(X, y, folds: int = 5, seeds=(0, 1, 2, 3),
                           cfg: GbdtConfig = GbdtConfig(), classes=None) -> Ensemble:
    """``folds x len(seeds)`` models, each early-stopped on its held-out fold.

    For binary targets every fold contributes its macro-F1-optimal
    probability threshold and the ensemble threshold is their mean.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).ravel()
    if folds < 2:
        raise ValueError("need at least two folds")
    cls, counts = np.unique(y, return_counts=True)
    classes = tuple(int(c) for c in (cls if classes is None else classes))
    if (counts < folds).any() or len(cls) < 2:
        raise ClassTooRare(f"every class needs at least {folds} rows, got {dict(zip(cls.tolist(), counts.tolist()))}")
    models, thresholds = [], []
    for seed in seeds:
        assign = stratified_folds(y, folds, seed)
        for f in range(folds):
            tr, va = assign != f, assign == f
            mcfg = replace(cfg, rng_seed=int(cfg.rng_seed) * 1_000_003 + int(seed) * 101 + f)
            model = train_classifier(X[tr], y[tr], (X[va], y[va]), mcfg, classes)
            models.append(model)
            if classes == (0, 1):
                thresholds.append(best_probability_threshold(predict_proba_gbdt(model, X[va]), y[va]))
    return Ensemble(models, thresholds, classes)
