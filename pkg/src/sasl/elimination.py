"""Backward elimination by nested F-tests, and tie-break seed tuning."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DesignMatrix, ObservationTable, chrono_split, expand_design, standardize
from .errors import DegenerateDf, SingleClassFold
from .linalg import drop_one_sse_increase, f_sf, fit_ols
from .metrics import ovr_macro_auc, roc_auc

# SSE_full at or below this fraction of y'y counts as an exact fit
_EXACT_FIT_RTOL = 1e-24


@dataclass(frozen=True)
class EliminationConfig:
    alpha: float = 0.05
    seed: int = 0
    protect_intercept: bool = True
    pvalue_tie_tolerance: float = 1e-12

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")


@dataclass(frozen=True)
class TraceStep:
    t: int
    column: str
    F: float
    pvalue: float
    remaining: int
    sse: float

    def to_dict(self) -> dict:
        return {"t": self.t, "column": self.column, "F": self.F, "pvalue": self.pvalue,
                "remaining": self.remaining, "sse": self.sse}


@dataclass
class EliminationTrace:
    steps: list[TraceStep] = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    @property
    def removed(self) -> list[str]:
        return [s.column for s in self.steps]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(s.to_dict()) + "\n" for s in self.steps)

    def write(self, path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def read(cls, path) -> "EliminationTrace":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([TraceStep(**json.loads(line)) for line in lines if line.strip()])


def _f_statistics(X, y, candidates, method):
    values = np.asarray(getattr(X, "values", X), dtype=float)
    p = values.shape[1]
    if method == "downdate":
        fit, increase = drop_one_sse_increase(values, y)
    elif method == "refit":
        fit = fit_ols(values, y)
        increase = np.zeros(p)
        for j in candidates:
            reduced = fit_ols(np.delete(values, j, axis=1), y)
            if reduced.rank < fit.rank:
                increase[j] = max(reduced.sse - fit.sse, 0.0)
    else:
        raise ValueError(f"unknown method {method!r}")
    if fit.df <= 0:
        raise DegenerateDf(f"{fit.n} observations leave no residual df at rank {fit.rank}")
    inc = increase[candidates]
    exact = _EXACT_FIT_RTOL * max(float(y @ y), np.finfo(float).tiny)
    if fit.sse <= exact:
        # residual is rounding noise: a deletion either breaks the fit or not
        F = np.where(inc > exact, np.inf, 0.0)
    else:
        F = inc / (fit.sse / fit.df)
    return fit, F, inc


def nested_f_pvalues(X, y, candidates=None, method="downdate"):
    """F statistic and p-value for deleting each candidate column.

    ``F_j = (SSE_-j - SSE) / (SSE / df)`` against F(1, df), with ``df`` the
    residual degrees of freedom of the current model. Columns inside the span
    of the others have F = 0 exactly. ``method="refit"`` refits every reduced
    model instead of using the closed-form downdate.

    Returns ``(F, pvalues)`` arrays aligned with ``candidates``.
    """
    y = np.asarray(y, dtype=float)
    p = np.asarray(getattr(X, "values", X)).shape[1]
    candidates = list(range(p)) if candidates is None else list(candidates)
    if not candidates:
        raise ValueError("no candidate columns")
    fit, F, _ = _f_statistics(X, y, candidates, method)
    return F, np.asarray(f_sf(F, 1.0, float(fit.df)), dtype=float).reshape(F.shape)


def _largest_pvalues(F, df, floor_of, batch=16):
    """p-values of the smallest-F candidates, in ascending F order, until
    they drop below ``floor_of(pmax)``. The upper tail falls with F, so
    every skipped candidate has a smaller p-value."""
    order = np.argsort(F, kind="stable")
    got_idx, got_p = [], []
    for start in range(0, order.size, batch):
        idx = order[start:start + batch]
        pv = np.asarray(f_sf(F[idx], 1.0, df), dtype=float).reshape(idx.shape)
        got_idx.append(idx)
        got_p.append(pv)
        pmax = max(float(a.max()) for a in got_p)
        if pv.min() < floor_of(pmax) * (1.0 - 1e-9):
            break
    return np.concatenate(got_idx), np.concatenate(got_p)


def backward_eliminate(X_full: DesignMatrix, y, cfg: EliminationConfig = EliminationConfig(),
                       method: str = "downdate"):
    """Drop the least significant column until every p-value is <= alpha.

    Ties within ``cfg.pvalue_tie_tolerance`` (relative) go to the column
    ranked first in a random priority order drawn once from ``cfg.seed``,
    so each tie is a uniform choice and the run is reproducible.

    The trace records, per deletion, the model SSE as the starting SSE plus
    every SSE increase used by the F-tests so far; it therefore never
    decreases and agrees with a refit up to rounding.

    Returns ``(reduced_design, trace)``.
    """
    y = np.asarray(y, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    priority = {name: rank for rank, name in
                enumerate(np.array(X_full.names, dtype=object)[rng.permutation(len(X_full.names))])}
    protected = X_full.protected if cfg.protect_intercept else frozenset()
    above_alpha = np.nextafter(cfg.alpha, 2.0)

    def floor_of(pmax):
        return max(pmax * (1.0 - cfg.pvalue_tie_tolerance), above_alpha)

    X = X_full
    trace = EliminationTrace()
    sse = None  # full-model SSE plus the increases of every deletion so far
    while X.shape[1] > 1:
        names = X.names
        cand = [j for j, nm in enumerate(names) if nm not in protected]
        if not cand:
            break
        fit, F, inc = _f_statistics(X, y, cand, method)
        sse = fit.sse if sse is None else sse
        idx, pv = _largest_pvalues(F, float(fit.df), floor_of)
        pmax = float(pv.max())
        if not pmax > cfg.alpha:
            break
        floor = floor_of(pmax)
        tied = [(int(k), float(q)) for k, q in zip(idx, pv) if q >= floor]
        k, q = min(tied, key=lambda kq: priority[names[cand[kq[0]]]])
        j = cand[k]
        X = X.drop(j)
        sse = sse + float(inc[k])
        trace.steps.append(TraceStep(len(trace.steps) + 1, names[j], float(F[k]), q,
                                     X.shape[1], sse))
    return X, trace


@dataclass(frozen=True)
class SeedScore:
    seed: int
    fold1_auc: float
    fold2_auc: float
    columns: tuple[str, ...] = ()

    @property
    def score(self) -> float:
        return (self.fold1_auc + self.fold2_auc) / 2.0

    def to_dict(self) -> dict:
        return {"seed": self.seed, "fold1_auc": self.fold1_auc, "fold2_auc": self.fold2_auc,
                "score": self.score, "columns": list(self.columns)}


def fold_auc(y_valid, z_valid, levels: int) -> float:
    if levels == 2:
        if np.unique(y_valid).size < 2:
            raise SingleClassFold("validation fold lacks one of the classes")
        return roc_auc(z_valid, y_valid)
    if np.unique(y_valid).size < 2:
        raise SingleClassFold("validation fold has a single class")
    return ovr_macro_auc(z_valid, y_valid, classes=range(levels))


@dataclass(frozen=True)
class FoldDesigns:
    """Full design for the whole training table plus per-fold designs, each
    standardized on its own training rows."""

    table: ObservationTable
    y: np.ndarray
    full: DesignMatrix
    folds: tuple
    fold_designs: tuple

    @classmethod
    def build(cls, table: ObservationTable, target: str, protect_intercept: bool = True):
        table = table.subset(table.labeled_rows(target))
        y = table.labels(target).astype(float)
        std, _ = standardize(table)
        full = expand_design(std, protect_intercept)
        folds = chrono_split(table)
        designs = []
        for fold in folds:
            fstd, _ = standardize(table, fold.train_rows)
            designs.append(expand_design(fstd, protect_intercept, subjects=table.subject_ids))
        return cls(table, y, full, folds, tuple(designs))

    def fold_scores(self, columns, fold_index: int):
        """Fit on the fold's training rows; return validation (labels, scores)."""
        fold = self.folds[fold_index]
        X = self.fold_designs[fold_index].select(columns).values
        fit = fit_ols(X[fold.train_rows], self.y[fold.train_rows])
        return self.y[fold.valid_rows], X[fold.valid_rows] @ fit.coefficients


def tune_seed(seeds, table: ObservationTable, target: str, alpha: float = 0.05,
              protect_intercept: bool = True, designs: FoldDesigns | None = None):
    """Pick the tie-break seed whose reduced design scores best out of fold.

    For every seed the elimination runs on the full training design; the
    reduced columns are then refit on each chronological fold and scored by
    validation ROC-AUC. Returns ``(best_seed, [SeedScore, ...])``; equal
    scores go to the smallest seed.
    """
    seeds = sorted(set(int(s) for s in seeds))
    if not seeds:
        raise ValueError("need at least one seed")
    designs = designs or FoldDesigns.build(table, target, protect_intercept)
    levels = designs.table.schema.levels(target)
    cache: dict[tuple, tuple[float, float]] = {}
    scores = []
    for s in seeds:
        cfg = EliminationConfig(alpha=alpha, seed=s, protect_intercept=protect_intercept)
        reduced, _ = backward_eliminate(designs.full, designs.y, cfg)
        cols = tuple(reduced.names)
        if cols not in cache:
            cache[cols] = tuple(fold_auc(*designs.fold_scores(cols, f), levels) for f in (0, 1))
        a1, a2 = cache[cols]
        scores.append(SeedScore(s, a1, a2, cols))
    best = max(scores, key=lambda sc: (sc.score, -sc.seed))
    return best.seed, scores
