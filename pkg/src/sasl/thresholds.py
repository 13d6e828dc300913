"""Regression-then-thresholding: latent scores, plateau threshold search, and
discretization."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ColumnMismatch, DegenerateScores, SingleClassFold
from .linalg import OlsFit

# Operating points reported for the lifelog targets; usable as overrides.
PUBLISHED_THRESHOLDS = {
    "Q1": (0.424,),
    "Q2": (0.578,),
    "Q3": (0.603,),
    "S3": (0.650,),
    "S1": (0.900, 1.125),
}


@dataclass(frozen=True)
class LatentScores:
    row_keys: tuple
    z: np.ndarray

    def __post_init__(self):
        if len(self.row_keys) != len(self.z):
            raise ValueError("scores and row keys differ in length")


def predict_scores(beta, X, columns=None) -> LatentScores:
    """``z = X b``. ``columns`` (the names ``beta`` was fit on) are checked
    against ``X`` when both are known."""
    coef = beta.coefficients if isinstance(beta, OlsFit) else np.asarray(beta, dtype=float)
    values = np.asarray(getattr(X, "values", X), dtype=float)
    if values.shape[1] != coef.shape[0]:
        raise ColumnMismatch(f"design has {values.shape[1]} columns, model {coef.shape[0]}")
    if columns is not None and hasattr(X, "names") and list(X.names) != list(columns):
        raise ColumnMismatch("design columns differ from the fitted column set")
    keys = tuple(getattr(X, "row_keys", range(values.shape[0])))
    return LatentScores(keys, values @ coef)


@dataclass(frozen=True)
class ThresholdSet:
    target: str
    kind: str
    taus: tuple[float, ...]
    plateau: tuple[tuple[float, float], ...]
    fold_f1: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in ("binary", "ternary"):
            raise ValueError(f"unknown threshold kind {self.kind!r}")
        if len(self.taus) != (1 if self.kind == "binary" else 2):
            raise ValueError(f"{self.kind} thresholds need {1 if self.kind == 'binary' else 2} cut points")
        if self.kind == "ternary" and not self.taus[0] < self.taus[1]:
            raise ValueError("ternary thresholds must satisfy tau1 < tau2")
        for tau, (lo, hi) in zip(self.taus, self.plateau):
            if not lo <= tau <= hi:
                raise ValueError("chosen threshold lies outside its plateau")

    @classmethod
    def fixed(cls, target: str, taus) -> "ThresholdSet":
        taus = tuple(float(t) for t in taus)
        kind = "binary" if len(taus) == 1 else "ternary"
        return cls(target, kind, taus, tuple((t, t) for t in taus))

    @property
    def tau(self) -> float:
        return self.taus[0]

    def to_dict(self) -> dict:
        d = {"target": self.target, "kind": self.kind}
        if self.kind == "binary":
            d["tau"] = self.taus[0]
        else:
            d["tau1"], d["tau2"] = self.taus
        d["plateau"] = [list(p) for p in self.plateau]
        d["fold_f1"] = None if self.fold_f1 is None else list(self.fold_f1)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdSet":
        taus = (d["tau"],) if d["kind"] == "binary" else (d["tau1"], d["tau2"])
        f1 = d.get("fold_f1")
        return cls(d["target"], d["kind"], tuple(taus), tuple(tuple(p) for p in d["plateau"]),
                   None if f1 is None else tuple(f1))

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path) -> "ThresholdSet":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def discretize(z, thr: ThresholdSet) -> np.ndarray:
    """Count of cut points strictly below each score."""
    z = np.asarray(getattr(z, "z", z), dtype=float)
    out = np.zeros(z.shape, dtype=np.int64)
    for tau in thr.taus:
        out += z > tau
    return out


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------

def candidate_grid(*score_sets, grid_resolution=None) -> np.ndarray:
    """Midpoints between consecutive distinct scores, optionally thinned to
    ``grid_resolution`` rank-evenly spaced points."""
    s = np.unique(np.concatenate([np.asarray(z, dtype=float).ravel() for z in score_sets]))
    if s.size < 2:
        raise DegenerateScores("need at least two distinct scores to place a threshold")
    cand = (s[:-1] + s[1:]) / 2.0
    if grid_resolution is not None and cand.size > grid_resolution:
        idx = np.unique(np.round(np.linspace(0, cand.size - 1, int(grid_resolution))).astype(int))
        cand = cand[idx]
    return cand


def _counts_at_or_below(z, y, classes, cand):
    """Per-class count of scores <= each candidate."""
    return [np.searchsorted(np.sort(z[y == c]), cand, side="right") for c in classes]


def _f1(tp, pred, true):
    denom = pred + true
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, 2.0 * tp / np.where(denom > 0, denom, 1), 0.0)


def binary_f1_curve(z, y, cand) -> np.ndarray:
    """Macro-F1 of ``1[z > tau]`` for every candidate ``tau``."""
    z = np.asarray(z, dtype=float)
    y = np.asarray(y)
    le0, le1 = _counts_at_or_below(z, y, (0, 1), cand)
    n0, n1 = int((y == 0).sum()), int((y == 1).sum())
    pred0 = le0 + le1
    f0 = _f1(le0, pred0, n0)
    f1 = _f1(n1 - le1, z.size - pred0, n1)
    return (f0 + f1) / 2.0


def ternary_f1_grid(z, y, cand) -> np.ndarray:
    """Macro-F1 over classes {0,1,2} for every pair (cand[i], cand[j])."""
    z = np.asarray(z, dtype=float)
    y = np.asarray(y)
    le0, le1, le2 = _counts_at_or_below(z, y, (0, 1, 2), cand)
    n = [int((y == c).sum()) for c in (0, 1, 2)]
    le_all = le0 + le1 + le2
    I = (slice(None), None)
    J = (None, slice(None))
    f0 = _f1(le0[I], le_all[I], n[0])
    f1 = _f1(le1[J] - le1[I], le_all[J] - le_all[I], n[1])
    f2 = _f1(n[2] - le2[J], z.size - le_all[J], n[2])
    f0, f1, f2 = np.broadcast_arrays(f0, f1, f2)
    return (f0 + f1 + f2) / 3.0


def longest_run(ok: np.ndarray) -> tuple[int, int]:
    best = (0, -1)
    start = None
    for i, flag in enumerate(np.append(ok, False)):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            if i - start > best[1] - best[0] + 1:
                best = (start, i - 1)
            start = None
    return best


def _check_binary(y, fold):
    if np.unique(y).size < 2:
        raise SingleClassFold(f"fold {fold} lacks one of the classes")


def search_threshold_binary(z1, y1, z2, y2, grid_resolution=None, stability_delta=0.005,
                            target="") -> ThresholdSet:
    """Plateau threshold for a binary target.

    Objective per candidate: the smaller of the two folds' macro-F1. The
    plateau is the longest contiguous run of candidates within
    ``stability_delta`` of the best objective (earliest run on ties); its
    midpoint is returned.
    """
    z1, z2 = np.asarray(z1, dtype=float), np.asarray(z2, dtype=float)
    y1, y2 = np.asarray(y1), np.asarray(y2)
    _check_binary(y1, 1)
    _check_binary(y2, 2)
    cand = candidate_grid(z1, z2, grid_resolution=grid_resolution)
    c1, c2 = binary_f1_curve(z1, y1, cand), binary_f1_curve(z2, y2, cand)
    m = np.minimum(c1, c2)
    lo_i, hi_i = longest_run(m >= m.max() - stability_delta)
    lo, hi = float(cand[lo_i]), float(cand[hi_i])
    tau = (lo + hi) / 2.0
    at = np.array([tau])
    fold_f1 = (float(binary_f1_curve(z1, y1, at)[0]), float(binary_f1_curve(z2, y2, at)[0]))
    return ThresholdSet(target, "binary", (tau,), ((lo, hi),), fold_f1)


def search_threshold_ternary(z1, y1, z2, y2, grid_resolution=None, stability_delta=0.005,
                             target="") -> ThresholdSet:
    """Plateau threshold pair (tau1 < tau2) for a three-level target.

    Candidate pairs come from the same midpoint grid. The plateau is the
    largest 4-connected region of pairs within ``stability_delta`` of the
    best min-fold macro-F1; the member pair nearest its centroid is
    returned.
    """
    z1, z2 = np.asarray(z1, dtype=float), np.asarray(z2, dtype=float)
    y1, y2 = np.asarray(y1), np.asarray(y2)
    for y, fold in ((y1, 1), (y2, 2)):
        if np.unique(y).size < 2:
            raise SingleClassFold(f"fold {fold} has fewer than two classes")
    cand = candidate_grid(z1, z2, grid_resolution=grid_resolution)
    if cand.size < 2:
        raise DegenerateScores("need at least two candidate cut points")
    m = np.minimum(ternary_f1_grid(z1, y1, cand), ternary_f1_grid(z2, y2, cand))
    valid = np.triu(np.ones(m.shape, dtype=bool), k=1)
    best = m[valid].max()
    ok = valid & (m >= best - stability_delta)
    labels, count = ndimage.label(ok)
    sizes = np.bincount(labels.ravel())[1:]
    region = labels == (int(np.argmax(sizes)) + 1)
    ii, jj = np.nonzero(region)
    t1, t2 = cand[ii], cand[jj]
    d = (t1 - t1.mean()) ** 2 + (t2 - t2.mean()) ** 2
    k = int(np.argmin(d))
    taus = (float(t1[k]), float(t2[k]))
    plateau = ((float(t1.min()), float(t1.max())), (float(t2.min()), float(t2.max())))
    a, b = np.array([taus[0]]), np.array([taus[1]])
    fold_f1 = tuple(float(_pair_f1(z, y, a, b)) for z, y in ((z1, y1), (z2, y2)))
    return ThresholdSet(target, "ternary", taus, plateau, fold_f1)


def _pair_f1(z, y, a, b):
    le0, le1, le2 = _counts_at_or_below(z, y, (0, 1, 2), np.concatenate([a, b]))
    n = [int((y == c).sum()) for c in (0, 1, 2)]
    le_all = le0 + le1 + le2
    f0 = _f1(le0[0], le_all[0], n[0])
    f1 = _f1(le1[1] - le1[0], le_all[1] - le_all[0], n[1])
    f2 = _f1(n[2] - le2[1], z.size - le_all[1], n[2])
    return (f0 + f1 + f2) / 3.0


def search_thresholds(z1, y1, z2, y2, levels: int, grid_resolution=None,
                      stability_delta=0.005, target="") -> ThresholdSet:
    fn = search_threshold_binary if levels == 2 else search_threshold_ternary
    return fn(z1, y1, z2, y2, grid_resolution, stability_delta, target)


def write_plateau_curve(path, z1, y1, z2, y2, thr: ThresholdSet, grid_resolution=None) -> None:
    """Binary: (tau, f1_fold1, f1_fold2) over the whole grid. Ternary: the two
    axis slices through the chosen pair."""
    z1, z2 = np.asarray(z1, dtype=float), np.asarray(z2, dtype=float)
    y1, y2 = np.asarray(y1), np.asarray(y2)
    cand = candidate_grid(z1, z2, grid_resolution=grid_resolution)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if thr.kind == "binary":
            w.writerow(["tau", "f1_fold1", "f1_fold2"])
            for row in zip(cand, binary_f1_curve(z1, y1, cand), binary_f1_curve(z2, y2, cand)):
                w.writerow([repr(float(v)) for v in row])
            return
        w.writerow(["axis", "tau1", "tau2", "f1_fold1", "f1_fold2"])
        t1, t2 = thr.taus
        for axis, pairs in (("tau1", [(c, t2) for c in cand if c < t2]),
                            ("tau2", [(t1, c) for c in cand if c > t1])):
            for a, b in pairs:
                fa = _pair_f1(z1, y1, np.array([a]), np.array([b]))
                fb = _pair_f1(z2, y2, np.array([a]), np.array([b]))
                w.writerow([axis] + [repr(float(v)) for v in (a, b, fa, fb)])
