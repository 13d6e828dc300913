"""Confidence gating between the linear and boosted-tree predictions, and
Z-score profiles of the rows where they disagree."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LengthMismatch, ZeroVariance

DEFAULT_TAU_CONF = {"Q1": 0.97, "Q2": 0.97, "Q3": 0.97, "S1": 0.97, "S2": 0.943, "S3": 0.97}


@dataclass(frozen=True)
class GatingConfig:
    """Per-target confidence threshold; unlisted targets use ``default``."""

    tau_conf: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TAU_CONF))
    default: float = 0.97

    def __post_init__(self):
        for name, tau in {**self.tau_conf, "default": self.default}.items():
            if not 0.5 <= tau <= 1.0:
                raise ValueError(f"{name}: confidence threshold {tau} outside [0.5, 1]")

    def tau(self, target: str) -> float:
        return float(self.tau_conf.get(target, self.default))

    def to_dict(self) -> dict:
        return {"tau_conf": dict(self.tau_conf), "default": self.default}

    @classmethod
    def from_dict(cls, d: dict) -> "GatingConfig":
        return cls({**DEFAULT_TAU_CONF, **d.get("tau_conf", {})}, d.get("default", 0.97))


@dataclass(frozen=True)
class Decision:
    row: object
    primary: int
    secondary: int
    confidence: float
    final: int

    def to_dict(self) -> dict:
        row = list(self.row) if isinstance(self.row, tuple) else self.row
        return {"row": row, "primary": self.primary, "secondary": self.secondary,
                "confidence": self.confidence, "final": self.final}


@dataclass
class GateResult:
    final: np.ndarray
    decisions: list[Decision]

    @property
    def overrides(self) -> int:
        return sum(d.final != d.primary for d in self.decisions)

    def write_log(self, path) -> None:
        text = "".join(json.dumps(d.to_dict()) + "\n" for d in self.decisions)
        Path(path).write_text(text, encoding="utf-8")


def read_decisions(path) -> list[Decision]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            d = json.loads(line)
            row = tuple(d["row"]) if isinstance(d["row"], list) else d["row"]
            out.append(Decision(row, d["primary"], d["secondary"], d["confidence"], d["final"]))
    return out


def gate_predictions(primary, secondary, confidence, tau: float | GatingConfig = 0.97,
                     target: str = "", row_keys=None) -> GateResult:
    """Keep agreements; on a disagreement take the secondary label iff its
    confidence is at least ``tau``. Every disagreement is logged."""
    if isinstance(tau, GatingConfig):
        tau = tau.tau(target)
    p = np.asarray(primary, dtype=np.int64)
    s = np.asarray(secondary, dtype=np.int64)
    c = np.asarray(confidence, dtype=float)
    if not p.shape == s.shape == c.shape:
        raise LengthMismatch(f"lengths differ: {p.shape}, {s.shape}, {c.shape}")
    if ((c < 0) | (c > 1)).any():
        raise ValueError("confidences must lie in [0, 1]")
    take = (p != s) & (c >= tau)
    final = np.where(take, s, p)
    keys = list(range(p.size)) if row_keys is None else list(row_keys)
    decisions = [Decision(keys[i], int(p[i]), int(s[i]), float(c[i]), int(final[i]))
                 for i in np.flatnonzero(p != s)]
    return GateResult(final, decisions)


# ---------------------------------------------------------------------------
# Z-score profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ZProfile:
    features: tuple[str, ...]
    z: np.ndarray
    mu_group: np.ndarray
    mu_global: np.ndarray
    sigma_global: np.ndarray
    size: int

    def sorted_rows(self):
        """Rows ordered by descending |Z|, name breaking ties."""
        order = sorted(range(len(self.features)), key=lambda j: (-abs(self.z[j]), self.features[j]))
        return [(self.features[j], float(self.z[j]), float(self.mu_group[j]),
                 float(self.mu_global[j]), float(self.sigma_global[j])) for j in order]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "z", "mu_group", "mu_global", "sigma_global"])
            for name, *vals in self.sorted_rows():
                w.writerow([name] + [repr(v) for v in vals])


def z_profile(group_rows, all_rows, feature_names) -> ZProfile:
    """``Z = (mean(group) - mean(all)) / std(all)`` per feature, population
    std."""
    g = np.asarray(group_rows, dtype=float)
    a = np.asarray(all_rows, dtype=float)
    if g.ndim != 2 or g.shape[0] == 0:
        raise ValueError("group must be a nonempty 2-D block")
    mu_all = a.mean(axis=0)
    sd = a.std(axis=0)
    for name, s in zip(feature_names, sd):
        if not s > 0:
            raise ZeroVariance(name)
    mu_g = g.mean(axis=0)
    return ZProfile(tuple(feature_names), (mu_g - mu_all) / sd, mu_g, mu_all, sd, g.shape[0])


@dataclass
class DisagreementReport:
    """Groups ``sec0_pri1`` (secondary 0, primary 1) and ``sec1_pri0``."""

    counts: dict[str, int]
    profiles: dict[str, ZProfile]

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def disagreement_report(primary, secondary, features, feature_names) -> DisagreementReport:
    p = np.asarray(primary)
    s = np.asarray(secondary)
    X = np.asarray(features, dtype=float)
    if not len(p) == len(s) == X.shape[0]:
        raise LengthMismatch("labels and feature rows differ in length")
    names = list(feature_names)
    keep = [j for j in range(X.shape[1]) if X[:, j].std() > 0]
    groups = {"sec0_pri1": (s == 0) & (p == 1), "sec1_pri0": (s == 1) & (p == 0)}
    counts, profiles = {}, {}
    for key, mask in groups.items():
        counts[key] = int(mask.sum())
        if mask.any():
            profiles[key] = z_profile(X[mask][:, keep], X[:, keep], [names[j] for j in keep])
    return DisagreementReport(counts, profiles)
