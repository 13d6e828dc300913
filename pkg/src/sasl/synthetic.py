"""Ground-truth generators: the four-subject toy regression, planted-sparsity
designs, lifelike multi-target tables, and matching minute-level streams."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from .data import ObservationTable, Schema
from .errors import InvalidSpec

DAY = 86400
WEEKDAYS = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")


@dataclass(frozen=True)
class TargetSpec:
    """Latent ``mu + b.x + mu_i + b_i.x + noise`` cut at ``thresholds``."""

    name: str
    intercept: float = 0.0
    coefs: dict[str, float] = field(default_factory=dict)
    subject_intercepts: dict[str, float] = field(default_factory=dict)
    subject_coefs: dict[str, dict[str, float]] = field(default_factory=dict)
    noise: float = 1.0
    thresholds: tuple[float, ...] = (0.0,)

    def __post_init__(self):
        if self.noise < 0:
            raise InvalidSpec(f"{self.name}: noise sigma must be >= 0")
        th = tuple(float(t) for t in self.thresholds)
        if not th or any(b <= a for a, b in zip(th, th[1:])):
            raise InvalidSpec(f"{self.name}: thresholds must be nonempty and strictly increasing")
        object.__setattr__(self, "thresholds", th)


@dataclass(frozen=True)
class SyntheticSpec:
    subjects: int
    n_per_subject: int
    features: tuple[str, ...]
    targets: tuple[TargetSpec, ...]
    feature_low: float = -2.0
    feature_high: float = 2.0
    weekday_features: bool = False
    start_date: str = "2024-01-01"
    rng_seed: int = 0

    def __post_init__(self):
        if self.subjects < 1 or self.n_per_subject < 1:
            raise InvalidSpec("need at least one subject and one row per subject")
        if not self.features:
            raise InvalidSpec("need at least one feature")
        if not self.feature_high > self.feature_low:
            raise InvalidSpec("feature range is empty")
        ids = set(self.subject_ids)
        known = set(self.features)
        for t in self.targets:
            extra = set(t.subject_intercepts) | set(t.subject_coefs)
            if not extra <= ids:
                raise InvalidSpec(f"{t.name}: unknown subject(s) {sorted(extra - ids)}")
            used = set(t.coefs).union(*[set(v) for v in t.subject_coefs.values()])
            if not used <= known:
                raise InvalidSpec(f"{t.name}: unknown feature(s) {sorted(used - known)}")

    @property
    def subject_ids(self) -> list[str]:
        return sorted(f"id{i}" for i in range(1, self.subjects + 1))

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        d["features"] = tuple(d["features"])
        d["targets"] = tuple(TargetSpec(**{**t, "thresholds": tuple(t.get("thresholds", (0.0,)))})
                             for t in d["targets"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SyntheticSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["features"] = list(self.features)
        for t in d["targets"]:
            t["thresholds"] = list(t["thresholds"])
        return d


@dataclass
class GroundTruth:
    support: dict[str, list[str]]
    coefficients: dict[str, dict[str, float]]
    thresholds: dict[str, list[float]]
    latent: dict[str, np.ndarray]

    def to_dict(self) -> dict:
        return {"support": self.support, "coefficients": self.coefficients,
                "thresholds": self.thresholds}


def _true_coefficients(t: TargetSpec) -> dict[str, float]:
    out = {"intercept": float(t.intercept)}
    out.update({f: float(b) for f, b in t.coefs.items() if b != 0})
    out.update({s: float(m) for s, m in t.subject_intercepts.items() if m != 0})
    for s, cf in t.subject_coefs.items():
        out.update({f"{s}:{f}": float(b) for f, b in cf.items() if b != 0})
    return out


def generate(spec: SyntheticSpec):
    """Draw a table and its ground truth.

    Returns ``(ObservationTable, GroundTruth)``; latents are aligned with
    the table rows.
    """
    rng = np.random.default_rng(spec.rng_seed)
    ids = spec.subject_ids
    n = spec.n_per_subject
    start = datetime.combine(date.fromisoformat(spec.start_date), datetime.min.time(),
                             tzinfo=timezone.utc)
    t0 = int(start.timestamp())
    subjects = np.repeat(np.array(ids, dtype=object), n)
    stamps = np.tile(t0 + DAY * np.arange(n, dtype=np.int64), len(ids))
    X = rng.uniform(spec.feature_low, spec.feature_high, size=(len(subjects), len(spec.features)))
    names = list(spec.features)
    cols = [("subject_id", "subject"), ("date", "timestamp")]
    cols += [(f, "feature") for f in names]
    if spec.weekday_features:
        dow = ((stamps // DAY) + 3) % 7  # 1970-01-01 was a Thursday
        X = np.column_stack([X, dow] + [(dow == k).astype(float) for k in range(7)])
        cols += [("dow", "feature")] + [(w, "indicator") for w in WEEKDAYS]
    fidx = {f: j for j, f in enumerate(names)}
    targets, latent = {}, {}
    for t in spec.targets:
        z = np.full(len(subjects), float(t.intercept))
        for f, b in t.coefs.items():
            z += b * X[:, fidx[f]]
        for s, m in t.subject_intercepts.items():
            z += m * (subjects == s)
        for s, cf in t.subject_coefs.items():
            mask = subjects == s
            for f, b in cf.items():
                z += b * X[:, fidx[f]] * mask
        z = z + rng.normal(0.0, t.noise, size=z.shape) if t.noise > 0 else z
        latent[t.name] = z
        targets[t.name] = np.searchsorted(np.array(t.thresholds), z, side="left")
        cols.append((t.name, "target"))
    levels = {t.name: len(t.thresholds) + 1 for t in spec.targets}
    table = ObservationTable.build(Schema(tuple(cols), levels), subjects, stamps, X, targets)
    truth = GroundTruth(
        support={t.name: list(_true_coefficients(t)) for t in spec.targets},
        coefficients={t.name: _true_coefficients(t) for t in spec.targets},
        thresholds={t.name: list(t.thresholds) for t in spec.targets},
        latent=latent,
    )
    return table, truth


def fig1_spec(rng_seed: int = 0, n_per_subject: int = 200, noise: float = 0.5) -> SyntheticSpec:
    """Four subjects share a global line; subject 3 alone has its own slope."""
    target = TargetSpec(
        name="y", intercept=0.5, coefs={"x": 1.0},
        subject_coefs={"id3": {"x": -1.5}}, noise=noise, thresholds=(0.5,),
    )
    return SyntheticSpec(subjects=4, n_per_subject=n_per_subject, features=("x",),
                         targets=(target,), rng_seed=rng_seed)


LIFELOG_FEATURES = ("screen_on_ratio", "calories", "charging_duration",
                    "walking_prop", "stationary_prop")


def lifelog_spec(rng_seed: int = 0, subjects: int = 10, days: int = 60) -> SyntheticSpec:
    """Ten-subject, six-target stand-in for a daily lifelog table. With fewer
    subjects the personal terms of absent subjects are dropped."""
    scr, cal, chg, walk, stat = LIFELOG_FEATURES
    targets = (
        TargetSpec("Q1", 0.0, {scr: -0.8, chg: 0.6}, {}, {"id1": {cal: -1.0, walk: 0.8}}, 0.8),
        TargetSpec("Q2", 0.1, {walk: 0.7, stat: -0.5}, {"id4": 0.9}, {}, 0.8),
        TargetSpec("Q3", -0.1, {cal: 0.6, scr: -0.4}, {}, {"id7": {scr: 1.2}}, 0.8),
        TargetSpec("S1", 0.0, {chg: 0.9, walk: 0.5}, {"id2": -0.8}, {}, 0.7,
                   thresholds=(-0.6, 0.6)),
        TargetSpec("S2", 0.2, {scr: -0.5}, {}, {"id5": {chg: 0.9}}, 1.0),
        TargetSpec("S3", 0.0, {stat: -0.7, cal: 0.4}, {}, {"id9": {walk: -1.0}}, 0.8),
    )
    ids = {f"id{i}" for i in range(1, subjects + 1)}
    targets = tuple(TargetSpec(t.name, t.intercept, t.coefs,
                               {s: v for s, v in t.subject_intercepts.items() if s in ids},
                               {s: v for s, v in t.subject_coefs.items() if s in ids},
                               t.noise, t.thresholds) for t in targets)
    return SyntheticSpec(subjects=subjects, n_per_subject=days, features=LIFELOG_FEATURES,
                         targets=targets, weekday_features=True, rng_seed=rng_seed)


def chronological_holdout(table: ObservationTable, test_fraction: float = 0.25):
    """Split off each subject's last ``test_fraction`` of days."""
    test = np.zeros(table.n_rows, dtype=bool)
    for s in table.subject_ids:
        rows = np.flatnonzero(table.subjects == s)
        k = int(round(len(rows) * test_fraction))
        if k:
            test[rows[-k:]] = True
    return table.subset(~test), table.subset(test), test


CHANNELS = ("heart_rate", "steps", "light", "screen_state")


def minute_records(table: ObservationTable, truth: GroundTruth, target: str = "S2",
                   step_minutes: int = 10, tz: str = "Asia/Seoul", rng_seed: int = 0,
                   boundary_hour: int = 16) -> pd.DataFrame:
    """Long-format sensor stream whose night-time light and screen use track
    the (negated) latent of ``target``.

    One analysis day of records is emitted per table row, starting at
    ``boundary_hour`` local time on the row's date.
    """
    rng = np.random.default_rng(rng_seed)
    z = truth.latent[target]
    offsets = np.arange(0, 24 * 60, step_minutes) * 60
    clock = (boundary_hour * 60 + offsets // 60) % (24 * 60)
    night = (clock < 6 * 60).astype(float)
    frames = []
    zone = pd.Timestamp("2000-01-01", tz=tz).tz
    for i in range(table.n_rows):
        day = datetime.fromtimestamp(int(table.timestamps[i]), tz=timezone.utc).date()
        start = pd.Timestamp(datetime.combine(day, datetime.min.time())).tz_localize(zone) \
            + pd.Timedelta(hours=boundary_hour)
        base = int(start.timestamp())
        disturb = 1.0 / (1.0 + np.exp(2.0 * z[i]))
        k = len(offsets)
        hr = 65 + 10 * (1 - night) + 8 * disturb * night + rng.normal(0, 3, k)
        steps = np.where(night > 0, rng.poisson(2 * disturb, k), rng.poisson(40, k)).astype(float)
        light = np.where(night > 0, 300 * disturb * rng.uniform(0, 1, k) ** 2,
                         rng.uniform(50, 500, k))
        screen = (rng.uniform(0, 1, k) < np.where(night > 0, 0.5 * disturb, 0.4)).astype(float)
        ts = base + offsets
        for name, vals in zip(CHANNELS, (hr, steps, light, screen)):
            frames.append(pd.DataFrame({"subject": table.subjects[i], "timestamp": ts,
                                        "channel": name, "value": np.round(vals, 6)}))
    out = pd.concat(frames, ignore_index=True)
    return out.sort_values(["subject", "channel", "timestamp"], kind="mergesort",
                           ignore_index=True)


def planted_signal(n: int = 300, n_signal: int = 5, n_noise: int = 45, rng_seed: int = 0):
    """Binary labels driven by the first ``n_signal`` columns only."""
    rng = np.random.default_rng(rng_seed)
    X = rng.normal(size=(n, n_signal + n_noise))
    w = np.linspace(1.5, 1.0, n_signal)
    logit = X[:, :n_signal] @ w
    y = (logit + rng.logistic(size=n) * 0.5 > 0).astype(int)
    return X, y
