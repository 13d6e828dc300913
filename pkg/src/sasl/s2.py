"""Minute-level streams to daily features, archetypes, and the boosted-tree
route used for sleep efficiency (and as the gating assistant elsewhere)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date, datetime, time, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from .cluster import kmeans_cluster
from .data import ObservationTable, Schema
from .errors import DataNotFound, DuplicateKey, InvalidSpec, MissingChannel, UnparseableTimestamp
from .gbdt import Ensemble, GbdtConfig, confidence, rfe_select, stratified_cv_ensemble

STATISTICS = ("mean", "std", "min", "max", "sum", "count_above")
KINDS = ("plain", "interaction", "baseline_deviation", "event_flag")
IMPUTATIONS = ("ffill", "zero", "drop")
_OPS = {">": np.greater, ">=": np.greater_equal, "<": np.less, "<=": np.less_equal}


# ---------------------------------------------------------------------------
# Minute records and analysis days
# ---------------------------------------------------------------------------

def read_minutes(path) -> pd.DataFrame:
    """Long-format CSV with columns subject, timestamp, channel, value."""
    path = Path(path)
    if not path.exists():
        raise DataNotFound(f"minute data not found: {path}")
    df = pd.read_csv(path, dtype={"subject": str, "channel": str, "timestamp": str})
    missing = {"subject", "timestamp", "channel", "value"} - set(df.columns)
    if missing:
        raise InvalidSpec(f"minute CSV lacks columns {sorted(missing)}")
    return df


def _epoch_seconds(ts: pd.Series, tz: str) -> np.ndarray:
    if pd.api.types.is_numeric_dtype(ts):
        return ts.to_numpy(dtype=np.int64)
    text = ts.astype(str).str.strip()
    numeric = text.str.fullmatch(r"-?\d+")
    out = np.empty(len(text), dtype=np.int64)
    if numeric.any():
        out[numeric.to_numpy()] = text[numeric].astype(np.int64).to_numpy()
    rest = ~numeric.to_numpy()
    if rest.any():
        try:
            parsed = pd.to_datetime(text[rest], format="ISO8601")
        except (ValueError, TypeError) as exc:
            raise UnparseableTimestamp(str(exc)) from exc
        if parsed.dt.tz is None:
            parsed = parsed.dt.tz_localize(tz)
        out[rest] = (parsed.dt.tz_convert("UTC") - pd.Timestamp("1970-01-01", tz="UTC")) \
            // pd.Timedelta(seconds=1)
    return out


def reindex_analysis_days(records: pd.DataFrame, boundary_hour: float = 16,
                          tz: str = "Asia/Seoul") -> pd.DataFrame:
    """Attach the analysis day of every record.

    A record at local time T belongs to the day whose start date is the
    calendar date of ``T - boundary_hour``. Adds ``epoch``, ``analysis_day``
    (a ``datetime.date``) and ``offset_min`` (minutes since the day start).
    """
    if not 0 <= boundary_hour < 24:
        raise ValueError("boundary_hour must lie in [0, 24)")
    out = records.copy()
    out["subject"] = out["subject"].astype(str)
    out["epoch"] = _epoch_seconds(out["timestamp"], tz)
    local = pd.to_datetime(out["epoch"], unit="s", utc=True).dt.tz_convert(tz)
    shifted = local - pd.Timedelta(hours=boundary_hour)
    out["analysis_day"] = shifted.dt.date
    midnight = shifted.dt.normalize()
    out["offset_min"] = ((shifted - midnight) // pd.Timedelta(minutes=1)).astype(np.int64)
    out = out.sort_values(["subject", "channel", "epoch"], kind="mergesort", ignore_index=True)
    dup = out.duplicated(["subject", "channel", "epoch"])
    if dup.any():
        row = out[dup].iloc[0]
        raise DuplicateKey(f"repeated timestamp for subject {row.subject!r}, channel {row.channel!r}")
    return out


# ---------------------------------------------------------------------------
# Aggregate rules
# ---------------------------------------------------------------------------

def _clock_minutes(text: str) -> int:
    hh, mm = text.split(":")
    return int(hh) * 60 + int(mm)


@dataclass(frozen=True)
class AggregateRule:
    name: str
    channels: tuple[str, ...]
    statistic: str = "mean"
    window: tuple[str, str] | None = None
    kind: str = "plain"
    threshold: float = 0.0
    flag_op: str = ">"
    flag_threshold: float = 0.0

    def __post_init__(self):
        if self.statistic not in STATISTICS:
            raise InvalidSpec(f"{self.name}: unknown statistic {self.statistic!r}")
        if self.kind not in KINDS:
            raise InvalidSpec(f"{self.name}: unknown kind {self.kind!r}")
        want = 2 if self.kind == "interaction" else 1
        if len(self.channels) != want:
            raise InvalidSpec(f"{self.name}: {self.kind} rules take {want} channel(s)")
        if self.flag_op not in _OPS:
            raise InvalidSpec(f"{self.name}: unknown comparison {self.flag_op!r}")
        if self.window is not None:
            try:
                [_clock_minutes(t) for t in self.window]
            except ValueError:
                raise InvalidSpec(f"{self.name}: window must be two HH:MM times") from None

    def window_mask(self, offset_min: np.ndarray, boundary_hour: float) -> np.ndarray:
        if self.window is None:
            return np.ones(offset_min.shape, dtype=bool)
        b = int(round(boundary_hour * 60))
        lo = (_clock_minutes(self.window[0]) - b) % 1440
        hi = (_clock_minutes(self.window[1]) - b) % 1440
        if lo < hi:
            return (offset_min >= lo) & (offset_min < hi)
        return (offset_min >= lo) | (offset_min < hi)


@dataclass(frozen=True)
class AggregateSpec:
    rules: tuple[AggregateRule, ...]

    def __post_init__(self):
        names = [r.name for r in self.rules]
        if len(set(names)) != len(names):
            raise InvalidSpec("aggregate names must be unique")

    @property
    def channels(self) -> list[str]:
        return sorted({c for r in self.rules for c in r.channels})

    @classmethod
    def from_dict(cls, d: dict) -> "AggregateSpec":
        rules = []
        for r in d["rules"]:
            r = dict(r)
            r["channels"] = tuple(r["channels"]) if not isinstance(r["channels"], str) \
                else (r["channels"],)
            if r.get("window") is not None:
                r["window"] = tuple(r["window"])
            rules.append(AggregateRule(**r))
        return cls(tuple(rules))

    @classmethod
    def load(cls, path) -> "AggregateSpec":
        path = Path(path)
        if not path.exists():
            raise DataNotFound(f"aggregate spec not found: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        out = []
        for r in self.rules:
            d = {k: getattr(r, k) for k in r.__dataclass_fields__}
            d["channels"] = list(r.channels)
            d["window"] = None if r.window is None else list(r.window)
            out.append(d)
        return {"rules": out}


def default_aggregate_spec() -> AggregateSpec:
    """A small catalog in the spirit of the lifelog aggregates."""
    night = ("00:00", "06:00")
    return AggregateSpec((
        AggregateRule("heart_rate_mean", ("heart_rate",), "mean"),
        AggregateRule("heart_rate_night_std", ("heart_rate",), "std", night),
        AggregateRule("steps_sum", ("steps",), "sum"),
        AggregateRule("steps_night_sum", ("steps",), "sum", night),
        AggregateRule("screen_on_sum", ("screen_state",), "sum"),
        AggregateRule("screen_night_sum", ("screen_state",), "sum", night),
        AggregateRule("light_night_mean", ("light",), "mean", night),
        AggregateRule("heart_rate_x_steps", ("heart_rate", "steps"), "mean", kind="interaction"),
        AggregateRule("heart_rate_night_dev", ("heart_rate",), "mean", night,
                      kind="baseline_deviation"),
        AggregateRule("night_bright", ("light",), "count_above", night, kind="event_flag",
                      threshold=100.0, flag_op=">", flag_threshold=0.0),
    ))


def _statistic(values: np.ndarray, stat: str, threshold: float) -> float:
    values = values[~np.isnan(values)]
    if stat == "sum":
        return float(values.sum())
    if stat == "count_above":
        return float(np.count_nonzero(values > threshold))
    if values.size == 0:
        return float("nan")
    return float({"mean": np.mean, "std": np.std, "min": np.min, "max": np.max}[stat](values))


def aggregate_daily(grouped: pd.DataFrame, spec: AggregateSpec, imputation: str = "ffill",
                    boundary_hour: float = 16) -> ObservationTable:
    """One row per (subject, analysis day), one column per rule.

    ``grouped`` is the output of :func:`reindex_analysis_days`. Channels are
    aligned per minute; ``ffill`` carries values forward inside a day,
    ``zero`` fills gaps with 0, ``drop`` discards days lacking any used
    channel. Baseline deviations subtract the mean over the subject's
    earlier days only (0 on the first day). Values still undefined
    afterwards become 0.
    """
    if imputation not in IMPUTATIONS:
        raise ValueError(f"imputation must be one of {IMPUTATIONS}")
    chans = spec.channels
    present = set(grouped["channel"].unique())
    if imputation == "drop":
        for c in chans:
            if c not in present:
                raise MissingChannel(c)
    df = grouped[grouped["channel"].isin(chans)].copy()
    df["minute"] = df["epoch"] // 60
    wide = df.pivot_table(index=["subject", "analysis_day", "minute"], columns="channel",
                          values="value", aggfunc="last")
    wide = wide.reindex(columns=chans)
    offsets = df.groupby(["subject", "analysis_day", "minute"])["offset_min"].first()
    wide["offset_min"] = offsets.reindex(wide.index).to_numpy()
    if imputation == "ffill":
        wide[chans] = wide[chans].groupby(level=[0, 1]).ffill()
    elif imputation == "zero":
        wide[chans] = wide[chans].fillna(0.0)

    keys, rows = [], []
    for (subj, day), g in wide.groupby(level=[0, 1], sort=True):
        if imputation == "drop" and g[chans].isna().all(axis=0).any():
            continue
        off = g["offset_min"].to_numpy()
        vals = []
        for rule in spec.rules:
            mask = rule.window_mask(off, boundary_hour)
            if rule.kind == "interaction":
                v = g[rule.channels[0]].to_numpy()[mask] * g[rule.channels[1]].to_numpy()[mask]
            else:
                v = g[rule.channels[0]].to_numpy()[mask]
            vals.append(_statistic(np.asarray(v, dtype=float), rule.statistic, rule.threshold))
        keys.append((subj, day))
        rows.append(vals)
    values = np.array(rows, dtype=float).reshape(len(rows), len(spec.rules))
    subjects = np.array([k[0] for k in keys], dtype=object)

    for j, rule in enumerate(spec.rules):
        col = values[:, j]
        if rule.kind == "baseline_deviation":
            dev = np.zeros(col.shape)
            for s in np.unique(subjects):
                idx = np.flatnonzero(subjects == s)  # days ascending within subject
                history = []
                for i in idx:
                    if np.isnan(col[i]):
                        dev[i] = np.nan
                        continue
                    dev[i] = col[i] - np.mean(history) if history else 0.0
                    history.append(col[i])
            values[:, j] = dev
        elif rule.kind == "event_flag":
            values[:, j] = np.where(np.isnan(col), 0.0,
                                    _OPS[rule.flag_op](col, rule.flag_threshold).astype(float))
    values = np.nan_to_num(values, nan=0.0)

    stamps = [int(datetime.combine(d, time(), tzinfo=timezone.utc).timestamp()) for _, d in keys]
    cols = [("subject_id", "subject"), ("date", "timestamp")]
    cols += [(r.name, "indicator" if r.kind == "event_flag" else "feature") for r in spec.rules]
    return ObservationTable.build(Schema(tuple(cols)), subjects, stamps, values, {})


# ---------------------------------------------------------------------------
# Archetypes
# ---------------------------------------------------------------------------

def archetype_names(k: int) -> list[str]:
    return [f"archetype_{c}" for c in range(k)]


def apply_archetypes(table: ObservationTable, assignment: dict, k: int) -> ObservationTable:
    """Append one-hot archetype indicators; unknown subjects get all zeros."""
    onehot = np.zeros((table.n_rows, k))
    for i, s in enumerate(table.subjects):
        if s in assignment:
            onehot[i, assignment[s]] = 1.0
    names = archetype_names(k)
    return table.with_features(np.hstack([table.features, onehot]),
                               table.feature_names + tuple(names), indicators=names)


def build_archetype_features(daily: ObservationTable, routine_feature_names, k: int = 10,
                             rng_seed: int = 0):
    """Cluster subjects by their mean routine vector (z-scored across
    subjects) and append the archetype one-hot to every row.

    Returns ``(table, {subject: archetype})``.
    """
    subjects = daily.subject_ids
    idx = [daily.feature_names.index(n) for n in routine_feature_names]
    means = np.array([daily.features[daily.subjects == s][:, idx].mean(axis=0) for s in subjects])
    sd = means.std(axis=0)
    z = (means - means.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    model = kmeans_cluster(z, k, rng_seed)
    assignment = {s: int(c) for s, c in zip(subjects, model.labels)}
    return apply_archetypes(daily, assignment, k), assignment


def join_daily(base: ObservationTable, extra: ObservationTable) -> ObservationTable:
    """Append ``extra``'s features to ``base`` rows with the same key;
    unmatched rows get zeros."""
    lookup = {k: i for i, k in enumerate(extra.row_keys)}
    block = np.zeros((base.n_rows, len(extra.feature_names)))
    for i, key in enumerate(base.row_keys):
        j = lookup.get(key)
        if j is not None:
            block[i] = extra.features[j]
    clash = set(base.feature_names) & set(extra.feature_names)
    if clash:
        raise InvalidSpec(f"aggregate names clash with table features: {sorted(clash)}")
    return base.with_features(np.hstack([base.features, block]),
                              base.feature_names + extra.feature_names,
                              indicators=extra.indicator_names)


# ---------------------------------------------------------------------------
# Boosted-tree route
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class S2Config:
    target: str = "S2"
    rfe_target_count: int = 30
    rfe: GbdtConfig = GbdtConfig(n_trees_max=100)
    gbdt: GbdtConfig = GbdtConfig()
    folds: int = 5
    seeds: tuple[int, ...] = (0, 1, 2, 3)


@dataclass
class S2Result:
    target: str
    row_keys: list
    labels: np.ndarray
    proba: np.ndarray
    confidence: np.ndarray
    selected_features: list[str]
    ensemble: Ensemble = field(repr=False)

    @property
    def threshold(self):
        return self.ensemble.threshold

    @property
    def fold_thresholds(self):
        return self.ensemble.fold_thresholds


def run_s2(daily: ObservationTable, cfg: S2Config = S2Config(),
           test: ObservationTable | None = None) -> S2Result:
    """RFE down to ``rfe_target_count`` features, then a stratified
    ``folds x seeds`` ensemble; predicts ``test`` (or the training rows).

    Binary targets are cut at the mean of the per-fold thresholds;
    three-level targets take the arg-max class.
    """
    rows = daily.labeled_rows(cfg.target)
    train = daily.subset(rows)
    X, y = train.features, train.labels(cfg.target)
    levels = daily.schema.levels(cfg.target)
    classes = tuple(range(levels))
    count = min(cfg.rfe_target_count, X.shape[1])
    selected = rfe_select(X, y, count, cfg.rfe).selected if levels == 2 else list(range(X.shape[1]))
    if levels != 2 and count < X.shape[1]:
        selected = _multiclass_rfe(X, y, count, cfg.rfe)
    ens = stratified_cv_ensemble(X[:, selected], y, cfg.folds, cfg.seeds, cfg.gbdt, classes)
    target_table = train if test is None else test
    Xt = target_table.features[:, selected]
    labels, proba = ens.predict(Xt)
    return S2Result(cfg.target, target_table.row_keys, labels, proba, confidence(proba),
                    [train.feature_names[j] for j in selected], ens)


def _multiclass_rfe(X, y, count, cfg):
    # rank by gain summed over the one-vs-rest problems
    from .gbdt import train_gbdt
    remaining = list(range(X.shape[1]))
    while len(remaining) > count:
        gains = np.zeros(len(remaining))
        for c in np.unique(y):
            gains += train_gbdt(X[:, remaining], (y == c).astype(int), None, cfg).feature_importances
        k = min(max(1, int(0.1 * len(remaining))), len(remaining) - count)
        order = sorted(range(len(remaining)), key=lambda i: (gains[i], -remaining[i]))
        drop = {remaining[i] for i in order[:k]}
        remaining = [f for f in remaining if f not in drop]
    return remaining
