"""Observation tables, standardization, interaction-expanded designs, and
chronological folds."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import (
    ColumnMismatch,
    DataNotFound,
    DuplicateKey,
    FewerThanTwoSubjects,
    MissingColumn,
    SubjectTooShort,
    TargetOutOfRange,
    UnparseableValue,
    ZeroVariance,
)

ROLES = ("subject", "timestamp", "feature", "indicator", "target")
# Ordinal class counts of the lifelog targets; anything unlisted is binary.
DEFAULT_TARGET_LEVELS = {"Q1": 2, "Q2": 2, "Q3": 2, "S1": 3, "S2": 2, "S3": 2}
MISSING_LABEL = -1


def _freeze(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# Timestamps
# ---------------------------------------------------------------------------

def parse_timestamp(text: str) -> tuple[int, str]:
    """Parse an ISO-8601 date/datetime or integer epoch seconds.

    Returns ``(epoch_seconds, kind)`` with kind in {"epoch", "date", "datetime"}.
    Naive datetimes are read as UTC.
    """
    s = text.strip()
    if s.lstrip("-").isdigit():
        return int(s), "epoch"
    try:
        dt = datetime.fromisoformat(s)
    except ValueError as exc:
        raise UnparseableValue(f"unparseable timestamp {text!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    kind = "date" if len(s) == 10 else "datetime"
    return int(dt.timestamp()), kind


def format_timestamp(value: int, kind: str) -> str:
    if kind == "epoch":
        return str(int(value))
    dt = datetime.fromtimestamp(int(value), tz=timezone.utc)
    if kind == "date":
        return dt.strftime("%Y-%m-%d")
    return dt.strftime("%Y-%m-%dT%H:%M:%S")


# ---------------------------------------------------------------------------
# Schema and table
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Schema:
    """Column-role map in header order, plus ordinal class counts."""

    columns: tuple[tuple[str, str], ...]
    target_levels: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        roles = [r for _, r in self.columns]
        for name, role in self.columns:
            if role not in ROLES:
                raise ValueError(f"column {name!r}: unknown role {role!r}")
        if roles.count("subject") != 1 or roles.count("timestamp") != 1:
            raise ValueError("schema needs exactly one subject and one timestamp column")

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        cols = d["columns"] if "columns" in d else d
        levels = dict(d.get("target_levels", {})) if "columns" in d else {}
        return cls(tuple((str(k), str(v)) for k, v in cols.items()), levels)

    @classmethod
    def load(cls, path) -> "Schema":
        path = Path(path)
        if not path.exists():
            raise DataNotFound(f"schema file not found: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return {"columns": dict(self.columns), "target_levels": dict(self.target_levels)}

    def names(self, role: str) -> list[str]:
        return [n for n, r in self.columns if r == role]

    def levels(self, target: str) -> int:
        return int(self.target_levels.get(target, DEFAULT_TARGET_LEVELS.get(target, 2)))


@dataclass(frozen=True, eq=False)
class ObservationTable:
    """Per-subject, per-day rows of features and ordinal targets.

    Rows are kept sorted by ``(subject, timestamp)``. Missing labels are
    stored as ``MISSING_LABEL``. Arrays are read-only.
    """

    schema: Schema
    subjects: np.ndarray
    timestamps: np.ndarray
    features: np.ndarray
    targets: dict[str, np.ndarray]
    timestamp_kind: str = "date"

    def __post_init__(self):
        n = len(self.subjects)
        if self.timestamps.shape != (n,) or self.features.shape != (n, len(self.feature_names)):
            raise ValueError("table arrays have inconsistent shapes")
        keys = set(zip(self.subjects.tolist(), self.timestamps.tolist()))
        if len(keys) != n:
            raise DuplicateKey("duplicate (subject, timestamp) rows")
        for name in self.target_names:
            lab = self.targets[name]
            if lab.shape != (n,):
                raise ValueError(f"target {name!r} has wrong length")
            levels = self.schema.levels(name)
            bad = (lab != MISSING_LABEL) & ((lab < 0) | (lab >= levels))
            if bad.any():
                raise TargetOutOfRange(
                    f"target {name!r} label {int(lab[bad][0])} outside 0..{levels - 1}")

    @classmethod
    def build(cls, schema, subjects, timestamps, features, targets, timestamp_kind="date"):
        subjects = np.asarray(subjects, dtype=object).astype(str).astype(object)
        timestamps = np.asarray(timestamps, dtype=np.int64)
        order = np.lexsort((timestamps, subjects.astype(str)))
        feats = np.asarray(features, dtype=float).reshape(len(subjects), -1)[order]
        tg = {k: _freeze(np.asarray(v, dtype=np.int64)[order]) for k, v in targets.items()}
        return cls(schema, _freeze(subjects[order]), _freeze(timestamps[order]),
                   _freeze(feats), tg, timestamp_kind)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(n for n, r in self.schema.columns if r in ("feature", "indicator"))

    @property
    def indicator_names(self) -> frozenset[str]:
        return frozenset(self.schema.names("indicator"))

    @property
    def target_names(self) -> tuple[str, ...]:
        return tuple(n for n in self.schema.names("target") if n in self.targets)

    @property
    def n_rows(self) -> int:
        return len(self.subjects)

    @property
    def subject_ids(self) -> list[str]:
        return sorted(set(self.subjects.tolist()))

    @property
    def row_keys(self) -> list[tuple[str, int]]:
        return list(zip(self.subjects.tolist(), self.timestamps.tolist()))

    def feature(self, name: str) -> np.ndarray:
        try:
            return self.features[:, self.feature_names.index(name)]
        except ValueError:
            raise MissingColumn(f"no feature named {name!r}") from None

    def labels(self, target: str) -> np.ndarray:
        if target not in self.targets:
            raise MissingColumn(f"no target named {target!r}")
        return self.targets[target]

    def labeled_rows(self, target: str) -> np.ndarray:
        return np.flatnonzero(self.labels(target) != MISSING_LABEL)

    def subset(self, rows) -> "ObservationTable":
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        rows = np.sort(rows)
        return ObservationTable(
            self.schema, _freeze(self.subjects[rows]), _freeze(self.timestamps[rows]),
            _freeze(self.features[rows]), {k: _freeze(v[rows]) for k, v in self.targets.items()},
            self.timestamp_kind)

    def with_features(self, features, names=None, indicators=()) -> "ObservationTable":
        """Replace the feature block.

        Surviving columns keep their header position; new names are appended.
        """
        names = self.feature_names if names is None else tuple(names)
        indicators = set(indicators) | (self.indicator_names & set(names))
        wanted = set(names)
        cols = [(n, r) for n, r in self.schema.columns
                if r not in ("feature", "indicator") or n in wanted]
        present = {n for n, _ in cols}
        cols += [(n, "feature") for n in names if n not in present]
        cols = [(n, ("indicator" if n in indicators else "feature")
                 if r in ("feature", "indicator") else r) for n, r in cols]
        schema = Schema(tuple(cols), dict(self.schema.target_levels))
        order = [names.index(n) for n, r in cols if r in ("feature", "indicator")]
        feats = np.asarray(features, dtype=float).reshape(self.n_rows, len(names))[:, order]
        return ObservationTable(schema, self.subjects, self.timestamps, _freeze(feats),
                                dict(self.targets), self.timestamp_kind)

    def equals(self, other: "ObservationTable") -> bool:
        return (self.schema == other.schema
                and self.timestamp_kind == other.timestamp_kind
                and np.array_equal(self.subjects, other.subjects)
                and np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.features, other.features)
                and self.targets.keys() == other.targets.keys()
                and all(np.array_equal(v, other.targets[k]) for k, v in self.targets.items()))


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def ingest_csv(path, schema) -> ObservationTable:
    """Read a UTF-8 CSV into a validated, sorted ObservationTable.

    ``schema`` is a :class:`Schema`, a role-map dict, or a path to its JSON
    sidecar. CSV columns absent from the schema are ignored.
    """
    path = Path(path)
    if not path.exists():
        raise DataNotFound(f"data file not found: {path}")
    if not isinstance(schema, Schema):
        schema = Schema.from_dict(schema) if isinstance(schema, dict) else Schema.load(schema)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn(f"{path} has no header row") from None
        rows = list(reader)
    roles = dict(schema.columns)
    missing = [n for n in roles if n not in header]
    if missing:
        raise MissingColumn(f"{path}: missing column(s) {missing}")
    # header order wins so that echoed CSVs keep the input ordering
    schema = Schema(tuple((n, roles[n]) for n in header if n in roles), schema.target_levels)
    pos = {n: header.index(n) for n in roles}
    subj_col = schema.names("subject")[0]
    ts_col = schema.names("timestamp")[0]
    feat_cols = [n for n, r in schema.columns if r in ("feature", "indicator")]
    tgt_cols = schema.names("target")

    subjects, stamps, kinds = [], [], set()
    feats = np.empty((len(rows), len(feat_cols)))
    targets = {t: np.empty(len(rows), dtype=np.int64) for t in tgt_cols}
    for i, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise UnparseableValue(f"{path}:{i}: expected {len(header)} fields, got {len(row)}")
        subjects.append(row[pos[subj_col]].strip())
        ts, kind = parse_timestamp(row[pos[ts_col]])
        stamps.append(ts)
        kinds.add(kind)
        for j, name in enumerate(feat_cols):
            try:
                feats[i - 2, j] = float(row[pos[name]])
            except ValueError:
                raise UnparseableValue(f"{path}:{i}: column {name!r}: {row[pos[name]]!r}") from None
        for name in tgt_cols:
            cell = row[pos[name]].strip()
            if cell == "":
                targets[name][i - 2] = MISSING_LABEL
                continue
            try:
                value = float(cell)
            except ValueError:
                raise UnparseableValue(f"{path}:{i}: target {name!r}: {cell!r}") from None
            if value != int(value):
                raise TargetOutOfRange(f"{path}:{i}: target {name!r} label {cell!r} is not an integer")
            targets[name][i - 2] = int(value)
    if not np.isfinite(feats).all():
        raise UnparseableValue(f"{path}: non-finite feature value")
    kind = "epoch" if kinds == {"epoch"} else ("date" if kinds == {"date"} else "datetime")
    if len(kinds) > 1 and "epoch" in kinds:
        raise UnparseableValue(f"{path}: mixed epoch and ISO timestamps")
    return ObservationTable.build(schema, subjects, stamps, feats, targets, kind)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(table: ObservationTable, path) -> None:
    header = [n for n, _ in table.schema.columns]
    roles = dict(table.schema.columns)
    fidx = {n: i for i, n in enumerate(table.feature_names)}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(table.n_rows):
            out = []
            for name in header:
                role = roles[name]
                if role == "subject":
                    out.append(table.subjects[i])
                elif role == "timestamp":
                    out.append(format_timestamp(table.timestamps[i], table.timestamp_kind))
                elif role == "target":
                    lab = int(table.targets[name][i])
                    out.append("" if lab == MISSING_LABEL else str(lab))
                else:
                    out.append(_fmt(table.features[i, fidx[name]]))
            w.writerow(out)


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StandardizationStats:
    names: tuple[str, ...]
    mean: np.ndarray
    scale: np.ndarray

    def apply(self, table: ObservationTable) -> ObservationTable:
        feats = np.array(table.features, dtype=float)
        for name, mu, sd in zip(self.names, self.mean, self.scale):
            j = table.feature_names.index(name)
            feats[:, j] = (feats[:, j] - mu) / sd
        return table.with_features(feats)

    def to_dict(self) -> dict:
        return {"features": {n: {"mean": float(m), "scale": float(s)}
                             for n, m, s in zip(self.names, self.mean, self.scale)}}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationStats":
        f = d["features"]
        names = tuple(f)
        return cls(names, np.array([f[n]["mean"] for n in names]),
                   np.array([f[n]["scale"] for n in names]))


def standardize(table: ObservationTable, train_rows=None):
    """Center and scale continuous features with training-row statistics.

    Uses the population standard deviation. Indicator features pass through
    untouched. Returns ``(standardized_table, stats)``.
    """
    rows = np.arange(table.n_rows) if train_rows is None else np.asarray(train_rows)
    if rows.dtype == bool:
        rows = np.flatnonzero(rows)
    names = tuple(n for n in table.feature_names if n not in table.indicator_names)
    idx = [table.feature_names.index(n) for n in names]
    block = table.features[rows][:, idx]
    mean = block.mean(axis=0)
    scale = block.std(axis=0)
    for n, s in zip(names, scale):
        if not s > 0:
            raise ZeroVariance(n)
    stats = StandardizationStats(names, mean, scale)
    return stats.apply(table), stats


# ---------------------------------------------------------------------------
# Design matrices
# ---------------------------------------------------------------------------

INTERCEPT = "intercept"
GLOBAL = "global_feature"
SUBJECT = "subject_indicator"
INTERACTION = "interaction"


@dataclass(frozen=True)
class ColumnProvenance:
    kind: str
    feature_name: str | None = None
    subject_id: str | None = None

    def __post_init__(self):
        if self.kind == INTERACTION and (self.feature_name is None or self.subject_id is None):
            raise ValueError("interaction columns need both a feature and a subject")

    @property
    def name(self) -> str:
        if self.kind == INTERCEPT:
            return "intercept"
        if self.kind == GLOBAL:
            return self.feature_name
        if self.kind == SUBJECT:
            return self.subject_id
        return f"{self.subject_id}:{self.feature_name}"

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind,
                "feature": self.feature_name, "subject": self.subject_id}

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnProvenance":
        return cls(d["kind"], d.get("feature"), d.get("subject"))


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    values: np.ndarray
    columns: tuple[ColumnProvenance, ...]
    row_keys: tuple[tuple[str, int], ...]
    protected: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.values.shape[1] != len(self.columns):
            raise ValueError("column annotations do not match the matrix width")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def shape(self):
        return self.values.shape

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ColumnMismatch(f"design has no column {name!r}") from None

    def select(self, names) -> "DesignMatrix":
        idx = [self.index_of(n) for n in names]
        return replace(self, values=_freeze(self.values[:, idx]),
                       columns=tuple(self.columns[i] for i in idx))

    def drop(self, j: int) -> "DesignMatrix":
        keep = [i for i in range(len(self.columns)) if i != j]
        return replace(self, values=_freeze(self.values[:, keep]),
                       columns=tuple(self.columns[i] for i in keep))

    def rows(self, idx) -> "DesignMatrix":
        idx = np.asarray(idx)
        return replace(self, values=_freeze(self.values[idx]),
                       row_keys=tuple(self.row_keys[i] for i in idx))


def expand_design(table: ObservationTable, protect_intercept: bool = True,
                  subjects=None) -> DesignMatrix:
    """Intercept, global features, subject indicators, and every
    subject-by-feature interaction.

    ``subjects`` fixes the indicator set (e.g. the training subjects when
    expanding a test table); rows of unlisted subjects get all-zero
    indicators and interactions.
    """
    subjects = table.subject_ids if subjects is None else list(subjects)
    if len(subjects) < 2:
        raise FewerThanTwoSubjects("interaction expansion needs at least two subjects")
    names = table.feature_names
    if not names:
        raise ValueError("design needs at least one feature")
    n = table.n_rows
    ind = np.stack([(table.subjects == s).astype(float) for s in subjects], axis=1)
    blocks = [np.ones((n, 1)), table.features, ind]
    cols = [ColumnProvenance(INTERCEPT)]
    cols += [ColumnProvenance(GLOBAL, feature_name=f) for f in names]
    cols += [ColumnProvenance(SUBJECT, subject_id=s) for s in subjects]
    for j, f in enumerate(names):
        blocks.append(ind * table.features[:, [j]])
        cols += [ColumnProvenance(INTERACTION, feature_name=f, subject_id=s) for s in subjects]
    labels = [c.name for c in cols]
    if len(set(labels)) != len(labels):
        raise ValueError("feature names collide with subject identifiers")
    protected = frozenset({INTERCEPT}) if protect_intercept else frozenset()
    return DesignMatrix(_freeze(np.hstack(blocks)), tuple(cols),
                        tuple(table.row_keys), protected)


# ---------------------------------------------------------------------------
# Chronological folds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldSplit:
    fold_id: int
    train_rows: np.ndarray
    valid_rows: np.ndarray


def early_segment(table: ObservationTable) -> np.ndarray:
    """Boolean mask of rows at or before their subject's median timestamp."""
    early = np.zeros(table.n_rows, dtype=bool)
    for s in table.subject_ids:
        rows = np.flatnonzero(table.subjects == s)
        if rows.size < 2:
            raise SubjectTooShort(s)
        ts = table.timestamps[rows]
        early[rows] = ts <= np.median(ts)
    return early


def chrono_split(table: ObservationTable) -> tuple[FoldSplit, FoldSplit]:
    """Fold 1 trains on each subject's early half and validates on the late
    half; fold 2 swaps the roles."""
    early = early_segment(table)
    e, l = _freeze(np.flatnonzero(early)), _freeze(np.flatnonzero(~early))
    return FoldSplit(1, e, l), FoldSplit(2, l, e)
