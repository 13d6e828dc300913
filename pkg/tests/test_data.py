import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sasl.data import (
    INTERACTION,
    MISSING_LABEL,
    ObservationTable,
    Schema,
    chrono_split,
    expand_design,
    ingest_csv,
    parse_timestamp,
    standardize,
    write_csv,
)
from sasl.errors import (
    DataNotFound,
    DuplicateKey,
    FewerThanTwoSubjects,
    MissingColumn,
    SubjectTooShort,
    TargetOutOfRange,
    UnparseableValue,
    ZeroVariance,
)
from sasl.synthetic import generate, lifelog_spec

ROLES = {"subject_id": "subject", "date": "timestamp", "screen_on": "feature", "Q1": "target"}


def _csv(tmp_path, text, name="t.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def _table(subjects, stamps, feats, names=("x",), indicators=(), targets=None):
    cols = [("subject_id", "subject"), ("date", "timestamp")]
    cols += [(n, "indicator" if n in indicators else "feature") for n in names]
    cols += [(t, "target") for t in (targets or {})]
    return ObservationTable.build(Schema(tuple(cols)), subjects, stamps,
                                  np.asarray(feats, dtype=float).reshape(len(subjects), -1),
                                  targets or {})


def test_ingest_smallest_table(tmp_path):
    p = _csv(tmp_path, "subject_id,date,screen_on,Q1\nB,2024-01-02,0.5,1\nA,2024-01-01,0.1,0\n"
                       "A,2024-01-02,0.3,1\n")
    t = ingest_csv(p, ROLES)
    assert t.n_rows == 3
    assert t.feature_names == ("screen_on",)
    assert list(t.subjects) == ["A", "A", "B"]
    assert list(t.labels("Q1")) == [0, 1, 1]


def test_ingest_duplicate_key(tmp_path):
    p = _csv(tmp_path, "subject_id,date,screen_on,Q1\nA,2024-01-01,1,0\nA,2024-01-01,2,1\n")
    with pytest.raises(DuplicateKey):
        ingest_csv(p, ROLES)


def test_ingest_ternary_label_out_of_range(tmp_path):
    roles = {**ROLES, "S1": "target"}
    p = _csv(tmp_path, "subject_id,date,screen_on,Q1,S1\nA,2024-01-01,1,0,3\n")
    with pytest.raises(TargetOutOfRange):
        ingest_csv(p, roles)
    p = _csv(tmp_path, "subject_id,date,screen_on,Q1,S1\nA,2024-01-01,1,0,2\n")
    assert ingest_csv(p, roles).labels("S1")[0] == 2


def test_ingest_errors(tmp_path):
    with pytest.raises(DataNotFound):
        ingest_csv(tmp_path / "nope.csv", ROLES)
    p = _csv(tmp_path, "subject_id,date,Q1\nA,2024-01-01,0\n")
    with pytest.raises(MissingColumn):
        ingest_csv(p, ROLES)
    p = _csv(tmp_path, "subject_id,date,screen_on,Q1\nA,2024-01-01,abc,0\n")
    with pytest.raises(UnparseableValue):
        ingest_csv(p, ROLES)
    p = _csv(tmp_path, "subject_id,date,screen_on,Q1\nA,yesterday,1,0\n")
    with pytest.raises(UnparseableValue):
        ingest_csv(p, ROLES)


def test_missing_target_cell_is_unlabeled(tmp_path):
    p = _csv(tmp_path, "subject_id,date,screen_on,Q1\nA,2024-01-01,1,\nA,2024-01-02,2,1\n")
    t = ingest_csv(p, ROLES)
    assert t.labels("Q1")[0] == MISSING_LABEL
    assert list(t.labeled_rows("Q1")) == [1]


def test_timestamps():
    assert parse_timestamp("1700000000") == (1700000000, "epoch")
    assert parse_timestamp("1970-01-02") == (86400, "date")
    assert parse_timestamp("1970-01-01T00:01:00+00:00") == (60, "datetime")


def test_csv_round_trip_keeps_header_order(tmp_path):
    table, _ = generate(lifelog_spec(1, subjects=3, days=6))
    write_csv(table, tmp_path / "a.csv")
    back = ingest_csv(tmp_path / "a.csv", table.schema)
    assert back.equals(table)
    write_csv(back, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_standardize_examples():
    t = _table(["A", "B"], [0, 0], [0.0, 2.0])
    s, stats = standardize(t)
    assert list(s.features[:, 0]) == [-1.0, 1.0]
    with pytest.raises(ZeroVariance) as err:
        standardize(_table(["A", "A", "A"], [0, 1, 2], [5.0, 5.0, 5.0]))
    assert err.value.feature == "x"
    t = _table(["A", "A", "A"], [0, 1, 2], [0.0, 2.0, 4.0])
    s, stats = standardize(t, train_rows=[0, 1])
    assert stats.mean[0] == 1.0 and stats.scale[0] == 1.0
    assert s.features[2, 0] == 3.0


def test_standardize_leaves_indicators():
    t = _table(["A", "A", "B"], [0, 1, 0], [[1.0, 0.0], [2.0, 1.0], [4.0, 1.0]],
               names=("x", "mon"), indicators=("mon",))
    s, stats = standardize(t)
    assert stats.names == ("x",)
    np.testing.assert_array_equal(s.feature("mon"), [0.0, 1.0, 1.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=40).filter(
    lambda v: np.std(v) > 1e-3 * max(1.0, np.max(np.abs(v)))))
def test_standardize_moments_and_idempotence(values):
    n = len(values)
    t = _table(["A"] * n, list(range(n)), values)
    s, _ = standardize(t)
    assert abs(s.features[:, 0].mean()) < 1e-10
    assert abs(s.features[:, 0].std() - 1.0) < 1e-10
    s2, _ = standardize(s)
    assert np.max(np.abs(s2.features - s.features)) < 1e-10


def test_expand_design_names():
    t = _table(["id1", "id2"], [0, 0], [0.1, 0.2], names=("screen_on",))
    X = expand_design(t)
    assert X.names == ["intercept", "screen_on", "id1", "id2", "id1:screen_on", "id2:screen_on"]
    assert X.protected == frozenset({"intercept"})


def test_expand_design_one_subject():
    with pytest.raises(FewerThanTwoSubjects):
        expand_design(_table(["A", "A"], [0, 1], [1.0, 2.0]))


def test_expand_design_counts_and_interactions():
    table, _ = generate(lifelog_spec(0, subjects=10, days=4))
    five = table.with_features(table.features[:, :5], table.feature_names[:5])
    assert expand_design(five).shape[1] == 1 + 5 + 10 + 50
    X = expand_design(table)
    S, F = len(table.subject_ids), len(table.feature_names)
    assert X.shape[1] == 1 + F + S + S * F
    names = X.names
    for j, col in enumerate(X.columns):
        if col.kind == INTERACTION:
            parent = X.values[:, names.index(col.feature_name)]
            ind = X.values[:, names.index(col.subject_id)]
            np.testing.assert_array_equal(X.values[:, j], parent * ind)


def test_chrono_split_examples():
    t = _table(["A"] * 4, [1, 2, 3, 4], [0, 1, 2, 3])
    f1, f2 = chrono_split(t)
    assert list(t.timestamps[f1.train_rows]) == [1, 2]
    assert list(t.timestamps[f1.valid_rows]) == [3, 4]
    assert list(f2.train_rows) == list(f1.valid_rows)
    t = _table(["A"] * 5, [1, 2, 3, 4, 5], [0, 1, 2, 3, 4])
    f1, _ = chrono_split(t)
    assert list(t.timestamps[f1.train_rows]) == [1, 2, 3]
    t = _table(["A", "A", "B", "B"], [1, 2, 1, 2], [0, 1, 2, 3])
    for fold in chrono_split(t):
        assert set(t.subjects[fold.train_rows]) == {"A", "B"}
    with pytest.raises(SubjectTooShort):
        chrono_split(_table(["A", "A", "B"], [1, 2, 1], [0, 1, 2]))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.integers(0, 10_000), min_size=2, max_size=15, unique=True),
                min_size=1, max_size=4))
def test_chrono_folds_never_interleave(per_subject):
    subjects, stamps = [], []
    for i, ts in enumerate(per_subject):
        subjects += [f"s{i}"] * len(ts)
        stamps += ts
    t = _table(subjects, stamps, np.arange(len(stamps)))
    for fold in chrono_split(t):
        assert not set(fold.train_rows) & set(fold.valid_rows)
        assert len(fold.train_rows) + len(fold.valid_rows) == t.n_rows
        for s in t.subject_ids:
            tr = t.timestamps[fold.train_rows][t.subjects[fold.train_rows] == s]
            va = t.timestamps[fold.valid_rows][t.subjects[fold.valid_rows] == s]
            if tr.size and va.size:
                assert tr.max() < va.min() or va.max() < tr.min()
