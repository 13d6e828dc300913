import numpy as np
import pytest
from hypothesis import given, strategies as st

from sasl.errors import LengthMismatch, ZeroVariance
from sasl.gating import (
    DEFAULT_TAU_CONF,
    GatingConfig,
    disagreement_report,
    gate_predictions,
    read_decisions,
    z_profile,
)


def test_gate_examples():
    assert gate_predictions([1], [1], [0.5]).final[0] == 1
    assert gate_predictions([0], [1], [0.98]).final[0] == 1
    assert gate_predictions([0], [1], [0.969]).final[0] == 0
    assert gate_predictions([0], [1], [0.97]).final[0] == 1


def test_config_defaults_and_validation():
    cfg = GatingConfig()
    assert cfg.tau("S2") == 0.943 and cfg.tau("Q1") == 0.97 and cfg.tau("other") == 0.97
    assert GatingConfig.from_dict(cfg.to_dict()) == cfg
    assert GatingConfig.from_dict({"tau_conf": {"Q1": 0.9}}).tau("Q1") == 0.9
    assert DEFAULT_TAU_CONF["S2"] == 0.943
    with pytest.raises(ValueError):
        GatingConfig({"Q1": 0.4})
    r = gate_predictions([0], [1], [0.95], GatingConfig(), target="S2")
    assert r.final[0] == 1
    r = gate_predictions([0], [1], [0.95], GatingConfig(), target="Q1")
    assert r.final[0] == 0


def test_gate_errors():
    with pytest.raises(LengthMismatch):
        gate_predictions([0, 1], [1], [0.9])
    with pytest.raises(ValueError):
        gate_predictions([0], [1], [1.2])


labels = st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2), st.floats(0, 1)),
                  min_size=1, max_size=50)


@given(labels)
def test_tau_extremes(rows):
    p, s, c = map(np.array, zip(*rows))
    np.testing.assert_array_equal(gate_predictions(p, s, np.minimum(c, 0.999), 1.0).final, p)
    np.testing.assert_array_equal(gate_predictions(p, s, np.maximum(c, 0.5), 0.5).final, s)


@given(labels)
def test_overrides_monotone_in_tau(rows):
    p, s, c = map(np.array, zip(*rows))
    counts = [gate_predictions(p, s, c, t).overrides for t in np.linspace(0.5, 1.0, 11)]
    assert all(b <= a for a, b in zip(counts, counts[1:]))


@given(labels)
def test_final_label_comes_from_a_model(rows):
    p, s, c = map(np.array, zip(*rows))
    r = gate_predictions(p, s, c, 0.8)
    assert np.all((r.final == p) | (r.final == s))
    assert len(r.decisions) == int((p != s).sum())


def test_decision_log_round_trip(tmp_path):
    r = gate_predictions([0, 1, 1], [1, 1, 0], [0.99, 0.6, 0.7],
                         row_keys=[("a", 1), ("a", 2), ("b", 1)])
    r.write_log(tmp_path / "d.jsonl")
    back = read_decisions(tmp_path / "d.jsonl")
    assert back == r.decisions
    assert [d.row for d in back] == [("a", 1), ("b", 1)]
    assert r.overrides == 1


def test_z_profile_examples():
    all_rows = np.array([[2.0, 1.0], [4.0, 1.0], [2.0, 3.0], [4.0, 3.0]])
    prof = z_profile(all_rows[[1, 3]], all_rows, ["a", "b"])
    np.testing.assert_allclose(prof.z, [1.0, 0.0])
    assert prof.size == 2
    assert [r[0] for r in prof.sorted_rows()] == ["a", "b"]
    np.testing.assert_array_equal(z_profile(all_rows, all_rows, ["a", "b"]).z, 0.0)
    with pytest.raises(ZeroVariance):
        z_profile(all_rows[:1], np.ones((3, 1)), ["c"])
    with pytest.raises(ValueError):
        z_profile(np.empty((0, 2)), all_rows, ["a", "b"])


@given(st.integers(0, 1000))
def test_z_profile_matches_formula(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 3))
    mask = rng.random(30) < 0.4
    mask[0] = True
    prof = z_profile(X[mask], X, ["a", "b", "c"])
    np.testing.assert_allclose(prof.z, (X[mask].mean(0) - X.mean(0)) / X.std(0), rtol=1e-12)


def test_disagreement_report(tmp_path):
    X = np.array([[0.0, 1.0], [1.0, 1.0], [2.0, 1.0], [3.0, 1.0]])
    rep = disagreement_report([1, 0, 0, 1], [0, 1, 0, 1], X, ["a", "const"])
    assert rep.counts == {"sec0_pri1": 1, "sec1_pri0": 1} and rep.total == 2
    assert rep.profiles["sec0_pri1"].features == ("a",)
    assert rep.profiles["sec0_pri1"].z[0] == pytest.approx((0 - 1.5) / np.std([0, 1, 2, 3]))
    rep.profiles["sec1_pri0"].write_csv(tmp_path / "z.csv")
    assert (tmp_path / "z.csv").read_text().splitlines()[0] == "feature,z,mu_group,mu_global,sigma_global"
    empty = disagreement_report([1, 1], [1, 1], X[:2], ["a", "const"])
    assert empty.total == 0 and empty.profiles == {}
    with pytest.raises(LengthMismatch):
        disagreement_report([1], [1, 0], X[:2], ["a", "const"])
