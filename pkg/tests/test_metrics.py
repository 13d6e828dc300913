import numpy as np
import pytest
from hypothesis import given, strategies as st

from sasl.errors import LengthMismatch, SingleClass
from sasl.metrics import macro_f1, ovr_macro_auc, per_class_f1, roc_auc


def brute_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    credit = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return credit / (len(pos) * len(neg))


def test_auc_examples():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0
    assert roc_auc([0.5, 0.5, 0.5], [0, 1, 1]) == 0.5


def test_auc_errors():
    with pytest.raises(SingleClass):
        roc_auc([1, 2], [1, 1])
    with pytest.raises(LengthMismatch):
        roc_auc([1, 2, 3], [0, 1])


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=2, max_size=50)
       .filter(lambda v: len({l for _, l in v}) == 2))
def test_auc_matches_pair_count(pairs):
    scores, labels = zip(*pairs)
    assert roc_auc(scores, labels) == brute_auc(scores, labels)


def test_auc_invariant_to_monotone_transform():
    rng = np.random.default_rng(1)
    s = rng.normal(size=60)
    y = (rng.uniform(size=60) < 0.4).astype(int)
    assert roc_auc(np.exp(3 * s), y) == roc_auc(s, y)


def test_ovr_auc_perfect_ordinal_score():
    z = np.array([0.0, 0.1, 1.0, 0.9, 2.0, 2.1])
    y = np.array([0, 0, 1, 1, 2, 2])
    assert ovr_macro_auc(z, y) == 1.0
    with pytest.raises(SingleClass):
        ovr_macro_auc(z, np.zeros(6, dtype=int))


def test_macro_f1():
    assert macro_f1([0, 1, 1, 0], [0, 1, 1, 0]) == 1.0
    assert macro_f1([1, 1, 1, 1], [0, 1, 1, 0]) == pytest.approx((0 + 2 * 2 / 6) / 2)
    # class 2 absent from both sides counts as F1 = 0
    assert macro_f1([0, 1], [0, 1], classes=[0, 1, 2]) == pytest.approx(2 / 3)
    np.testing.assert_allclose(per_class_f1([0, 0, 1], [0, 1, 1], [0, 1]), [2 / 3, 2 / 3])
