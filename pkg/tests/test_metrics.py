"""Metric arithmetic against hand values and the sklearn reference."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import balanced_accuracy_score, f1_score

import pyragraph as pg
from pyragraph.errors import ValidationError
from pyragraph.metrics import weighted_f1


class TestBalancedAccuracy:
    def test_diagonal_is_one(self):
        assert pg.balanced_accuracy(np.diag([3, 7, 2])) == 1.0

    def test_constant_predictor_five_classes(self):
        cm = np.zeros((5, 5), dtype=int)
        cm[:, 0] = [10, 3, 8, 2, 6]  # everything predicted as class 0
        assert pg.balanced_accuracy(cm) == pytest.approx(0.2)

    def test_hand_value(self):
        assert pg.balanced_accuracy([[8, 2], [4, 6]]) == pytest.approx(0.7)

    def test_empty_true_class_rejected(self):
        with pytest.raises(ValidationError, match="class 1"):
            pg.balanced_accuracy([[5, 0], [0, 0]])

    def test_duplicating_one_class_invariant(self):
        cm = np.array([[8, 2], [4, 6]])
        doubled = cm.copy()
        doubled[0] *= 3
        assert pg.balanced_accuracy(doubled) == pytest.approx(pg.balanced_accuracy(cm))


class TestMacroF1:
    def test_diagonal_is_one(self):
        assert pg.macro_f1(np.diag([1, 5, 9])) == 1.0

    def test_hand_value(self):
        # F1_0 = 16/22, F1_1 = 12/18
        expected = (16 / 22 + 12 / 18) / 2
        assert pg.macro_f1([[8, 2], [4, 6]]) == pytest.approx(expected)
        assert pg.macro_f1([[8, 2], [4, 6]]) == pytest.approx(0.6970, abs=5e-5)

    def test_all_wrong_is_zero(self):
        assert pg.macro_f1([[0, 3], [4, 0]]) == 0.0

    def test_weighted_variant_hand_value(self):
        cm = np.array([[8, 2], [4, 6]])
        expected = (16 / 22 * 10 + 12 / 18 * 10) / 20
        assert weighted_f1(cm) == pytest.approx(expected)


class TestArgmaxPredict:
    def test_plain(self):
        assert pg.argmax_predict((0.1, 0.7, 0.2)) == 1

    def test_tie_breaks_low(self):
        assert pg.argmax_predict((0.5, 0.5)) == 0

    def test_uniform_five(self):
        assert pg.argmax_predict([0.2] * 5) == 0


@settings(max_examples=50, deadline=None)
@given(
    st.integers(2, 5).flatmap(
        lambda c: st.lists(
            st.tuples(st.integers(0, c - 1), st.integers(0, c - 1)),
            min_size=c * 2,
            max_size=60,
        ).map(lambda pairs: (c, pairs))
    )
)
def test_matches_sklearn(case):
    classes, pairs = case
    y_true = [t for t, _ in pairs] + list(range(classes))  # every class present
    y_pred = [p for _, p in pairs] + [0] * classes
    cm = pg.confusion_matrix(y_true, y_pred, classes)
    assert pg.balanced_accuracy(cm) == pytest.approx(
        balanced_accuracy_score(y_true, y_pred)
    )
    assert pg.macro_f1(cm) == pytest.approx(
        f1_score(y_true, y_pred, average="macro", labels=range(classes), zero_division=0)
    )
    assert 0.0 <= pg.balanced_accuracy(cm) <= 1.0
    assert 0.0 <= pg.macro_f1(cm) <= 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    c = int(rng.integers(2, 6))
    cm = rng.integers(1, 20, size=(c, c))
    perm = rng.permutation(c)
    permuted = cm[np.ix_(perm, perm)]
    assert pg.balanced_accuracy(permuted) == pytest.approx(pg.balanced_accuracy(cm))
    assert pg.macro_f1(permuted) == pytest.approx(pg.macro_f1(cm))
