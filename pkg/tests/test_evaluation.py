import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (
    pairwise_accuracy,
    pairwise_f1,
    pairwise_kappa,
    pairwise_macro_f1,
)
from ulws.errors import EmptyMatrix, LabelOutOfRange, LengthMismatch
from ulws.evaluation import (
    accuracy,
    aggregate_folds,
    cohen_kappa,
    confusion,
    macro_f1,
    metrics_from_confusion,
    per_class_f1,
)


def test_confusion_direct_tally():
    cm = confusion([0, 0, 1], [0, 1, 1])
    assert cm[0, 0] == 1 and cm[0, 1] == 1 and cm[1, 1] == 1
    assert cm.sum() == 3


def test_confusion_perfect_is_diagonal():
    y = [0, 1, 2, 3, 4, 2, 2]
    cm = confusion(y, y)
    assert np.array_equal(cm, np.diag([1, 1, 3, 1, 1]))


def test_confusion_empty():
    cm = confusion([], [])
    assert cm.sum() == 0
    with pytest.raises(EmptyMatrix):
        accuracy(cm)


def test_confusion_errors():
    with pytest.raises(LengthMismatch):
        confusion([0, 1], [0])
    with pytest.raises(LabelOutOfRange):
        confusion([0, 5], [0, 0])
    with pytest.raises(LabelOutOfRange):
        confusion([0, -1], [0, 0])


def test_perfect_agreement_metrics():
    cm = confusion([0, 1, 2, 3, 4], [0, 1, 2, 3, 4])
    assert accuracy(cm) == 1.0
    assert np.array_equal(per_class_f1(cm), np.ones(5))
    assert macro_f1(cm) == 1.0
    assert cohen_kappa(cm) == 1.0


def test_all_one_class_predictions():
    # true half class 0, half class 1; everything predicted class 0
    y_true = [0] * 50 + [1] * 50
    y_pred = [0] * 100
    cm = confusion(y_true, y_pred)
    assert accuracy(cm) == 0.5
    f1 = per_class_f1(cm)
    assert f1[0] == pytest.approx(2 / 3)
    assert f1[1] == 0.0
    assert macro_f1(cm) == pytest.approx((2 / 3) / 5)
    assert cohen_kappa(cm) == 0.0  # p_o == p_e == 0.5


def test_absent_class_f1_is_zero():
    cm = confusion([0, 1], [0, 1])
    assert per_class_f1(cm)[4] == 0.0


def test_kappa_near_zero_for_independent_labels():
    rng = np.random.default_rng(123)
    y_true = rng.integers(0, 5, size=100_000)
    y_pred = rng.integers(0, 5, size=100_000)
    assert abs(cohen_kappa(confusion(y_true, y_pred))) < 0.02


def test_metrics_match_pairwise_oracle_on_random_vectors():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        y_true = rng.integers(0, 5, size=n).tolist()
        y_pred = rng.integers(0, 5, size=n).tolist()
        cm = confusion(y_true, y_pred)
        assert accuracy(cm) == pairwise_accuracy(y_true, y_pred)
        for c in range(5):
            assert per_class_f1(cm)[c] == pairwise_f1(y_true, y_pred, c)
        assert macro_f1(cm) == pairwise_macro_f1(y_true, y_pred)
        assert cohen_kappa(cm) == pytest.approx(
            pairwise_kappa(y_true, y_pred), abs=1e-12
        )


@settings(max_examples=100)
@given(
    st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=60),
    st.permutations(list(range(5))),
)
def test_class_permutation_invariance(pairs, perm):
    y_true = [t for t, _ in pairs]
    y_pred = [p for _, p in pairs]
    cm = confusion(y_true, y_pred)
    cm_perm = confusion([perm[t] for t in y_true], [perm[p] for p in y_pred])
    assert accuracy(cm) == accuracy(cm_perm)
    assert macro_f1(cm) == pytest.approx(macro_f1(cm_perm), abs=1e-12)
    assert cohen_kappa(cm) == pytest.approx(cohen_kappa(cm_perm), abs=1e-12)
    f1 = per_class_f1(cm)
    f1_perm = per_class_f1(cm_perm)
    for original_class in range(5):
        assert f1[original_class] == f1_perm[perm[original_class]]


def test_aggregate_single_fold_identity():
    y_true = [0, 1, 2, 2, 3]
    y_pred = [0, 1, 1, 2, 3]
    pooled = aggregate_folds([(y_true, y_pred)])
    direct = metrics_from_confusion(confusion(y_true, y_pred))
    assert pooled == direct


def test_aggregate_identical_folds_keeps_rates():
    y_true = [0, 1, 2, 2]
    y_pred = [0, 2, 2, 2]
    once = aggregate_folds([(y_true, y_pred)])
    twice = aggregate_folds([(y_true, y_pred), (y_true, y_pred)])
    assert twice.accuracy == once.accuracy
    assert twice.macro_f1 == once.macro_f1
    assert twice.kappa == pytest.approx(once.kappa, abs=1e-12)
    assert twice.n_epochs == 2 * once.n_epochs


def test_pooled_accuracy_is_epoch_weighted_mean():
    fold_a = ([0, 1, 2, 3], [0, 1, 2, 3])  # 4 epochs, acc 1.0
    fold_b = ([0, 0], [1, 1])  # 2 epochs, acc 0.0
    pooled = aggregate_folds([fold_a, fold_b])
    assert pooled.accuracy == pytest.approx((4 * 1.0 + 2 * 0.0) / 6)
