import numpy as np
import pytest

from src.errors import InvalidArgumentError
from src.models.records import UNKNOWN_LABEL, UNKNOWN_NAME
from src.services.metrics_service import auroc, label_vocabulary, macro_f1, pairwise_auroc, per_class_rows


def test_perfect_separation():
    assert auroc([0.1, 0.2, 0.8, 0.9], [False, False, True, True]) == 1.0
    assert auroc([0.8, 0.9, 0.1, 0.2], [False, False, True, True]) == 0.0


def test_constant_scores_give_one_half():
    assert auroc([0.5] * 6, [False, True, False, True, True, False]) == pytest.approx(0.5)


def test_matches_pairwise_count_on_random_trials():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(4, 201))
        # rounding creates ties
        scores = np.round(rng.random(n), 2)
        is_unknown = rng.random(n) < 0.5
        is_unknown[0], is_unknown[1] = True, False
        assert auroc(scores, is_unknown) == pairwise_auroc(scores, is_unknown)


def test_complement_symmetry():
    rng = np.random.default_rng(1)
    scores = rng.random(30)
    is_unknown = np.arange(30) % 3 == 0
    assert auroc(scores, is_unknown) + auroc(-scores, is_unknown) == pytest.approx(1.0)


def test_auroc_needs_both_populations():
    with pytest.raises(InvalidArgumentError):
        auroc([0.1, 0.2], [True, True])
    with pytest.raises(InvalidArgumentError):
        auroc([0.1, 0.2], [False, False])
    with pytest.raises(InvalidArgumentError):
        auroc([0.1, 0.2, 0.3], [False, True])


def test_vocabulary_ends_with_unknown():
    assert label_vocabulary(3) == [0, 1, 2, UNKNOWN_LABEL]


def test_perfect_predictions():
    truth = [0, 1, 2, UNKNOWN_LABEL, UNKNOWN_LABEL]
    score, table = macro_f1(truth, truth, label_vocabulary(3))
    assert score == 1.0
    assert list(table["label"]) == [0, 1, 2, UNKNOWN_NAME]


def test_rejecting_everything():
    # two known classes with two samples each, four unknowns, every sample rejected
    truth = [0, 0, 1, 1] + [UNKNOWN_LABEL] * 4
    predictions = [UNKNOWN_LABEL] * 8
    score, table = macro_f1(predictions, truth, label_vocabulary(2))
    unknown_row = table[table["label"] == UNKNOWN_NAME].iloc[0]
    assert unknown_row["f1"] == pytest.approx(2 / 3)
    assert score == pytest.approx((0 + 0 + 2 / 3) / 3)


def test_three_class_hand_computed():
    truth = [0, 0, 1, 1, UNKNOWN_LABEL, UNKNOWN_LABEL]
    predictions = [0, 1, 1, 1, UNKNOWN_LABEL, 0]
    score, table = macro_f1(predictions, truth, label_vocabulary(2))
    # class 0: p 1/2 r 1/2; class 1: p 2/3 r 1; unknown: p 1 r 1/2
    expected = [0.5, 0.8, 2 / 3]
    assert list(table["f1"]) == pytest.approx(expected)
    assert score == pytest.approx(sum(expected) / 3)
    assert list(table["support"]) == [2, 2, 2]


def test_unpredicted_class_counts_as_zero():
    truth = [0, 1, 2]
    predictions = [0, 1, 1]
    score, table = macro_f1(predictions, truth, [0, 1, 2, UNKNOWN_LABEL])
    assert table["f1"].iloc[2] == 0.0
    assert table["f1"].iloc[3] == 0.0
    assert score == pytest.approx((1.0 + 2 / 3 + 0.0 + 0.0) / 4)


def test_labels_outside_the_vocabulary():
    with pytest.raises(InvalidArgumentError):
        macro_f1([0, 5], [0, 1], label_vocabulary(2))
    with pytest.raises(InvalidArgumentError):
        macro_f1([0], [0, 1], label_vocabulary(2))


def test_per_class_rows_are_plain_python():
    _, table = macro_f1([0, 1], [0, 1], label_vocabulary(2))
    rows = per_class_rows(table)
    assert rows[0] == {"label": 0, "precision": 1.0, "recall": 1.0, "f1": 1.0, "support": 1}
    assert all(isinstance(row["support"], int) for row in rows)
