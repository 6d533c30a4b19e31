import numpy as np
import pytest
import torch

from src.errors import InvalidArgumentError
from src.models.networks import build_classifier
from src.models.records import UNKNOWN_LABEL, JointProbabilityVector
from src.services.inference_service import (
    calibrate_epsilons, calibrate_epsilons_from_scores, detect_unknown, known_class_scores, predict_probs,
    recognize, recognize_from_scores, unknown_score,
)


def _jpv(rows, num_known):
    return JointProbabilityVector(torch.tensor(rows, dtype=torch.float32), num_known)


def test_unknown_score_examples():
    teacher = _jpv([[0.9, 0.1, 0.0], [0.5, 0.5, 0.0]], 2)
    student = _jpv([[0.3, 0.2, 0.5], [0.0, 0.0, 1.0]], 2)
    scores = unknown_score(teacher, student)
    assert torch.allclose(scores, torch.tensor([0.1 * 0.5, 0.5 * 1.0]))


def test_unknown_score_is_bounded():
    generator = torch.Generator().manual_seed(0)
    teacher = JointProbabilityVector(torch.softmax(torch.randn(50, 7, generator=generator), dim=1), 4)
    student = JointProbabilityVector(torch.softmax(torch.randn(50, 7, generator=generator), dim=1), 4)
    scores = unknown_score(teacher, student)
    assert ((scores >= 0) & (scores <= 1)).all()
    with pytest.raises(InvalidArgumentError):
        unknown_score(teacher, JointProbabilityVector(student.probs[:3], 4))


def test_detect_unknown_is_strict():
    teacher = _jpv([[0.2, 0.8], [0.6, 0.4], [0.1, 0.9]], 2)
    scores = torch.tensor([0.3, 0.5, 0.7])
    assert detect_unknown(scores, 0.5, teacher).tolist() == [1, 0, UNKNOWN_LABEL]
    assert detect_unknown(scores, 1.0, teacher).tolist() == [1, 0, 1]
    with pytest.raises(InvalidArgumentError):
        detect_unknown(scores, 1.5, teacher)


def test_known_class_scores_average_the_two_networks():
    teacher = _jpv([[0.6, 0.2, 0.2]], 2)
    student = _jpv([[0.2, 0.2, 0.6]], 2)
    assert torch.allclose(known_class_scores(teacher, student), torch.tensor([[0.4, 0.2]]))
    with pytest.raises(InvalidArgumentError):
        known_class_scores(teacher, _jpv([[0.2, 0.2, 0.6]], 1))


def test_epsilon_from_ten_values():
    scores = torch.zeros(10, 2)
    scores[:, 0] = torch.linspace(0.1, 1.0, 10)
    labels = np.zeros(10, dtype=np.int64)
    assert calibrate_epsilons_from_scores(scores, labels, 1, quantile=0.10) == [pytest.approx(0.1)]
    with pytest.raises(InvalidArgumentError):
        calibrate_epsilons_from_scores(scores, labels, 2)


def test_calibrated_thresholds_keep_ninety_percent_of_each_class():
    rng = np.random.default_rng(4)
    labels = np.repeat(np.arange(3), 50)
    scores = torch.from_numpy(rng.random((150, 3)))
    epsilons = calibrate_epsilons_from_scores(scores, labels, 3, quantile=0.10)
    for k in range(3):
        own = scores[torch.from_numpy(labels == k), k]
        assert (own > epsilons[k]).double().mean().item() >= 0.9


def test_recognize_ties_go_to_the_lowest_index():
    decisions = recognize_from_scores(torch.tensor([[0.4, 0.4, 0.2]]), [0.1, 0.1, 0.1])
    assert decisions.tolist() == [0]


def test_recognize_rejects_at_the_threshold():
    scores = torch.tensor([[0.5, 0.3], [0.2, 0.7], [0.2, 0.6]])
    decisions = recognize_from_scores(scores, [0.5, 0.6])
    assert decisions.tolist() == [UNKNOWN_LABEL, 1, UNKNOWN_LABEL]
    with pytest.raises(InvalidArgumentError):
        recognize_from_scores(scores, [0.5])


def test_recognition_is_invariant_to_common_scaling():
    generator = torch.Generator().manual_seed(7)
    scores = torch.rand(40, 4, generator=generator, dtype=torch.float64)
    epsilons = [0.3, 0.5, 0.2, 0.6]
    base = recognize_from_scores(scores, epsilons)
    for factor in (0.5, 2.0, 4.0):
        scaled = recognize_from_scores(scores * factor, [e * factor for e in epsilons])
        assert torch.equal(base, scaled)


def test_recognize_bundles_both_scores():
    teacher = _jpv([[0.7, 0.2, 0.1], [0.3, 0.3, 0.4]], 2)
    student = _jpv([[0.8, 0.1, 0.1], [0.1, 0.1, 0.8]], 2)
    result = recognize(teacher, student, [0.5, 0.5])
    assert len(result) == 2
    assert result.decisions.tolist() == [0, UNKNOWN_LABEL]
    assert torch.allclose(result.unknown_scores, torch.tensor([0.3 * 0.1, 0.7 * 0.8]))


def test_predict_probs_on_images():
    torch.manual_seed(0)
    net = build_classifier((28, 28, 1), 3, 2, "tiny")
    images = np.random.default_rng(0).random((7, 1, 28, 28)).astype(np.float32)
    probs = predict_probs(net, images, batch_size=3)
    assert probs.probs.shape == (7, 5)
    assert torch.allclose(probs.probs.sum(dim=1), torch.ones(7), atol=1e-6)
    assert predict_probs(net, images[:0]).probs.shape == (0, 5)


def test_calibrate_epsilons_with_networks(striped_handle):
    torch.manual_seed(0)
    teacher = build_classifier((28, 28, 1), 10, 0, "tiny")
    student = build_classifier((28, 28, 1), 10, 3, "tiny")
    images, labels = striped_handle.train_images, striped_handle.train_labels
    both = calibrate_epsilons(teacher, student, images, labels)
    alone = calibrate_epsilons(teacher, None, images, labels)
    assert len(both) == len(alone) == 10
    assert all(0.0 <= e <= 1.0 for e in both + alone)
    with pytest.raises(InvalidArgumentError):
        calibrate_epsilons(None, None, images, labels)
