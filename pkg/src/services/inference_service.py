"""Test-time recognition from teacher and student posteriors."""
import logging
from typing import List, Optional

import numpy as np
import torch

from src.errors import InvalidArgumentError
from src.models.networks import ClassifierNet
from src.models.records import UNKNOWN_LABEL, JointProbabilityVector, RecognitionResult
from src.services.distillation_service import temperature_scaled_probs
from src.services.recommender_service import batched_apply, nearest_rank

logger = logging.getLogger(__name__)


def predict_probs(net: ClassifierNet, images: np.ndarray, batch_size: int = 512,
                  device: str = "cpu") -> JointProbabilityVector:
    """Temperature-1 joint probability vectors for a whole image array."""
    net.to(device).eval()
    logits = batched_apply(net, images, batch_size, device)
    if len(images) == 0:
        logits = torch.zeros((0, net.num_outputs))
    return temperature_scaled_probs(logits, 1.0, net.num_known)


def unknown_score(teacher_probs: JointProbabilityVector, student_probs: JointProbabilityVector) -> torch.Tensor:
    """(1 - teacher's max known probability) x (student's total unknown probability)."""
    if len(teacher_probs) != len(student_probs):
        raise InvalidArgumentError("Teacher and student batches differ in length")
    return (1.0 - teacher_probs.max_known()) * student_probs.unknown_mass()


def detect_unknown(scores: torch.Tensor, delta: float, teacher_probs: JointProbabilityVector) -> torch.Tensor:
    """
    Score-threshold recognition: unknown iff score > delta, else the teacher's argmax.

    Returns:
        Tensor: Class indices, UNKNOWN_LABEL for rejected samples
    """
    if not 0.0 <= delta <= 1.0:
        raise InvalidArgumentError(f"delta must lie in [0,1], got {delta}")
    decisions = teacher_probs.argmax_known().clone()
    decisions[scores > delta] = UNKNOWN_LABEL
    return decisions


def known_class_scores(teacher_probs: JointProbabilityVector, student_probs: JointProbabilityVector) -> torch.Tensor:
    """K(x)_k: mean of the teacher's and student's known-slot probabilities."""
    if teacher_probs.num_known != student_probs.num_known:
        raise InvalidArgumentError("Teacher and student disagree on the number of known classes")
    return (teacher_probs.known + student_probs.known) / 2.0


def calibrate_epsilons_from_scores(known_scores: torch.Tensor, labels: np.ndarray, num_known: int,
                                   quantile: float = 0.10) -> List[float]:
    """
    Per-class lower nearest-rank quantile of the class's own known score.

    Raises:
        InvalidArgumentError: a class has no calibration samples
    """
    labels = np.asarray(labels)
    epsilons = []
    for k in range(num_known):
        own = known_scores[torch.from_numpy(labels == k), k]
        if own.numel() == 0:
            raise InvalidArgumentError(f"Class {k} has no calibration samples")
        epsilons.append(nearest_rank(own.numpy(), quantile))
    return epsilons


def calibrate_epsilons(teacher: Optional[ClassifierNet], student: Optional[ClassifierNet], images: np.ndarray,
                       labels: np.ndarray, quantile: float = 0.10, batch_size: int = 512,
                       device: str = "cpu") -> List[float]:
    """
    Per-class thresholds such that 90% of each class's training samples score above them.

    With only one of the two networks, its known-slot probabilities are the known score.
    """
    scores = known_scores_for(teacher, student, images, batch_size, device)
    num_known = (teacher or student).num_known
    epsilons = calibrate_epsilons_from_scores(scores, labels, num_known, quantile)
    logger.info("Calibrated %d class thresholds (min %.4f, max %.4f)", len(epsilons), min(epsilons), max(epsilons))
    return epsilons


def known_scores_for(teacher: Optional[ClassifierNet], student: Optional[ClassifierNet], images: np.ndarray,
                     batch_size: int = 512, device: str = "cpu") -> torch.Tensor:
    if teacher is None and student is None:
        raise InvalidArgumentError("Need a teacher, a student or both")
    if teacher is not None and student is not None:
        return known_class_scores(predict_probs(teacher, images, batch_size, device),
                                  predict_probs(student, images, batch_size, device))
    return predict_probs(teacher or student, images, batch_size, device).known


def recognize_from_scores(known_scores: torch.Tensor, epsilons: List[float]) -> torch.Tensor:
    """Argmax class (lowest index on ties) if its score beats that class's threshold, else unknown."""
    if known_scores.shape[1] != len(epsilons):
        raise InvalidArgumentError(f"Expected {known_scores.shape[1]} thresholds, got {len(epsilons)}")
    winners = known_scores.argmax(dim=1)
    thresholds = torch.as_tensor(epsilons, dtype=known_scores.dtype)[winners]
    best = known_scores.gather(1, winners.unsqueeze(1)).squeeze(1)
    return torch.where(best > thresholds, winners, torch.full_like(winners, UNKNOWN_LABEL))


def recognize(teacher_probs: JointProbabilityVector, student_probs: JointProbabilityVector,
              epsilons: List[float]) -> RecognitionResult:
    """Classwise recognition rule on the averaged known scores."""
    scores = known_class_scores(teacher_probs, student_probs)
    return RecognitionResult(
        decisions=recognize_from_scores(scores, epsilons),
        unknown_scores=unknown_score(teacher_probs, student_probs),
        known_scores=scores,
    )
