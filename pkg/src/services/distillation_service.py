"""Teacher pretraining, unknown-slot augmentation and knowledge distillation."""
import copy
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from src.errors import InvalidArgumentError, TrainingDivergedError
from src.models.networks import ClassifierNet
from src.models.records import JointProbabilityVector

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class DistillationConfig:
    tau: float = 5.0
    learning_rate: float = 0.002
    epochs: int = 5
    batch_size: int = 128

    def __post_init__(self):
        if self.tau <= 0:
            raise InvalidArgumentError(f"Temperature must be positive, got {self.tau}")
        if self.learning_rate <= 0:
            raise InvalidArgumentError(f"Learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"Batch size must be at least 1, got {self.batch_size}")


def temperature_scaled_probs(logits: torch.Tensor, tau: float, num_known: int) -> JointProbabilityVector:
    """
    Softmax of logits / tau over all C known and U unknown slots together.

    Args:
        logits: (batch, C+U) or (C+U,) logits
        tau: Temperature; 1 gives the ordinary softmax
        num_known: C

    Returns:
        JointProbabilityVector
    """
    if tau <= 0:
        raise InvalidArgumentError(f"Temperature must be positive, got {tau}")
    if logits.dim() == 1:
        logits = logits.unsqueeze(0)
    # torch.softmax subtracts the row max before exponentiating
    return JointProbabilityVector(torch.softmax(logits / tau, dim=1), num_known, tau)


def _as_tensor(probs: Union[JointProbabilityVector, torch.Tensor]) -> torch.Tensor:
    return probs.probs if isinstance(probs, JointProbabilityVector) else probs


def cross_entropy(targets: torch.Tensor, probs: torch.Tensor) -> torch.Tensor:
    """Per-row H(targets, probs) in nats with a 1e-12 floor inside the log."""
    return -(targets * torch.log(probs.clamp_min(PROB_FLOOR))).sum(dim=1)


def kd_loss(teacher_probs: Union[JointProbabilityVector, torch.Tensor],
            student_probs: Union[JointProbabilityVector, torch.Tensor]) -> torch.Tensor:
    """Mean cross-entropy between temperature-scaled teacher and student vectors; no hard-label term."""
    targets = _as_tensor(teacher_probs)
    probs = _as_tensor(student_probs)
    if targets.shape != probs.shape:
        raise InvalidArgumentError(f"Teacher {tuple(targets.shape)} and student {tuple(probs.shape)} differ")
    return cross_entropy(targets, probs).mean()


def entropy(probs: Union[JointProbabilityVector, torch.Tensor]) -> torch.Tensor:
    probs = _as_tensor(probs)
    return cross_entropy(probs, probs)


def make_optimizer(net: nn.Module, learning_rate: float, beta1: float = 0.9) -> torch.optim.Adam:
    return torch.optim.Adam([p for p in net.parameters() if p.requires_grad], lr=learning_rate, betas=(beta1, 0.999))


def check_finite(loss: torch.Tensor, stage: str, step: int) -> None:
    if not torch.isfinite(loss).all():
        raise TrainingDivergedError(stage, step)


def check_finite_gradients(net: nn.Module, stage: str, step: int) -> None:
    for param in net.parameters():
        if param.grad is not None and not torch.isfinite(param.grad).all():
            raise TrainingDivergedError(stage, step)


def pretrain_teacher(teacher: ClassifierNet, images: np.ndarray, labels: np.ndarray, config: DistillationConfig,
                     seed: int = 0, device: str = "cpu", log_every: int = 50) -> List[Dict[str, float]]:
    """
    Train the teacher's known-class head with plain cross-entropy.

    Args:
        teacher: Classifier without unknown slots
        images: (N, channels, height, width) in [0,1]
        labels: Known-class indices 0..C-1
        config: Optimiser settings and epoch budget
        seed: Seed of the shuffling generator

    Returns:
        list: One {"step", "epoch", "loss", "accuracy"} row per batch
    """
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise InvalidArgumentError("Cannot pretrain the teacher on an empty training set")
    if labels.min() < 0 or labels.max() >= teacher.num_known:
        raise InvalidArgumentError("Teacher training labels must be known-class indices")

    teacher.to(device).train()
    optimizer = make_optimizer(teacher, config.learning_rate)
    x_all = torch.tensor(images)
    y_all = torch.tensor(labels, dtype=torch.int64)
    shuffler = torch.Generator().manual_seed(seed)
    history = []
    step = 0
    show_progress = logger.isEnabledFor(logging.INFO)
    for epoch in tqdm(range(config.epochs), desc="teacher", disable=not show_progress):
        order = torch.randperm(len(y_all), generator=shuffler)
        for start in range(0, len(order), config.batch_size):
            index = order[start:start + config.batch_size]
            x, y = x_all[index].to(device), y_all[index].to(device)
            logits = teacher(x)[:, :teacher.num_known]
            loss = F.cross_entropy(logits, y)
            check_finite(loss, "teacher", step)
            optimizer.zero_grad()
            loss.backward()
            check_finite_gradients(teacher, "teacher", step)
            optimizer.step()
            accuracy = (logits.argmax(dim=1) == y).float().mean().item()
            history.append({"step": step, "epoch": epoch, "loss": loss.item(), "accuracy": accuracy})
            if step % log_every == 0:
                logger.info("teacher step %d epoch %d loss %.4f acc %.3f", step, epoch, loss.item(), accuracy)
            step += 1
    teacher.eval()
    if history:
        logger.info("Teacher training done: final loss %.4f, final accuracy %.3f",
                    history[-1]["loss"], history[-1]["accuracy"])
    return history


def init_unknown_head(net: ClassifierNet, num_unknown: int, eps_scale: float = 1e-3,
                      generator: Optional[torch.Generator] = None) -> nn.Linear:
    """Attach U unknown logits with weights ~ N(0, eps_scale^2) and zero bias."""
    if num_unknown < 1:
        raise InvalidArgumentError(f"Need at least one unknown slot, got {num_unknown}")
    reference = net.known_head.weight
    head = nn.Linear(net.hidden_dim, num_unknown).to(device=reference.device, dtype=reference.dtype)
    with torch.no_grad():
        weight = torch.randn(head.weight.shape, generator=generator, dtype=reference.dtype) * eps_scale
        head.weight.copy_(weight)
        head.bias.zero_()
    net.set_unknown_head(head)
    return head


def augment_teacher(teacher: ClassifierNet, num_unknown: int, eps_scale: float = 1e-3,
                    seed: int = 0) -> ClassifierNet:
    """
    Copy of the teacher with U negligible unknown slots appended.

    The known head is copied untouched and the new slots are frozen, so the
    teacher's unknown logits stay a fixed reference.
    """
    if num_unknown < 1:
        raise InvalidArgumentError(f"Need at least one unknown slot, got {num_unknown}")
    if teacher.num_unknown:
        raise InvalidArgumentError("Teacher already has unknown slots")
    augmented = copy.deepcopy(teacher)
    head = init_unknown_head(augmented, num_unknown, eps_scale, torch.Generator().manual_seed(seed))
    head.requires_grad_(False)
    augmented.eval()
    return augmented


@torch.no_grad()
def teacher_targets(teacher: ClassifierNet, x: torch.Tensor, tau: float) -> JointProbabilityVector:
    return temperature_scaled_probs(teacher(x), tau, teacher.num_known)


def distill_step(student: ClassifierNet, teacher: ClassifierNet, x: torch.Tensor, config: DistillationConfig,
                 optimizer: torch.optim.Optimizer, step: int = 0) -> Optional[float]:
    """
    One optimiser update of the student on the distillation loss of a batch.

    Returns:
        float: The batch loss, or None for an empty batch (no update)
    """
    if x.shape[0] == 0:
        return None
    targets = teacher_targets(teacher, x, config.tau)
    student.train()
    loss = kd_loss(targets, temperature_scaled_probs(student(x), config.tau, student.num_known))
    check_finite(loss, "distill", step)
    optimizer.zero_grad()
    loss.backward()
    check_finite_gradients(student, "distill", step)
    optimizer.step()
    return loss.item()


def mean_entropy(teacher: ClassifierNet, x: torch.Tensor, tau: float) -> float:
    """Lower bound of the distillation loss on a batch."""
    return entropy(teacher_targets(teacher, x, tau)).mean().item()


def is_plateau(losses: List[float], patience: int, tolerance: float) -> bool:
    """True once the best loss of the last `patience` steps fails to beat the earlier best by `tolerance`."""
    if patience <= 0 or len(losses) <= patience:
        return False
    earlier = min(losses[:-patience])
    recent = min(losses[-patience:])
    return not (recent < earlier - tolerance) and math.isfinite(recent)
