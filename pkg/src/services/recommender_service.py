"""Conditional GAN recommender and the alternating training loop."""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torchvision.utils import save_image
from tqdm import tqdm

from src.errors import InvalidArgumentError
from src.models.networks import ClassifierNet, DiscriminatorNet, GeneratorNet
from src.models.records import ConditionVector, JointProbabilityVector
from src.services.distillation_service import (
    PROB_FLOOR, DistillationConfig, check_finite, check_finite_gradients, cross_entropy, is_plateau,
    kd_loss, make_optimizer, teacher_targets, temperature_scaled_probs,
)

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ["step", "loss_d", "loss_g", "loss_kd", "loss_s", "masked_in"]


@dataclass(frozen=True)
class RecommenderConfig:
    alpha: float = 0.5
    lam: Optional[float] = None
    batch_size: int = 128
    learning_rate: float = 0.002
    beta1: float = 0.5
    use_filter: bool = True

    def __post_init__(self):
        if self.alpha < 0:
            raise InvalidArgumentError(f"alpha must be non-negative, got {self.alpha}")
        if self.lam is not None and not 0.0 < self.lam <= 1.0:
            raise InvalidArgumentError(f"lambda must lie in (0,1], got {self.lam}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"Batch size must be at least 1, got {self.batch_size}")


@dataclass
class ModelBundle:
    """Teacher (optional for the RS baseline), student, generator and discriminator."""
    teacher: Optional[ClassifierNet]
    student: ClassifierNet
    generator: GeneratorNet
    discriminator: DiscriminatorNet
    lam: Optional[float] = None
    step: int = 0

    def networks(self) -> Dict[str, torch.nn.Module]:
        nets = {"student": self.student, "generator": self.generator, "discriminator": self.discriminator}
        if self.teacher is not None:
            nets["teacher"] = self.teacher
        return nets


def sample_conditions(batch: int, num_unknown: int,
                      seed: Union[int, torch.Generator, None] = None) -> ConditionVector:
    """Draw condition vectors uniformly over the U one-hot vectors."""
    if num_unknown < 1:
        raise InvalidArgumentError(f"Need at least one synthetic unknown class, got {num_unknown}")
    generator = seed if isinstance(seed, torch.Generator) else None
    if isinstance(seed, int):
        generator = torch.Generator().manual_seed(seed)
    return ConditionVector(torch.randint(num_unknown, (batch,), generator=generator), num_unknown)


def condition_targets(cvs: torch.Tensor, num_known: int) -> torch.Tensor:
    """[0, cv]: zero on the known slots, the condition vector on the unknown slots."""
    return torch.cat([cvs.new_zeros((cvs.shape[0], num_known)), cvs], dim=1)


def _probs(student_probs: Union[JointProbabilityVector, torch.Tensor]) -> torch.Tensor:
    return student_probs.probs if isinstance(student_probs, JointProbabilityVector) else student_probs


def _conditions(cvs: Union[ConditionVector, torch.Tensor]) -> torch.Tensor:
    return cvs.one_hot() if isinstance(cvs, ConditionVector) else cvs


def generator_loss(disc_out: torch.Tensor, student_probs: Union[JointProbabilityVector, torch.Tensor],
                   cvs: Union[ConditionVector, torch.Tensor], alpha: float) -> torch.Tensor:
    """Mean of log(1 - D(G(z))) + alpha * H([0, cv], S(G(z))); minimized over the generator."""
    probs = _probs(student_probs)
    cvs = _conditions(cvs)
    if not (disc_out.shape[0] == probs.shape[0] == cvs.shape[0]):
        raise InvalidArgumentError("Discriminator outputs, student vectors and conditions differ in length")
    adversarial = torch.log((1.0 - disc_out).clamp_min(PROB_FLOOR))
    if alpha == 0:
        return adversarial.mean()
    num_known = probs.shape[1] - cvs.shape[1]
    satisfaction = cross_entropy(condition_targets(cvs, num_known), probs)
    return (adversarial + alpha * satisfaction).mean()


def discriminator_loss(real_out: torch.Tensor, fake_out: torch.Tensor) -> torch.Tensor:
    """Mean log D(x) over real plus mean log(1 - D(G(z))) over fake; the discriminator maximizes it."""
    real_term = torch.log(real_out.clamp_min(PROB_FLOOR)).mean()
    fake_term = torch.log((1.0 - fake_out).clamp_min(PROB_FLOOR)).mean()
    return real_term + fake_term


def student_unknown_loss(student_probs: Union[JointProbabilityVector, torch.Tensor],
                         cvs: Union[ConditionVector, torch.Tensor], mask: torch.Tensor) -> torch.Tensor:
    """Mean H([0, cv], S(G(z))) over masked-in samples; zero without gradient when none are masked in."""
    probs = _probs(student_probs)
    cvs = _conditions(cvs)
    if mask.shape[0] != probs.shape[0]:
        raise InvalidArgumentError("Mask length must equal the batch length")
    if not mask.any():
        return probs.new_zeros(())
    num_known = probs.shape[1] - cvs.shape[1]
    losses = cross_entropy(condition_targets(cvs, num_known), probs)
    return losses[mask].mean()


def recommend_filter(teacher_confidence: torch.Tensor, lam: float) -> torch.Tensor:
    """A generated sample is worth learning iff the teacher's confidence is strictly below lambda."""
    return teacher_confidence < lam


@torch.no_grad()
def teacher_confidence(teacher: ClassifierNet, x: torch.Tensor) -> torch.Tensor:
    """Max known-slot probability of the teacher at temperature 1, in float64 to delay saturation at 1."""
    return temperature_scaled_probs(teacher(x).double(), 1.0, teacher.num_known).max_known()


def nearest_rank(values: Union[np.ndarray, torch.Tensor], quantile: float) -> float:
    """
    Lower nearest-rank quantile: v_k of the ascending values with k = max(1, floor(q*n)).

    At least (1-q)*n distinct values lie strictly above it when q*n >= 1.
    """
    values = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if len(values) == 0:
        raise InvalidArgumentError("Cannot take a quantile of an empty set")
    rank = max(1, int(np.floor(quantile * len(values))))
    return float(values[rank - 1])


@torch.no_grad()
def batched_apply(fn, images: np.ndarray, batch_size: int = 512, device: str = "cpu") -> torch.Tensor:
    """Run fn over images in batches and concatenate the results on the CPU."""
    outputs = []
    for start in range(0, len(images), batch_size):
        x = torch.tensor(images[start:start + batch_size]).to(device)
        outputs.append(fn(x).cpu())
    return torch.cat(outputs) if outputs else torch.zeros(0)


def calibrate_lambda(teacher: ClassifierNet, images: np.ndarray, quantile: float = 0.01,
                     batch_size: int = 512, device: str = "cpu") -> float:
    """Lambda such that (at least) 99% of the training confidences lie above it."""
    if len(images) == 0:
        raise InvalidArgumentError("Cannot calibrate lambda on an empty training set")
    confidences = batched_apply(lambda x: teacher_confidence(teacher, x), images, batch_size, device)
    lam = nearest_rank(confidences.numpy(), quantile)
    logger.info("Calibrated lambda = %.6f from %d training confidences", lam, len(confidences))
    return lam


def alternating_train(bundle: ModelBundle, images: np.ndarray, labels: Optional[np.ndarray],
                      distill_cfg: DistillationConfig, rec_cfg: RecommenderConfig, steps: int,
                      seed: int = 0, device: str = "cpu", log_every: int = 50,
                      plateau_patience: int = 0, plateau_tolerance: float = 1e-4,
                      grid_every: int = 0, grid_dir: Optional[Path] = None,
                      grid_per_class: int = 10, distill: bool = True,
                      use_recommender: bool = True) -> Tuple[ModelBundle, List[Dict[str, float]]]:
    """
    Alternate discriminator, generator and student updates.

    Each iteration samples a known batch with its temperature-scaled teacher
    targets and a noise batch with condition vectors, then updates D, G and
    the student in that order. The same noise batch is reused for the
    generator and student updates.

    Args:
        bundle: Networks; the teacher must already be augmented
        images: Known training images
        labels: Known-class indices; only used when the student learns hard labels (no teacher)
        distill_cfg: Temperature, learning rate and batch size for the student
        rec_cfg: alpha, lambda and recommender optimiser settings
        steps: Iteration budget
        seed: Seed of the batch and noise generators
        distill: Student learns from teacher targets (False: from hard labels)
        use_recommender: Run the D/G updates and the unknown-learning term

    Returns:
        tuple: (bundle, per-step loss rows)
    """
    teacher, student, generator, discriminator = bundle.teacher, bundle.student, bundle.generator, bundle.discriminator
    if distill and teacher is None:
        raise InvalidArgumentError("Distillation needs a teacher")
    if not distill and labels is None:
        raise InvalidArgumentError("Training a student without a teacher needs labels")
    if len(images) == 0:
        raise InvalidArgumentError("Cannot train on an empty known set")
    filter_active = rec_cfg.use_filter and teacher is not None
    if use_recommender and filter_active and rec_cfg.lam is None:
        raise InvalidArgumentError("Lambda must be calibrated before alternating training")
    learn_unknowns = use_recommender and rec_cfg.alpha > 0

    for net in (student, generator, discriminator):
        net.to(device)
    if teacher is not None:
        teacher.to(device).eval()

    opt_s = make_optimizer(student, distill_cfg.learning_rate)
    opt_g = make_optimizer(generator, rec_cfg.learning_rate, rec_cfg.beta1)
    opt_d = make_optimizer(discriminator, rec_cfg.learning_rate, rec_cfg.beta1)

    x_all = torch.tensor(images)
    y_all = torch.tensor(labels, dtype=torch.int64) if labels is not None else None
    rng = torch.Generator().manual_seed(seed)
    num_unknown = generator.num_unknown
    batch = min(distill_cfg.batch_size, len(x_all))
    history: List[Dict[str, float]] = []
    kd_trace: List[float] = []
    show_progress = logger.isEnabledFor(logging.INFO)

    for step in tqdm(range(bundle.step, bundle.step + steps), desc="alternating", disable=not show_progress):
        index = torch.randperm(len(x_all), generator=rng)[:batch]
        x_real = x_all[index].to(device)
        z = torch.randn(batch, generator.noise_dim, generator=rng).to(device)
        cvs = sample_conditions(batch, num_unknown, rng).one_hot().to(device)
        row = {"step": step, "loss_d": float("nan"), "loss_g": float("nan"), "loss_s": 0.0, "masked_in": 0.0}

        if use_recommender:
            # discriminator
            discriminator.train()
            fake = generator(z, cvs).detach()
            loss_d = -discriminator_loss(discriminator(x_real), discriminator(fake))
            check_finite(loss_d, "discriminator", step)
            opt_d.zero_grad()
            loss_d.backward()
            opt_d.step()
            row["loss_d"] = loss_d.item()

            # generator
            generator.train()
            fake = generator(z, cvs)
            student_probs = temperature_scaled_probs(student(fake), 1.0, student.num_known)
            loss_g = generator_loss(discriminator(fake), student_probs, cvs, rec_cfg.alpha)
            check_finite(loss_g, "generator", step)
            opt_g.zero_grad()
            loss_g.backward()
            check_finite_gradients(generator, "generator", step)
            opt_g.step()
            row["loss_g"] = loss_g.item()

        # student
        student.train()
        if distill:
            targets = teacher_targets(teacher, x_real, distill_cfg.tau)
            loss_kd = kd_loss(targets, temperature_scaled_probs(student(x_real), distill_cfg.tau, student.num_known))
        else:
            loss_kd = F.cross_entropy(student(x_real), y_all[index].to(device))
        loss = loss_kd
        if learn_unknowns:
            with torch.no_grad():
                fake = generator(z, cvs)
            if filter_active:
                mask = recommend_filter(teacher_confidence(teacher, fake), rec_cfg.lam)
            else:
                mask = torch.ones(batch, dtype=torch.bool, device=device)
            loss_s = student_unknown_loss(
                temperature_scaled_probs(student(fake), 1.0, student.num_known), cvs, mask
            )
            loss = loss + loss_s
            row["loss_s"] = loss_s.item()
            row["masked_in"] = mask.float().mean().item()
        check_finite(loss, "student", step)
        opt_s.zero_grad()
        loss.backward()
        check_finite_gradients(student, "student", step)
        opt_s.step()
        row["loss_kd"] = loss_kd.item()

        history.append(row)
        kd_trace.append(row["loss_kd"])
        if step % log_every == 0:
            logger.info(
                "step %d L_D %.4f L_G %.4f L_KD %.4f L_S %.4f masked-in %.2f",
                step, row["loss_d"], row["loss_g"], row["loss_kd"], row["loss_s"], row["masked_in"],
            )
        if grid_every and grid_dir is not None and use_recommender and (step + 1) % grid_every == 0:
            emit_sample_grid(generator, num_unknown, grid_per_class, Path(grid_dir) / f"grid_step{step + 1:06d}.png",
                             seed=seed)
        if is_plateau(kd_trace, plateau_patience, plateau_tolerance):
            logger.info("Distillation loss plateaued at step %d; stopping", step)
            break

    bundle.step += len(history)
    for net in (student, generator, discriminator):
        net.eval()
    return bundle, [{column: row[column] for column in LOSS_COLUMNS} for row in history]


@torch.no_grad()
def generate_samples(generator: GeneratorNet, num_unknown: int, per_class: int,
                     seed: int = 0) -> torch.Tensor:
    """per_class samples for each synthetic unknown class, grouped class by class."""
    rng = torch.Generator().manual_seed(seed)
    device = generator.condition_embedding.weight.device
    conditions = ConditionVector(torch.arange(num_unknown).repeat_interleave(per_class), num_unknown)
    cvs = conditions.one_hot().to(device)
    z = generator.sample_noise(len(conditions), rng)
    generator.eval()
    return generator(z, cvs).cpu()


def row_diversity(samples: torch.Tensor, per_class: int) -> Tuple[float, float]:
    """
    Spread of a class-grouped sample grid.

    Returns:
        tuple: (mean distance between row averages, mean pairwise distance within rows)
    """
    if per_class < 2 or len(samples) % per_class or len(samples) // per_class < 2:
        raise InvalidArgumentError("Need at least two rows of at least two samples")
    rows = samples.reshape(len(samples) // per_class, per_class, -1).double()
    between = torch.pdist(rows.mean(dim=1)).mean()
    within = torch.stack([torch.pdist(row).mean() for row in rows]).mean()
    return between.item(), within.item()


def emit_sample_grid(generator: GeneratorNet, num_unknown: int, per_class: int, path: Union[str, Path],
                     seed: int = 0) -> Path:
    """Write a U-row grid, one row per synthetic unknown class, per_class columns wide."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    samples = generate_samples(generator, num_unknown, per_class, seed)
    save_image(samples, path, nrow=per_class, padding=2, pad_value=1.0)
    logger.info("Wrote %dx%d sample grid to %s", num_unknown, per_class, path)
    if num_unknown > 1 and per_class > 1:
        between, within = row_diversity(samples, per_class)
        logger.debug("Grid rows: %.4f between row averages, %.4f within rows", between, within)
    return path
