"""Pipeline orchestration: data preparation, teacher training, the alternating stage and artifacts."""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

from src.config.config import ExperimentConfig, derive_seed, echo_config, model_fingerprint
from src.errors import InvalidArgumentError, MissingArtifactError, TrainingDivergedError
from src.models.checkpoint import load_checkpoint, save_checkpoint
from src.models.networks import ClassifierNet, build_classifier, build_discriminator, build_generator
from src.models.records import UNKNOWN_LABEL, AblationVariant, DatasetHandle, InferenceThresholds, OpenSetSplit
from src.services.dataset_service import (
    load_dataset, make_cross_dataset_split, make_open_set_split, read_split_manifest, select_classes,
    select_known, split_from_known_ids, write_split_manifest,
)
from src.services.distillation_service import (
    DistillationConfig, augment_teacher, init_unknown_head, pretrain_teacher,
)
from src.services.export_service import read_json, write_csv, write_json
from src.services.inference_service import calibrate_epsilons
from src.services.recommender_service import (
    LOSS_COLUMNS, ModelBundle, RecommenderConfig, alternating_train, calibrate_lambda, emit_sample_grid,
)

logger = logging.getLogger(__name__)

TEACHER_LOG_COLUMNS = ["step", "epoch", "loss", "accuracy"]


@dataclass(frozen=True)
class ExperimentDirectory:
    """Fixed layout of everything a run writes."""
    root: Path

    @property
    def config_path(self) -> Path:
        return self.root / "config.txt"

    @property
    def split_path(self) -> Path:
        return self.root / "split.txt"

    @property
    def teacher_path(self) -> Path:
        return self.root / "checkpoints" / "teacher.pt"

    @property
    def bundle_path(self) -> Path:
        return self.root / "checkpoints" / "bundle.pt"

    @property
    def thresholds_path(self) -> Path:
        return self.root / "thresholds.json"

    @property
    def logs_dir(self) -> Path:
        return self.root / "logs"

    @property
    def reports_dir(self) -> Path:
        return self.root / "reports"

    @property
    def grids_dir(self) -> Path:
        return self.root / "grids"

    def create(self) -> "ExperimentDirectory":
        for directory in (self.root, self.logs_dir, self.reports_dir, self.grids_dir, self.teacher_path.parent):
            directory.mkdir(parents=True, exist_ok=True)
        return self

    def require(self, path: Path, hint: str) -> Path:
        if not path.is_file():
            raise MissingArtifactError(str(path), hint)
        return path


@dataclass
class ExperimentData:
    """Known training data, known test data and unknown test images under one split."""
    split: OpenSetSplit
    shape: Tuple[int, int, int]
    train_images: np.ndarray
    train_labels: np.ndarray
    known_test_images: np.ndarray
    known_test_labels: np.ndarray
    unknown_test_images: np.ndarray

    @property
    def num_known(self) -> int:
        return self.split.num_known


@dataclass
class VariantModels:
    """Trained networks of one ablation variant plus what they were calibrated to."""
    variant: AblationVariant
    teacher: Optional[ClassifierNet]
    student: Optional[ClassifierNet]
    bundle: Optional[ModelBundle] = None
    lam: Optional[float] = None
    epsilons: List[float] = field(default_factory=list)
    history: List[Dict[str, float]] = field(default_factory=list)


def resolve_split(config: ExperimentConfig, handle: DatasetHandle,
                  unknown_handle: Optional[DatasetHandle] = None) -> OpenSetSplit:
    """
    Split for a run: within one dataset by num_known or explicit ids, or
    across datasets when an unknown dataset is configured.
    """
    split_seed = derive_seed(config.seed, "split")
    all_ids = handle.class_ids()
    if unknown_handle is None:
        if config.known_classes:
            return split_from_known_ids(all_ids, config.known_classes, split_seed,
                                        name=config.dataset, source=config.dataset)
        return make_open_set_split(all_ids, config.num_known, split_seed, name=config.dataset, source=config.dataset)

    known = list(config.known_classes or all_ids)
    pool = unknown_handle.class_ids() or [UNKNOWN_LABEL]
    return make_cross_dataset_split(known, pool, len(pool), split_seed, config.dataset, unknown_handle.name)


def load_configured_dataset(config: ExperimentConfig, name: str) -> DatasetHandle:
    return load_dataset(name, config.data_root, seed=derive_seed(config.seed, f"data:{name}"),
                        allow_download=config.allow_download)


def data_for_split(handle: DatasetHandle, split: OpenSetSplit,
                   unknown_handle: Optional[DatasetHandle] = None) -> ExperimentData:
    source = unknown_handle if unknown_handle is not None else handle
    if tuple(source.shape) != tuple(handle.shape):
        raise InvalidArgumentError(f"Unknown images {source.shape} do not match known images {handle.shape}")
    train_images, train_labels = select_known(handle, split, "train")
    test_images, test_labels = select_known(handle, split, "test")
    unknown_images, _ = select_classes(source, split.unknown_class_ids, "test")
    if len(train_images) == 0:
        raise InvalidArgumentError(f"No training images for the known classes of {handle.name}")
    return ExperimentData(
        split=split, shape=tuple(handle.shape),
        train_images=train_images, train_labels=train_labels,
        known_test_images=test_images, known_test_labels=test_labels,
        unknown_test_images=unknown_images,
    )


def prepare_data(config: ExperimentConfig, split: Optional[OpenSetSplit] = None) -> ExperimentData:
    """Load the configured datasets and cut them along the given (or a freshly drawn) split."""
    handle = load_configured_dataset(config, config.dataset)
    unknown_handle = load_configured_dataset(config, config.unknown_dataset) if config.unknown_dataset else None
    split = split or resolve_split(config, handle, unknown_handle)
    data = data_for_split(handle, split, unknown_handle)
    logger.info("Split %s: %d known classes, %d unknown classes, openness %.3f",
                split.name, split.num_known, len(split.unknown_class_ids), split.openness)
    return data


def distillation_config(config: ExperimentConfig) -> DistillationConfig:
    return DistillationConfig(tau=config.tau, learning_rate=config.learning_rate,
                              epochs=config.teacher_epochs, batch_size=config.batch_size)


def recommender_config(config: ExperimentConfig, lam: Optional[float], use_filter: bool = True) -> RecommenderConfig:
    return RecommenderConfig(alpha=config.alpha, lam=lam, batch_size=config.batch_size,
                             learning_rate=config.learning_rate, beta1=config.gan_beta1, use_filter=use_filter)


def train_teacher(config: ExperimentConfig, data: ExperimentData) -> Tuple[ClassifierNet, List[Dict[str, float]]]:
    """Build and pretrain the plain teacher (no unknown slots)."""
    torch.manual_seed(derive_seed(config.seed, "teacher-init"))
    teacher = build_classifier(data.shape, data.num_known, 0, config.backbone)
    history = pretrain_teacher(teacher, data.train_images, data.train_labels, distillation_config(config),
                               seed=derive_seed(config.seed, "teacher-batches"), device=config.device,
                               log_every=config.log_every)
    return teacher.cpu(), history


def build_bundle(config: ExperimentConfig, shape, num_known: int,
                 teacher: Optional[ClassifierNet]) -> ModelBundle:
    """Augmented teacher, a fresh student with U small unknown slots, and an untrained recommender."""
    augmented = None
    if teacher is not None:
        augmented = augment_teacher(teacher, config.unknown_slots, config.augment_scale,
                                    seed=derive_seed(config.seed, "teacher-augment"))
    torch.manual_seed(derive_seed(config.seed, "student-init"))
    student = build_classifier(shape, num_known, 0, config.backbone)
    init_unknown_head(student, config.unknown_slots, config.augment_scale,
                      torch.Generator().manual_seed(derive_seed(config.seed, "student-unknown-init")))
    torch.manual_seed(derive_seed(config.seed, "recommender-init"))
    generator = build_generator(shape, config.unknown_slots, config.noise_dim, config.generator_channels)
    discriminator = build_discriminator(shape, config.discriminator_channels)
    return ModelBundle(teacher=augmented, student=student, generator=generator, discriminator=discriminator)


def train_variant(variant: AblationVariant, config: ExperimentConfig, data: ExperimentData,
                  teacher: Optional[ClassifierNet] = None, grid_dir: Optional[Path] = None,
                  calibrate: bool = True) -> VariantModels:
    """
    Train one ablation variant on the split's known training data.

    T is the pretrained teacher alone; TS distils without the recommender;
    RS trains the student from hard labels with the unfiltered recommender;
    TRS is the full pipeline. A pretrained teacher can be passed in to share
    it across variants.
    """
    try:
        if variant.use_teacher and teacher is None:
            teacher, _ = train_teacher(config, data)
        if not variant.use_student:
            epsilons = calibrate_epsilons(teacher, None, data.train_images, data.train_labels,
                                          config.epsilon_quantile, config.eval_batch_size, config.device)
            return VariantModels(variant=variant, teacher=teacher, student=None, epsilons=epsilons)

        bundle = build_bundle(config, data.shape, data.num_known, teacher if variant.use_teacher else None)
        lam = None
        if variant.use_recommender and bundle.teacher is not None:
            lam = calibrate_lambda(bundle.teacher, data.train_images, config.lambda_quantile,
                                   config.eval_batch_size, config.device)
        bundle.lam = lam
        bundle, history = alternating_train(
            bundle, data.train_images, data.train_labels,
            distillation_config(config), recommender_config(config, lam, use_filter=variant.use_teacher),
            steps=config.student_steps, seed=derive_seed(config.seed, f"alternating:{variant.tag}"),
            device=config.device, log_every=config.log_every,
            plateau_patience=config.plateau_patience, plateau_tolerance=config.plateau_tolerance,
            grid_every=config.grid_every, grid_dir=grid_dir, grid_per_class=config.grid_per_class,
            distill=variant.distill, use_recommender=variant.use_recommender,
        )
    except TrainingDivergedError as e:
        raise e.with_variant(variant.tag) from None

    epsilons = []
    if calibrate:
        epsilons = calibrate_epsilons(bundle.teacher, bundle.student, data.train_images, data.train_labels,
                                      config.epsilon_quantile, config.eval_batch_size, config.device)
    return VariantModels(variant=variant, teacher=bundle.teacher, student=bundle.student, bundle=bundle,
                         lam=lam, epsilons=epsilons, history=history)


# artifacts

def write_run_header(directory: ExperimentDirectory, config: ExperimentConfig, split: OpenSetSplit) -> None:
    directory.create()
    directory.config_path.write_text(echo_config(config), encoding="utf-8")
    write_split_manifest(directory.split_path, split)


def read_run_split(directory: ExperimentDirectory) -> OpenSetSplit:
    return read_split_manifest(directory.require(directory.split_path, "run train-teacher first"))


def save_teacher(directory: ExperimentDirectory, config: ExperimentConfig, teacher: ClassifierNet,
                 history: List[Dict[str, float]]) -> Path:
    write_csv(directory.logs_dir / "teacher.csv", history, columns=TEACHER_LOG_COLUMNS)
    return save_checkpoint(directory.teacher_path, {"teacher": teacher}, model_fingerprint(config),
                           step=len(history))


def load_teacher(directory: ExperimentDirectory, config: ExperimentConfig) -> ClassifierNet:
    path = directory.require(directory.teacher_path, "run train-teacher first")
    return load_checkpoint(path, model_fingerprint(config)).networks["teacher"]


def save_bundle(directory: ExperimentDirectory, config: ExperimentConfig, models: VariantModels) -> Path:
    write_csv(directory.logs_dir / "alternating.csv", models.history, columns=LOSS_COLUMNS)
    return save_checkpoint(directory.bundle_path, models.bundle.networks(), model_fingerprint(config),
                           step=models.bundle.step, extras={"lam": models.lam, "variant": models.variant.tag})


def load_bundle(directory: ExperimentDirectory, config: ExperimentConfig) -> VariantModels:
    path = directory.require(directory.bundle_path, "run train first")
    checkpoint = load_checkpoint(path, model_fingerprint(config))
    nets = checkpoint.networks
    bundle = ModelBundle(teacher=nets.get("teacher"), student=nets["student"], generator=nets["generator"],
                         discriminator=nets["discriminator"], lam=checkpoint.extras.get("lam"),
                         step=checkpoint.step)
    variant = AblationVariant.from_tag(checkpoint.extras.get("variant", "TRS"))
    return VariantModels(variant=variant, teacher=bundle.teacher, student=bundle.student, bundle=bundle,
                         lam=bundle.lam)


def save_thresholds(directory: ExperimentDirectory, thresholds: InferenceThresholds) -> Path:
    return write_json(directory.thresholds_path, thresholds.to_dict())


def load_thresholds(directory: ExperimentDirectory) -> InferenceThresholds:
    path = directory.require(directory.thresholds_path, "run calibrate first")
    return InferenceThresholds.from_dict(read_json(path))


def final_sample_grid(directory: ExperimentDirectory, config: ExperimentConfig, models: VariantModels,
                      name: str = "grid_final.png") -> Optional[Path]:
    if models.bundle is None or not models.variant.use_recommender:
        return None
    return emit_sample_grid(models.bundle.generator, config.unknown_slots, config.grid_per_class,
                            directory.grids_dir / name, seed=derive_seed(config.seed, "grid"))
