from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import torch

from src.errors import CheckpointVersionError, MissingArtifactError, TrainingDivergedError
from src.models.records import UNKNOWN_LABEL, AblationVariant, InferenceThresholds
from src.services.trainer_service import (
    ExperimentDirectory, load_bundle, load_teacher, load_thresholds, prepare_data, read_run_split, resolve_split,
    save_bundle, save_teacher, save_thresholds, train_teacher, train_variant, write_run_header,
)


def test_within_dataset_split(tiny_config, fake_datasets):
    split = resolve_split(tiny_config, fake_datasets["mnist"])
    assert split.num_known == 6
    assert len(split.unknown_class_ids) == 4
    explicit = resolve_split(tiny_config.override(known_classes=[0, 2, 4], num_known=None), fake_datasets["mnist"])
    assert explicit.known_class_ids == [0, 2, 4]


def test_noise_as_the_unknown_dataset(tiny_config, fake_datasets):
    data = prepare_data(tiny_config.override(unknown_dataset="noise"))
    assert data.split.unknown_class_ids == [UNKNOWN_LABEL]
    assert data.split.unknown_source == "noise"
    assert data.num_known == 10
    assert len(data.unknown_test_images) == 200


def test_cross_dataset_unknowns(tiny_config, fake_datasets):
    data = prepare_data(tiny_config.override(unknown_dataset="emnist-letters"))
    assert len(data.split.unknown_class_ids) == 14
    assert data.split.c_te == 10 + 14
    assert len(data.unknown_test_images) == 14 * 12


def test_teacher_only_variant(tiny_config, fake_datasets):
    data = prepare_data(tiny_config)
    models = train_variant(AblationVariant.from_tag("T"), tiny_config, data)
    assert models.student is None
    assert models.teacher.num_unknown == 0
    assert len(models.epsilons) == data.num_known


def test_artifacts_round_trip(tiny_config, fake_datasets):
    directory = ExperimentDirectory(Path(tiny_config.out_dir))
    data = prepare_data(tiny_config)
    write_run_header(directory, tiny_config, data.split)
    assert read_run_split(directory) == data.split
    assert "tau = 5.0\n" in directory.config_path.read_text()

    teacher, history = train_teacher(tiny_config, data)
    save_teacher(directory, tiny_config, teacher, history)
    probe = torch.tensor(data.train_images[:5])
    assert torch.equal(load_teacher(directory, tiny_config)(probe), teacher(probe))
    with pytest.raises(CheckpointVersionError):
        load_teacher(directory, tiny_config.override(unknown_slots=7))

    models = train_variant(AblationVariant.from_tag("TRS"), tiny_config, data, teacher=teacher, calibrate=False)
    assert models.epsilons == []
    save_bundle(directory, tiny_config, models)
    loaded = load_bundle(directory, tiny_config)
    assert loaded.variant.tag == "TRS"
    assert loaded.lam == pytest.approx(models.lam)
    assert loaded.bundle.step == tiny_config.student_steps
    assert torch.equal(loaded.student(probe), models.student(probe))
    assert (directory.logs_dir / "alternating.csv").is_file()

    thresholds = InferenceThresholds(epsilons=[0.1] * data.num_known, delta=0.3, lam=models.lam)
    save_thresholds(directory, thresholds)
    assert load_thresholds(directory) == thresholds


def test_missing_artifacts_name_the_earlier_command(tmp_path):
    directory = ExperimentDirectory(tmp_path / "empty")
    with pytest.raises(MissingArtifactError) as excinfo:
        read_run_split(directory)
    assert "train-teacher" in str(excinfo.value)
    with pytest.raises(MissingArtifactError):
        load_thresholds(directory)


def test_divergence_is_tagged_with_the_variant(tiny_config, fake_datasets):
    data = prepare_data(tiny_config)
    broken = replace(data, train_images=np.full_like(data.train_images, np.nan))
    with pytest.raises(TrainingDivergedError) as excinfo:
        train_variant(AblationVariant.from_tag("TS"), tiny_config, broken)
    assert excinfo.value.variant == "TS"
    assert excinfo.value.stage == "teacher"
    assert excinfo.value.exit_code == 2
