"""Validation service for experiment configurations."""
from jsonschema import Draft7Validator

from src.config.config import ExperimentConfig
from src.config.dataset_config import get_dataset_layout
from src.config.network_config import get_backbone_layout, get_recommender_layout
from src.config.validation_config import get_config_schema
from src.errors import ConfigValidationError


def validate_config(config: ExperimentConfig):
    """
    Validates a config against the field rules in validation_config.py and
    the cross-field rules below.

    Args:
        config: The configuration to validate.

    Returns:
        A list of validation error messages, empty when the config is valid.
    """
    values = config.to_dict()
    validator = Draft7Validator(get_config_schema())
    errors = []
    for error in sorted(validator.iter_errors(values), key=lambda e: list(e.absolute_path)):
        location = ".".join(str(p) for p in error.absolute_path) or "config"
        errors.append(f"{location}: {error.message}")
    if errors:
        return errors

    layout = get_dataset_layout(config.dataset)
    shape = tuple(layout["shape"])
    num_classes = layout["num_classes"]

    # Check the split against the dataset's classes
    if config.known_classes:
        out_of_range = [c for c in config.known_classes if c >= num_classes]
        if out_of_range:
            errors.append(f"known_classes: {out_of_range} outside 0..{num_classes - 1} for {config.dataset}")
        if config.unknown_dataset is None and len(config.known_classes) >= num_classes:
            errors.append("known_classes: at least one class must stay unknown")
    elif config.num_known is None:
        errors.append("num_known: set num_known or known_classes")
    elif config.unknown_dataset is None and config.num_known >= num_classes:
        errors.append(f"num_known: must be below the {num_classes} classes of {config.dataset}")
    if num_classes < 2:
        errors.append(f"dataset: {config.dataset} has no labelled classes to train on")

    # Check that every network supports the image shape
    if shape not in get_backbone_layout(config.backbone)["shapes"]:
        errors.append(f"backbone: {config.backbone} does not support {config.dataset} images {shape}")
    if get_recommender_layout(shape) is None:
        errors.append(f"dataset: no recommender layout for images {shape}")

    for key in ("unknown_dataset", "sweep_dataset"):
        other = getattr(config, key)
        if other is not None and tuple(get_dataset_layout(other)["shape"]) != shape:
            errors.append(f"{key}: {other} images do not match {config.dataset} images {shape}")

    pool = get_dataset_layout(config.sweep_dataset)["num_classes"]
    for key in ("sweep_counts", "grid_counts"):
        too_many = [c for c in getattr(config, key) if c > pool]
        if too_many:
            errors.append(f"{key}: {too_many} exceed the {pool} classes of {config.sweep_dataset}")

    if config.strategy == "score" and config.delta is None:
        errors.append("delta: the score strategy needs delta")

    return errors


def ensure_valid(config: ExperimentConfig) -> ExperimentConfig:
    """Raise ConfigValidationError listing every violated field."""
    errors = validate_config(config)
    if errors:
        raise ConfigValidationError(errors)
    return config
