"""Validation rules for experiment configuration fields."""
from src.config.dataset_config import DATASET_LAYOUTS
from src.config.network_config import BACKBONE_LAYOUTS

VARIANT_TAGS = ["T", "TS", "RS", "TRS"]
STRATEGIES = ["score", "classwise"]

_POSITIVE_INT = {"type": "integer", "minimum": 1}
_NON_NEGATIVE_INT = {"type": "integer", "minimum": 0}
_OPEN_UNIT = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "dataset": {"enum": sorted(DATASET_LAYOUTS)},
        "data_root": {"type": "string", "minLength": 1},
        "allow_download": {"type": "boolean"},
        "num_known": {"type": ["integer", "null"], "minimum": 2},
        "known_classes": {
            "type": ["array", "null"],
            "items": _NON_NEGATIVE_INT,
            "minItems": 2,
            "uniqueItems": True,
        },
        "unknown_dataset": {"enum": sorted(DATASET_LAYOUTS) + [None]},
        "backbone": {"enum": sorted(BACKBONE_LAYOUTS)},
        "unknown_slots": _POSITIVE_INT,
        "noise_dim": _POSITIVE_INT,
        "generator_channels": _POSITIVE_INT,
        "discriminator_channels": _POSITIVE_INT,
        "augment_scale": {"type": "number", "minimum": 0},
        "tau": {"type": "number", "exclusiveMinimum": 0},
        "alpha": {"type": "number", "minimum": 0},
        "batch_size": _POSITIVE_INT,
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "gan_beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "teacher_epochs": _NON_NEGATIVE_INT,
        "student_steps": _NON_NEGATIVE_INT,
        "plateau_patience": _NON_NEGATIVE_INT,
        "plateau_tolerance": {"type": "number", "minimum": 0},
        "lambda_quantile": _OPEN_UNIT,
        "epsilon_quantile": _OPEN_UNIT,
        "delta": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "strategy": {"enum": STRATEGIES},
        "eval_batch_size": _POSITIVE_INT,
        "histogram_bins": _POSITIVE_INT,
        "variants": {"type": "array", "items": {"enum": VARIANT_TAGS}, "minItems": 1, "uniqueItems": True},
        "sweep_dataset": {"enum": sorted(DATASET_LAYOUTS)},
        "sweep_counts": {"type": "array", "items": _POSITIVE_INT, "minItems": 1},
        "sweep_repeats": _POSITIVE_INT,
        "grid_taus": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "grid_alphas": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "grid_counts": {"type": "array", "items": _POSITIVE_INT, "minItems": 1},
        "log_every": _POSITIVE_INT,
        "grid_every": _NON_NEGATIVE_INT,
        "grid_per_class": _POSITIVE_INT,
        "device": {"type": "string", "pattern": "^(cpu|cuda(:[0-9]+)?|mps)$"},
        "seed": _NON_NEGATIVE_INT,
        "out_dir": {"type": "string", "minLength": 1},
    },
    "additionalProperties": False,
}


def get_config_schema():
    """Get the JSON schema every experiment config must satisfy"""
    return CONFIG_SCHEMA
