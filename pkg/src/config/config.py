"""Experiment configuration."""
import hashlib
import os
from dataclasses import dataclass, field, fields, asdict, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union, get_args, get_origin, get_type_hints

from src.errors import InvalidArgumentError, NotFoundError, ParseError

NONE_TOKEN = "none"


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Every knob of an experiment.

    Defaults follow the published setup: temperature 5, balancing weight 0.5,
    ten synthetic unknown classes, Adam at 0.002 and a lambda that leaves 99%
    of the training confidences above it.
    """
    # data and split
    dataset: str = "mnist"
    data_root: str = os.environ.get("OSR_DATA_ROOT") or "data"
    allow_download: bool = False
    num_known: Optional[int] = 6
    known_classes: Optional[List[int]] = None
    unknown_dataset: Optional[str] = None

    # networks
    backbone: str = "plain"
    unknown_slots: int = 10
    noise_dim: int = 100
    generator_channels: int = 128
    discriminator_channels: int = 64
    augment_scale: float = 1e-3

    # optimisation
    tau: float = 5.0
    alpha: float = 0.5
    batch_size: int = 128
    learning_rate: float = 0.002
    gan_beta1: float = 0.5
    teacher_epochs: int = 5
    student_steps: int = 2000
    plateau_patience: int = 0
    plateau_tolerance: float = 1e-4

    # thresholds
    lambda_quantile: float = 0.01
    epsilon_quantile: float = 0.10
    delta: Optional[float] = None
    strategy: str = "classwise"

    # evaluation harness
    eval_batch_size: int = 512
    histogram_bins: int = 20
    variants: List[str] = field(default_factory=lambda: ["T", "TS", "RS", "TRS"])
    sweep_dataset: str = "emnist-balanced"
    sweep_counts: List[int] = field(default_factory=lambda: list(range(2, 48, 5)))
    sweep_repeats: int = 5
    grid_taus: List[float] = field(default_factory=lambda: [1.0, 2.5, 5.0, 10.0])
    grid_alphas: List[float] = field(default_factory=lambda: [0.0, 0.5, 1.0, 1.5, 2.0])
    grid_counts: List[int] = field(default_factory=lambda: [7, 27, 47])

    # artifacts and bookkeeping
    log_every: int = 50
    grid_every: int = 500
    grid_per_class: int = 10
    device: str = "cpu"
    seed: int = 0
    out_dir: str = "runs/experiment"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def override(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


def testing_config(**changes) -> ExperimentConfig:
    """Tiny budgets for unit tests and smoke runs."""
    base = ExperimentConfig(
        backbone="tiny",
        unknown_slots=4,
        noise_dim=8,
        generator_channels=4,
        discriminator_channels=4,
        batch_size=16,
        teacher_epochs=2,
        student_steps=20,
        log_every=10,
        grid_every=0,
        grid_per_class=3,
        eval_batch_size=64,
        histogram_bins=5,
        sweep_counts=[1, 2],
        sweep_repeats=1,
        grid_taus=[5.0],
        grid_alphas=[0.0, 0.5],
        grid_counts=[2],
    )
    return replace(base, **changes)


MODEL_FINGERPRINT_KEYS = (
    "dataset", "backbone", "num_known", "known_classes", "unknown_slots",
    "noise_dim", "generator_channels", "discriminator_channels", "seed",
)


def model_fingerprint(config: ExperimentConfig) -> str:
    """Hash of the config fields that determine network shapes and the split."""
    payload = "|".join(f"{key}={format_value(getattr(config, key))}" for key in MODEL_FINGERPRINT_KEYS)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def derive_seed(global_seed: int, component: str) -> int:
    """
    Derive an independent seed for one pipeline component.

    The seed is the first 8 bytes (big-endian) of SHA-256 over
    "<global_seed>:<component>", masked to 63 bits.
    """
    digest = hashlib.sha256(f"{global_seed}:{component}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & ((1 << 63) - 1)


def _field_types() -> Dict[str, Any]:
    hints = get_type_hints(ExperimentConfig)
    return {f.name: hints[f.name] for f in fields(ExperimentConfig)}


def format_value(value: Any) -> str:
    """Render one config value in the key-value file syntax."""
    if value is None:
        return NONE_TOKEN
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ", ".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce_scalar(raw: str, target: type, key: str):
    if target is bool:
        lowered = raw.lower()
        if lowered in ("true", "yes", "1"):
            return True
        if lowered in ("false", "no", "0"):
            return False
        raise ParseError(f"{key}: expected a boolean, got '{raw}'")
    try:
        return target(raw)
    except ValueError:
        raise ParseError(f"{key}: expected {target.__name__}, got '{raw}'") from None


def parse_value(key: str, raw: str) -> Any:
    """Convert the text form of a config value to the field's Python type."""
    types = _field_types()
    if key not in types:
        raise InvalidArgumentError(f"Unknown config key '{key}'")
    target = types[key]
    raw = raw.strip()

    if get_origin(target) is Union:
        if raw.lower() == NONE_TOKEN:
            return None
        target = next(arg for arg in get_args(target) if arg is not type(None))

    if get_origin(target) in (list, List):
        (item_type,) = get_args(target)
        if not raw:
            return []
        return [_coerce_scalar(part.strip(), item_type, key) for part in raw.split(",")]

    return _coerce_scalar(raw, target, key)


def parse_config_text(text: str) -> Dict[str, Any]:
    """
    Parse a flat key-value config document.

    Args:
        text: Lines of "key = value"; "#" starts a comment

    Returns:
        dict: Typed values keyed by field name
    """
    values = {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"Line {line_number}: expected 'key = value', got '{line}'")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key in values:
            raise ParseError(f"Line {line_number}: duplicate key '{key}'")
        values[key] = parse_value(key, raw)
    return values


def apply_overrides(config: ExperimentConfig, overrides: List[str]) -> ExperimentConfig:
    """Apply "--set key=value" style overrides."""
    changes = {}
    for item in overrides or []:
        if "=" not in item:
            raise InvalidArgumentError(f"Override '{item}' must look like key=value")
        key, raw = item.split("=", 1)
        changes[key.strip()] = parse_value(key.strip(), raw)
    return replace(config, **changes)


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[List[str]] = None) -> ExperimentConfig:
    """
    Build a config from defaults, an optional file and overrides.

    Args:
        path: Key-value config file, or None for defaults only
        overrides: "key=value" strings applied after the file

    Returns:
        ExperimentConfig
    """
    config = ExperimentConfig()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise NotFoundError(f"Config file not found: {path}")
        config = replace(config, **parse_config_text(path.read_text(encoding="utf-8")))
    return apply_overrides(config, overrides)


def echo_config(config: ExperimentConfig) -> str:
    """Render the full config so that load_config() reproduces it."""
    return "".join(f"{f.name} = {format_value(getattr(config, f.name))}\n" for f in fields(config))
