"""Command handlers: one per subcommand, each writing into the experiment directory."""
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from src.config.config import ExperimentConfig, derive_seed
from src.errors import InvalidArgumentError
from src.models.records import UNKNOWN_LABEL, AblationVariant, InferenceThresholds
from src.services.dataset_service import make_cross_dataset_split
from src.services.evaluation_service import (
    emit_unknown_probability_histogram, evaluate_models, run_ablation_suite, run_openness_sweep,
    run_sensitivity_grid, write_report,
)
from src.services.export_service import plot_training_curves
from src.services.inference_service import calibrate_epsilons
from src.services.recommender_service import emit_sample_grid
from src.services.trainer_service import (
    ExperimentDirectory, final_sample_grid, load_bundle, load_configured_dataset, load_teacher,
    load_thresholds, prepare_data, read_run_split, save_bundle, save_teacher, save_thresholds,
    train_teacher, train_variant, write_run_header,
)
from src.services.validator_service import ensure_valid

logger = logging.getLogger(__name__)


def _directory(config: ExperimentConfig) -> ExperimentDirectory:
    return ExperimentDirectory(Path(config.out_dir))


def cmd_train_teacher(config: ExperimentConfig) -> Dict[str, Any]:
    """
    Draw the split, pretrain the teacher and write config, split and teacher checkpoint.

    Returns:
        dict: Summary with the checkpoint path and final training metrics
    """
    ensure_valid(config)
    directory = _directory(config)
    data = prepare_data(config)
    write_run_header(directory, config, data.split)
    teacher, history = train_teacher(config, data)
    path = save_teacher(directory, config, teacher, history)
    if history:
        plot_training_curves(history, ["loss"], directory.logs_dir / "teacher.png", title="teacher")
    return {
        "checkpoint": str(path),
        "split": data.split.name,
        "known_class_ids": data.split.known_class_ids,
        "final_loss": history[-1]["loss"] if history else None,
        "final_accuracy": history[-1]["accuracy"] if history else None,
    }


def cmd_train(config: ExperimentConfig) -> Dict[str, Any]:
    """Augment the teacher, calibrate lambda and run the alternating loop (full pipeline)."""
    ensure_valid(config)
    directory = _directory(config).create()
    split = read_run_split(directory)
    teacher = load_teacher(directory, config)
    data = prepare_data(config, split)
    models = train_variant(AblationVariant.from_tag("TRS"), config, data, teacher=teacher,
                           grid_dir=directory.grids_dir, calibrate=False)
    path = save_bundle(directory, config, models)
    final_sample_grid(directory, config, models)
    if models.history:
        plot_training_curves(models.history, ["loss_d", "loss_g", "loss_kd", "loss_s"],
                             directory.logs_dir / "alternating.png", title="alternating training")
    return {"checkpoint": str(path), "lambda": models.lam, "steps": models.bundle.step}


def cmd_calibrate(config: ExperimentConfig) -> Dict[str, Any]:
    """Per-class thresholds from the trained teacher and student on the known training data."""
    ensure_valid(config)
    directory = _directory(config)
    split = read_run_split(directory)
    models = load_bundle(directory, config)
    data = prepare_data(config, split)
    epsilons = calibrate_epsilons(models.teacher, models.student, data.train_images, data.train_labels,
                                  config.epsilon_quantile, config.eval_batch_size, config.device)
    thresholds = InferenceThresholds(epsilons=epsilons, epsilon_quantile=config.epsilon_quantile,
                                     delta=config.delta, lam=models.lam)
    path = save_thresholds(directory, thresholds)
    return {"thresholds": str(path), "epsilons": epsilons}


def cmd_evaluate(config: ExperimentConfig, strategy: Optional[str] = None,
                 unknown_dataset: Optional[str] = None, delta: Optional[float] = None) -> Dict[str, Any]:
    """
    Evaluate the trained pipeline on known test data plus an unknown test set.

    Args:
        strategy: "classwise" (needs calibrate) or "score" (needs delta); defaults to the config
        unknown_dataset: Evaluate against this dataset's test images instead of the split's unknowns
        delta: Unknown-score threshold for the score strategy

    Returns:
        dict: The report
    """
    strategy = strategy or config.strategy
    delta = delta if delta is not None else config.delta
    if unknown_dataset:
        config = config.override(unknown_dataset=unknown_dataset)
    ensure_valid(config)
    directory = _directory(config)
    split = read_run_split(directory)
    models = load_bundle(directory, config)

    epsilons = None
    if strategy == "classwise":
        epsilons = load_thresholds(directory).epsilons
    elif delta is None:
        raise InvalidArgumentError("The score strategy needs --delta (or delta in the config)")

    if unknown_dataset and unknown_dataset != split.unknown_source:
        pool = load_configured_dataset(config, unknown_dataset).class_ids() or [UNKNOWN_LABEL]
        split = make_cross_dataset_split(split.known_class_ids, pool, len(pool), split.seed,
                                         split.known_source or config.dataset, unknown_dataset)
    data = prepare_data(config, split)
    report, rows = evaluate_models(models, data, config, strategy=strategy, delta=delta, epsilons=epsilons)
    name = f"evaluate_{strategy}" + (f"_{unknown_dataset}" if unknown_dataset else "")
    write_report(report, rows, directory.reports_dir, name)
    emit_unknown_probability_histogram(models.student, data.known_test_images, data.unknown_test_images,
                                       directory.reports_dir / f"histogram_{name}", config)
    return report.to_dict()


def cmd_ablate(config: ExperimentConfig) -> Dict[str, Any]:
    """T, TS, RS and TRS (or the configured subset) on one shared split."""
    ensure_valid(config)
    directory = _directory(config)
    data = prepare_data(config)
    write_run_header(directory, config, data.split)
    reports = run_ablation_suite(config, data, directory.reports_dir)
    return {r.variant: {"auroc": r.auroc, "macro_f1": r.macro_f1} for r in reports}


def cmd_sweep(config: ExperimentConfig) -> Dict[str, Any]:
    """Macro-F1 against openness for the configured variants."""
    ensure_valid(config)
    directory = _directory(config).create()
    curve = run_openness_sweep(config, config.sweep_counts, config.sweep_repeats, config.variants,
                               directory.reports_dir / "sweep")
    return {"rows": curve.to_dict("records")}


def cmd_grid(config: ExperimentConfig) -> Dict[str, Any]:
    """Macro-F1 over the (tau, alpha) grid at each configured openness."""
    ensure_valid(config)
    directory = _directory(config).create()
    grid = run_sensitivity_grid(config, config.grid_taus, config.grid_alphas, config.grid_counts,
                                directory.reports_dir / "grid")
    return {"cells": len(grid)}


def cmd_generate(config: ExperimentConfig, per_class: Optional[int] = None,
                 output: Optional[str] = None) -> Dict[str, Any]:
    """Sample grid from the trained generator: one row per synthetic unknown class."""
    ensure_valid(config)
    directory = _directory(config)
    models = load_bundle(directory, config)
    path = Path(output) if output else directory.grids_dir / "generated.png"
    per_class = per_class or config.grid_per_class
    if per_class < 1:
        raise InvalidArgumentError(f"per-class count must be at least 1, got {per_class}")
    emit_sample_grid(models.bundle.generator, models.bundle.generator.num_unknown, per_class, path,
                     seed=derive_seed(config.seed, "generate"))
    return {"grid": str(path)}


COMMANDS = {
    "train-teacher": cmd_train_teacher,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "grid": cmd_grid,
    "generate": cmd_generate,
}
