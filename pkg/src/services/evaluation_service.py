"""Evaluation harness: per-variant reports, ablation, openness sweep, sensitivity grid and histograms."""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from src.config.config import ExperimentConfig, derive_seed, model_fingerprint
from src.config.validation_config import STRATEGIES
from src.errors import InvalidArgumentError
from src.models.networks import ClassifierNet
from src.models.records import UNKNOWN_LABEL, AblationVariant, EvaluationReport, JointProbabilityVector
from src.services.dataset_service import balance_known_unknown, make_cross_dataset_split
from src.services.export_service import (
    plot_heatmap, plot_histogram, plot_sweep, scoring_rows, write_csv, write_json,
)
from src.services.inference_service import (
    detect_unknown, known_class_scores, predict_probs, recognize_from_scores, unknown_score,
)
from src.services.metrics_service import auroc, label_vocabulary, macro_f1, per_class_rows
from src.services.trainer_service import (
    ExperimentData, VariantModels, data_for_split, load_configured_dataset, train_teacher, train_variant,
)

logger = logging.getLogger(__name__)


def variant_unknown_scores(variant: AblationVariant, teacher_probs: Optional[JointProbabilityVector],
                           student_probs: Optional[JointProbabilityVector]) -> torch.Tensor:
    """
    Score ranked for AUROC: higher means more likely unknown.

    T: 1 - max known probability; RS: student unknown mass; TS/TRS: the
    teacher-student product score.
    """
    if teacher_probs is not None and student_probs is not None:
        return unknown_score(teacher_probs, student_probs)
    if teacher_probs is not None:
        return 1.0 - teacher_probs.max_known()
    if student_probs is not None:
        return student_probs.unknown_mass()
    raise InvalidArgumentError(f"Variant {variant.tag} has no trained network")


def _known_scores(teacher_probs: Optional[JointProbabilityVector],
                  student_probs: Optional[JointProbabilityVector]) -> torch.Tensor:
    if teacher_probs is not None and student_probs is not None:
        return known_class_scores(teacher_probs, student_probs)
    return (teacher_probs or student_probs).known


def evaluation_set(data: ExperimentData, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Known and unknown test images at 1:1, with truth labels (UNKNOWN_LABEL for unknowns)."""
    known_images, known_labels, unknown_images = balance_known_unknown(
        data.known_test_images, data.known_test_labels, data.unknown_test_images, seed
    )
    images = np.concatenate([known_images, unknown_images])
    truth = np.concatenate([known_labels, np.full(len(unknown_images), UNKNOWN_LABEL, dtype=np.int64)])
    return images, truth


def evaluate_models(models: VariantModels, data: ExperimentData, config: ExperimentConfig,
                    strategy: str = "classwise", delta: Optional[float] = None,
                    epsilons: Optional[List[float]] = None) -> Tuple[EvaluationReport, List[Dict]]:
    """
    Score a trained variant on its split's 1:1 known/unknown test set.

    Args:
        models: Trained networks of the variant
        data: Split data (the known test set and the unknown test images are used)
        strategy: "classwise" (per-class thresholds) or "score" (unknown score against delta)
        delta: Unknown-score threshold for the score strategy
        epsilons: Per-class thresholds; defaults to the ones stored on models

    Returns:
        tuple: (EvaluationReport, batch-scoring rows)
    """
    if strategy not in STRATEGIES:
        raise InvalidArgumentError(f"Unknown strategy '{strategy}', expected one of {', '.join(STRATEGIES)}")
    images, truth = evaluation_set(data, derive_seed(config.seed, "balance"))
    batch, device = config.eval_batch_size, config.device
    teacher_probs = predict_probs(models.teacher, images, batch, device) if models.teacher is not None else None
    student_probs = predict_probs(models.student, images, batch, device) if models.student is not None else None

    scores = variant_unknown_scores(models.variant, teacher_probs, student_probs)
    known_scores = _known_scores(teacher_probs, student_probs)
    if strategy == "classwise":
        epsilons = epsilons if epsilons is not None else models.epsilons
        if not epsilons:
            raise InvalidArgumentError("Classwise recognition needs calibrated class thresholds")
        decisions = recognize_from_scores(known_scores, epsilons)
    else:
        if teacher_probs is None or student_probs is None:
            raise InvalidArgumentError(f"The score strategy needs a teacher and a student; {models.variant.tag} lacks one")
        if delta is None:
            raise InvalidArgumentError("The score strategy needs an explicit delta")
        decisions = detect_unknown(scores, delta, teacher_probs)

    f1, table = macro_f1(decisions.tolist(), truth.tolist(), label_vocabulary(data.num_known))
    unknown_mass = {}
    if student_probs is not None:
        mass = student_probs.unknown_mass().numpy()
        is_unknown = truth == UNKNOWN_LABEL
        unknown_mass = {"known_mean": float(mass[~is_unknown].mean()), "unknown_mean": float(mass[is_unknown].mean())}

    report = EvaluationReport(
        variant=models.variant.tag,
        strategy=strategy,
        auroc=auroc(scores.numpy(), truth == UNKNOWN_LABEL),
        macro_f1=f1,
        per_class=per_class_rows(table),
        openness=data.split.openness,
        split=data.split.to_dict(),
        config_fingerprint=model_fingerprint(config),
        unknown_mass=unknown_mass,
    )
    logger.info("%s/%s: AUROC %.4f, macro-F1 %.4f (openness %.3f)",
                report.variant, strategy, report.auroc, report.macro_f1, report.openness)
    rows = scoring_rows(teacher_probs, student_probs, scores, known_scores, decisions, truth.tolist())
    return report, rows


def write_report(report: EvaluationReport, rows: List[Dict], reports_dir: Path, name: str) -> Path:
    write_csv(Path(reports_dir) / f"{name}_scores.csv", rows)
    write_csv(Path(reports_dir) / f"{name}_per_class.csv", report.per_class)
    return write_json(Path(reports_dir) / f"{name}.json", report.to_dict())


def run_ablation(variant: AblationVariant, config: ExperimentConfig, data: ExperimentData,
                 teacher: Optional[ClassifierNet] = None) -> Tuple[EvaluationReport, VariantModels, List[Dict]]:
    """Train one baseline on the split and evaluate it with the classwise rule."""
    models = train_variant(variant, config, data, teacher=teacher)
    report, rows = evaluate_models(models, data, config, strategy="classwise")
    return report, models, rows


def run_ablation_suite(config: ExperimentConfig, data: ExperimentData, reports_dir: Path,
                       teacher: Optional[ClassifierNet] = None) -> List[EvaluationReport]:
    """All configured variants on one split; the teacher is trained once and shared."""
    variants = [AblationVariant.from_tag(tag) for tag in config.variants]
    if teacher is None and any(v.use_teacher for v in variants):
        teacher, _ = train_teacher(config, data)
    reports = []
    for variant in variants:
        report, models, rows = run_ablation(variant, config, data, teacher=teacher)
        write_report(report, rows, reports_dir, f"ablation_{variant.tag}")
        if models.student is not None:
            emit_unknown_probability_histogram(models.student, data.known_test_images, data.unknown_test_images,
                                               Path(reports_dir) / f"histogram_{variant.tag}", config)
        reports.append(report)
    write_csv(Path(reports_dir) / "ablation.csv",
              [{"variant": r.variant, "auroc": r.auroc, "macro_f1": r.macro_f1, "openness": r.openness}
               for r in reports])
    return reports


def _sweep_draws(num_unknown: int, pool_size: int, repeats: int) -> int:
    return 1 if num_unknown >= pool_size else repeats


def run_openness_sweep(config: ExperimentConfig, counts: Sequence[int], repeats: int,
                       variants: Sequence[str], out_dir: Path) -> pd.DataFrame:
    """
    Macro-F1 against openness with every class of the configured dataset known
    and unknown classes drawn from the sweep pool.

    Each variant is trained once on the knowns; only the unknown draw changes
    between openness levels and repeats.

    Returns:
        DataFrame: one row per (variant, num_unknown) with mean and std macro-F1
    """
    handle = load_configured_dataset(config, config.dataset)
    pool_handle = load_configured_dataset(config, config.sweep_dataset)
    pool = pool_handle.class_ids()
    if not pool:
        raise InvalidArgumentError(f"Unknown class pool '{config.sweep_dataset}' is empty")
    known = list(config.known_classes or handle.class_ids())

    def split_for(count: int, repeat: int):
        seed = derive_seed(config.seed, f"sweep:{count}:{repeat}")
        return make_cross_dataset_split(known, pool, count, seed, config.dataset, config.sweep_dataset)

    base = data_for_split(handle, split_for(min(counts), 0), pool_handle)
    variant_list = [AblationVariant.from_tag(tag) for tag in variants]
    teacher = train_teacher(config, base)[0] if any(v.use_teacher for v in variant_list) else None
    trained = {v.tag: train_variant(v, config, base, teacher=teacher) for v in variant_list}

    rows = []
    for count in counts:
        for repeat in range(_sweep_draws(count, len(pool), repeats)):
            data = data_for_split(handle, split_for(count, repeat), pool_handle)
            for tag, models in trained.items():
                report, _ = evaluate_models(models, data, config)
                rows.append({"variant": tag, "num_unknown": count, "repeat": repeat,
                             "openness": report.openness, "macro_f1": report.macro_f1, "auroc": report.auroc})
    out_dir = Path(out_dir)
    write_csv(out_dir / "sweep_runs.csv", rows)
    frame = pd.DataFrame(rows)
    curve = (frame.groupby(["variant", "num_unknown"], sort=False)
             .agg(openness=("openness", "mean"), macro_f1_mean=("macro_f1", "mean"),
                  macro_f1_std=("macro_f1", "std"), auroc_mean=("auroc", "mean"), draws=("repeat", "count"))
             .reset_index())
    curve.to_csv(out_dir / "sweep.csv", index=False)
    plot_sweep(curve, out_dir / "sweep.png")
    return curve


def run_sensitivity_grid(config: ExperimentConfig, taus: Sequence[float], alphas: Sequence[float],
                         counts: Sequence[int], out_dir: Path) -> pd.DataFrame:
    """
    Macro-F1 of the full pipeline over a (tau, alpha) grid at each openness level.

    The teacher is trained once; every grid cell trains its own student and recommender.
    """
    handle = load_configured_dataset(config, config.dataset)
    pool_handle = load_configured_dataset(config, config.sweep_dataset)
    pool = pool_handle.class_ids()
    known = list(config.known_classes or handle.class_ids())
    splits = {
        count: make_cross_dataset_split(known, pool, count, derive_seed(config.seed, f"grid:{count}"),
                                        config.dataset, config.sweep_dataset)
        for count in counts
    }
    datasets = {count: data_for_split(handle, split, pool_handle) for count, split in splits.items()}
    base = datasets[counts[0]]
    teacher, _ = train_teacher(config, base)
    full = AblationVariant.from_tag("TRS")

    rows = []
    for tau in taus:
        for alpha in alphas:
            cell = config.override(tau=float(tau), alpha=float(alpha))
            models = train_variant(full, cell, base, teacher=teacher)
            for count, data in datasets.items():
                report, _ = evaluate_models(models, data, cell)
                rows.append({"num_unknown": count, "openness": report.openness, "tau": tau, "alpha": alpha,
                             "macro_f1": report.macro_f1, "auroc": report.auroc})
    out_dir = Path(out_dir)
    write_csv(out_dir / "grid.csv", rows)
    frame = pd.DataFrame(rows)
    for count, group in frame.groupby("num_unknown"):
        table = group.pivot(index="tau", columns="alpha", values="macro_f1")
        plot_heatmap(table, out_dir / f"grid_unknown{count}.png",
                     title=f"macro-F1, openness {group['openness'].iloc[0]:.3f}")
    return frame


def emit_unknown_probability_histogram(student: ClassifierNet, known_images: np.ndarray, unknown_images: np.ndarray,
                                       path: Path, config: ExperimentConfig) -> Dict[str, float]:
    """
    Histogram of the student's total unknown probability for known and unknown test images.

    Writes <path>.csv (bins x 2 rows), <path>.png and <path>.json with the population means.
    """
    path = Path(path)
    known_mass = predict_probs(student, known_images, config.eval_batch_size, config.device).unknown_mass().numpy()
    unknown_mass = predict_probs(student, unknown_images, config.eval_batch_size, config.device).unknown_mass().numpy()
    edges = np.linspace(0.0, 1.0, config.histogram_bins + 1)
    known_counts, _ = np.histogram(np.clip(known_mass, 0.0, 1.0), bins=edges)
    unknown_counts, _ = np.histogram(np.clip(unknown_mass, 0.0, 1.0), bins=edges)
    rows = [
        {"population": population, "bin_left": float(edges[i]), "bin_right": float(edges[i + 1]), "count": int(c)}
        for population, counts in (("known", known_counts), ("unknown", unknown_counts))
        for i, c in enumerate(counts)
    ]
    write_csv(path.with_suffix(".csv"), rows, priority_fields=[])
    plot_histogram(edges, known_counts, unknown_counts, path.with_suffix(".png"))
    summary = {
        "known_mean": float(known_mass.mean()) if len(known_mass) else float("nan"),
        "unknown_mean": float(unknown_mass.mean()) if len(unknown_mass) else float("nan"),
    }
    summary["separation"] = summary["unknown_mean"] - summary["known_mean"]
    write_json(path.with_suffix(".json"), summary)
    return summary
