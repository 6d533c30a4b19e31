"""Export Service for experiment artifacts: CSV tables, JSON reports and plots"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import torch  # noqa: E402

from src.errors import NotFoundError, ParseError  # noqa: E402
from src.models.records import UNKNOWN_LABEL, UNKNOWN_NAME, JointProbabilityVector  # noqa: E402

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# Leading columns of every exported table, when present
PRIORITY_FIELDS = ['variant', 'strategy', 'split', 'num_unknown', 'openness', 'repeat',
                   'tau', 'alpha', 'step', 'sample_id']


def order_fields(records: List[Dict], priority_fields: Optional[Sequence[str]] = None) -> List[str]:
    """Priority columns first, remaining columns in first-seen order."""
    priority = list(PRIORITY_FIELDS if priority_fields is None else priority_fields)
    seen: List[str] = []
    for record in records:
        seen.extend(k for k in record.keys() if k not in seen)
    ordered = [f for f in priority if f in seen]
    ordered.extend(f for f in seen if f not in ordered)
    return ordered


def flatten_for_csv(record: Dict, fields: List[str]) -> Dict[str, Any]:
    """
    Flatten record values for CSV export.
    Converts nested objects/arrays to JSON strings; scalars keep their type.
    """
    flattened = {}

    for field in fields:
        value = record.get(field)

        if value is None:
            flattened[field] = ''
        elif isinstance(value, (dict, list, tuple)):
            flattened[field] = json.dumps(value)
        elif isinstance(value, np.generic):
            flattened[field] = value.item()
        else:
            flattened[field] = value

    return flattened


def records_to_frame(records: List[Dict], priority_fields: Optional[Sequence[str]] = None) -> pd.DataFrame:
    fields = order_fields(records, priority_fields)
    return pd.DataFrame([flatten_for_csv(r, fields) for r in records], columns=fields)


def write_csv(path: PathLike, records: List[Dict], priority_fields: Optional[Sequence[str]] = None,
              columns: Optional[Sequence[str]] = None) -> Path:
    """Write records as CSV; an empty record list still gets a header when columns are given."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if records:
        frame = records_to_frame(records, priority_fields)
        if columns is not None:
            frame = frame[list(columns)]
    else:
        frame = pd.DataFrame(columns=list(columns or []))
    frame.to_csv(path, index=False)
    logger.debug("Wrote %d rows to %s", len(frame), path)
    return path


def read_csv(path: PathLike) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise NotFoundError(f"CSV file not found: {path}")
    try:
        return pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ParseError(f"Could not parse {path}: {e}") from None


def write_json(path: PathLike, payload: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n", encoding="utf-8")
    return path


def read_json(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise NotFoundError(f"JSON file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ParseError(f"Could not parse {path}: {e}") from None


def decision_name(label: int) -> str:
    return UNKNOWN_NAME if int(label) == UNKNOWN_LABEL else str(int(label))


def scoring_rows(teacher_probs: Optional[JointProbabilityVector], student_probs: Optional[JointProbabilityVector],
                 unknown_scores: torch.Tensor, known_scores: torch.Tensor, decisions: torch.Tensor,
                 truth: Optional[Sequence[int]] = None) -> List[Dict[str, Any]]:
    """
    One batch-scoring row per sample.

    Columns: sample_id, teacher_max_prob, student_unknown_mass, unknown_score,
    K_1..K_C, decision (and truth when given). Missing networks leave their column empty.
    """
    n = len(decisions)
    teacher_max = teacher_probs.max_known().tolist() if teacher_probs is not None else [None] * n
    student_mass = student_probs.unknown_mass().tolist() if student_probs is not None else [None] * n
    scores = unknown_scores.tolist()
    known = known_scores.tolist()
    rows = []
    for i in range(n):
        row = {
            "sample_id": i,
            "teacher_max_prob": teacher_max[i],
            "student_unknown_mass": student_mass[i],
            "unknown_score": scores[i],
        }
        row.update({f"K_{k + 1}": value for k, value in enumerate(known[i])})
        row["decision"] = decision_name(decisions[i])
        if truth is not None:
            row["truth"] = decision_name(truth[i])
        rows.append(row)
    return rows


def _save_figure(fig, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logger.info("Wrote plot %s", path)
    return path


def plot_training_curves(rows: List[Dict[str, float]], columns: Sequence[str], path: PathLike,
                         title: str = "") -> Path:
    """Loss curves against the step column."""
    frame = pd.DataFrame(rows)
    fig, ax = plt.subplots(figsize=(7, 4))
    for column in columns:
        if column in frame and frame[column].notna().any():
            ax.plot(frame["step"], frame[column], label=column, linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    return _save_figure(fig, path)


def plot_sweep(curve: pd.DataFrame, path: PathLike) -> Path:
    """Mean macro-F1 against openness, one line per variant, std as error bars."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for variant, group in curve.groupby("variant", sort=False):
        group = group.sort_values("openness")
        ax.errorbar(group["openness"], group["macro_f1_mean"], yerr=group["macro_f1_std"].fillna(0.0),
                    marker="o", capsize=3, label=variant)
    ax.set_xlabel("openness")
    ax.set_ylabel("macro-F1")
    ax.set_ylim(0.0, 1.0)
    ax.grid(True, alpha=0.3)
    ax.legend()
    return _save_figure(fig, path)


def plot_heatmap(table: pd.DataFrame, path: PathLike, title: str = "") -> Path:
    """Heatmap of a tau x alpha macro-F1 table (index tau, columns alpha)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    image = ax.imshow(table.to_numpy(dtype=float), vmin=0.0, vmax=1.0, cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(table.columns)), [f"{a:g}" for a in table.columns])
    ax.set_yticks(range(len(table.index)), [f"{t:g}" for t in table.index])
    ax.set_xlabel("alpha")
    ax.set_ylabel("tau")
    ax.set_title(title)
    for i in range(len(table.index)):
        for j in range(len(table.columns)):
            ax.text(j, i, f"{table.iat[i, j]:.2f}", ha="center", va="center", color="w", fontsize=8)
    fig.colorbar(image, ax=ax)
    return _save_figure(fig, path)


def plot_histogram(edges: np.ndarray, known_counts: np.ndarray, unknown_counts: np.ndarray,
                   path: PathLike) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    widths = np.diff(edges)
    ax.bar(edges[:-1], known_counts, width=widths, align="edge", alpha=0.6, label="known")
    ax.bar(edges[:-1], unknown_counts, width=widths, align="edge", alpha=0.6, label="unknown")
    ax.set_xlabel("unknown probability")
    ax.set_ylabel("count")
    ax.legend()
    return _save_figure(fig, path)
