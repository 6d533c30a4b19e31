"""Unknown detection and open-set recognition metrics."""
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import rankdata
from sklearn.metrics import precision_recall_fscore_support

from src.errors import InvalidArgumentError
from src.models.records import UNKNOWN_LABEL, UNKNOWN_NAME


def auroc(scores: Sequence[float], is_unknown: Sequence[bool]) -> float:
    """
    Probability that a random unknown outscores a random known, ties counting one half.

    Args:
        scores: Higher means more likely unknown
        is_unknown: Ground truth per sample

    Returns:
        float: AUROC in [0,1]
    """
    scores = np.asarray(scores, dtype=np.float64)
    is_unknown = np.asarray(is_unknown, dtype=bool)
    if len(scores) != len(is_unknown):
        raise InvalidArgumentError("Scores and labels differ in length")
    if is_unknown.all() or not is_unknown.any():
        raise InvalidArgumentError("AUROC needs both known and unknown samples")
    # Mann-Whitney U from average ranks; half-integer rank sums stay exact in float64
    ranks = rankdata(scores, method="average")
    num_unknown = int(is_unknown.sum())
    num_known = len(scores) - num_unknown
    u = ranks[is_unknown].sum() - num_unknown * (num_unknown + 1) / 2.0
    return float(u / (num_unknown * num_known))


def pairwise_auroc(scores: Sequence[float], is_unknown: Sequence[bool]) -> float:
    """Exhaustive pair count; quadratic, used to cross-check auroc()."""
    scores = np.asarray(scores, dtype=np.float64)
    is_unknown = np.asarray(is_unknown, dtype=bool)
    unknown, known = scores[is_unknown], scores[~is_unknown]
    if len(unknown) == 0 or len(known) == 0:
        raise InvalidArgumentError("AUROC needs both known and unknown samples")
    wins = (unknown[:, None] > known[None, :]).sum() + 0.5 * (unknown[:, None] == known[None, :]).sum()
    return float(wins / (len(unknown) * len(known)))


def label_vocabulary(num_known: int) -> List[int]:
    """Known classes 0..C-1 followed by the unknown label."""
    return list(range(num_known)) + [UNKNOWN_LABEL]


def macro_f1(predictions: Sequence[Any], truth: Sequence[Any],
             vocabulary: Sequence[Any]) -> Tuple[float, pd.DataFrame]:
    """
    Unweighted mean F1 over the declared vocabulary (C known classes plus unknown).

    Classes in the vocabulary that are never predicted still count, with F1 0
    where precision or recall is undefined.

    Returns:
        tuple: (macro F1, per-class DataFrame with label/precision/recall/f1/support)
    """
    predictions = list(predictions)
    truth = list(truth)
    vocabulary = list(vocabulary)
    if len(predictions) != len(truth):
        raise InvalidArgumentError("Predictions and truth differ in length")
    stray = sorted({str(v) for v in set(predictions) | set(truth) if v not in vocabulary})
    if stray:
        raise InvalidArgumentError(f"Labels outside the vocabulary: {', '.join(stray)}")
    precision, recall, f1, support = precision_recall_fscore_support(
        truth, predictions, labels=vocabulary, average=None, zero_division=0
    )
    table = pd.DataFrame({
        "label": [UNKNOWN_NAME if v == UNKNOWN_LABEL else v for v in vocabulary],
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "support": support,
    })
    return float(np.mean(f1)), table


def per_class_rows(table: pd.DataFrame) -> List[Dict[str, Any]]:
    return [{k: (v.item() if hasattr(v, "item") else v) for k, v in row.items()} for row in table.to_dict("records")]
