"""Domain records shared by the services."""
from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from src.errors import InvalidArgumentError, ParseError

UNKNOWN_LABEL = -1
UNKNOWN_NAME = "unknown"

ImageShape = Tuple[int, int, int]


@dataclass(frozen=True)
class OpenSetSplit:
    """Which classes are known and which are unknown, plus openness metadata."""
    name: str
    seed: int
    known_class_ids: List[int]
    unknown_class_ids: List[int]
    c_tr: int
    c_te: int
    c_r: int
    openness: float
    known_source: str = ""
    unknown_source: str = ""

    def __post_init__(self):
        same_source = self.unknown_source in ("", self.known_source)
        if same_source and set(self.known_class_ids) & set(self.unknown_class_ids):
            raise InvalidArgumentError("Known and unknown class ids must be disjoint")
        if self.c_tr != len(self.known_class_ids):
            raise InvalidArgumentError("C_TR must equal the number of known classes")
        if self.c_te < self.c_tr:
            raise InvalidArgumentError("C_TE must be at least C_TR")

    @property
    def num_known(self) -> int:
        return len(self.known_class_ids)

    def label_map(self) -> Dict[int, int]:
        """Map original known class ids to contiguous indices 0..C-1."""
        return {class_id: index for index, class_id in enumerate(self.known_class_ids)}

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> "OpenSetSplit":
        return OpenSetSplit(
            name=data["name"],
            seed=int(data["seed"]),
            known_class_ids=[int(c) for c in data["known_class_ids"]],
            unknown_class_ids=[int(c) for c in data["unknown_class_ids"]],
            c_tr=int(data["c_tr"]),
            c_te=int(data["c_te"]),
            c_r=int(data["c_r"]),
            openness=float(data["openness"]),
            known_source=data.get("known_source", ""),
            unknown_source=data.get("unknown_source", ""),
        )

    def to_manifest(self) -> str:
        """Render the split as a replayable text manifest."""
        lines = [
            f"name: {self.name}",
            f"seed: {self.seed}",
            f"known_source: {self.known_source}",
            f"unknown_source: {self.unknown_source}",
            f"known_class_ids: {' '.join(str(c) for c in self.known_class_ids)}",
            f"unknown_class_ids: {' '.join(str(c) for c in self.unknown_class_ids)}",
            f"c_tr: {self.c_tr}",
            f"c_te: {self.c_te}",
            f"c_r: {self.c_r}",
            f"openness: {self.openness!r}",
        ]
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_manifest(text: str) -> "OpenSetSplit":
        data = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            if ":" not in line:
                raise ParseError(f"Malformed split manifest line: '{line}'")
            key, value = line.split(":", 1)
            data[key.strip()] = value.strip()
        try:
            data["known_class_ids"] = data["known_class_ids"].split()
            data["unknown_class_ids"] = data["unknown_class_ids"].split()
            return OpenSetSplit.from_dict(data)
        except (KeyError, ValueError) as e:
            raise ParseError(f"Malformed split manifest: {e}") from None


@dataclass(frozen=True)
class DatasetHandle:
    """
    Train/test partitions of one dataset.

    Images are float32 arrays shaped (N, channels, height, width) with values
    in [0,1]; labels are int64 class ids or UNKNOWN_LABEL. Arrays are made
    read-only on construction.
    """
    name: str
    shape: ImageShape
    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray

    def __post_init__(self):
        height, width, channels = self.shape
        for images, labels in ((self.train_images, self.train_labels), (self.test_images, self.test_labels)):
            if images.shape[1:] != (channels, height, width):
                raise InvalidArgumentError(
                    f"{self.name}: image shape {images.shape[1:]} does not match {(channels, height, width)}"
                )
            if len(images) != len(labels):
                raise InvalidArgumentError(f"{self.name}: {len(images)} images but {len(labels)} labels")
            images.setflags(write=False)
            labels.setflags(write=False)

    def partition(self, name: str) -> Tuple[np.ndarray, np.ndarray]:
        if name == "train":
            return self.train_images, self.train_labels
        if name == "test":
            return self.test_images, self.test_labels
        raise InvalidArgumentError(f"Unknown partition '{name}'")

    def class_ids(self) -> List[int]:
        labels = np.concatenate([self.train_labels, self.test_labels])
        return sorted(int(c) for c in np.unique(labels) if c != UNKNOWN_LABEL)


@dataclass
class JointProbabilityVector:
    """
    Posterior over C known slots followed by U synthetic-unknown slots.

    `probs` is a (batch, C+U) tensor; every row sums to one.
    """
    probs: torch.Tensor
    num_known: int
    temperature: float = 1.0

    @property
    def known(self) -> torch.Tensor:
        return self.probs[:, :self.num_known]

    @property
    def unknown(self) -> torch.Tensor:
        return self.probs[:, self.num_known:]

    @property
    def num_unknown(self) -> int:
        return self.probs.shape[1] - self.num_known

    def unknown_mass(self) -> torch.Tensor:
        return self.unknown.sum(dim=1)

    def max_known(self) -> torch.Tensor:
        return self.known.max(dim=1).values

    def argmax_known(self) -> torch.Tensor:
        return self.known.argmax(dim=1)

    def __len__(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True, eq=False)
class ConditionVector:
    """
    A batch of one-hot selectors over the U synthetic unknown classes.

    Stored as class indices; `one_hot()` gives the (batch, U) float rows.
    """
    indices: torch.Tensor
    size: int

    def __post_init__(self):
        if self.size < 1:
            raise InvalidArgumentError(f"Need at least one synthetic unknown class, got {self.size}")
        if self.indices.ndim != 1:
            raise InvalidArgumentError("Condition indices must be one-dimensional")
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= self.size):
            raise InvalidArgumentError(f"Condition index outside 0..{self.size - 1}")

    def one_hot(self) -> torch.Tensor:
        return F.one_hot(self.indices.long(), self.size).float()

    def counts(self) -> torch.Tensor:
        return torch.bincount(self.indices.long(), minlength=self.size)

    def __len__(self) -> int:
        return len(self.indices)


@dataclass
class InferenceThresholds:
    """Thresholds used at test time (delta, per-class epsilons, lambda used in training)."""
    epsilons: List[float]
    epsilon_quantile: float = 0.10
    delta: Optional[float] = None
    lam: Optional[float] = None

    def __post_init__(self):
        values = list(self.epsilons) + [v for v in (self.delta, self.lam) if v is not None]
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise InvalidArgumentError("Thresholds must lie in [0,1]")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> "InferenceThresholds":
        try:
            return InferenceThresholds(
                epsilons=[float(e) for e in data["epsilons"]],
                epsilon_quantile=float(data.get("epsilon_quantile", 0.10)),
                delta=data.get("delta"),
                lam=data.get("lam"),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"Malformed thresholds: {e}") from None


@dataclass
class RecognitionResult:
    """Batch of decisions: class index or UNKNOWN_LABEL, with the scores behind them."""
    decisions: torch.Tensor
    unknown_scores: Optional[torch.Tensor]
    known_scores: torch.Tensor

    def __len__(self) -> int:
        return self.decisions.shape[0]


@dataclass(frozen=True)
class AblationVariant:
    """Which pipeline components a baseline uses."""
    tag: str
    use_teacher: bool
    distill: bool
    use_recommender: bool

    @property
    def use_student(self) -> bool:
        return self.distill or self.use_recommender

    @staticmethod
    def from_tag(tag: str) -> "AblationVariant":
        toggles = ABLATION_TOGGLES.get(tag)
        if toggles is None:
            raise InvalidArgumentError(f"Unknown ablation variant '{tag}'")
        return AblationVariant(tag=tag, **toggles)


ABLATION_TOGGLES = {
    "T": {"use_teacher": True, "distill": False, "use_recommender": False},
    "TS": {"use_teacher": True, "distill": True, "use_recommender": False},
    "RS": {"use_teacher": False, "distill": False, "use_recommender": True},
    "TRS": {"use_teacher": True, "distill": True, "use_recommender": True},
}


@dataclass
class EvaluationReport:
    """Metrics of one evaluation run with the provenance needed to replay it."""
    variant: str
    strategy: str
    auroc: float
    macro_f1: float
    per_class: List[Dict[str, Any]]
    openness: float
    split: Dict[str, Any]
    config_fingerprint: str
    unknown_mass: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("auroc", "macro_f1"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidArgumentError(f"{name} must lie in [0,1], got {value}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)
