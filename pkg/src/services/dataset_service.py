"""Dataset ingestion, open-set splits and synthetic unknown sets."""
import logging
import math
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from src.config.dataset_config import get_dataset_layout, get_required_files
from src.errors import InvalidArgumentError, NotFoundError, ParseError
from src.models.records import UNKNOWN_LABEL, DatasetHandle, ImageShape, OpenSetSplit

logger = logging.getLogger(__name__)


def make_rng(seed: int) -> np.random.Generator:
    """Every split, noise draw and subsample uses numpy's PCG64 generator."""
    return np.random.Generator(np.random.PCG64(seed))


def openness(c_tr: int, c_te: int, c_r: int) -> float:
    """
    Openness of a recognition scenario: 1 - sqrt(2*C_TR / (C_TE + C_R)).

    Args:
        c_tr: Number of classes used in training
        c_te: Number of classes used in testing
        c_r: Number of classes to be recognized

    Returns:
        float: Openness in [0,1) for C_TE >= C_TR = C_R; never clamped
    """
    for name, value in (("C_TR", c_tr), ("C_TE", c_te), ("C_R", c_r)):
        if value < 1:
            raise InvalidArgumentError(f"{name} must be a positive count, got {value}")
    return 1.0 - math.sqrt(2.0 * c_tr / (c_te + c_r))


def make_open_set_split(all_class_ids: Sequence[int], num_known: int, seed: int,
                        name: str = "", source: str = "") -> OpenSetSplit:
    """
    Randomly choose num_known classes as known; the rest become unknown.

    Known ids are returned sorted, unknown ids keep their original order.
    """
    all_class_ids = [int(c) for c in all_class_ids]
    if not 1 <= num_known < len(all_class_ids):
        raise InvalidArgumentError(f"num_known must be in 1..{len(all_class_ids) - 1}, got {num_known}")
    chosen = make_rng(seed).choice(len(all_class_ids), size=num_known, replace=False)
    known = sorted(all_class_ids[i] for i in chosen)
    return split_from_known_ids(all_class_ids, known, seed, name=name, source=source)


def split_from_known_ids(all_class_ids: Sequence[int], known_ids: Sequence[int], seed: int = 0,
                         name: str = "", source: str = "") -> OpenSetSplit:
    """Build a split from an explicit list of known class ids."""
    all_class_ids = [int(c) for c in all_class_ids]
    known = [int(c) for c in known_ids]
    missing = [c for c in known if c not in all_class_ids]
    if missing:
        raise InvalidArgumentError(f"Known class ids {missing} are not in the dataset")
    unknown = [c for c in all_class_ids if c not in known]
    c_tr = len(known)
    c_te = len(all_class_ids)
    return OpenSetSplit(
        name=name, seed=seed, known_class_ids=known, unknown_class_ids=unknown,
        c_tr=c_tr, c_te=c_te, c_r=c_tr, openness=openness(c_tr, c_te, c_tr),
        known_source=source, unknown_source=source,
    )


def make_cross_dataset_split(known_ids: Sequence[int], pool_ids: Sequence[int], num_unknown: int, seed: int,
                             known_source: str, unknown_source: str) -> OpenSetSplit:
    """All classes of one dataset are known; num_unknown classes are drawn from another dataset's pool."""
    pool_ids = [int(c) for c in pool_ids]
    if not pool_ids:
        raise InvalidArgumentError("Unknown class pool is empty")
    if not 1 <= num_unknown <= len(pool_ids):
        raise InvalidArgumentError(f"Cannot draw {num_unknown} unknown classes from a pool of {len(pool_ids)}")
    chosen = make_rng(seed).choice(len(pool_ids), size=num_unknown, replace=False)
    unknown = sorted(pool_ids[i] for i in chosen)
    known = [int(c) for c in known_ids]
    c_tr = len(known)
    c_te = c_tr + num_unknown
    return OpenSetSplit(
        name=f"{known_source}+{unknown_source}-{num_unknown}", seed=seed,
        known_class_ids=known, unknown_class_ids=unknown,
        c_tr=c_tr, c_te=c_te, c_r=c_tr, openness=openness(c_tr, c_te, c_tr),
        known_source=known_source, unknown_source=unknown_source,
    )


def write_split_manifest(path: Union[str, Path], split: OpenSetSplit) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(split.to_manifest(), encoding="utf-8")
    return path


def read_split_manifest(path: Union[str, Path]) -> OpenSetSplit:
    path = Path(path)
    if not path.is_file():
        raise NotFoundError(f"Split manifest not found: {path}")
    return OpenSetSplit.from_manifest(path.read_text(encoding="utf-8"))


def _empty_partition(shape: ImageShape) -> Tuple[np.ndarray, np.ndarray]:
    height, width, channels = shape
    return np.zeros((0, channels, height, width), dtype=np.float32), np.zeros(0, dtype=np.int64)


def synthesize_noise(n: int, shape: ImageShape, seed: int) -> DatasetHandle:
    """
    Images whose pixels are drawn independently from U[0,1].

    The images land in the test partition with UNKNOWN_LABEL labels.
    """
    if n < 1:
        raise InvalidArgumentError(f"Need at least one noise image, got {n}")
    height, width, channels = shape
    images = make_rng(seed).random((n, channels, height, width), dtype=np.float32)
    train_images, train_labels = _empty_partition(shape)
    return DatasetHandle(
        name="noise", shape=tuple(shape),
        train_images=train_images, train_labels=train_labels,
        test_images=images, test_labels=np.full(n, UNKNOWN_LABEL, dtype=np.int64),
    )


def synthesize_mnist_noise(digits: DatasetHandle, noise: DatasetHandle) -> DatasetHandle:
    """Superimpose digit test images on noise images with a pointwise max."""
    if tuple(digits.shape) != tuple(noise.shape):
        raise InvalidArgumentError(f"Shape mismatch: {digits.shape} vs {noise.shape}")
    if len(digits.test_images) != len(noise.test_images):
        raise InvalidArgumentError(
            f"Count mismatch: {len(digits.test_images)} digits vs {len(noise.test_images)} noise images"
        )
    images = np.maximum(digits.test_images, noise.test_images)
    train_images, train_labels = _empty_partition(digits.shape)
    return DatasetHandle(
        name="mnist-noise", shape=tuple(digits.shape),
        train_images=train_images, train_labels=train_labels,
        test_images=images, test_labels=np.full(len(images), UNKNOWN_LABEL, dtype=np.int64),
    )


def _to_unit_range(pixels: np.ndarray) -> np.ndarray:
    return (np.asarray(pixels, dtype=np.float32) / 255.0).astype(np.float32)


def _read_torchvision(layout: dict, root: Path, train: bool, download: bool) -> Tuple[np.ndarray, np.ndarray]:
    import torchvision.datasets as tv

    reader = layout["reader"]
    root = str(root)
    if reader == "mnist":
        ds = tv.MNIST(root, train=train, download=download)
        images = ds.data.numpy()[:, None]
        labels = ds.targets.numpy()
    elif reader == "emnist":
        ds = tv.EMNIST(root, split=layout["split"], train=train, download=download)
        # EMNIST stores images transposed
        images = ds.data.numpy().transpose(0, 2, 1)[:, None]
        labels = ds.targets.numpy() - layout.get("label_offset", 0)
    elif reader == "cifar10":
        ds = tv.CIFAR10(root, train=train, download=False)
        images = np.asarray(ds.data).transpose(0, 3, 1, 2)
        labels = np.asarray(ds.targets)
    elif reader == "svhn":
        ds = tv.SVHN(root, split="train" if train else "test", download=False)
        images = np.asarray(ds.data)
        labels = np.asarray(ds.labels)
    else:
        raise InvalidArgumentError(f"No reader for '{reader}'")
    return _to_unit_range(images), labels.astype(np.int64)


def load_dataset(name: str, root: Union[str, Path], seed: int = 0, allow_download: bool = False) -> DatasetHandle:
    """
    Load a dataset by name, normalized to [0,1].

    Args:
        name: Key of DATASET_LAYOUTS
        root: Data root holding the files listed in the layout
        seed: Seed for the synthetic sets
        allow_download: Let torchvision fetch datasets marked downloadable

    Returns:
        DatasetHandle
    """
    layout = get_dataset_layout(name)
    if layout is None:
        raise NotFoundError(f"Unknown dataset '{name}'")
    root = Path(root)

    if layout["reader"] == "noise":
        return synthesize_noise(layout["count"], layout["shape"], seed)
    if layout["reader"] == "mnist-noise":
        mnist = load_dataset("mnist", root, seed, allow_download)
        count = layout["count"]
        digits = DatasetHandle(
            name="mnist", shape=mnist.shape,
            train_images=mnist.train_images[:0], train_labels=mnist.train_labels[:0],
            test_images=mnist.test_images[:count], test_labels=mnist.test_labels[:count],
        )
        return synthesize_mnist_noise(digits, synthesize_noise(len(digits.test_images), layout["shape"], seed))

    download = allow_download and layout["downloadable"]
    if not download:
        missing = [f for f in get_required_files(name) if not (root / f).is_file()]
        if missing:
            raise NotFoundError(f"Dataset '{name}' is missing files under {root}: {', '.join(missing)}")

    try:
        train_images, train_labels = _read_torchvision(layout, root, True, download)
        test_images, test_labels = _read_torchvision(layout, root, False, download)
    except (RuntimeError, ValueError, OSError, EOFError) as e:
        raise ParseError(f"Could not read dataset '{name}' from {root}: {e}") from None

    logger.info("Loaded %s: %d train / %d test images", name, len(train_images), len(test_images))
    return DatasetHandle(
        name=name, shape=tuple(layout["shape"]),
        train_images=train_images, train_labels=train_labels,
        test_images=test_images, test_labels=test_labels,
    )


def select_classes(handle: DatasetHandle, class_ids: Sequence[int], partition: str) -> Tuple[np.ndarray, np.ndarray]:
    """Images and original labels of the given classes in one partition."""
    images, labels = handle.partition(partition)
    mask = np.isin(labels, np.asarray(list(class_ids), dtype=np.int64))
    return images[mask], labels[mask]


def select_known(handle: DatasetHandle, split: OpenSetSplit, partition: str) -> Tuple[np.ndarray, np.ndarray]:
    """Known-class images with labels remapped to 0..C-1 in split order."""
    images, labels = select_classes(handle, split.known_class_ids, partition)
    mapping = split.label_map()
    remapped = np.array([mapping[int(c)] for c in labels], dtype=np.int64)
    return images, remapped


def subsample(images: np.ndarray, count: int, seed: int, labels: Optional[np.ndarray] = None):
    """Seeded subsample without replacement, keeping the original order."""
    if count >= len(images):
        return (images, labels) if labels is not None else images
    index = np.sort(make_rng(seed).choice(len(images), size=count, replace=False))
    return (images[index], labels[index]) if labels is not None else images[index]


def balance_known_unknown(known_images: np.ndarray, known_labels: np.ndarray, unknown_images: np.ndarray,
                          seed: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Subsample the larger side so knowns and unknowns appear 1:1."""
    if len(unknown_images) == 0:
        raise InvalidArgumentError("No unknown test images to evaluate against")
    count = min(len(known_images), len(unknown_images))
    known_images, known_labels = subsample(known_images, count, seed, known_labels)
    unknown_images = subsample(unknown_images, count, seed + 1)
    return known_images, known_labels, unknown_images
