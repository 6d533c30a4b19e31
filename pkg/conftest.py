"""Shared fixtures: synthetic striped datasets, tiny configs and temp experiment directories."""
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from src.config.config import testing_config  # noqa: E402
from src.models.records import DatasetHandle  # noqa: E402
from src.services import dataset_service, trainer_service  # noqa: E402


def make_striped_handle(name="mnist", num_classes=10, per_class_train=24, per_class_test=12, seed=0,
                        orientation="rows"):
    """
    28x28x1 images: class c is a bright 4-pixel band at block c % 7 on one half
    of the image, over faint uniform noise. Rows or columns give two disjoint families.
    """
    rng = np.random.default_rng(seed)

    def draw(count):
        images = (rng.random((count * num_classes, 1, 28, 28)) * 0.1).astype(np.float32)
        labels = np.repeat(np.arange(num_classes), count).astype(np.int64)
        for i, c in enumerate(labels):
            band = slice(4 * (c % 7), 4 * (c % 7) + 4)
            half = slice(0, 16) if (c // 7) % 2 == 0 else slice(16, 28)
            if orientation == "rows":
                images[i, 0, band, half] = 0.9
            else:
                images[i, 0, half, band] = 0.9
        return images, labels

    train_images, train_labels = draw(per_class_train)
    test_images, test_labels = draw(per_class_test)
    return DatasetHandle(name=name, shape=(28, 28, 1), train_images=train_images, train_labels=train_labels,
                         test_images=test_images, test_labels=test_labels)


@pytest.fixture
def striped_handle():
    return make_striped_handle()


@pytest.fixture
def tiny_config(tmp_path):
    return testing_config(out_dir=str(tmp_path / "run"), data_root=str(tmp_path / "data"))


@pytest.fixture
def fake_datasets(monkeypatch):
    """Route dataset loading to synthetic handles: striped digits, a striped pool and real noise synthesis."""
    handles = {
        "mnist": make_striped_handle("mnist"),
        "emnist-balanced": make_striped_handle("emnist-balanced", num_classes=14, seed=1, orientation="cols"),
        "emnist-letters": make_striped_handle("emnist-letters", num_classes=14, seed=2, orientation="cols"),
    }

    def load(name, root, seed=0, allow_download=False):
        if name == "noise":
            return dataset_service.synthesize_noise(200, (28, 28, 1), seed)
        return handles[name]

    monkeypatch.setattr(trainer_service, "load_dataset", load)
    return handles
