"""On-disk layout of every supported dataset.

Paths are relative to the configured data root. The readers are the
torchvision dataset classes, so the layout is the one torchvision expects.
"""

DATASET_LAYOUTS = {
    "mnist": {
        "reader": "mnist",
        "shape": (28, 28, 1),
        "num_classes": 10,
        "files": [
            "MNIST/raw/train-images-idx3-ubyte",
            "MNIST/raw/train-labels-idx1-ubyte",
            "MNIST/raw/t10k-images-idx3-ubyte",
            "MNIST/raw/t10k-labels-idx1-ubyte",
        ],
        "downloadable": True,
    },
    "emnist-letters": {
        "reader": "emnist",
        "split": "letters",
        "shape": (28, 28, 1),
        "num_classes": 26,
        # torchvision numbers letters 1..26
        "label_offset": 1,
        "files": [
            "EMNIST/raw/emnist-letters-train-images-idx3-ubyte",
            "EMNIST/raw/emnist-letters-train-labels-idx1-ubyte",
            "EMNIST/raw/emnist-letters-test-images-idx3-ubyte",
            "EMNIST/raw/emnist-letters-test-labels-idx1-ubyte",
        ],
        "downloadable": True,
    },
    "emnist-balanced": {
        "reader": "emnist",
        "split": "balanced",
        "shape": (28, 28, 1),
        "num_classes": 47,
        "label_offset": 0,
        "files": [
            "EMNIST/raw/emnist-balanced-train-images-idx3-ubyte",
            "EMNIST/raw/emnist-balanced-train-labels-idx1-ubyte",
            "EMNIST/raw/emnist-balanced-test-images-idx3-ubyte",
            "EMNIST/raw/emnist-balanced-test-labels-idx1-ubyte",
        ],
        "downloadable": True,
    },
    "cifar10": {
        "reader": "cifar10",
        "shape": (32, 32, 3),
        "num_classes": 10,
        "files": [
            "cifar-10-batches-py/data_batch_1",
            "cifar-10-batches-py/test_batch",
            "cifar-10-batches-py/batches.meta",
        ],
        "downloadable": False,
    },
    "svhn": {
        "reader": "svhn",
        "shape": (32, 32, 3),
        "num_classes": 10,
        "files": ["train_32x32.mat", "test_32x32.mat"],
        "downloadable": False,
    },
    "noise": {
        "reader": "noise",
        "shape": (28, 28, 1),
        "num_classes": 0,
        "count": 10000,
        "files": [],
        "downloadable": False,
    },
    "mnist-noise": {
        "reader": "mnist-noise",
        "shape": (28, 28, 1),
        "num_classes": 0,
        "count": 10000,
        "files": [],
        "downloadable": False,
    },
}


def get_dataset_layout(name):
    """Get the layout entry for a dataset name, or None if unsupported"""
    return DATASET_LAYOUTS.get(name)


def get_required_files(name):
    """Get the files that must exist under the data root for a dataset"""
    layout = DATASET_LAYOUTS.get(name)
    return list(layout["files"]) if layout else []
