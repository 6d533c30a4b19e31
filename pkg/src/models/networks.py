"""Teacher/student classifiers and the recommender's generator and discriminator."""
from typing import Any, Dict, List, Optional

import torch
import torch.nn as nn

from src.config.network_config import LEAKY_SLOPE, get_backbone_layout, get_recommender_layout
from src.errors import InvalidArgumentError
from src.models.records import ImageShape


def _activation(name: str) -> nn.Module:
    if name == "relu":
        return nn.ReLU()
    if name == "tanh":
        return nn.Tanh()
    if name == "leaky":
        return nn.LeakyReLU(LEAKY_SLOPE)
    raise InvalidArgumentError(f"Unknown activation '{name}'")


def _check_batch(batch: torch.Tensor, shape: ImageShape) -> None:
    height, width, channels = shape
    if batch.dim() != 4 or tuple(batch.shape[1:]) != (channels, height, width):
        raise InvalidArgumentError(
            f"Expected a batch shaped (N, {channels}, {height}, {width}), got {tuple(batch.shape)}"
        )


class ClassifierNet(nn.Module):
    """
    Convolutional classifier with C known logits followed by U unknown logits.

    The unknown head is a separate linear layer so that slots can be appended
    to a pretrained teacher without touching the known-class weights.
    """

    def __init__(self, shape: ImageShape, num_known: int, num_unknown: int, backbone: str):
        super().__init__()
        layout = get_backbone_layout(backbone)
        self.shape = tuple(shape)
        self.num_known = num_known
        self.num_unknown = num_unknown
        self.backbone = backbone

        height, width, channels = self.shape
        layers: List[nn.Module] = []
        flattened = False
        in_channels = channels
        for kind, size in layout["layers"]:
            if kind == "conv":
                layers += [nn.Conv2d(in_channels, size, 3, padding=1), _activation(layout["activation"])]
                in_channels = size
            elif kind == "pool":
                layers.append(nn.MaxPool2d(size))
            elif kind == "avgpool":
                layers.append(nn.AvgPool2d(size))
            elif kind == "fc":
                if not flattened:
                    layers.append(nn.Flatten())
                    flattened = True
                layers += [nn.LazyLinear(size), _activation(layout["activation"])]
        if not flattened:
            layers.append(nn.Flatten())
        self.features = nn.Sequential(*layers)
        # one dry pass materializes LazyLinear and gives the feature width
        with torch.no_grad():
            self.hidden_dim = self.features(torch.zeros(1, channels, height, width)).shape[1]
        self.known_head = nn.Linear(self.hidden_dim, num_known)
        self.unknown_head: Optional[nn.Linear] = None
        if num_unknown > 0:
            self.unknown_head = nn.Linear(self.hidden_dim, num_unknown)

    def set_unknown_head(self, head: nn.Linear) -> None:
        if head.in_features != self.hidden_dim:
            raise InvalidArgumentError("Unknown head input width does not match the backbone")
        self.unknown_head = head
        self.num_unknown = head.out_features

    @property
    def num_outputs(self) -> int:
        return self.num_known + self.num_unknown

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_batch(x, self.shape)
        if x.shape[0] == 0:
            return x.new_zeros((0, self.num_outputs))
        hidden = self.features(x)
        logits = self.known_head(hidden)
        if self.unknown_head is not None:
            logits = torch.cat([logits, self.unknown_head(hidden)], dim=1)
        return logits

    def spec(self) -> Dict[str, Any]:
        return {
            "kind": "classifier",
            "shape": list(self.shape),
            "num_known": self.num_known,
            "num_unknown": self.num_unknown,
            "backbone": self.backbone,
        }


class GeneratorNet(nn.Module):
    """
    Conditional generator: the condition vector is embedded to noise_dim and
    multiplied elementwise into z, then decoded by transposed convolutions to
    a sigmoid image.
    """

    def __init__(self, shape: ImageShape, num_unknown: int, noise_dim: int = 100, channels: int = 128):
        super().__init__()
        layout = get_recommender_layout(shape)["generator"]
        self.shape = tuple(shape)
        self.num_unknown = num_unknown
        self.noise_dim = noise_dim
        self.channels = channels

        seed_channels = layout["seed_mult"] * channels
        self.seed_size = layout["seed_size"]
        self.seed_channels = seed_channels
        self.condition_embedding = nn.Linear(num_unknown, noise_dim)
        self.project = nn.Sequential(
            nn.Linear(noise_dim, seed_channels * self.seed_size * self.seed_size),
            nn.LeakyReLU(LEAKY_SLOPE),
        )
        upsample: List[nn.Module] = []
        in_channels = seed_channels
        for mult in layout["up_mults"]:
            upsample += [
                nn.ConvTranspose2d(in_channels, mult * channels, 4, stride=2, padding=1),
                nn.LeakyReLU(LEAKY_SLOPE),
            ]
            in_channels = mult * channels
        kernel = layout["out_kernel"]
        upsample += [nn.Conv2d(in_channels, shape[2], kernel, stride=1, padding=kernel // 2), nn.Sigmoid()]
        self.decode = nn.Sequential(*upsample)

    def fuse(self, z: torch.Tensor, cv: torch.Tensor) -> torch.Tensor:
        return z * self.condition_embedding(cv)

    def forward(self, z: torch.Tensor, cv: torch.Tensor) -> torch.Tensor:
        if z.shape[0] != cv.shape[0]:
            raise InvalidArgumentError("Noise and condition batches differ in length")
        hidden = self.project(self.fuse(z, cv))
        hidden = hidden.view(-1, self.seed_channels, self.seed_size, self.seed_size)
        return self.decode(hidden)

    def sample_noise(self, batch: int, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        """Draw z from the standard normal prior."""
        weight = self.condition_embedding.weight
        return torch.randn(batch, self.noise_dim, generator=generator, dtype=weight.dtype).to(weight.device)

    def spec(self) -> Dict[str, Any]:
        return {
            "kind": "generator",
            "shape": list(self.shape),
            "num_unknown": self.num_unknown,
            "noise_dim": self.noise_dim,
            "channels": self.channels,
        }


class DiscriminatorNet(nn.Module):
    """Strided convolutions and one logistic output unit."""

    def __init__(self, shape: ImageShape, channels: int = 64):
        super().__init__()
        layout = get_recommender_layout(shape)["discriminator"]
        self.shape = tuple(shape)
        self.channels = channels

        layers: List[nn.Module] = []
        in_channels = shape[2]
        size = shape[0]
        for mult in layout["conv_mults"]:
            layers += [nn.Conv2d(in_channels, mult * channels, 3, stride=2, padding=1), nn.LeakyReLU(LEAKY_SLOPE)]
            in_channels = mult * channels
            size = (size + 1) // 2
        layers += [nn.Flatten(), nn.Linear(in_channels * size * size, 1), nn.Sigmoid()]
        self.body = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_batch(x, self.shape)
        return self.body(x).squeeze(1)

    def spec(self) -> Dict[str, Any]:
        return {"kind": "discriminator", "shape": list(self.shape), "channels": self.channels}


def _check_recommender_shape(shape: ImageShape) -> None:
    if get_recommender_layout(shape) is None:
        raise InvalidArgumentError(f"Unsupported image shape {tuple(shape)} for the recommender")


def build_classifier(shape: ImageShape, num_known: int, num_unknown: int = 0, backbone: str = "plain") -> ClassifierNet:
    """
    Build a teacher or student classifier.

    Args:
        shape: (height, width, channels)
        num_known: Number of known classes C (at least 2)
        num_unknown: Number of synthetic unknown slots U (0 for a plain teacher)
        backbone: Name from BACKBONE_LAYOUTS

    Returns:
        ClassifierNet producing C+U logits
    """
    if num_known < 2:
        raise InvalidArgumentError(f"Need at least 2 known classes, got {num_known}")
    if num_unknown < 0:
        raise InvalidArgumentError(f"Unknown slot count must be non-negative, got {num_unknown}")
    layout = get_backbone_layout(backbone)
    if layout is None:
        raise InvalidArgumentError(f"Unknown backbone '{backbone}'")
    if tuple(shape) not in layout["shapes"]:
        raise InvalidArgumentError(f"Backbone '{backbone}' does not support shape {tuple(shape)}")
    return ClassifierNet(tuple(shape), num_known, num_unknown, backbone)


def build_generator(shape: ImageShape, num_unknown: int, noise_dim: int = 100, channels: int = 128) -> GeneratorNet:
    _check_recommender_shape(shape)
    if num_unknown < 1:
        raise InvalidArgumentError("The generator needs at least one synthetic unknown class")
    return GeneratorNet(tuple(shape), num_unknown, noise_dim, channels)


def build_discriminator(shape: ImageShape, channels: int = 64) -> DiscriminatorNet:
    _check_recommender_shape(shape)
    return DiscriminatorNet(tuple(shape), channels)


def forward_logits(net: ClassifierNet, batch: torch.Tensor) -> torch.Tensor:
    """Logit matrix (N, C+U) for a batch; deterministic for fixed parameters."""
    return net(batch)


def rebuild_network(spec: Dict[str, Any]) -> nn.Module:
    """Rebuild an untrained network from the spec stored in a checkpoint."""
    kind = spec.get("kind")
    shape = tuple(spec["shape"])
    if kind == "classifier":
        return build_classifier(shape, spec["num_known"], spec["num_unknown"], spec["backbone"])
    if kind == "generator":
        return build_generator(shape, spec["num_unknown"], spec["noise_dim"], spec["channels"])
    if kind == "discriminator":
        return build_discriminator(shape, spec["channels"])
    raise InvalidArgumentError(f"Unknown network kind '{kind}'")


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())
