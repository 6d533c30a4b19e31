import pytest
import torch

from src.errors import CheckpointVersionError, InvalidArgumentError, NotFoundError, ParseError
from src.models.checkpoint import CHECKPOINT_FORMAT, load_checkpoint, save_checkpoint
from src.models.networks import (
    build_classifier, build_discriminator, build_generator, count_parameters, forward_logits,
)
from src.services.distillation_service import augment_teacher

MNIST = (28, 28, 1)
CIFAR = (32, 32, 3)


def test_classifier_logit_counts():
    torch.manual_seed(0)
    net = build_classifier(MNIST, 6, 10, "plain")
    assert forward_logits(net, torch.rand(5, 1, 28, 28)).shape == (5, 16)
    teacher = build_classifier(MNIST, 10, 0, "plain")
    logits = forward_logits(teacher, torch.rand(3, 1, 28, 28))
    assert logits.shape == (3, 10)
    assert torch.isfinite(logits).all()


def test_classifier_empty_batch():
    net = build_classifier(MNIST, 6, 10, "tiny")
    assert forward_logits(net, torch.zeros(0, 1, 28, 28)).shape == (0, 16)


def test_classifier_rejects_bad_inputs():
    with pytest.raises(InvalidArgumentError):
        build_classifier(CIFAR, 6, 10, "plain")
    with pytest.raises(InvalidArgumentError):
        build_classifier(MNIST, 1, 10, "plain")
    with pytest.raises(InvalidArgumentError):
        build_classifier(MNIST, 6, 10, "resnet")
    net = build_classifier(MNIST, 6, 0, "tiny")
    with pytest.raises(InvalidArgumentError):
        net(torch.zeros(2, 3, 32, 32))


def test_vgg_small_on_color_images():
    net = build_classifier(CIFAR, 6, 10, "vgg-small")
    assert net(torch.rand(2, 3, 32, 32)).shape == (2, 16)


@pytest.mark.parametrize("shape", [MNIST, CIFAR])
def test_generator_output_in_unit_range(shape):
    torch.manual_seed(1)
    generator = build_generator(shape, 10, noise_dim=16, channels=8)
    z = torch.randn(4, 16) * 100
    cv = torch.eye(10)[:4]
    images = generator(z, cv)
    height, width, channels = shape
    assert images.shape == (4, channels, height, width)
    assert images.min() >= 0.0 and images.max() <= 1.0


def test_generator_full_width_matches_published_table():
    generator = build_generator(MNIST, 10)
    assert generator.condition_embedding.out_features == 100
    assert generator.project[0].out_features == 7 * 7 * 128
    assert generator(generator.sample_noise(2), torch.eye(10)[:2]).shape == (2, 1, 28, 28)


def test_condition_fusion_identity():
    torch.manual_seed(2)
    generator = build_generator(MNIST, 10, noise_dim=16, channels=8)
    with torch.no_grad():
        generator.condition_embedding.weight.zero_()
        generator.condition_embedding.bias.fill_(1.0)
    z = torch.randn(1, 16)
    a = generator(z, torch.eye(10)[[0]])
    b = generator(z, torch.eye(10)[[7]])
    assert torch.equal(a, b)
    assert torch.equal(generator.fuse(z, torch.eye(10)[[3]]), z)


def test_generator_rejects_unsupported_shapes():
    with pytest.raises(InvalidArgumentError):
        build_generator((64, 64, 3), 10)
    with pytest.raises(InvalidArgumentError):
        build_generator(MNIST, 0)
    with pytest.raises(InvalidArgumentError):
        build_discriminator((64, 64, 3))


@pytest.mark.parametrize("shape", [MNIST, CIFAR])
def test_discriminator_scalar_probability(shape):
    height, width, channels = shape
    discriminator = build_discriminator(shape, channels=8)
    out = discriminator(torch.rand(6, channels, height, width))
    assert out.shape == (6,)
    assert ((out > 0) & (out < 1)).all()


def test_tiny_instances_fit_gradient_checks():
    assert count_parameters(build_classifier(MNIST, 3, 2, "tiny")) < 1000
    assert count_parameters(build_generator(MNIST, 2, noise_dim=4, channels=2)) < 1000
    assert count_parameters(build_discriminator(MNIST, channels=2)) < 1000


def _networks():
    torch.manual_seed(3)
    teacher = build_classifier(MNIST, 4, 0, "tiny")
    return {
        "teacher": augment_teacher(teacher, 3, seed=0),
        "student": build_classifier(MNIST, 4, 3, "tiny"),
        "generator": build_generator(MNIST, 3, noise_dim=8, channels=4),
        "discriminator": build_discriminator(MNIST, channels=4),
    }


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    nets = _networks()
    path = save_checkpoint(tmp_path / "bundle.pt", nets, "abc123", step=42, extras={"lam": 0.25})
    loaded = load_checkpoint(path, expected_fingerprint="abc123")
    assert loaded.step == 42
    assert loaded.extras == {"lam": 0.25}

    probe = torch.rand(5, 1, 28, 28)
    for name in ("teacher", "student"):
        assert torch.equal(nets[name](probe), loaded.networks[name](probe))
    z, cv = torch.randn(5, 8), torch.eye(3)[[0, 1, 2, 0, 1]]
    assert torch.equal(nets["generator"](z, cv), loaded.networks["generator"](z, cv))
    assert torch.equal(nets["discriminator"](probe), loaded.networks["discriminator"](probe))
    assert not any(p.requires_grad for p in loaded.networks["teacher"].unknown_head.parameters())
    assert all(p.requires_grad for p in loaded.networks["student"].parameters())


def test_checkpoint_fingerprint_mismatch(tmp_path):
    path = save_checkpoint(tmp_path / "bundle.pt", _networks(), "abc123")
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path, expected_fingerprint="other")


def test_checkpoint_version_mismatch(tmp_path):
    path = tmp_path / "future.pt"
    torch.save({"format": CHECKPOINT_FORMAT, "version": 99, "fingerprint": "x", "step": 0,
                "networks": {}, "extras": {}}, path)
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_checkpoint_corrupt_or_missing(tmp_path):
    path = tmp_path / "corrupt.pt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ParseError):
        load_checkpoint(path)
    with pytest.raises(NotFoundError):
        load_checkpoint(tmp_path / "absent.pt")
