"""Finite-difference checks of every training loss on tiny float64 networks."""
import pytest
import torch

from src.models.networks import build_classifier, build_discriminator, build_generator
from src.services.distillation_service import augment_teacher, kd_loss, teacher_targets, temperature_scaled_probs
from src.services.recommender_service import discriminator_loss, generator_loss, student_unknown_loss

MNIST = (28, 28, 1)
NUM_KNOWN = 3
NUM_UNKNOWN = 2
TAU = 5.0
EPS = 1e-6


def _numeric_gradient(loss_fn, param, flat_index):
    flat = param.data.view(-1)
    original = flat[flat_index].item()
    flat[flat_index] = original + EPS
    plus = loss_fn().item()
    flat[flat_index] = original - EPS
    minus = loss_fn().item()
    flat[flat_index] = original
    return (plus - minus) / (2 * EPS)


def _check_gradients(loss_fn, module, samples_per_param=3):
    module.zero_grad()
    loss_fn().backward()
    checked = 0
    for name, param in module.named_parameters():
        if not param.requires_grad:
            continue
        analytic = param.grad.view(-1)
        step = max(1, param.numel() // samples_per_param)
        for flat_index in range(0, param.numel(), step)[:samples_per_param]:
            numeric = _numeric_gradient(loss_fn, param, flat_index)
            exact = analytic[flat_index].item()
            diff = abs(numeric - exact)
            assert diff < 1e-8 or diff / max(abs(numeric), abs(exact)) < 1e-4, (name, flat_index, numeric, exact)
            checked += 1
    assert checked > 0


@pytest.fixture
def networks():
    torch.manual_seed(0)
    teacher = build_classifier(MNIST, NUM_KNOWN, 0, "tiny").double()
    teacher = augment_teacher(teacher, NUM_UNKNOWN, eps_scale=0.1, seed=0)
    student = build_classifier(MNIST, NUM_KNOWN, NUM_UNKNOWN, "tiny").double()
    generator = build_generator(MNIST, NUM_UNKNOWN, noise_dim=4, channels=2).double()
    discriminator = build_discriminator(MNIST, channels=2).double()
    return teacher, student, generator, discriminator


def _batch(size=4, seed=1):
    rng = torch.Generator().manual_seed(seed)
    x = torch.rand(size, 1, 28, 28, generator=rng, dtype=torch.float64)
    z = torch.randn(size, 4, generator=rng, dtype=torch.float64)
    cvs = torch.eye(NUM_UNKNOWN, dtype=torch.float64)[torch.arange(size) % NUM_UNKNOWN]
    return x, z, cvs


def test_distillation_loss_gradient(networks):
    teacher, student, _, _ = networks
    x, _, _ = _batch()
    targets = teacher_targets(teacher, x, TAU)
    _check_gradients(lambda: kd_loss(targets, temperature_scaled_probs(student(x), TAU, NUM_KNOWN)), student)


def test_distillation_gradient_on_logits():
    torch.manual_seed(2)
    logits = torch.randn(6, 5, dtype=torch.float64, requires_grad=True)
    targets = torch.softmax(torch.randn(6, 5, dtype=torch.float64), dim=1)
    kd_loss(targets, temperature_scaled_probs(logits, TAU, 3)).backward()
    expected = (torch.softmax(logits.detach() / TAU, dim=1) - targets) / (TAU * 6)
    assert torch.allclose(logits.grad, expected, atol=1e-12)


def test_discriminator_loss_gradient(networks):
    _, _, generator, discriminator = networks
    x, z, cvs = _batch()
    with torch.no_grad():
        fake = generator(z, cvs)
    _check_gradients(lambda: -discriminator_loss(discriminator(x), discriminator(fake)), discriminator)


def test_generator_loss_gradient(networks):
    _, student, generator, discriminator = networks
    _, z, cvs = _batch()

    def loss():
        fake = generator(z, cvs)
        probs = temperature_scaled_probs(student(fake), 1.0, NUM_KNOWN)
        return generator_loss(discriminator(fake), probs, cvs, alpha=0.5)

    _check_gradients(loss, generator)


def test_student_unknown_loss_gradient(networks):
    _, student, generator, _ = networks
    _, z, cvs = _batch()
    with torch.no_grad():
        fake = generator(z, cvs)
    mask = torch.tensor([True, False, True, True])
    _check_gradients(
        lambda: student_unknown_loss(temperature_scaled_probs(student(fake), 1.0, NUM_KNOWN), cvs, mask), student
    )


def test_student_unknown_gradient_on_logits():
    torch.manual_seed(3)
    logits = torch.randn(4, NUM_KNOWN + NUM_UNKNOWN, dtype=torch.float64, requires_grad=True)
    cvs = torch.eye(NUM_UNKNOWN, dtype=torch.float64)[[0, 1, 1, 0]]
    mask = torch.tensor([True, True, False, True])
    student_unknown_loss(temperature_scaled_probs(logits, 1.0, NUM_KNOWN), cvs, mask).backward()
    targets = torch.cat([torch.zeros(4, NUM_KNOWN, dtype=torch.float64), cvs], dim=1)
    expected = (torch.softmax(logits.detach(), dim=1) - targets) / 3
    expected[2] = 0.0
    assert torch.allclose(logits.grad, expected, atol=1e-12)
