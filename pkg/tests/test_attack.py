from dataclasses import dataclass

import numpy as np
import pytest

from regiongrad.attack import (
    AttackConfig,
    attack_batch,
    epsilon_grid,
    fgsm,
    fgsm_from_gradient,
    robust_accuracy,
    robust_accuracy_curve,
    write_robustness_csv,
)
from regiongrad.nn import ArchConfig, Tensor, cross_entropy, forward, init_model
from regiongrad.objective import RegionLossConfig
from regiongrad.optim import SgdConfig, accuracy, train
from regiongrad.tensor import Tape, backward, tensor


@dataclass
class Ex:
    image: np.ndarray
    label: int
    mask: np.ndarray


ARCH = ArchConfig(input_shape=(1, 8, 8), conv_blocks=((4, 3, "relu"),), hidden=8, classes=2)
FULL_MASK = np.ones((8, 8), dtype=bool)


def intensity_set(rng, n):
    out = []
    for i in range(n):
        label = i % 2
        base = 0.15 if label == 0 else 0.85
        out.append(Ex(np.clip(base + 0.1 * rng.standard_normal((1, 8, 8)), 0, 1), label, FULL_MASK))
    return out


# ------------------------------------------------------------ epsilon grid


def test_epsilon_grid_shape_and_endpoints():
    grid = epsilon_grid()
    assert len(grid) == 10
    assert grid[0] == 0.0
    assert grid[9] == 0.2
    assert grid[3] == 0.2 * (3 / 9)
    assert all(a < b for a, b in zip(grid, grid[1:]))


# ------------------------------------------------------------- update rule


def test_sign_rule_including_zero():
    cfg = AttackConfig(epsilon=0.1)
    x = np.array([0.5, 0.5, 0.5])
    g = np.array([0.3, -0.2, 0.0])
    assert list(fgsm_from_gradient(x, g, cfg)) == [0.6, 0.4, 0.5]


def test_clipping_at_range_edge():
    cfg = AttackConfig(epsilon=0.2)
    assert fgsm_from_gradient(np.array([0.95]), np.array([1.7]), cfg)[0] == 1.0
    assert fgsm_from_gradient(np.array([0.03]), np.array([-0.4]), cfg)[0] == 0.0


def test_epsilon_zero_returns_image_bit_exact():
    rng = np.random.default_rng(0)
    model = init_model(ARCH, seed=0)
    ex = Ex(rng.random((1, 8, 8)), 1, FULL_MASK)
    adv = fgsm(model, ex, AttackConfig(epsilon=0.0))
    assert adv.data.tobytes() == ex.image.tobytes()


def test_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(epsilon=-0.1)
    with pytest.raises(ValueError):
        AttackConfig(epsilon=0.1, clip_min=1.0, clip_max=0.0)


# ------------------------------------------------------------- guarantees


def test_linf_bound_and_range_on_random_instances():
    rng = np.random.default_rng(1)
    model = init_model(ARCH, seed=1)
    for _ in range(10):
        eps = float(rng.choice(epsilon_grid()))
        cfg = AttackConfig(epsilon=eps)
        images = rng.random((5, 1, 8, 8))
        labels = rng.integers(0, 2, size=5)
        adv = attack_batch(model, images, labels, cfg)
        assert np.max(np.abs(adv - images)) <= eps
        assert adv.min() >= 0.0 and adv.max() <= 1.0


def test_robust_accuracy_at_zero_equals_standard_accuracy():
    rng = np.random.default_rng(2)
    model = init_model(ARCH, seed=2)
    data = intensity_set(rng, 30)
    assert robust_accuracy(model, data, AttackConfig(epsilon=0.0)) == accuracy(model, data)


def test_constant_model_immune_to_attack():
    model = init_model(ARCH, seed=3)
    model = model.replace({n: Tensor(np.zeros(t.shape), requires_grad=True) for n, t in model.items()})
    rng = np.random.default_rng(3)
    data = intensity_set(rng, 20)
    balance = np.mean([e.label == 0 for e in data])  # ties argmax to class 0
    for eps in (0.0, 0.1, 0.2):
        assert robust_accuracy(model, data, AttackConfig(epsilon=eps)) == balance


def test_curve_soft_monotone_on_trained_model():
    rng = np.random.default_rng(4)
    train_set = intensity_set(rng, 120)
    test_set = intensity_set(rng, 60)
    model = init_model(ARCH, seed=4)
    cfg = SgdConfig(learning_rate=0.05, batch_size=32, epochs=15, shuffle_seed=4)
    result = train(model, train_set, cfg, RegionLossConfig(), test_set[:20])
    curve = [robust_accuracy(result.params, test_set, AttackConfig(epsilon=e)) for e in epsilon_grid()]
    non_increasing = sum(1 for a, b in zip(curve, curve[1:]) if b <= a + 1e-12)
    assert non_increasing >= 8


def test_curve_equals_pointwise_robust_accuracy():
    # the one-sweep curve shares gradients across radii; values must not drift
    rng = np.random.default_rng(7)
    model = init_model(ARCH, seed=7)
    data = intensity_set(rng, 40)
    curve = robust_accuracy_curve(model, data, epsilon_grid())
    pointwise = [robust_accuracy(model, data, AttackConfig(epsilon=e)) for e in epsilon_grid()]
    assert curve == pointwise


def test_curve_rejects_bad_radius():
    model = init_model(ARCH, seed=8)
    data = intensity_set(np.random.default_rng(8), 4)
    with pytest.raises(ValueError):
        robust_accuracy_curve(model, data, [0.1, -0.2])


# --------------------------------------------------- dual-implementation


def shadow_fgsm(model, example, eps):
    """Re-derivation with different plumbing: per-example forward path,
    probability-space cross-entropy, explicit where() sign."""
    x = Tensor(np.asarray(example.image), requires_grad=True)
    with Tape() as tape:
        loss = cross_entropy(forward(model, x), example.label)
    g = backward(tape, loss, wrt=[x])[x].data
    s = np.where(g > 0, 1.0, np.where(g < 0, -1.0, 0.0))
    out = np.asarray(example.image) + eps * s
    return np.minimum(np.maximum(out, 0.0), 1.0)


def test_matches_independent_reimplementation():
    rng = np.random.default_rng(5)
    model = init_model(ARCH, seed=5)
    data = intensity_set(rng, 20)
    cfg = AttackConfig(epsilon=0.15)

    mine = robust_accuracy(model, data, cfg)
    hits = 0
    for ex in data:
        adv = shadow_fgsm(model, ex, cfg.epsilon)
        probs = forward(model, tensor(adv))
        hits += int(np.argmax(probs.data) == ex.label)
    assert mine == hits / len(data)

    for ex in data[:5]:
        a = fgsm(model, ex, cfg).data
        b = shadow_fgsm(model, ex, cfg.epsilon)
        assert np.allclose(a, b, atol=1e-12)


def test_write_robustness_csv(tmp_path):
    path = tmp_path / "curve.csv"
    write_robustness_csv([("standard", 0, 0.0, 0.9), ("standard", 0, 0.2, 0.4)], path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "algorithm,seed,epsilon,robust_accuracy"
    assert len(lines) == 3
    assert lines[1] == "standard,0,0.0,0.9"
