"""End-to-end acceptance gate, one test per guarantee.

The first four checks are oracle suites that finish in seconds: analytic
gradients against central finite differences, the algebraic reductions of
the region-weighted objective, closed-form values of every evaluation
metric, and the attack's hard guarantees. The last four share two
full-scale experiment runs (identical settings, worker counts 1 and 8)
and assert directions — which method wins — never magnitudes, which move
with architecture and data scale. The paired runs dominate the suite's
runtime: roughly two hours on a single CPU core, well under an hour on a
multi-core desktop.
"""

import json
import math
import os
import statistics
import time
from dataclasses import dataclass

import numpy as np
import pytest
from oracles import fd_grad, max_rel_err, plain_ce_train

from regiongrad.attack import AttackConfig, attack_batch, epsilon_grid, robust_accuracy
from regiongrad.cli import main
from regiongrad.data import DataSpec, generate
from regiongrad.harness import LAMBDA_VALUES_FULL, lambda_grid
from regiongrad.nn import ArchConfig, ModelParams, init_model, log_probs
from regiongrad.objective import RegionLossConfig, region_loss
from regiongrad.optim import SgdConfig, accuracy, train
from regiongrad.saliency import Box, extract_box, iou, saliency_metric
from regiongrad.tensor import Tape, Tensor, backward, neg, tensor


@dataclass
class Ex:
    image: np.ndarray
    label: int
    mask: np.ndarray = None


def _ce_value(model, image, label) -> float:
    return -float(log_probs(model, tensor(image)).data[0, label])


def _random_mask(rng, height, width) -> np.ndarray:
    r0, c0 = int(rng.integers(0, height - 2)), int(rng.integers(0, width - 2))
    r1, c1 = int(rng.integers(r0 + 1, height)), int(rng.integers(c0 + 1, width))
    mask = np.zeros((height, width), dtype=bool)
    mask[r0 : r1 + 1, c0 : c1 + 1] = True
    return mask


# 1 ------------------------------------------------------- gradient oracles


def test_gradients_match_central_differences():
    """Twenty random smooth models: all analytic gradients track finite
    differences — model and input gradients of the cross-entropy to 1e-5,
    parameter gradients of the penalized objective (which differentiate
    an inner gradient) to 1e-4."""
    t0 = time.monotonic()
    arch = ArchConfig(
        input_shape=(1, 6, 6),
        conv_blocks=((2, 3, "softplus"),),
        hidden=4,
        classes=3,
        dense_activation="softplus",
    )
    rng = np.random.default_rng(7)
    for trial in range(20):
        model = init_model(arch, seed=100 + trial)
        image = rng.random((1, 6, 6))
        label = int(rng.integers(0, arch.classes))

        x = Tensor(image, requires_grad=True)
        with Tape() as tape:
            ce = neg(log_probs(model, x)[0, label])
        grads = backward(tape, ce, wrt=[x] + model.tensors())

        fd_x = fd_grad(lambda arr: _ce_value(model, arr, label), image)
        assert max_rel_err(grads[x].data, fd_x) <= 1e-5

        for name, t in model.items():
            fd_t = fd_grad(
                lambda arr, name=name: _ce_value(
                    model.replace({name: Tensor(arr, requires_grad=True)}), image, label
                ),
                t.data,
            )
            assert max_rel_err(grads[t].data, fd_t) <= 1e-5, name

        l1 = float(10.0 ** rng.uniform(-1.0, 0.7))
        l2 = float(10.0 ** rng.uniform(-1.0, 0.7))
        if trial % 4 == 1:
            l2 = 0.0
        if trial % 4 == 2:
            l1 = 0.0
        cfg = RegionLossConfig(l1, l2)
        ex = Ex(image=image, label=label, mask=_random_mask(rng, 6, 6))

        with Tape() as tape:
            loss = region_loss(model, ex, cfg)
        grads = backward(tape, loss, wrt=model.tensors())
        for name, t in model.items():
            fd_t = fd_grad(
                lambda arr, name=name: float(
                    region_loss(model.replace({name: Tensor(arr, requires_grad=True)}), ex, cfg).item()
                ),
                t.data,
            )
            assert max_rel_err(grads[t].data, fd_t) <= 1e-4, name
    assert time.monotonic() - t0 < 120.0


# 2 ---------------------------------------------------- objective reductions


def test_objective_reduces_to_known_special_cases():
    """Zero weights reproduce a plain cross-entropy trainer bit-for-bit;
    equal weights reproduce cross-entropy plus the full squared
    input-gradient norm to 1e-10 on 100 random cases."""
    spec = DataSpec(classes=2, count=48, height=10, width=10, noise=0.1, distractors=2, min_object=5, max_object=6)
    data = generate(spec, seed=3)
    arch = ArchConfig(input_shape=(1, 10, 10), conv_blocks=((4, 3, "relu"),), hidden=8, classes=2)
    sgd = SgdConfig(learning_rate=0.05, batch_size=16, epochs=3, shuffle_seed=9)

    zeroed = train(init_model(arch, seed=8), data[:32], sgd, RegionLossConfig(0.0, 0.0), data[32:])
    plain = plain_ce_train(init_model(arch, seed=8), data[:32], sgd, data[32:])
    assert not zeroed.diverged
    for (name, a), (_, b) in zip(zeroed.params.items(), plain.items()):
        assert a.data.tobytes() == b.data.tobytes(), name

    small = ArchConfig(input_shape=(1, 6, 6), conv_blocks=((2, 3, "relu"),), hidden=4, classes=2)
    rng = np.random.default_rng(21)
    for case in range(100):
        model = init_model(small, seed=500 + case // 10)
        image = rng.random((1, 6, 6))
        label = int(rng.integers(0, 2))
        c = float(10.0 ** rng.uniform(-2.0, 2.0))
        ex = Ex(image=image, label=label, mask=_random_mask(rng, 6, 6))

        both = float(region_loss(model, ex, RegionLossConfig(c, c)).item())

        x = Tensor(image, requires_grad=True)
        with Tape() as tape:
            ce = neg(log_probs(model, x)[0, label])
        g = backward(tape, ce, wrt=[x])[x].data
        assert abs(both - (float(ce.item()) + c * float(np.sum(g * g)))) <= 1e-10


# 3 ------------------------------------------------------------ metric oracles


def _fixed_logit_model(arch: ArchConfig, bias) -> ModelParams:
    """All-zero weights with a chosen output bias: constant logits."""
    named = []
    for name, shape in arch.param_shapes():
        data = np.array(bias, dtype=float) if name == "out.b" else np.zeros(shape)
        named.append((name, Tensor(data, requires_grad=True)))
    return ModelParams(arch, named)


def test_metrics_reproduce_closed_form_values():
    """Attack radii, weight grids, IoU, box extraction, and the saliency
    score all hit their hand-computable values."""
    t0 = time.monotonic()

    radii = epsilon_grid()
    assert len(radii) == 10
    assert radii[0] == 0.0 and radii[9] == 0.2
    assert radii[3] == pytest.approx(0.2 * 3 / 9, abs=1e-15)

    assert len(LAMBDA_VALUES_FULL) == 14
    assert len(lambda_grid("full")) == 196
    diagonal = lambda_grid("diagonal")
    assert len(diagonal) == 14
    assert (0.1, 0.1) in diagonal and (1000.0, 1000.0) in diagonal
    assert lambda_grid("zero") == [(0.0, 0.0)]

    assert iou(Box(2, 3, 7, 9), Box(2, 3, 7, 9)) == 1.0
    assert iou(Box(0, 0, 1, 1), Box(5, 5, 6, 6)) == 0.0
    assert iou(Box(0, 0, 9, 9), Box(0, 5, 9, 14)) == 50 / 150

    single = np.zeros((8, 8))
    single[3, 5] = 1.0
    assert extract_box(single) == Box(3, 5, 3, 5)
    assert extract_box(np.full((6, 7), 0.2)) == Box(0, 0, 5, 6)
    two = np.zeros((8, 8))
    two[1, 1], two[4, 7] = 1.0, 0.9
    assert extract_box(two) == Box(1, 1, 4, 7)

    arch = ArchConfig(input_shape=(1, 10, 10), conv_blocks=((2, 3, "relu"),), hidden=4, classes=2)
    ex = Ex(image=np.linspace(0.0, 1.0, 100).reshape(1, 10, 10), label=0)

    sure = _fixed_logit_model(arch, [40.0, -40.0])  # true-class probability exactly 1
    full = saliency_metric(sure, ex, Box(0, 0, 9, 9))
    assert full.a_hat == 1.0 and full.p == 1.0 and full.s == 0.0
    tiny = saliency_metric(sure, ex, Box(0, 0, 0, 0))
    assert tiny.a_hat == 0.01 and tiny.a == 0.05
    assert tiny.s == pytest.approx(math.log(0.05), abs=1e-12)

    unsure = _fixed_logit_model(arch, [0.0, 0.0])  # uniform: probability 1/2
    quarter = saliency_metric(unsure, ex, Box(0, 0, 4, 4))
    assert quarter.a_hat == 0.25
    assert quarter.p == pytest.approx(0.5, abs=1e-15)
    assert quarter.s == pytest.approx(math.log(0.5), abs=1e-12)

    assert time.monotonic() - t0 < 10.0


# 4 ------------------------------------------------------- attack guarantees


def test_attack_respects_ball_and_range_guarantees():
    """1000 random attack instances never leave the radius-eps ball or the
    valid pixel range, and a zero radius never moves the accuracy."""
    arch = ArchConfig(input_shape=(1, 8, 8), conv_blocks=((4, 3, "relu"),), hidden=8, classes=2)
    rng = np.random.default_rng(11)
    for batch in range(10):
        model = init_model(arch, seed=batch % 2)
        eps = epsilon_grid()[1 + batch] if batch < 5 else float(rng.uniform(0.0, 0.3))
        images = rng.random((100, 1, 8, 8))
        labels = rng.integers(0, 2, size=100)
        adv = attack_batch(model, images, labels, AttackConfig(epsilon=eps))
        assert float(np.max(np.abs(adv - images))) <= eps
        assert float(adv.min()) >= 0.0 and float(adv.max()) <= 1.0

    spec = DataSpec(classes=2, count=60, height=10, width=10, noise=0.1, distractors=2, min_object=5, max_object=6)
    data = list(generate(spec, seed=4))
    model = init_model(ArchConfig(input_shape=(1, 10, 10), conv_blocks=((4, 3, "relu"),), hidden=8, classes=2), seed=6)
    assert robust_accuracy(model, data, AttackConfig(epsilon=0.0)) == accuracy(model, data)


# 5-8 ------------------------------------------------- full-scale experiment


@pytest.fixture(scope="module")
def full_scale_runs(tmp_path_factory):
    """The default experiment, run twice: same seeds, 1 worker then 8."""
    base = tmp_path_factory.mktemp("full-scale")
    data_path = str(base / "dataset.rgds")
    assert main(["generate-data", "--data", data_path, "--seed", "0"]) == 0
    outs = {}
    for threads in (1, 8):
        out = str(base / f"workers-{threads}")
        assert main(["grid", "--data", data_path, "--out", out, "--seed", "0", "--threads", str(threads)]) == 0
        outs[threads] = out
    with open(os.path.join(outs[1], "results.json"), encoding="utf-8") as f:
        payload = json.load(f)
    return outs, payload


def _rows(payload, algorithm):
    rows = [r for r in payload["results"] if r["algorithm"] == algorithm and not r["diverged"]]
    return sorted(rows, key=lambda r: r["seed"])


def test_wider_search_is_more_robust_under_strong_attack(full_scale_runs):
    """Searching both penalty weights beats no regularization on test
    robust accuracy at the strongest radius (mean margin over seeds), and
    its selection signal never falls below the diagonal search's at any
    radius — the wider grid contains the narrower one."""
    _, payload = full_scale_runs
    assert payload["metadata"]["epsilons"][-1] == 0.2
    vary = _rows(payload, "lambda_vary")
    standard = _rows(payload, "standard")
    equal = _rows(payload, "lambda_equal")
    assert len(vary) == len(standard) == len(equal) == 3

    margins = []
    for v, s in zip(vary, standard):
        assert v["seed"] == s["seed"]
        margins.append(v["robust_accuracy"][-1] - s["robust_accuracy"][-1])
    assert statistics.mean(margins) > 0.0

    for v, e in zip(vary, equal):
        assert v["seed"] == e["seed"]
        for wide, narrow in zip(v["selection_robust_accuracy"], e["selection_robust_accuracy"]):
            assert wide >= narrow


def test_penalty_improves_saliency_and_localization(full_scale_runs):
    """The searched penalty explains no worse than the unregularized
    baseline: mean saliency score at most the baseline's (lower is
    better), mean localization accuracy at least the baseline's."""
    _, payload = full_scale_runs
    vary = _rows(payload, "lambda_vary")
    standard = _rows(payload, "standard")
    assert vary and standard
    for r in vary + standard:
        assert r["saliency_metric"] is not None and r["localization_accuracy"] is not None
    assert statistics.mean(r["saliency_metric"] for r in vary) <= statistics.mean(
        r["saliency_metric"] for r in standard
    )
    assert statistics.mean(r["localization_accuracy"] for r in vary) >= statistics.mean(
        r["localization_accuracy"] for r in standard
    )


def test_annotation_boxes_alone_support_accurate_models(full_scale_runs):
    """Training on images blacked out beyond the annotation still reaches
    0.8 test accuracy: the in-box pixels carry the class signal, so that
    baseline is a genuine competitor."""
    _, payload = full_scale_runs
    blackout = _rows(payload, "blackout")
    assert blackout
    assert statistics.mean(r["standard_accuracy"] for r in blackout) >= 0.8


def test_worker_count_never_changes_reported_numbers(full_scale_runs):
    """One worker and eight produce byte-identical CSV reports."""
    outs, _ = full_scale_runs
    for name in ("robustness.csv", "metrics.csv", "boxes.csv"):
        with open(os.path.join(outs[1], name), "rb") as fa, open(os.path.join(outs[8], name), "rb") as fb:
            assert fa.read() == fb.read(), f"{name} differs between worker counts"
