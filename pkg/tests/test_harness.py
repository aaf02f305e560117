import math
import os
from dataclasses import replace

import pytest

from regiongrad.attack import epsilon_grid
from regiongrad.data import DataSpec, four_way_split, generate
from regiongrad.harness import (
    ALGORITHMS,
    LAMBDA_VALUES_FULL,
    LAMBDA_VALUES_REDUCED,
    ExperimentConfig,
    ExperimentResult,
    LambdaGrid,
    build_exports,
    lambda_grid,
    report,
    run_experiment,
    run_grid,
)
from regiongrad.nn import ArchConfig
from regiongrad.optim import SgdConfig

N_EPS = len(epsilon_grid())


# -------------------------------------------------------------- lambda grid


def test_full_grid_has_fourteen_values():
    assert len(LAMBDA_VALUES_FULL) == 14
    assert LAMBDA_VALUES_FULL[0] == 0.0
    assert LAMBDA_VALUES_FULL[1] == 0.1  # smallest nonzero weight
    assert LAMBDA_VALUES_FULL[-1] == 1000.0
    assert all(a < b for a, b in zip(LAMBDA_VALUES_FULL, LAMBDA_VALUES_FULL[1:]))


def test_full_mode_hits_196_pairs():
    pairs = lambda_grid("full")
    assert len(pairs) == 196
    assert len(set(pairs)) == 196


def test_diagonal_mode():
    pairs = lambda_grid("diagonal")
    assert len(pairs) == 14
    assert (0.1, 0.1) in pairs
    assert (1000.0, 1000.0) in pairs
    assert all(a == b for a, b in pairs)


def test_zero_mode():
    assert lambda_grid("zero") == [(0.0, 0.0)]


def test_reduced_grid_pairs():
    assert len(lambda_grid("full", LAMBDA_VALUES_REDUCED)) == 25


def test_grid_mode_validation():
    with pytest.raises(ValueError):
        lambda_grid("sideways")


def test_grid_values_validation():
    with pytest.raises(ValueError):
        LambdaGrid((0.1, 1.0))  # must start at zero
    with pytest.raises(ValueError):
        LambdaGrid((0.0, 2.0, 1.0))  # must increase
    with pytest.raises(ValueError):
        LambdaGrid((0.0, math.inf))


# ----------------------------------------------------------- result records


def _result(**overrides):
    base = dict(
        algorithm="standard",
        lambda1=0.0,
        lambda2=0.0,
        seed=0,
        standard_accuracy=0.9,
        robust_accuracy=(0.5,) * N_EPS,
        selection_robust_accuracy=(0.5,) * N_EPS,
        saliency_metric=0.1,
        localization_accuracy=0.4,
    )
    base.update(overrides)
    return ExperimentResult(**base)


def test_result_requires_full_curve():
    with pytest.raises(ValueError):
        _result(robust_accuracy=(0.5,) * (N_EPS - 1))


def test_result_range_checks():
    with pytest.raises(ValueError):
        _result(standard_accuracy=1.5)
    with pytest.raises(ValueError):
        _result(robust_accuracy=(2.0,) * N_EPS)


def test_diverged_result_skips_range_checks():
    r = _result(
        diverged=True,
        standard_accuracy=float("nan"),
        robust_accuracy=(float("nan"),) * N_EPS,
        selection_robust_accuracy=(float("nan"),) * N_EPS,
        saliency_metric=float("nan"),
        localization_accuracy=float("nan"),
        lambda1=float("nan"),
        lambda2=float("nan"),
    )
    assert r.diverged


# --------------------------------------------------------------- experiment

SPEC = DataSpec(
    classes=2,
    count=48,
    height=10,
    width=10,
    noise=0.1,
    distractors=2,
    min_object=5,
    max_object=6,
)
ARCH = ArchConfig(input_shape=(1, 10, 10), conv_blocks=((4, 3, "relu"),), hidden=8, classes=2)
SGD = SgdConfig(learning_rate=0.05, batch_size=16, epochs=2, shuffle_seed=0)


@pytest.fixture(scope="module")
def tiny_data():
    return generate(SPEC, seed=5)


def _config(**overrides):
    base = dict(arch=ARCH, sgd=SGD, grid_values=(0.0, 0.5))
    base.update(overrides)
    return ExperimentConfig(**base)


def test_standard_gives_one_result_per_seed(tiny_data):
    results = run_experiment(tiny_data, "standard", [0, 1], _config())
    assert len(results) == 2
    assert [r.seed for r in results] == [0, 1]
    for r in results:
        assert (r.lambda1, r.lambda2) == (0.0, 0.0)
        assert not r.diverged
        assert 0.0 <= r.standard_accuracy <= 1.0
        assert len(r.robust_accuracy) == N_EPS
        assert r.standard_accuracy == r.robust_accuracy[0]


def test_lambda_equal_stays_on_diagonal(tiny_data):
    results = run_experiment(tiny_data, "lambda_equal", [0], _config())
    for r in results:
        assert r.lambda1 == r.lambda2


def test_equal_restricted_to_zero_matches_standard(tiny_data):
    cfg = _config(grid_values=(0.0,))
    std = run_experiment(tiny_data, "standard", [0, 1], cfg)
    eq = run_experiment(tiny_data, "lambda_equal", [0, 1], cfg)
    for a, b in zip(std, eq):
        assert replace(a, algorithm="x") == replace(b, algorithm="x")


def test_cells_are_shared_through_cache(tiny_data):
    cache = {}
    run_experiment(tiny_data, "standard", [0], _config(), cache=cache)
    assert len(cache) == 1
    run_experiment(tiny_data, "lambda_equal", [0], _config(), cache=cache)
    assert len(cache) == 2  # (0,0) reused, only (0.5,0.5) added
    run_experiment(tiny_data, "lambda_vary", [0], _config(), cache=cache)
    assert len(cache) == 4  # the two off-diagonal cells


def test_vary_selection_dominates_equal_at_every_radius(tiny_data):
    cache = {}
    cfg = _config()
    vary = run_experiment(tiny_data, "lambda_vary", [0], cfg, cache=cache)[0]
    equal = run_experiment(tiny_data, "lambda_equal", [0], cfg, cache=cache)[0]
    diag = [(v, v) for v in cfg.grid_values]
    full = [(a, b) for a in cfg.grid_values for b in cfg.grid_values]
    for k in range(N_EPS):
        best = {
            name: max(
                cache[(0, p[0], p[1], "plain")].hyper_curve[k]
                for p in pairs
                if not cache[(0, p[0], p[1], "plain")].diverged
            )
            for name, pairs in (("diag", diag), ("full", full))
        }
        assert best["full"] >= best["diag"]
        # the recorded selection signal is exactly the per-radius maximum
        assert vary.selection_robust_accuracy[k] == best["full"]
        assert equal.selection_robust_accuracy[k] == best["diag"]


def test_winner_beats_every_live_cell(tiny_data):
    cache = {}
    cfg = _config()
    results = run_experiment(tiny_data, "lambda_vary", [0], cfg, cache=cache)
    tables_pair = (results[0].lambda1, results[0].lambda2)
    outcome = cache[(0, tables_pair[0], tables_pair[1], "plain")]
    for key, other in cache.items():
        if not other.diverged:
            assert outcome.hyper_curve[0] >= other.hyper_curve[0]


def test_split_tuple_and_dataset_forms_agree(tiny_data):
    cfg = _config()
    from_dataset = run_experiment(tiny_data, "standard", [3], cfg)
    splits = four_way_split(tiny_data, seed=3)
    from_tuple = run_experiment(splits, "standard", [3], cfg)
    assert from_dataset == from_tuple


def test_shuffled_split_roles_are_rejected(tiny_data):
    tr, msel, hsel, test = four_way_split(tiny_data, seed=0)
    with pytest.raises(ValueError):
        run_experiment((tr, hsel, msel, test), "standard", [0], _config())


def test_unknown_algorithm_rejected(tiny_data):
    with pytest.raises(ValueError):
        run_experiment(tiny_data, "gradient_ascent", [0], _config())


def test_no_seeds_rejected(tiny_data):
    with pytest.raises(ValueError):
        run_experiment(tiny_data, "standard", [], _config())


def test_diverged_grid_is_reported_not_raised(tiny_data):
    cfg = _config(sgd=replace(SGD, learning_rate=1e12), grid_values=(0.0,))
    results = run_experiment(tiny_data, "standard", [0], cfg)
    assert len(results) == 1
    assert results[0].diverged
    assert math.isnan(results[0].standard_accuracy)
    assert all(math.isnan(v) for v in results[0].robust_accuracy)


def test_run_grid_covers_all_algorithms(tiny_data):
    by_alg = run_grid(tiny_data, [0], _config())
    assert set(by_alg) == set(ALGORITHMS)
    for results in by_alg.values():
        assert len(results) == 1


def test_pool_and_inline_agree_exactly(tiny_data):
    inline = run_grid(tiny_data, [0, 1], _config(threads=1))
    pooled = run_grid(tiny_data, [0, 1], _config(threads=4))
    assert inline == pooled


# ------------------------------------------------------------------- report


def test_report_aggregates_mean_and_sample_std(tmp_path):
    results = [
        _result(seed=s, robust_accuracy=(v,) * N_EPS, standard_accuracy=v)
        for s, v in enumerate((0.5, 0.6, 0.7))
    ]
    paths = report(results, tmp_path)
    rows = (tmp_path / "robustness.csv").read_text().splitlines()
    assert rows[0] == "algorithm,epsilon,mean_robust_accuracy,std_robust_accuracy,seeds,note"
    assert len(rows) == 1 + N_EPS
    first = rows[1].split(",")
    assert float(first[2]) == 0.6
    assert float(first[3]) == pytest.approx(0.1, abs=1e-12)
    assert first[4] == "3"
    assert str(tmp_path / "metrics.csv") in [str(p) for p in paths]


def test_report_row_count_scales_with_algorithms(tmp_path):
    results = [_result(algorithm=a, seed=0) for a in ("standard", "lambda_vary")]
    report(results, tmp_path)
    rows = (tmp_path / "robustness.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * N_EPS


def test_report_flags_single_seed(tmp_path):
    report([_result(seed=0)], tmp_path)
    rows = (tmp_path / "robustness.csv").read_text().splitlines()
    assert rows[1].endswith(",1,n=1")
    assert rows[1].split(",")[3] == "0.0"


def test_report_empty_rejected(tmp_path):
    with pytest.raises(ValueError):
        report([], tmp_path)


def test_exports_render_pgm_and_boxes(tiny_data, tmp_path):
    cfg = _config(grid_values=(0.0,))
    cache = {}
    by_alg = run_grid(tiny_data, [0], cfg, algorithms=("standard",), cache=cache)
    exports = build_exports(tiny_data, by_alg, cache, cfg, count=3)
    assert set(exports) <= {"standard"}
    paths = report(by_alg["standard"], tmp_path, exports)
    pgms = [p for p in paths if p.endswith(".pgm")]
    assert len(pgms) == 3
    assert all(os.path.exists(p) for p in pgms)
    boxes = (tmp_path / "boxes.csv").read_text().splitlines()
    assert boxes[0] == "example_id,row_min,col_min,row_max,col_max"
    assert any("_truth" in row for row in boxes[1:])
