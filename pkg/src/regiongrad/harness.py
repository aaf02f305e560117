"""Grid-search experiment driver: train, select, report.

Four algorithms share one mechanism. "standard" trains plain cross-entropy
(the (0,0) cell), "blackout" trains plain cross-entropy on images with
everything outside the annotation box zeroed, "lambda_equal" searches the
diagonal of the penalty-weight grid, and "lambda_vary" searches the full
Cartesian square. Every (lambda1, lambda2, seed) training run is one *cell*;
cells are independent, so they can run in a worker pool, and the diagonal's
cells are literally the same cells the full grid visits, computed once.

Selection never touches the test split. During training the model_select
split picks the best epoch; afterwards the hyper_select split picks, per
attack radius, the winning weight pair by robust accuracy (and, for the
interpretability table, the pair with the best plain accuracy, the only
radius-independent signal available). Everything reported is then measured
on the test split.

Repeats reseed both the four-way split and the training shuffle; the seed
list is recorded in the experiment metadata.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover - threadpoolctl is a hard dependency
    threadpool_limits = None

from regiongrad.attack import epsilon_grid, robust_accuracy_curve
from regiongrad.data import Dataset, blackout_dataset, four_way_split
from regiongrad.nn import ArchConfig, ModelParams, Tensor, init_model
from regiongrad.objective import RegionLossConfig
from regiongrad.optim import SgdConfig, train
from regiongrad.saliency import (
    DEFAULT_REL_THRESHOLD,
    localization_accuracy,
    mean_saliency_metric,
)
from regiongrad.tensor import default_dtype, set_default_dtype

__all__ = [
    "ALGORITHMS",
    "LAMBDA_VALUES_FULL",
    "LAMBDA_VALUES_REDUCED",
    "LambdaGrid",
    "ExperimentConfig",
    "ExperimentResult",
    "lambda_grid",
    "run_experiment",
    "run_grid",
    "build_exports",
    "report",
]

ALGORITHMS = ("standard", "blackout", "lambda_equal", "lambda_vary")

# 0 plus thirteen logarithmically spaced weights, a third of a decade apart:
# 10^(-1) .. 10^3. Endpoints 0.1 and 1000.
LAMBDA_VALUES_FULL = (0.0,) + tuple(10.0 ** (i / 3) for i in range(-3, 10))

# Decade-spaced subset for runs that should finish in minutes, not hours.
LAMBDA_VALUES_REDUCED = (0.0, 0.1, 1.0, 10.0, 100.0)


@dataclass(frozen=True)
class LambdaGrid:
    """An ordered set of candidate penalty weights, starting at 0."""

    values: Tuple[float, ...] = LAMBDA_VALUES_FULL

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", values)
        if not values or values[0] != 0.0:
            raise ValueError("weight grid must start at 0")
        for a, b in zip(values, values[1:]):
            if not (math.isfinite(b) and b > a):
                raise ValueError("weight grid must be finite and strictly increasing")

    def pairs(self, mode: str) -> List[Tuple[float, float]]:
        return lambda_grid(mode, self.values)


def lambda_grid(mode: str, values: Optional[Sequence[float]] = None) -> List[Tuple[float, float]]:
    """Candidate (lambda1, lambda2) pairs for one search mode.

    "full" is the Cartesian square of the weight values, "diagonal" only
    the equal-weight pairs, and "zero" the single unregularized pair.
    """
    vals = LambdaGrid(tuple(values) if values is not None else LAMBDA_VALUES_FULL).values
    if mode == "full":
        return [(a, b) for a in vals for b in vals]
    if mode == "diagonal":
        return [(v, v) for v in vals]
    if mode == "zero":
        return [(0.0, 0.0)]
    raise ValueError(f"unknown grid mode {mode!r}; use full, diagonal, or zero")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a cell needs besides its weights and seed."""

    arch: ArchConfig
    sgd: SgdConfig = SgdConfig()
    grid_values: Tuple[float, ...] = LAMBDA_VALUES_REDUCED
    rel_threshold: float = DEFAULT_REL_THRESHOLD
    threads: int = 1

    def __post_init__(self):
        LambdaGrid(self.grid_values)  # validates ordering
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")


@dataclass(frozen=True)
class ExperimentResult:
    """One seed's selected outcome for one algorithm.

    lambda1/lambda2 and the interpretability numbers belong to the pair
    winning plain accuracy on the hyper_select split; each robust_accuracy
    entry belongs to the pair winning robust accuracy on that split at the
    matching radius of epsilon_grid(). All reported numbers are test-split;
    selection_robust_accuracy keeps the winning selection signal itself
    (hyper_select-split robust accuracy per radius), so a wider search can
    be audited to never select worse than a narrower one. diverged means
    every cell of the seed diverged; metrics are then nan.
    """

    algorithm: str
    lambda1: float
    lambda2: float
    seed: int
    standard_accuracy: float
    robust_accuracy: Tuple[float, ...]
    selection_robust_accuracy: Tuple[float, ...]
    saliency_metric: float
    localization_accuracy: float
    diverged: bool = False

    def __post_init__(self):
        for name in ("robust_accuracy", "selection_robust_accuracy"):
            curve = tuple(float(r) for r in getattr(self, name))
            object.__setattr__(self, name, curve)
            if len(curve) != len(epsilon_grid()):
                raise ValueError(f"expected {len(epsilon_grid())} {name} entries, got {len(curve)}")
        if not self.diverged:
            for name in ("standard_accuracy", "localization_accuracy"):
                v = getattr(self, name)
                if not 0.0 <= v <= 1.0:
                    raise ValueError(f"{name} outside [0,1]: {v}")
            for v in self.robust_accuracy + self.selection_robust_accuracy:
                if not 0.0 <= v <= 1.0:
                    raise ValueError(f"robust accuracy outside [0,1]: {v}")


# --------------------------------------------------------------------- cells


@dataclass
class _CellOutcome:
    """A trained cell plus its selection signal; test numbers are lazy."""

    params: Optional[ModelParams]
    diverged: bool
    hyper_curve: Optional[Tuple[float, ...]]
    test_curve: Optional[Tuple[float, ...]] = None
    saliency: Optional[float] = None
    localization: Optional[float] = None


_SPLIT_ROLES = ("train", "model_select", "hyper_select", "test")


def _resolve_splits(data, seed: int):
    """Per-seed splits, with provenance checked rather than trusted."""
    if isinstance(data, Dataset):
        return four_way_split(data, seed=seed)
    splits = tuple(data)
    if len(splits) != 4:
        raise ValueError("expected a Dataset or a (train, model_select, hyper_select, test) tuple")
    roles = tuple(getattr(s, "role", None) for s in splits)
    if roles != _SPLIT_ROLES:
        raise ValueError(f"split roles {roles} are not {_SPLIT_ROLES}; pass four_way_split output in order")
    return splits


def _pinned():
    if threadpool_limits is None:  # pragma: no cover
        import contextlib

        return contextlib.nullcontext()
    # one BLAS thread no matter what --threads says, so cell arithmetic
    # is identical whether it runs inline or in a pool
    return threadpool_limits(limits=1)


def _cell_key(seed: int, pair: Tuple[float, float], transform: str) -> tuple:
    return (int(seed), float(pair[0]), float(pair[1]), transform)


def _compute_cell(data, key, config: ExperimentConfig) -> _CellOutcome:
    """Train one (seed, lambda1, lambda2) cell and score its selection curve."""
    seed, l1, l2, transform = key
    tr, msel, hsel, _ = _resolve_splits(data, seed)
    if transform == "blackout":
        tr, msel, hsel = blackout_dataset(tr), blackout_dataset(msel), blackout_dataset(hsel)
    with _pinned():
        model = init_model(config.arch, seed=seed)
        sgd = replace(config.sgd, shuffle_seed=seed)
        result = train(model, tr, sgd, RegionLossConfig(l1, l2), msel)
        if result.diverged:
            return _CellOutcome(params=None, diverged=True, hyper_curve=None)
        curve = tuple(robust_accuracy_curve(result.params, hsel, epsilon_grid()))
    return _CellOutcome(params=result.params, diverged=False, hyper_curve=curve)


# Worker-pool plumbing: the dataset and config are installed once per worker
# (fork shares them copy-on-write); jobs then carry only the small cell key.
_POOL_STATE: dict = {}


def _pool_init(data, config, dtype_name):
    set_default_dtype(dtype_name)
    _POOL_STATE["data"] = data
    _POOL_STATE["config"] = config


def _pool_cell(key):
    out = _compute_cell(_POOL_STATE["data"], key, _POOL_STATE["config"])
    params = None if out.params is None else {n: t.data for n, t in out.params.items()}
    return key, params, out.diverged, out.hyper_curve


def _prime_cache(data, keys, config: ExperimentConfig, cache: Dict[tuple, _CellOutcome]) -> None:
    """Fill the cell cache, in a pool when allowed, inline otherwise.

    Results are stored by key, so scheduling order cannot change anything
    downstream.
    """
    todo = [k for k in keys if k not in cache]
    if not todo:
        return
    if config.threads > 1 and len(todo) > 1:
        import multiprocessing

        ctx = multiprocessing.get_context("fork")
        workers = min(config.threads, len(todo))
        with ctx.Pool(workers, initializer=_pool_init, initargs=(data, config, np.dtype(default_dtype()).name)) as pool:
            for key, params, diverged, curve in pool.imap_unordered(_pool_cell, todo):
                model = None
                if params is not None:
                    model = ModelParams(config.arch, [(n, Tensor(a, requires_grad=True)) for n, a in params.items()])
                cache[key] = _CellOutcome(params=model, diverged=diverged, hyper_curve=curve)
    else:
        for key in todo:
            cache[key] = _compute_cell(data, key, config)


# ----------------------------------------------------------------- protocol


def _algorithm_pairs(algorithm: str, grid_values) -> List[Tuple[float, float]]:
    if algorithm in ("standard", "blackout"):
        return lambda_grid("zero")
    if algorithm == "lambda_equal":
        return lambda_grid("diagonal", grid_values)
    if algorithm == "lambda_vary":
        return lambda_grid("full", grid_values)
    raise ValueError(f"unknown algorithm {algorithm!r}; use one of {ALGORITHMS}")


def _argmax_pair(pairs, live, score) -> Tuple[float, float]:
    """First pair attaining the maximum score, in grid order."""
    best, best_score = None, -math.inf
    for pair in pairs:
        if pair not in live:
            continue
        s = score(live[pair])
        if s > best_score:
            best, best_score = pair, s
    return best


def _ensure_test_numbers(outcome: _CellOutcome, test_split, config, want_tables: bool) -> None:
    with _pinned():
        if outcome.test_curve is None:
            outcome.test_curve = tuple(robust_accuracy_curve(outcome.params, test_split, epsilon_grid()))
        if want_tables and outcome.saliency is None:
            outcome.saliency = mean_saliency_metric(outcome.params, test_split, config.rel_threshold)
            outcome.localization = localization_accuracy(outcome.params, test_split, config.rel_threshold)


def run_experiment(
    data,
    algorithm: str,
    seeds: Sequence[int],
    config: ExperimentConfig,
    cache: Optional[Dict[tuple, _CellOutcome]] = None,
) -> List[ExperimentResult]:
    """Train one algorithm's grid for each seed and select its winners.

    data is either a full Dataset (re-split per seed) or one four_way_split
    output reused across seeds. The result list has exactly one entry per seed.
    A shared cache dict lets several algorithm runs over the same data and
    config reuse each other's cells (the diagonal is a subset of the full
    grid); pass the same dict only when data and config are identical.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("need at least one seed")
    pairs = _algorithm_pairs(algorithm, config.grid_values)
    transform = "blackout" if algorithm == "blackout" else "plain"
    if cache is None:
        cache = {}

    keys = [_cell_key(seed, pair, transform) for seed in seeds for pair in pairs]
    _prime_cache(data, keys, config, cache)

    results = []
    n_eps = len(epsilon_grid())
    for seed in seeds:
        live = {
            pair: cache[_cell_key(seed, pair, transform)]
            for pair in pairs
            if not cache[_cell_key(seed, pair, transform)].diverged
        }
        if not live:
            results.append(
                ExperimentResult(
                    algorithm=algorithm,
                    lambda1=float("nan"),
                    lambda2=float("nan"),
                    seed=seed,
                    standard_accuracy=float("nan"),
                    robust_accuracy=(float("nan"),) * n_eps,
                    selection_robust_accuracy=(float("nan"),) * n_eps,
                    saliency_metric=float("nan"),
                    localization_accuracy=float("nan"),
                    diverged=True,
                )
            )
            continue

        splits = _resolve_splits(data, seed)
        test_split = blackout_dataset(splits[3]) if transform == "blackout" else splits[3]

        # plain accuracy is the zero-radius point of the robustness curve
        tables_pair = _argmax_pair(pairs, live, lambda o: o.hyper_curve[0])
        _ensure_test_numbers(live[tables_pair], test_split, config, want_tables=True)

        curve, selection = [], []
        for k in range(n_eps):
            winner = _argmax_pair(pairs, live, lambda o, k=k: o.hyper_curve[k])
            _ensure_test_numbers(live[winner], test_split, config, want_tables=False)
            curve.append(live[winner].test_curve[k])
            selection.append(live[winner].hyper_curve[k])

        tables = live[tables_pair]
        results.append(
            ExperimentResult(
                algorithm=algorithm,
                lambda1=tables_pair[0],
                lambda2=tables_pair[1],
                seed=seed,
                standard_accuracy=tables.test_curve[0],
                robust_accuracy=tuple(curve),
                selection_robust_accuracy=tuple(selection),
                saliency_metric=tables.saliency,
                localization_accuracy=tables.localization,
            )
        )
    return results


def run_grid(
    data,
    seeds: Sequence[int],
    config: ExperimentConfig,
    algorithms: Sequence[str] = ALGORITHMS,
    cache: Optional[Dict[tuple, _CellOutcome]] = None,
) -> Dict[str, List[ExperimentResult]]:
    """The full protocol: every algorithm over the same seeds, cells shared.

    All cells needed by any algorithm are computed first (that one step uses
    the worker pool when config.threads > 1); selection and test evaluation
    then run inline on the warm cache. Passing a cache dict keeps the trained
    cells reachable afterwards (build_exports reads them).
    """
    if cache is None:
        cache = {}
    seeds = [int(s) for s in seeds]
    keys = []
    for algorithm in algorithms:
        transform = "blackout" if algorithm == "blackout" else "plain"
        for seed in seeds:
            for pair in _algorithm_pairs(algorithm, config.grid_values):
                key = _cell_key(seed, pair, transform)
                if key not in keys:
                    keys.append(key)
    _prime_cache(data, keys, config, cache)
    return {a: run_experiment(data, a, seeds, config, cache=cache) for a in algorithms}


def build_exports(
    data,
    by_algorithm: Dict[str, List[ExperimentResult]],
    cache: Dict[tuple, _CellOutcome],
    config: ExperimentConfig,
    count: int = 8,
) -> dict:
    """Qualitative material for report(): saliency maps of each algorithm's
    first-seed table winner on the first test examples, with the boxes the
    threshold rule finds and the ground-truth boxes.
    """
    from regiongrad.saliency import extract_box, saliency_maps_batch

    exports: dict = {}
    if count <= 0:
        return exports
    for algorithm, results in by_algorithm.items():
        chosen = next((r for r in results if not r.diverged), None)
        if chosen is None:
            continue
        transform = "blackout" if algorithm == "blackout" else "plain"
        outcome = cache.get(_cell_key(chosen.seed, (chosen.lambda1, chosen.lambda2), transform))
        if outcome is None or outcome.params is None:
            continue
        splits = _resolve_splits(data, chosen.seed)
        test_split = blackout_dataset(splits[3]) if transform == "blackout" else splits[3]
        examples = list(test_split)[: min(count, len(test_split))]
        if not examples:
            continue
        images = np.stack([np.asarray(getattr(e.image, "data", e.image)) for e in examples])
        labels = np.array([int(e.label) for e in examples])
        with _pinned():
            maps = saliency_maps_batch(outcome.params, images, labels)
        items = []
        for i, example in enumerate(examples):
            try:
                found = extract_box(maps[i], config.rel_threshold)
            except ValueError:
                found = None
            items.append((str(i), maps[i], found, example.box))
        exports[algorithm] = items
    return exports


# ------------------------------------------------------------------- report


def _mean_std(values: List[float]) -> Tuple[float, float, int, str]:
    """Sample mean/std over seeds; nan entries (diverged seeds) are left out."""
    import statistics

    clean = [v for v in values if not math.isnan(v)]
    if not clean:
        return float("nan"), float("nan"), 0, "no data"
    if len(clean) == 1:
        note = "n=1" if len(values) == 1 else "n=1 (rest missing)"
        return clean[0], 0.0, 1, note
    note = "" if len(clean) == len(values) else f"{len(values) - len(clean)} missing"
    return statistics.mean(clean), statistics.stdev(clean), len(clean), note


def _fmt(x: float) -> str:
    return repr(float(x))


def report(results: Sequence[ExperimentResult], out_dir, exports=None) -> List[str]:
    """Write the aggregate CSVs (and optional qualitative exports).

    robustness.csv has one row per algorithm per attack radius; metrics.csv
    one row per algorithm. exports, when given, maps algorithm name to a
    list of (tag, saliency_map, found_box, true_box) tuples rendered as PGM
    images plus one boxes.csv. Returns the paths written.
    """
    import os

    from regiongrad.saliency import write_boxes_csv, write_pgm

    results = list(results)
    if not results:
        raise ValueError("report: no results")
    os.makedirs(out_dir, exist_ok=True)
    algorithms = []
    for r in results:
        if r.algorithm not in algorithms:
            algorithms.append(r.algorithm)
    by_alg = {a: [r for r in results if r.algorithm == a] for a in algorithms}
    written = []

    path = os.path.join(out_dir, "robustness.csv")
    with open(path, "w", encoding="utf-8") as f:
        f.write("algorithm,epsilon,mean_robust_accuracy,std_robust_accuracy,seeds,note\n")
        for a in algorithms:
            for k, eps in enumerate(epsilon_grid()):
                mean, std, n, note = _mean_std([r.robust_accuracy[k] for r in by_alg[a]])
                f.write(f"{a},{_fmt(eps)},{_fmt(mean)},{_fmt(std)},{n},{note}\n")
    written.append(path)

    path = os.path.join(out_dir, "metrics.csv")
    with open(path, "w", encoding="utf-8") as f:
        f.write(
            "algorithm,mean_standard_accuracy,std_standard_accuracy,"
            "mean_saliency_metric,std_saliency_metric,"
            "mean_localization_accuracy,std_localization_accuracy,seeds,note\n"
        )
        for a in algorithms:
            acc = _mean_std([r.standard_accuracy for r in by_alg[a]])
            sal = _mean_std([r.saliency_metric for r in by_alg[a]])
            loc = _mean_std([r.localization_accuracy for r in by_alg[a]])
            f.write(
                f"{a},{_fmt(acc[0])},{_fmt(acc[1])},{_fmt(sal[0])},{_fmt(sal[1])},"
                f"{_fmt(loc[0])},{_fmt(loc[1])},{acc[2]},{acc[3]}\n"
            )
    written.append(path)

    if exports:
        box_rows = []
        for a, items in exports.items():
            for tag, map_, found, truth in items:
                pgm = os.path.join(out_dir, f"saliency_{a}_{tag}.pgm")
                write_pgm(map_, pgm)
                written.append(pgm)
                if found is not None:
                    box_rows.append((f"{a}_{tag}_found", found))
                box_rows.append((f"{a}_{tag}_truth", truth))
        path = os.path.join(out_dir, "boxes.csv")
        write_boxes_csv(box_rows, path)
        written.append(path)
    return written
