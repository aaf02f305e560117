"""Command-line front end.

Subcommands:
  generate-data   write a synthetic annotated dataset file
  train           train one model (one weight pair) and save a checkpoint
  grid            the full protocol: grid search, selection, CSV reports
  attack-eval     robustness curve of a saved model over the radius grid
  saliency-eval   saliency metric / localization of a saved model
  report          re-render the CSV reports from a saved results.json

Flags shared by every subcommand: --seed, --data, --out, --threads,
--float32, --config. A config file holds one "key = value" line per flag
(key matches the flag name without the leading dashes); values given on
the command line win over the file. Exit codes: 0 success, 2 invalid
configuration or arguments, 3 training diverged everywhere.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from typing import List, Optional

import numpy as np

__all__ = ["main"]

_BOOL_FLAGS = {"float32", "full-grid", "blackout"}  # config keys emitted without a value


# ------------------------------------------------------------------ config


def _config_tokens(path: str) -> List[str]:
    """Translate a key = value file into command-line tokens."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise ValueError(f"cannot read config file {path}: {e}") from None
    tokens: List[str] = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("_", "-")
        if not key:
            raise ValueError(f"{path}:{lineno}: empty key")
        if key in _BOOL_FLAGS:
            lowered = value.lower()
            if lowered in ("true", "yes", "on", "1"):
                tokens.append(f"--{key}")
            elif lowered in ("false", "no", "off", "0"):
                continue
            else:
                raise ValueError(f"{path}:{lineno}: boolean flag {key} got {value!r}")
        else:
            tokens.extend([f"--{key}", value])
    return tokens


def _splice_config(argv: List[str]) -> List[str]:
    """Insert config-file tokens right after the subcommand.

    Earlier tokens lose to later ones in argparse, so file values act as
    defaults the explicit command line overrides.
    """
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
            break
        if tok.startswith("--config="):
            path = tok.split("=", 1)[1]
            break
    if path is None:
        return argv
    tokens = _config_tokens(path)
    for i, tok in enumerate(argv):
        if not tok.startswith("-"):
            return argv[: i + 1] + tokens + argv[i + 1 :]
    return argv + tokens


# ------------------------------------------------------------------ parser


def _build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, default=0, help="base random seed")
    shared.add_argument("--data", type=str, default=None, help="dataset file path")
    shared.add_argument("--out", type=str, default=".", help="output directory")
    shared.add_argument("--threads", type=int, default=1, help="worker processes for grid cells")
    shared.add_argument("--float32", action="store_true", help="32-bit speed mode (default is 64-bit)")
    shared.add_argument("--config", type=str, default=None, help="key = value file of flag defaults")

    parser = argparse.ArgumentParser(prog="regiongrad", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", parents=[shared], help="write a synthetic dataset")
    p.add_argument("--count", type=int, default=2400)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--noise", type=float, default=0.15)
    p.add_argument("--distractors", type=int, default=12)
    p.add_argument("--min-object", type=int, default=10)
    p.add_argument("--max-object", type=int, default=20)

    p = sub.add_parser("train", parents=[shared], help="train a single model")
    p.add_argument("--l1", type=float, default=0.0, help="in-box gradient penalty weight")
    p.add_argument("--l2", type=float, default=0.0, help="out-of-box gradient penalty weight")
    p.add_argument("--epochs", type=int, default=25)
    p.add_argument("--lr", type=float, default=0.03)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--blackout", action="store_true", help="train on annotation-masked images")

    p = sub.add_parser("grid", parents=[shared], help="grid search, selection, and reports")
    p.add_argument("--epochs", type=int, default=25)
    p.add_argument("--lr", type=float, default=0.03)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seeds", type=int, default=3, help="number of repeats (seed, seed+1, ...)")
    p.add_argument("--full-grid", action="store_true", help="14-value weight grid instead of the 5-value one")
    p.add_argument("--grid-values", type=str, default=None, help="comma-separated weights overriding both presets")
    p.add_argument("--export-count", type=int, default=8, help="saliency examples exported per algorithm")

    p = sub.add_parser("attack-eval", parents=[shared], help="robustness curve of a saved model")
    p.add_argument("--model", type=str, required=True)
    p.add_argument("--split", choices=("train", "model_select", "hyper_select", "test", "all"), default="test")

    p = sub.add_parser("saliency-eval", parents=[shared], help="saliency metrics of a saved model")
    p.add_argument("--model", type=str, required=True)
    p.add_argument("--split", choices=("train", "model_select", "hyper_select", "test", "all"), default="test")
    p.add_argument("--export-count", type=int, default=8)

    p = sub.add_parser("report", parents=[shared], help="re-render CSVs from results.json")
    p.add_argument("--results", type=str, default=None, help="path to results.json (default: <out>/results.json)")

    return parser


# ----------------------------------------------------------------- helpers


def _load_data(ns):
    from regiongrad.data import load_dataset

    if not ns.data:
        raise ValueError("--data is required for this command")
    return load_dataset(ns.data)


def _pick_split(dataset, split: str, seed: int):
    from regiongrad.data import four_way_split

    if split == "all":
        return dataset
    parts = four_way_split(dataset, seed=seed)
    return parts[("train", "model_select", "hyper_select", "test").index(split)]


def _arch_for(dataset):
    from regiongrad.nn import ArchConfig

    meta = dataset.meta
    return ArchConfig(input_shape=(meta.channels, meta.height, meta.width), classes=meta.classes)


def _json_safe(x):
    if isinstance(x, float) and math.isnan(x):
        return None
    return x


# -------------------------------------------------------------- subcommands


def _cmd_generate_data(ns) -> int:
    from regiongrad.data import DataSpec, generate, save_dataset

    spec = DataSpec(
        classes=ns.classes,
        count=ns.count,
        height=ns.height,
        width=ns.width,
        noise=ns.noise,
        distractors=ns.distractors,
        min_object=ns.min_object,
        max_object=ns.max_object,
    )
    dataset = generate(spec, seed=ns.seed)
    path = ns.data or os.path.join(ns.out, "dataset.rgds")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    save_dataset(dataset, path)
    print(f"wrote {path}: {len(dataset)} examples, {spec.classes} classes, {spec.height}x{spec.width}")
    return 0


def _cmd_train(ns) -> int:
    from regiongrad.data import blackout_dataset, four_way_split
    from regiongrad.nn import init_model, save_model
    from regiongrad.objective import RegionLossConfig
    from regiongrad.optim import SgdConfig, train, write_training_log

    dataset = _load_data(ns)
    train_set, model_select, _, _ = four_way_split(dataset, seed=ns.seed)
    if ns.blackout:
        train_set, model_select = blackout_dataset(train_set), blackout_dataset(model_select)
    model = init_model(_arch_for(dataset), seed=ns.seed)
    sgd = SgdConfig(learning_rate=ns.lr, batch_size=ns.batch_size, epochs=ns.epochs, shuffle_seed=ns.seed)
    result = train(model, train_set, sgd, RegionLossConfig(ns.l1, ns.l2), model_select)

    os.makedirs(ns.out, exist_ok=True)
    log_path = os.path.join(ns.out, "training_log.csv")
    write_training_log(result.log, log_path)
    if result.diverged:
        print(f"training diverged; log at {log_path}", file=sys.stderr)
        return 3
    model_path = os.path.join(ns.out, "model.rgrd")
    save_model(result.params, model_path)
    best = result.log[result.best_epoch].select_metric
    print(f"wrote {model_path} (best epoch {result.best_epoch}, selection accuracy {best:.4f})")
    print(f"wrote {log_path}")
    return 0


def _cmd_grid(ns) -> int:
    from regiongrad.attack import epsilon_grid
    from regiongrad.harness import (
        ALGORITHMS,
        LAMBDA_VALUES_FULL,
        LAMBDA_VALUES_REDUCED,
        ExperimentConfig,
        build_exports,
        report,
        run_grid,
    )
    from regiongrad.optim import SgdConfig
    from regiongrad.tensor import default_dtype

    dataset = _load_data(ns)
    if ns.grid_values:
        try:
            values = tuple(float(v) for v in ns.grid_values.split(","))
        except ValueError:
            raise ValueError(f"--grid-values expects comma-separated numbers, got {ns.grid_values!r}") from None
    else:
        values = LAMBDA_VALUES_FULL if ns.full_grid else LAMBDA_VALUES_REDUCED
    config = ExperimentConfig(
        arch=_arch_for(dataset),
        sgd=SgdConfig(learning_rate=ns.lr, batch_size=ns.batch_size, epochs=ns.epochs, shuffle_seed=0),
        grid_values=values,
        threads=ns.threads,
    )
    seeds = [ns.seed + i for i in range(ns.seeds)]
    cache: dict = {}
    by_algorithm = run_grid(dataset, seeds, config, cache=cache)
    results = [r for algorithm in ALGORITHMS for r in by_algorithm[algorithm]]

    os.makedirs(ns.out, exist_ok=True)
    exports = build_exports(dataset, by_algorithm, cache, config, count=ns.export_count)
    written = report(results, ns.out, exports)

    payload = {
        "metadata": {
            "seeds": seeds,
            "grid_values": list(values),
            "epochs": ns.epochs,
            "learning_rate": ns.lr,
            "batch_size": ns.batch_size,
            "dtype": np.dtype(default_dtype()).name,
            "epsilons": epsilon_grid(),
            "split_mode": "reseeded per repeat (split seed = training seed)",
            "selection": {
                "per_epsilon": "hyper_select robust accuracy at that radius",
                "tables": "hyper_select standard accuracy",
            },
            "rel_threshold": config.rel_threshold,
        },
        "results": [
            {
                "algorithm": r.algorithm,
                "lambda1": _json_safe(r.lambda1),
                "lambda2": _json_safe(r.lambda2),
                "seed": r.seed,
                "standard_accuracy": _json_safe(r.standard_accuracy),
                "robust_accuracy": [_json_safe(v) for v in r.robust_accuracy],
                "selection_robust_accuracy": [_json_safe(v) for v in r.selection_robust_accuracy],
                "saliency_metric": _json_safe(r.saliency_metric),
                "localization_accuracy": _json_safe(r.localization_accuracy),
                "diverged": r.diverged,
            }
            for r in results
        ],
    }
    results_path = os.path.join(ns.out, "results.json")
    with open(results_path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")
    written.append(results_path)

    for path in written:
        print(f"wrote {path}")
    if all(r.diverged for r in results):
        print("every cell diverged; no model finished training", file=sys.stderr)
        return 3
    return 0


def _cmd_attack_eval(ns) -> int:
    from regiongrad.attack import epsilon_grid, robust_accuracy_curve, write_robustness_csv
    from regiongrad.nn import load_model

    dataset = _load_data(ns)
    model = load_model(ns.model)
    part = _pick_split(dataset, ns.split, ns.seed)
    curve = robust_accuracy_curve(model, part, epsilon_grid())
    tag = os.path.splitext(os.path.basename(ns.model))[0]
    os.makedirs(ns.out, exist_ok=True)
    path = os.path.join(ns.out, "attack_eval.csv")
    write_robustness_csv([(tag, ns.seed, e, a) for e, a in zip(epsilon_grid(), curve)], path)
    print(f"wrote {path}")
    for e, a in zip(epsilon_grid(), curve):
        print(f"  eps={e:.4f}  robust_accuracy={a:.4f}")
    return 0


def _cmd_saliency_eval(ns) -> int:
    from regiongrad.nn import load_model
    from regiongrad.saliency import (
        extract_box,
        localization_accuracy,
        mean_saliency_metric,
        saliency_maps_batch,
        write_boxes_csv,
        write_pgm,
    )

    dataset = _load_data(ns)
    model = load_model(ns.model)
    part = list(_pick_split(dataset, ns.split, ns.seed))
    sal = mean_saliency_metric(model, part)
    loc = localization_accuracy(model, part)
    os.makedirs(ns.out, exist_ok=True)
    path = os.path.join(ns.out, "saliency_eval.csv")
    with open(path, "w", encoding="utf-8") as f:
        f.write("split,examples,mean_saliency_metric,localization_accuracy\n")
        f.write(f"{ns.split},{len(part)},{float(sal)!r},{float(loc)!r}\n")
    written = [path]

    count = min(ns.export_count, len(part))
    if count > 0:
        images = np.stack([np.asarray(getattr(e.image, "data", e.image)) for e in part[:count]])
        labels = np.array([int(e.label) for e in part[:count]])
        maps = saliency_maps_batch(model, images, labels)
        rows = []
        for i in range(count):
            pgm = os.path.join(ns.out, f"saliency_{i}.pgm")
            write_pgm(maps[i], pgm)
            written.append(pgm)
            try:
                rows.append((f"{i}_found", extract_box(maps[i])))
            except ValueError:
                pass  # empty map: no box to record
            rows.append((f"{i}_truth", part[i].box))
        boxes_path = os.path.join(ns.out, "boxes.csv")
        write_boxes_csv(rows, boxes_path)
        written.append(boxes_path)

    for p in written:
        print(f"wrote {p}")
    print(f"  mean saliency metric {sal:+.4f}, localization accuracy {loc:.4f}")
    return 0


def _cmd_report(ns) -> int:
    from regiongrad.harness import ExperimentResult, report

    path = ns.results or os.path.join(ns.out, "results.json")
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except OSError as e:
        raise ValueError(f"cannot read results file {path}: {e}") from None

    def _num(x):
        return float("nan") if x is None else float(x)

    results = [
        ExperimentResult(
            algorithm=row["algorithm"],
            lambda1=_num(row["lambda1"]),
            lambda2=_num(row["lambda2"]),
            seed=int(row["seed"]),
            standard_accuracy=_num(row["standard_accuracy"]),
            robust_accuracy=tuple(_num(v) for v in row["robust_accuracy"]),
            selection_robust_accuracy=tuple(_num(v) for v in row["selection_robust_accuracy"]),
            saliency_metric=_num(row["saliency_metric"]),
            localization_accuracy=_num(row["localization_accuracy"]),
            diverged=bool(row["diverged"]),
        )
        for row in payload["results"]
    ]
    for p in report(results, ns.out):
        print(f"wrote {p}")
    return 0


_COMMANDS = {
    "generate-data": _cmd_generate_data,
    "train": _cmd_train,
    "grid": _cmd_grid,
    "attack-eval": _cmd_attack_eval,
    "saliency-eval": _cmd_saliency_eval,
    "report": _cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _splice_config(argv)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    if ns.float32:
        from regiongrad.tensor import set_default_dtype

        set_default_dtype("float32")
    if ns.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2

    try:
        return _COMMANDS[ns.command](ns)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
