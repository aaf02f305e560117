"""regiongrad: box-weighted input-gradient regularization at desk scale.

Train small convolutional classifiers whose loss penalizes squared
input gradients differently inside and outside an annotated bounding
box, then measure what that buys you: FGSM robustness curves and
saliency-based interpretability metrics, all on a synthetic shape
dataset with exact ground-truth boxes.

The heavy lifting lives in the submodules — ``tensor`` (taped reverse-mode
differentiation, nestable for gradients of gradients), ``nn`` (the
classifier), ``objective`` (the three-term loss), ``optim`` (SGD),
``attack`` (FGSM), ``saliency`` (maps, boxes, scores), ``data`` (the
synthetic set) and ``harness`` (the grid-search experiment) — and the
names most sessions start from are re-exported here. The ``tensor()``
factory itself is deliberately not re-exported: it would shadow the
``regiongrad.tensor`` submodule; reach it as ``regiongrad.tensor.tensor``
or construct ``Tensor`` directly.
"""

from regiongrad.attack import (
    AttackConfig,
    attack_batch,
    epsilon_grid,
    fgsm,
    robust_accuracy,
    robust_accuracy_curve,
)
from regiongrad.data import (
    DataSpec,
    Dataset,
    Example,
    blackout_dataset,
    four_way_split,
    generate,
    load_dataset,
    save_dataset,
)
from regiongrad.harness import (
    ALGORITHMS,
    ExperimentConfig,
    ExperimentResult,
    build_exports,
    lambda_grid,
    report,
    run_experiment,
    run_grid,
)
from regiongrad.nn import (
    ArchConfig,
    ModelParams,
    batch_cross_entropy,
    cross_entropy,
    forward,
    init_model,
    load_model,
    log_probs,
    logits,
    predict,
    save_model,
)
from regiongrad.objective import (
    RegionLossConfig,
    batch_region_loss,
    box_to_mask,
    region_loss,
)
from regiongrad.optim import SgdConfig, TrainResult, accuracy, sgd_step, train
from regiongrad.saliency import (
    Box,
    extract_box,
    iou,
    localization_accuracy,
    mean_saliency_metric,
    saliency_map,
    saliency_metric,
)
from regiongrad.tensor import (
    ShapeError,
    Tape,
    Tensor,
    backward,
    default_dtype,
    forward_op,
    set_default_dtype,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # differentiation
    "Tensor",
    "Tape",
    "ShapeError",
    "backward",
    "forward_op",
    "set_default_dtype",
    "default_dtype",
    # model
    "ArchConfig",
    "ModelParams",
    "init_model",
    "logits",
    "log_probs",
    "forward",
    "predict",
    "cross_entropy",
    "batch_cross_entropy",
    "save_model",
    "load_model",
    # objective
    "RegionLossConfig",
    "region_loss",
    "batch_region_loss",
    "box_to_mask",
    # training
    "SgdConfig",
    "TrainResult",
    "train",
    "sgd_step",
    "accuracy",
    # attack
    "AttackConfig",
    "fgsm",
    "attack_batch",
    "epsilon_grid",
    "robust_accuracy",
    "robust_accuracy_curve",
    # saliency
    "Box",
    "iou",
    "saliency_map",
    "extract_box",
    "saliency_metric",
    "mean_saliency_metric",
    "localization_accuracy",
    # data
    "DataSpec",
    "Dataset",
    "Example",
    "generate",
    "four_way_split",
    "blackout_dataset",
    "save_dataset",
    "load_dataset",
    # experiments
    "ALGORITHMS",
    "ExperimentConfig",
    "ExperimentResult",
    "lambda_grid",
    "run_experiment",
    "run_grid",
    "build_exports",
    "report",
]
