"""Input-gradient saliency maps and the metrics scored on them.

A saliency map is |d log p_y / d x|, reduced to one grayscale channel by
taking the max of absolute values over color channels. Thresholding the
map at a fraction of its own maximum and taking the tightest rectangle
around the surviving pixels yields an explanation box, which is scored
two ways:

* against the ground-truth annotation by IoU (localization accuracy:
  prediction correct AND IoU >= 0.5);
* intrinsically, by how small the box is and how confidently the model
  classifies the crop alone: s = ln(max(0.05, area fraction)) - ln(p).
  Smaller boxes that preserve the model's decision score better (lower).

The crop is resized back to the network's input size by nearest-neighbor
sampling, the most boring deterministic choice available.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from regiongrad.nn import ModelParams, log_probs, predict
from regiongrad.tensor import Tape, Tensor, backward, mul, tensor, tsum

__all__ = [
    "Box",
    "SaliencyMetricResult",
    "DEFAULT_REL_THRESHOLD",
    "SENSITIVITY_THRESHOLDS",
    "iou",
    "saliency_map",
    "saliency_maps_batch",
    "extract_box",
    "saliency_metric",
    "mean_saliency_metric",
    "localization_accuracy",
    "write_pgm",
    "write_boxes_csv",
]

DEFAULT_REL_THRESHOLD = 0.25
SENSITIVITY_THRESHOLDS = (0.15, 0.25, 0.35)


@dataclass(frozen=True)
class Box:
    """Inclusive pixel rectangle: both corners are part of the box."""

    row_min: int
    col_min: int
    row_max: int
    col_max: int

    def __post_init__(self):
        if self.row_min < 0 or self.col_min < 0:
            raise ValueError(f"box corners must be non-negative: {self}")
        if self.row_min > self.row_max or self.col_min > self.col_max:
            raise ValueError(f"box corners out of order: {self}")

    @property
    def height(self) -> int:
        return self.row_max - self.row_min + 1

    @property
    def width(self) -> int:
        return self.col_max - self.col_min + 1

    @property
    def area(self) -> int:
        return self.height * self.width


def iou(b1: Box, b2: Box) -> float:
    """Intersection over union, counting pixels inclusively."""
    rows = min(b1.row_max, b2.row_max) - max(b1.row_min, b2.row_min) + 1
    cols = min(b1.col_max, b2.col_max) - max(b1.col_min, b2.col_min) + 1
    inter = max(0, rows) * max(0, cols)
    union = b1.area + b2.area - inter
    return inter / union


def saliency_map(model: ModelParams, example) -> np.ndarray:
    """|gradient of the true-class log-probability|, maxed over channels."""
    image = np.asarray(getattr(example.image, "data", example.image))
    return saliency_maps_batch(model, image[None], np.array([int(example.label)]))[0]


def saliency_maps_batch(model: ModelParams, images: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-example saliency maps in one backward sweep, shape (B, H, W).

    Each example's log-probability depends only on its own image, so the
    gradient of the sum splits into the per-example gradients.
    """
    x = Tensor(images, requires_grad=True)
    b, k = images.shape[0], model.arch.classes
    onehot = np.zeros((b, k))
    onehot[np.arange(b), np.asarray(labels, dtype=int)] = 1.0
    with Tape() as tape:
        lp = log_probs(model, x)
        target = tsum(mul(lp, tensor(onehot)))
    grad = backward(tape, target, wrt=[x])[x].data
    return np.max(np.abs(grad), axis=1)


def extract_box(map_: np.ndarray, rel_threshold: float = DEFAULT_REL_THRESHOLD) -> Box:
    """Tightest rectangle around pixels >= rel_threshold * max(map)."""
    if not 0.0 < rel_threshold < 1.0:
        raise ValueError(f"rel_threshold must lie in (0, 1), got {rel_threshold}")
    map_ = np.asarray(map_)
    peak = float(map_.max(initial=0.0))
    if peak <= 0.0:
        raise ValueError("empty saliency: map has no positive values")
    rows, cols = np.nonzero(map_ >= rel_threshold * peak)
    return Box(int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max()))


def _resize_nearest(crop: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbor resample of (C, h, w) to (C, height, width)."""
    ch, cw = crop.shape[1], crop.shape[2]
    rows = (np.arange(height) * ch) // height
    cols = (np.arange(width) * cw) // width
    return crop[:, rows[:, None], cols[None, :]]


@dataclass(frozen=True)
class SaliencyMetricResult:
    a_hat: float  # box area as a fraction of the image
    a: float  # floored at 0.05
    p: float  # model probability of the true class on the resized crop
    s: float  # ln(a) - ln(p); lower is better


def saliency_metric(model: ModelParams, example, box: Box) -> SaliencyMetricResult:
    """Score an explanation box by size and crop-confidence."""
    image = np.asarray(getattr(example.image, "data", example.image))
    _, height, width = image.shape
    if box.row_max >= height or box.col_max >= width:
        raise ValueError(f"box {box} exceeds image {height}x{width}")
    crop = image[:, box.row_min : box.row_max + 1, box.col_min : box.col_max + 1]
    resized = _resize_nearest(crop, height, width)
    lp = log_probs(model, tensor(resized)).data[0, int(example.label)]
    a_hat = box.area / (height * width)
    a = max(0.05, a_hat)
    return SaliencyMetricResult(a_hat=a_hat, a=a, p=float(np.exp(lp)), s=float(np.log(a) - lp))


def mean_saliency_metric(model: ModelParams, dataset, rel_threshold: float = DEFAULT_REL_THRESHOLD) -> float:
    """Average s over a dataset, maps batched into shared backward sweeps.

    Examples whose saliency map is identically zero have no box to score
    and are left out of the average; a dataset consisting only of such
    examples scores nan.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("mean_saliency_metric: empty dataset")
    images = np.stack([np.asarray(getattr(e.image, "data", e.image)) for e in dataset])
    labels = np.array([int(e.label) for e in dataset])
    scores = []
    for start in range(0, len(dataset), 256):
        maps = saliency_maps_batch(model, images[start : start + 256], labels[start : start + 256])
        for row in range(maps.shape[0]):
            example = dataset[start + row]
            try:
                box = extract_box(maps[row], rel_threshold)
            except ValueError:
                continue  # no positive saliency anywhere: nothing to crop
            scores.append(saliency_metric(model, example, box).s)
    return float(np.mean(scores)) if scores else float("nan")


def localization_accuracy(model: ModelParams, dataset, rel_threshold: float = DEFAULT_REL_THRESHOLD) -> float:
    """Fraction with a correct prediction AND box IoU >= 0.5.

    Examples whose saliency map is identically zero count as misses.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("localization_accuracy: empty dataset")
    images = np.stack([np.asarray(getattr(e.image, "data", e.image)) for e in dataset])
    labels = np.array([int(e.label) for e in dataset])
    preds = predict(model, Tensor(images))
    hits = 0
    correct = np.nonzero(preds == labels)[0]
    if correct.size:
        maps = saliency_maps_batch(model, images[correct], labels[correct])
        for row, idx in enumerate(correct):
            try:
                found = extract_box(maps[row], rel_threshold)
            except ValueError:
                continue  # empty saliency scores as a miss
            if iou(found, dataset[idx].box) >= 0.5:
                hits += 1
    return hits / len(dataset)


# ----------------------------------------------------------------- exports


def write_pgm(map_: np.ndarray, path) -> None:
    """16-bit binary PGM, map rescaled so its peak hits white."""
    map_ = np.asarray(map_, dtype=np.float64)
    peak = float(map_.max(initial=0.0))
    scaled = np.zeros(map_.shape, dtype=">u2")
    if peak > 0:
        scaled = np.round(map_ / peak * 65535.0).astype(">u2")
    height, width = map_.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n65535\n".encode("ascii"))
        f.write(scaled.tobytes())


def write_boxes_csv(rows, path) -> None:
    """Box CSV: example_id, row_min, col_min, row_max, col_max."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("example_id,row_min,col_min,row_max,col_max\n")
        for example_id, box in rows:
            f.write(f"{example_id},{box.row_min},{box.col_min},{box.row_max},{box.col_max}\n")
