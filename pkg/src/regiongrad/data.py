"""Synthetic shape classification with exact ground-truth boxes.

Each image carries one shape from a fixed palette (filled square, hollow
square, plus sign, diagonal stripes, checker patch, disk, X, triangle),
drawn at a random position and size over a low-amplitude uniform noise
floor. Bright single-pixel distractor speckles land only OUTSIDE the
object's rectangle and are placed independently of the class, so pixels
outside the box genuinely carry no label information — the situation the
out-of-box gradient penalty is built for. Every shape touches all four
sides of its rectangle, so the stored box is exactly tight and the mask
is exact by construction.

The class is decodable from the box interior alone, which keeps the
baseline that deletes everything outside the box a fair competitor.

Datasets are value-like lists of examples plus metadata, and each split
carries a role tag ("train", "model_select", "hyper_select", "test") so
downstream code can refuse to evaluate on data that trained the model.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np

from regiongrad.objective import box_to_mask
from regiongrad.saliency import Box

__all__ = [
    "CLASS_NAMES",
    "DataSpec",
    "DatasetMeta",
    "Example",
    "Dataset",
    "generate",
    "four_way_split",
    "blackout",
    "blackout_dataset",
    "save_dataset",
    "load_dataset",
    "DATASET_MAGIC",
]

CLASS_NAMES = (
    "filled_square",
    "hollow_square",
    "plus_sign",
    "diagonal_stripes",
    "checker_patch",
    "disk",
    "x_shape",
    "triangle",
)

DATASET_MAGIC = b"RGDS"
_DATASET_VERSION = 1


@dataclass(frozen=True)
class DataSpec:
    """Generation knobs: class count, image geometry, clutter levels."""

    classes: int = 4
    count: int = 2400
    channels: int = 1
    height: int = 32
    width: int = 32
    noise: float = 0.15  # background amplitude, uniform in [0, noise]
    distractors: int = 12  # bright speckles outside the box, per image
    min_object: int = 10  # object side length range, inclusive
    max_object: int = 20

    def validate(self) -> None:
        if not 2 <= self.classes <= len(CLASS_NAMES):
            raise ValueError(f"classes must be in 2..{len(CLASS_NAMES)}, got {self.classes}")
        if self.count < 6:
            raise ValueError(f"count must be at least 6, got {self.count}")
        if min(self.channels, self.height, self.width) < 1:
            raise ValueError("image dimensions must be positive")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError(f"noise amplitude must be in [0, 1], got {self.noise}")
        if self.distractors < 0:
            raise ValueError("distractor count must be non-negative")
        if self.min_object < 5 or self.min_object > self.max_object:
            raise ValueError(f"object side range [{self.min_object}, {self.max_object}] is invalid (need >= 5)")
        if self.max_object > min(self.height, self.width):
            raise ValueError(
                f"objects up to {self.max_object} px do not fit a {self.height}x{self.width} image"
            )


@dataclass(frozen=True)
class DatasetMeta:
    m: int
    classes: int
    channels: int
    height: int
    width: int
    seed: Optional[int]
    class_names: Tuple[str, ...]

    @property
    def d(self) -> int:
        return self.channels * self.height * self.width


@dataclass(frozen=True)
class Example:
    image: np.ndarray  # (C, H, W), values in [0, 1]
    label: int
    box: Box
    mask: np.ndarray  # bool (H, W), True exactly on the box rectangle


class Dataset:
    """Immutable example list with metadata and a split-provenance role."""

    __slots__ = ("examples", "meta", "role")

    def __init__(self, examples: List[Example], meta: DatasetMeta, role: str = "all"):
        self.examples = list(examples)
        self.meta = meta
        self.role = role

    def __len__(self) -> int:
        return len(self.examples)

    def __getitem__(self, i: int) -> Example:
        return self.examples[i]

    def __iter__(self):
        return iter(self.examples)

    def with_role(self, role: str) -> "Dataset":
        return Dataset(self.examples, self.meta, role)


# ------------------------------------------------------------ shape stamps


def _stamp(cls: int, s: int) -> np.ndarray:
    """Boolean s-by-s stencil for a class; touches all four canvas sides."""
    i, j = np.indices((s, s))
    if cls == 0:  # filled square
        return np.ones((s, s), dtype=bool)
    if cls == 1:  # hollow square
        t = max(1, s // 5)
        return (i < t) | (i >= s - t) | (j < t) | (j >= s - t)
    if cls == 2:  # plus sign
        t = max(1, s // 3)
        lo, hi = (s - t) // 2, (s - t) // 2 + t
        return ((j >= lo) & (j < hi)) | ((i >= lo) & (i < hi))
    if cls == 3:  # diagonal stripes
        p = max(3, s // 3)
        return (i + j) % p < max(1, p // 2)
    if cls == 4:  # checker patch
        c = max(1, s // 4)
        return ((i // c) + (j // c)) % 2 == 0
    if cls == 5:  # disk
        mid = (s - 1) / 2.0
        return (i - mid) ** 2 + (j - mid) ** 2 <= (s / 2.0) ** 2
    if cls == 6:  # X
        t = max(1, s // 5)
        return (np.abs(i - j) < t) | (np.abs(i + j - (s - 1)) < t)
    if cls == 7:  # triangle, apex up, full-width base
        mid = (s - 1) / 2.0
        half = i * (mid + 0.5) / max(1, s - 1)
        return np.abs(j - mid) <= half + 0.5  # +0.5 keeps the apex non-empty at even sizes
    raise ValueError(f"no shape for class {cls}")


def generate(spec: DataSpec, seed: int) -> Dataset:
    """Deterministic dataset; count rounds up to a multiple of 6."""
    spec.validate()
    m = -(-spec.count // 6) * 6  # splits need sixths
    rng = np.random.default_rng(seed)
    c, h, w = spec.channels, spec.height, spec.width
    examples = []
    for idx in range(m):
        label = idx % spec.classes
        s = int(rng.integers(spec.min_object, spec.max_object + 1))
        top = int(rng.integers(0, h - s + 1))
        left = int(rng.integers(0, w - s + 1))
        box = Box(top, left, top + s - 1, left + s - 1)
        mask = box_to_mask(box, h, w)

        image = rng.uniform(0.0, spec.noise, size=(c, h, w)) if spec.noise > 0 else np.zeros((c, h, w))
        stamp = _stamp(label, s)
        region = image[:, top : top + s, left : left + s]
        region[:, stamp] = 1.0

        if spec.distractors:
            outside = np.flatnonzero(~mask)
            chosen = rng.choice(outside, size=min(spec.distractors, outside.size), replace=False)
            rows, cols = np.unravel_index(chosen, (h, w))
            image[:, rows, cols] = 1.0

        examples.append(Example(image=image, label=label, box=box, mask=mask))
    meta = DatasetMeta(
        m=m,
        classes=spec.classes,
        channels=c,
        height=h,
        width=w,
        seed=seed,
        class_names=CLASS_NAMES[: spec.classes],
    )
    return Dataset(examples, meta, role="all")


def four_way_split(dataset: Dataset, seed: int) -> Tuple[Dataset, Dataset, Dataset, Dataset]:
    """Shuffle, then cut into train (1/2) and three equal sixths."""
    m = len(dataset)
    if m < 6:
        raise ValueError(f"need at least 6 examples to split, got {m}")
    if m % 6:
        raise ValueError(f"example count must be divisible by 6, got {m}")
    order = np.random.default_rng(seed).permutation(m)
    sixth = m // 6
    cuts = (3 * sixth, 4 * sixth, 5 * sixth)
    roles = ("train", "model_select", "hyper_select", "test")
    parts = np.split(order, cuts)
    return tuple(
        Dataset([dataset[int(i)] for i in part], dataset.meta, role)
        for part, role in zip(parts, roles)
    )


def blackout(example: Example) -> Example:
    """Zero every pixel outside the mask; annotation unchanged."""
    return replace(example, image=example.image * example.mask[None, :, :])


def blackout_dataset(dataset: Dataset) -> Dataset:
    return Dataset([blackout(e) for e in dataset], dataset.meta, dataset.role)


# ------------------------------------------------------------------ file IO


def save_dataset(dataset: Dataset, path) -> None:
    meta = dataset.meta
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<6I", _DATASET_VERSION, meta.m, meta.classes, meta.channels, meta.height, meta.width))
        for ex in dataset:
            b = ex.box
            f.write(struct.pack("<5I", ex.label, b.row_min, b.col_min, b.row_max, b.col_max))
            f.write(np.ascontiguousarray(ex.image, dtype="<f4").tobytes())


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError("dataset file truncated")
    return buf


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        if _read_exact(f, 4) != DATASET_MAGIC:
            raise ValueError(f"{path}: not a dataset file (bad magic)")
        version, m, k, c, h, w = struct.unpack("<6I", _read_exact(f, 24))
        if version != _DATASET_VERSION:
            raise ValueError(f"{path}: unsupported dataset version {version}")
        examples = []
        for _ in range(m):
            label, r0, c0, r1, c1 = struct.unpack("<5I", _read_exact(f, 20))
            image = (
                np.frombuffer(_read_exact(f, 4 * c * h * w), dtype="<f4")
                .astype(np.float64)
                .reshape(c, h, w)
            )
            box = Box(r0, c0, r1, c1)
            examples.append(Example(image=image, label=label, box=box, mask=box_to_mask(box, h, w)))
        if f.read(1):
            raise ValueError(f"{path}: trailing bytes after {m} examples")
    meta = DatasetMeta(m=m, classes=k, channels=c, height=h, width=w, seed=None, class_names=CLASS_NAMES[:k])
    return Dataset(examples, meta, role="all")
