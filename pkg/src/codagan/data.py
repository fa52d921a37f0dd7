"""Dataset registry, train/test splits, label-fraction policy and minibatches."""
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .synthetic import SyntheticRecipe, render_sample, sample_stem

# guards floor(ratio * n) against 0.29 * 100 == 28.999999999999996
_FLOOR_EPS = 1e-9


@dataclass(frozen=True)
class DatasetDescriptor:
    name: str
    source: object  # Path to a dataset directory or a SyntheticRecipe
    label_fractions: dict = field(default_factory=dict)  # task -> fraction in [0, 1]
    id: int | None = None

    @property
    def tasks(self) -> list:
        return list(self.label_fractions)

    def label_fraction(self, task: str) -> float:
        return float(self.label_fractions.get(task, 0.0))

    def validate(self):
        if not self.name:
            raise ValueError("dataset needs a name")
        for task, f in self.label_fractions.items():
            if not 0.0 <= f <= 1.0:
                raise ValueError(f"label fraction for {self.name}/{task} must lie in [0, 1], got {f}")
        if isinstance(self.source, SyntheticRecipe):
            self.source.validate()
        else:
            path = Path(self.source)
            if not (path / "images").is_dir():
                raise FileNotFoundError(f"dataset directory {path} has no readable images/ folder")


class DatasetRegistry:
    """Ordered collection of datasets; ids equal insertion order."""

    def __init__(self, descriptors=()):
        self._items = []
        for d in descriptors:
            self.register(d)

    def register(self, descriptor: DatasetDescriptor) -> int:
        if any(d.name == descriptor.name for d in self._items):
            raise ValueError(f"dataset name {descriptor.name!r} already registered")
        descriptor.validate()
        new_id = len(self._items)
        self._items.append(replace(descriptor, id=new_id))
        return new_id

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, dataset_id: int) -> DatasetDescriptor:
        return self._items[dataset_id]

    def by_name(self, name: str) -> DatasetDescriptor:
        for d in self._items:
            if d.name == name:
                return d
        raise KeyError(name)


def register_dataset(descriptor: DatasetDescriptor, registry: DatasetRegistry) -> int:
    return registry.register(descriptor)


def normalize_uint8(pixels: np.ndarray) -> np.ndarray:
    """Affine map of 8-bit values onto [-1, 1]."""
    return pixels.astype(np.float32) / 127.5 - 1.0


def denormalize(images: np.ndarray) -> np.ndarray:
    return np.round((np.clip(images, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)


class ImageDataset:
    """Read access to one registered dataset.

    Samples are ordered by stem. Images are read lazily and cached; set
    ``access_log`` to a list to record every sample id whose image is read.
    """

    def __init__(self, descriptor: DatasetDescriptor):
        self.descriptor = descriptor
        self.access_log = None
        self._image_cache = {}
        self._mask_cache = {}
        src = descriptor.source
        if isinstance(src, SyntheticRecipe):
            self._recipe = src
            self.sample_ids = [sample_stem(src, i) for i in range(src.count)]
        else:
            self._recipe = None
            self.root = Path(src)
            self.sample_ids = sorted(p.stem for p in (self.root / "images").glob("*.png"))

    @property
    def id(self) -> int:
        return self.descriptor.id

    @property
    def name(self) -> str:
        return self.descriptor.name

    def __len__(self):
        return len(self.sample_ids)

    def _read(self, index: int):
        if self._recipe is not None:
            return render_sample(self._recipe, index)
        stem = self.sample_ids[index]
        return np.asarray(Image.open(self.root / "images" / f"{stem}.png").convert("L")), None

    def image(self, index: int) -> np.ndarray:
        """Normalized float32 H x W image."""
        if self.access_log is not None:
            self.access_log.append(self.sample_ids[index])
        if index not in self._image_cache:
            raw, _ = self._read(index)
            self._image_cache[index] = normalize_uint8(raw)
        return self._image_cache[index]

    def has_mask(self, index: int, task: str) -> bool:
        if self._recipe is not None:
            return task == self._recipe.task
        return (self.root / "masks" / task / f"{self.sample_ids[index]}.png").is_file()

    def has_mask_dir(self, task: str) -> bool:
        if self._recipe is not None:
            return task == self._recipe.task
        return (self.root / "masks" / task).is_dir()

    def mask(self, index: int, task: str) -> np.ndarray | None:
        """Binary uint8 mask, or None when the sample is unlabeled for ``task``."""
        if not self.has_mask(index, task):
            return None
        key = (index, task)
        if key not in self._mask_cache:
            if self._recipe is not None:
                m = render_sample(self._recipe, index)[1]
            else:
                path = self.root / "masks" / task / f"{self.sample_ids[index]}.png"
                m = (np.asarray(Image.open(path).convert("L")) > 127).astype(np.uint8)
            self._mask_cache[key] = m
        return self._mask_cache[key]


def open_dataset(descriptor: DatasetDescriptor) -> ImageDataset:
    return ImageDataset(descriptor)


@dataclass(frozen=True)
class SplitSpec:
    seed: int
    train_ratio: float
    assignment: tuple  # per-sample True for train, in sample order

    @property
    def train_indices(self) -> list:
        return [i for i, t in enumerate(self.assignment) if t]

    @property
    def test_indices(self) -> list:
        return [i for i, t in enumerate(self.assignment) if not t]


def make_split(dataset, seed: int, train_ratio: float = 0.8) -> SplitSpec:
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 < train_ratio < 1.0:
        raise ValueError(f"train_ratio must lie in (0, 1), got {train_ratio}")
    n_train = max(1, math.floor(train_ratio * n + _FLOOR_EPS))
    if n_train == n:
        warnings.warn(f"dataset of {n} sample(s) leaves no test samples", stacklevel=2)
    order = np.random.default_rng([seed, n]).permutation(n)
    assignment = np.zeros(n, dtype=bool)
    assignment[order[:n_train]] = True
    return SplitSpec(seed, train_ratio, tuple(bool(a) for a in assignment))


def labeled_count(fraction: float, n_train: int) -> int:
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"label fraction must lie in [0, 1], got {fraction}")
    if fraction == 0.0 or n_train == 0:
        return 0
    return max(1, math.floor(fraction * n_train + _FLOOR_EPS))


def apply_label_fraction(train_indices, fraction: float, seed: int, candidates=None) -> frozenset:
    """Pick the labeled subset of a training split.

    ``candidates`` restricts the choice to samples that actually have masks;
    the subset is capped at their number.
    """
    train_indices = sorted(train_indices)
    k = labeled_count(fraction, len(train_indices))
    pool = train_indices if candidates is None else [i for i in train_indices if i in set(candidates)]
    k = min(k, len(pool))
    if k == 0:
        return frozenset()
    order = np.random.default_rng([seed, len(train_indices), 1]).permutation(len(pool))
    return frozenset(pool[j] for j in order[:k])


def sample_pair(registry, rng: np.random.Generator) -> tuple:
    """Uniformly random ordered pair (a, b) of distinct dataset ids."""
    n = registry if isinstance(registry, int) else len(registry)
    if n < 2:
        raise ValueError(f"need at least 2 datasets to draw a pair, have {n}")
    a, b = rng.choice(n, size=2, replace=False)
    return int(a), int(b)


@dataclass
class Batch:
    images: torch.Tensor  # B x 1 x H x W in [-1, 1]
    masks: torch.Tensor  # B x 1 x H x W in {0, 1}; zeros where unlabeled
    labeled_flags: torch.Tensor  # B bools
    dataset_id: int
    sample_indices: list

    def __len__(self):
        return self.images.shape[0]

    @property
    def n_labeled(self) -> int:
        return int(self.labeled_flags.sum())


def make_batch(dataset: ImageDataset, split: SplitSpec, batch_size: int, rng: np.random.Generator,
               labeled=frozenset(), task: str | None = None) -> Batch:
    """Draw a single-dataset minibatch from the training split.

    Samples are drawn without replacement when the split is large enough.
    Only samples in ``labeled`` carry masks.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    train = split.train_indices
    if not train:
        raise ValueError(f"dataset {dataset.name} has an empty training split")
    pick = rng.choice(len(train), size=batch_size, replace=batch_size > len(train))
    indices = [train[j] for j in pick]
    images = np.stack([dataset.image(i) for i in indices])[:, None]
    masks = np.zeros_like(images)
    flags = np.zeros(batch_size, dtype=bool)
    for j, i in enumerate(indices):
        if i in labeled and task is not None:
            m = dataset.mask(i, task)
            if m is not None:
                masks[j, 0] = m
                flags[j] = True
    return Batch(torch.from_numpy(images), torch.from_numpy(masks), torch.from_numpy(flags),
                 dataset.id, indices)
