"""Synthetic multi-domain radiograph-like corpus.

Every sample is a torso-shaped body with two dark lobes (the foreground
class) and a faint rib texture. Content depends only on ``(seed, index)``,
so two recipes that share a seed share their masks exactly and differ only
in their intensity style.
"""
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

OUTSIDE_LEVEL = 0.15
BODY_LEVEL = 0.70
LOBE_LEVEL = 0.30


@dataclass(frozen=True)
class DomainStyle:
    gamma: float = 1.0
    bias: float = 0.0
    blur: float = 0.0
    noise: float = 0.0
    border_artifact: bool = False

    def validate(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.blur < 0 or self.noise < 0:
            raise ValueError("blur and noise must be non-negative")

    @property
    def is_identity(self) -> bool:
        return (self.gamma == 1.0 and self.bias == 0.0 and self.blur == 0.0
                and self.noise == 0.0 and not self.border_artifact)


@dataclass(frozen=True)
class ShapeFamily:
    # all lengths are fractions of the image side
    lobe_center_x: float = 0.27
    lobe_center_y: float = 0.50
    lobe_axis_x: tuple = (0.12, 0.17)
    lobe_axis_y: tuple = (0.22, 0.30)
    jitter: float = 0.04
    max_rotation: float = 0.25  # radians
    rib_amplitude: float = 0.05

    def validate(self):
        for lo, hi in (self.lobe_axis_x, self.lobe_axis_y):
            if not 0 < lo <= hi < 0.5:
                raise ValueError("lobe axes must satisfy 0 < low <= high < 0.5")
        if self.jitter < 0 or self.max_rotation < 0:
            raise ValueError("jitter and rotation must be non-negative")


@dataclass(frozen=True)
class SyntheticRecipe:
    name: str
    domain_style: DomainStyle = field(default_factory=DomainStyle)
    shape_family: ShapeFamily = field(default_factory=ShapeFamily)
    count: int = 50
    seed: int = 0
    size: int = 64
    task: str = "lungs"

    def validate(self):
        if not self.name:
            raise ValueError("recipe needs a name")
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        if self.size < 8:
            raise ValueError(f"size must be >= 8, got {self.size}")
        self.domain_style.validate()
        self.shape_family.validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape_family"]["lobe_axis_x"] = list(self.shape_family.lobe_axis_x)
        d["shape_family"]["lobe_axis_y"] = list(self.shape_family.lobe_axis_y)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticRecipe":
        d = dict(d)
        style = DomainStyle(**d.pop("domain_style", {}))
        shape = dict(d.pop("shape_family", {}))
        for key in ("lobe_axis_x", "lobe_axis_y"):
            if key in shape:
                shape[key] = tuple(shape[key])
        return cls(domain_style=style, shape_family=ShapeFamily(**shape), **d)


@dataclass(frozen=True)
class SampleGeometry:
    # (cx, cy, ax, ay, theta) per lobe in pixel units
    lobes: tuple
    body: tuple
    rib_phase: float
    rib_period: float
    rib_amplitude: float


def sample_geometry(recipe: SyntheticRecipe, index: int) -> SampleGeometry:
    rng = np.random.default_rng([recipe.seed, index, 0])
    s, fam = recipe.size, recipe.shape_family
    lobes = []
    for side in (-1, 1):
        cx = 0.5 + side * (0.5 - fam.lobe_center_x) + rng.uniform(-fam.jitter, fam.jitter)
        cy = fam.lobe_center_y + rng.uniform(-fam.jitter, fam.jitter)
        ax = rng.uniform(*fam.lobe_axis_x)
        ay = rng.uniform(*fam.lobe_axis_y)
        theta = side * rng.uniform(0, fam.max_rotation)
        lobes.append((cx * s, cy * s, ax * s, ay * s, theta))
    body = (0.5 * s, 0.55 * s, rng.uniform(0.44, 0.48) * s, rng.uniform(0.5, 0.56) * s, 0.0)
    return SampleGeometry(tuple(lobes), body, rng.uniform(0, 2 * np.pi), rng.uniform(5.0, 8.0),
                          fam.rib_amplitude)


def _ellipse(size: int, cx, cy, ax, ay, theta) -> np.ndarray:
    # pixel-center membership test
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    dx, dy = xx - cx, yy - cy
    c, s = np.cos(theta), np.sin(theta)
    u = (c * dx + s * dy) / ax
    v = (-s * dx + c * dy) / ay
    return u * u + v * v <= 1.0


def render_mask(geometry: SampleGeometry, size: int) -> np.ndarray:
    """Binary uint8 foreground mask (union of the lobes)."""
    mask = np.zeros((size, size), dtype=bool)
    for lobe in geometry.lobes:
        mask |= _ellipse(size, *lobe)
    return mask.astype(np.uint8)


def render_content(geometry: SampleGeometry, size: int) -> np.ndarray:
    """Un-styled intensity image in [0, 1] (float64)."""
    img = np.full((size, size), OUTSIDE_LEVEL)
    body = _ellipse(size, *geometry.body)
    yy = np.arange(size)[:, None] + 0.5
    ribs = np.sin(2 * np.pi * yy / geometry.rib_period + geometry.rib_phase)
    img[body] = BODY_LEVEL
    img = img + body * geometry.rib_amplitude * ribs
    img[render_mask(geometry, size).astype(bool)] = LOBE_LEVEL
    return np.clip(img, 0.0, 1.0)


def apply_style(content: np.ndarray, style: DomainStyle, rng=None) -> np.ndarray:
    """Map an un-styled image to a domain's appearance; identity style is a no-op."""
    if style.is_identity:
        return content
    img = np.power(content, style.gamma) + style.bias
    if style.blur > 0:
        img = ndimage.gaussian_filter(img, style.blur, mode="nearest")
    if style.border_artifact:
        size = img.shape[0]
        w = max(2, size // 10)
        img[:w, :] = 0.95
        img[-w:, :] = 0.95
        img[:, :w // 2] = 0.9
        img[:, -(w // 2):] = 0.9
    if style.noise > 0:
        if rng is None:
            raise ValueError("a noisy style needs an rng")
        img = img + rng.normal(0.0, style.noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def render_sample(recipe: SyntheticRecipe, index: int) -> tuple:
    """Return (image uint8, mask uint8 in {0,1}) for sample ``index``."""
    geom = sample_geometry(recipe, index)
    content = render_content(geom, recipe.size)
    rng = np.random.default_rng([recipe.seed, index, 1])
    styled = apply_style(content, recipe.domain_style, rng)
    return to_uint8(styled), render_mask(geom, recipe.size)


def sample_stem(recipe: SyntheticRecipe, index: int) -> str:
    return f"{recipe.name}_{index:04d}"


def synth_generate(recipe: SyntheticRecipe, out_dir):
    """Write a recipe's corpus in the dataset directory layout.

    Returns the DatasetDescriptor pointing at ``out_dir/<name>``.
    """
    from .data import DatasetDescriptor

    recipe.validate()
    root = Path(out_dir) / recipe.name
    img_dir = root / "images"
    mask_dir = root / "masks" / recipe.task
    try:
        img_dir.mkdir(parents=True, exist_ok=True)
        mask_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot write synthetic corpus under {root}: {e}") from e
    for i in range(recipe.count):
        image, mask = render_sample(recipe, i)
        stem = sample_stem(recipe, i)
        Image.fromarray(image).save(img_dir / f"{stem}.png")
        Image.fromarray(mask * 255).save(mask_dir / f"{stem}.png")
    return DatasetDescriptor(name=recipe.name, source=root, label_fractions={recipe.task: 1.0})
