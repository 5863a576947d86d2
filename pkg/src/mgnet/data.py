"""Image/mask folders, augmentation, normalization and a synthetic glass generator."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
import torch
from PIL import Image, ImageDraw, ImageFilter

log = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
IMAGE_EXTS = (".png", ".jpg", ".jpeg")
MASK_THRESHOLD = 128


@dataclass
class Sample:
    id: str
    image: np.ndarray  # H x W x 3 float32 in [0, 1]
    mask: np.ndarray  # H x W uint8 in {0, 1}

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape:
            raise ValueError(
                f"sample {self.id}: image {self.image.shape[:2]} and mask {self.mask.shape} differ"
            )


@dataclass
class DatasetLayout:
    root: Path
    split: str = "train"
    image_dir: str = "images"
    mask_dir: str = "masks"

    def __post_init__(self):
        self.root = Path(self.root)
        if self.split not in ("train", "val", "test"):
            raise ValueError(f"unknown split {self.split!r}")

    @property
    def images_path(self) -> Path:
        return self.root / self.split / self.image_dir

    @property
    def masks_path(self) -> Path:
        return self.root / self.split / self.mask_dir


def _pairs(layout: DatasetLayout) -> list[tuple[str, Path, Path]]:
    img_dir, mask_dir = layout.images_path, layout.masks_path
    images = {}
    if img_dir.is_dir():
        for p in img_dir.iterdir():
            if p.suffix.lower() in IMAGE_EXTS:
                if p.stem in images:
                    raise ValueError(f"duplicate image stem {p.stem!r} in {img_dir}")
                images[p.stem] = p
    masks = {}
    if mask_dir.is_dir():
        masks = {p.stem: p for p in mask_dir.iterdir() if p.suffix.lower() == ".png"}
    unpaired = sorted(set(images) ^ set(masks))
    if unpaired:
        side = "mask" if unpaired[0] in images else "image"
        raise ValueError(f"{unpaired[0]!r} has no matching {side} ({len(unpaired)} unpaired files)")
    return [(k, images[k], masks[k]) for k in sorted(images)]


def read_image(path, size: int | None = None) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if size is not None and im.size != (size, size):
                im = im.resize((size, size), Image.BILINEAR)
            return np.asarray(im, dtype=np.float32) / 255.0
    except OSError as err:
        raise OSError(f"cannot read image {path}: {err}") from err


def read_mask(path, size: int | None = None, threshold: int = MASK_THRESHOLD) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im = im.convert("L")
            if size is not None and im.size != (size, size):
                im = im.resize((size, size), Image.NEAREST)
            return (np.asarray(im) >= threshold).astype(np.uint8)
    except OSError as err:
        raise OSError(f"cannot read mask {path}: {err}") from err


def load_dataset(layout: DatasetLayout, input_size: int | None = 384) -> Iterator[Sample]:
    """Samples sorted by id. Pairing is checked before anything is yielded."""
    pairs = _pairs(layout)
    if not pairs:
        warnings.warn(f"no samples found under {layout.root / layout.split}", stacklevel=2)
    log.info("%s/%s: %d samples", layout.root, layout.split, len(pairs))

    def gen():
        for sid, ip, mp in pairs:
            yield Sample(sid, read_image(ip, input_size), read_mask(mp, input_size))

    return gen()


def apply_transform(sample: Sample, flip: bool, quarter_turns: int) -> Sample:
    img, mask = sample.image, sample.mask
    if flip:
        img, mask = img[:, ::-1], mask[:, ::-1]
    if quarter_turns % 4:
        img = np.rot90(img, quarter_turns, axes=(0, 1))
        mask = np.rot90(mask, quarter_turns, axes=(0, 1))
    return Sample(sample.id, np.ascontiguousarray(img), np.ascontiguousarray(mask))


def augment(sample: Sample, rng: np.random.Generator) -> Sample:
    """Random horizontal flip (p=0.5) and rotation by a multiple of 90 degrees."""
    flip = bool(rng.random() < 0.5)
    turns = int(rng.integers(4))
    return apply_transform(sample, flip, turns)


def normalize(image: np.ndarray) -> torch.Tensor:
    """H x W x 3 array in [0, 1] -> normalized 3 x H x W tensor."""
    t = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).permute(2, 0, 1)
    mean = torch.tensor(IMAGENET_MEAN).view(3, 1, 1)
    std = torch.tensor(IMAGENET_STD).view(3, 1, 1)
    return (t - mean) / std


def collate(samples: list[Sample]) -> tuple[torch.Tensor, torch.Tensor]:
    images = torch.stack([normalize(s.image) for s in samples])
    masks = torch.stack([torch.from_numpy(s.mask.astype(np.float32)) for s in samples]).unsqueeze(1)
    return images, masks


# --- synthetic glass scenes -------------------------------------------------


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    coarse = rng.random((4, 4, 3))
    fine = rng.random((max(2, size // 8), max(2, size // 8), 3))
    out = np.zeros((size, size, 3))
    for grid, weight in ((coarse, 0.65), (fine, 0.35)):
        im = Image.fromarray((grid * 255).astype(np.uint8)).resize((size, size), Image.BICUBIC)
        out += weight * np.asarray(im, dtype=np.float64) / 255.0
    # a few stripes so refraction shifts are visible
    yy, xx = np.mgrid[0:size, 0:size]
    angle = rng.uniform(0, np.pi)
    period = rng.uniform(size / 10, size / 4)
    stripes = 0.5 + 0.5 * np.sin((xx * np.cos(angle) + yy * np.sin(angle)) * 2 * np.pi / period)
    out = 0.8 * out + 0.2 * stripes[..., None]
    return np.clip(out, 0, 1)


def _convex_polygon(rng: np.random.Generator, size: int) -> list[tuple[float, float]]:
    cx, cy = rng.uniform(0.15, 0.85, 2) * size
    rx, ry = rng.uniform(0.1, 0.35, 2) * size
    rot = rng.uniform(0, np.pi)
    n = int(rng.integers(4, 9))
    t = np.sort(rng.uniform(0, 2 * np.pi, n))
    # points on an ellipse in angular order always form a convex polygon
    x, y = rx * np.cos(t), ry * np.sin(t)
    px = cx + x * np.cos(rot) - y * np.sin(rot)
    py = cy + x * np.sin(rot) + y * np.cos(rot)
    return list(zip(px.tolist(), py.tolist()))


def render_glass_scene(rng: np.random.Generator, size: int,
                       min_frac: float = 0.01, max_frac: float = 0.60) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(uint8 H x W x 3 image, uint8 {0,255} mask)``."""
    bg = _background(rng, size)
    while True:
        polys = [_convex_polygon(rng, size) for _ in range(int(rng.integers(1, 4)))]
        mask_im = Image.new("L", (size, size), 0)
        draw = ImageDraw.Draw(mask_im)
        for poly in polys:
            draw.polygon(poly, fill=255)
        mask = np.asarray(mask_im)
        frac = np.count_nonzero(mask) / mask.size
        if min_frac <= frac <= max_frac:
            break

    alpha = np.asarray(mask_im.filter(ImageFilter.GaussianBlur(radius=max(1.0, size / 64))),
                       dtype=np.float64)[..., None] / 255.0
    shift = rng.integers(2, max(3, size // 12), 2) * rng.choice([-1, 1], 2)
    refracted = np.roll(bg, tuple(int(s) for s in shift), axis=(0, 1))
    tint = np.array([0.78, 0.86, 0.92]) + rng.uniform(-0.05, 0.05, 3)
    glass = 0.55 * refracted + 0.45 * tint

    streak_im = Image.new("L", (size, size), 0)
    sdraw = ImageDraw.Draw(streak_im)
    for poly in polys:
        xs, ys = zip(*poly)
        x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
        sdraw.line([(x0 + 0.2 * (x1 - x0), y1 - 0.2 * (y1 - y0)),
                    (x0 + 0.6 * (x1 - x0), y0 + 0.2 * (y1 - y0))],
                   fill=255, width=max(1, size // 48))
    streak = np.asarray(streak_im.filter(ImageFilter.GaussianBlur(radius=1)), dtype=np.float64)
    streak = (streak / 255.0 * (mask / 255.0))[..., None]

    img = bg * (1 - alpha) + glass * alpha
    img = np.clip(img + 0.45 * streak, 0, 1)
    return (img * 255).round().astype(np.uint8), mask.astype(np.uint8)


def synth_generate(n: int, size: int, seed: int, out, split: str = "train") -> DatasetLayout:
    """Write ``n`` synthetic glass scenes in the standard folder layout."""
    layout = DatasetLayout(Path(out), split)
    layout.images_path.mkdir(parents=True, exist_ok=True)
    layout.masks_path.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n):
        img, mask = render_glass_scene(rng, size)
        name = f"synth_{i:05d}.png"
        Image.fromarray(img).save(layout.images_path / name)
        Image.fromarray(mask).save(layout.masks_path / name)
    return layout
