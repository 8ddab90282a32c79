"""Dataset loading and the synthetic shapes generator.

On-disk layout, one directory per split:

    root/<split>/images/<stem>.png   RGB images
    root/<split>/masks/<stem>.png    single-channel label maps (8/16-bit)
    root/<split>/index.txt           optional manifest, one item per line:
                                     "images/<stem>.png masks/<stem>.png"

Images and masks pair by filename stem. Loaded images are float32 in
[-1, 1]; masks become integer label maps, optionally passed through a
two-column remap file ("raw_value label" per line).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image, ImageDraw

from .errors import DataError
from .masks import SemanticMask


@dataclass(frozen=True)
class DatasetItem:
    image_path: str
    mask_path: str
    stem: str


@dataclass
class DatasetManifest:
    root: str
    split: str
    items: list
    num_labels: int
    remap: dict | None = None
    required_labels: frozenset = frozenset()
    allow_missing_labels: bool = False

    def __len__(self) -> int:
        return len(self.items)


def read_remap_file(path: str) -> dict:
    remap = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                stripped = line.split("#", 1)[0].strip()
                if not stripped:
                    continue
                parts = stripped.split()
                if len(parts) != 2:
                    raise DataError(f"{path}:{lineno}: expected two columns, got {line.rstrip()!r}")
                remap[int(parts[0])] = int(parts[1])
    except OSError as exc:
        raise DataError(f"cannot read remap file {path}: {exc}") from None
    except ValueError as exc:
        raise DataError(f"bad remap file {path}: {exc}") from None
    return remap


def load_manifest(root: str, split: str, num_labels: int, remap_file: str = "",
                  required_labels=None, allow_missing_labels: bool = False) -> DatasetManifest:
    """Build a manifest from index.txt when present, else by directory scan.

    Every image must have a mask with the same stem; orphans on either side
    are an error.
    """
    split_dir = os.path.join(root, split)
    index_path = os.path.join(split_dir, "index.txt")
    items = []
    if os.path.isfile(index_path):
        with open(index_path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                parts = stripped.split()
                if len(parts) != 2:
                    raise DataError(f"{index_path}:{lineno}: expected two paths")
                img = os.path.join(split_dir, parts[0])
                msk = os.path.join(split_dir, parts[1])
                stem = os.path.splitext(os.path.basename(parts[0]))[0]
                items.append(DatasetItem(img, msk, stem))
    else:
        img_dir = os.path.join(split_dir, "images")
        msk_dir = os.path.join(split_dir, "masks")
        if not os.path.isdir(img_dir) or not os.path.isdir(msk_dir):
            raise DataError(f"missing images/ or masks/ under {split_dir}")
        imgs = {os.path.splitext(f)[0]: f for f in os.listdir(img_dir)
                if f.lower().endswith(".png")}
        msks = {os.path.splitext(f)[0]: f for f in os.listdir(msk_dir)
                if f.lower().endswith(".png")}
        if set(imgs) != set(msks):
            odd = sorted(set(imgs) ^ set(msks))[:5]
            raise DataError(f"unpaired image/mask stems under {split_dir}: {odd}")
        for stem in sorted(imgs):
            items.append(DatasetItem(os.path.join(img_dir, imgs[stem]),
                                     os.path.join(msk_dir, msks[stem]), stem))
    if not items:
        raise DataError(f"no items found for split {split!r} under {root}")
    remap = read_remap_file(remap_file) if remap_file else None
    required = frozenset(required_labels) if required_labels is not None else frozenset()
    return DatasetManifest(root=root, split=split, items=items, num_labels=num_labels,
                           remap=remap, required_labels=required,
                           allow_missing_labels=allow_missing_labels)


def load_item(manifest: DatasetManifest, index: int):
    """-> (image float32 (3, H, W) in [-1, 1], SemanticMask)."""
    item = manifest.items[index]
    try:
        with Image.open(item.image_path) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float32)
        with Image.open(item.mask_path) as im:
            if im.mode not in ("L", "I", "I;16", "P"):
                raise DataError(f"{item.mask_path}: mask mode {im.mode!r} is not single-channel")
            raw = np.asarray(im, dtype=np.int64)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from None
    if raw.ndim != 2:
        raise DataError(f"{item.mask_path}: mask must be single-channel")
    if rgb.shape[:2] != raw.shape:
        raise DataError(
            f"{item.stem}: image {rgb.shape[:2]} and mask {raw.shape} dims differ")
    if manifest.remap is not None:
        out = np.full_like(raw, -1)
        for src, dst in manifest.remap.items():
            out[raw == src] = dst
        bad = np.unique(raw[out < 0])
        if bad.size:
            raise DataError(f"{item.stem}: mask values {bad.tolist()} missing from remap")
        raw = out
    if raw.min() < 0 or raw.max() >= manifest.num_labels:
        raise DataError(
            f"{item.stem}: mask values outside [0, {manifest.num_labels}): "
            f"[{raw.min()}, {raw.max()}]")
    if not manifest.allow_missing_labels and manifest.required_labels:
        present = set(np.unique(raw).tolist())
        missing = manifest.required_labels - present
        if missing:
            raise DataError(f"{item.stem}: required labels missing: {sorted(missing)}")
    image = torch.from_numpy(rgb / 127.5 - 1.0).permute(2, 0, 1).contiguous()
    mask = SemanticMask(labels=torch.from_numpy(raw), num_labels=manifest.num_labels)
    return image, mask


def load_image_file(path: str) -> torch.Tensor:
    """One RGB PNG -> float32 (3, H, W) in [-1, 1]."""
    try:
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (FileNotFoundError, OSError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from None
    return torch.from_numpy(rgb / 127.5 - 1.0).permute(2, 0, 1).contiguous()


def load_mask_file(path: str, num_labels: int, remap: dict | None = None) -> SemanticMask:
    """One single-channel PNG -> SemanticMask."""
    try:
        with Image.open(path) as im:
            raw = np.asarray(im, dtype=np.int64)
    except (FileNotFoundError, OSError) as exc:
        raise DataError(f"cannot read mask {path}: {exc}") from None
    if raw.ndim != 2:
        raise DataError(f"{path}: mask must be single-channel")
    if remap is not None:
        out = np.full_like(raw, -1)
        for src, dst in remap.items():
            out[raw == src] = dst
        bad = np.unique(raw[out < 0])
        if bad.size:
            raise DataError(f"{path}: mask values {bad.tolist()} missing from remap")
        raw = out
    if raw.min() < 0 or raw.max() >= num_labels:
        raise DataError(f"{path}: mask values outside [0, {num_labels})")
    return SemanticMask(labels=torch.from_numpy(raw), num_labels=num_labels)


def load_split_tensors(manifest: DatasetManifest):
    """Load the whole split into memory: (N, 3, H, W) images, (N, H, W) labels."""
    images, labels = [], []
    for i in range(len(manifest)):
        img, mask = load_item(manifest, i)
        images.append(img)
        labels.append(mask.labels)
    return torch.stack(images), torch.stack(labels)


# ---------------------------------------------------------------------------
# Synthetic shapes dataset
# ---------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Flat-shaded shapes over a gradient background, with exact masks.

    Label 0 is the background (a linear two-color gradient at a random
    angle with per-image color jitter), label 1 an ellipse, label 2 a
    triangle, both flat-colored with per-image jitter. Labels beyond 2
    add more ellipses. Every emitted image contains every label.
    """

    image_size: int = 32
    num_labels: int = 3
    train_count: int = 2000
    test_count: int = 200
    seed: int = 0
    background_a: tuple = (60, 80, 120)
    background_b: tuple = (190, 210, 235)
    shape_palette: tuple = ((200, 60, 70), (70, 180, 90), (230, 190, 60), (150, 80, 200))
    background_jitter: int = 25
    shape_jitter: int = 50
    min_label_pixels: int = 12

    def __post_init__(self):
        if self.num_labels < 2:
            raise DataError("synthetic spec needs at least a background and one shape label")
        if self.num_labels - 1 > len(self.shape_palette):
            raise DataError("shape_palette has too few colors for num_labels")


def _jitter(rng: np.random.Generator, color, amount: int) -> np.ndarray:
    c = np.asarray(color, dtype=np.float64) + rng.uniform(-amount, amount, size=3)
    return np.clip(c, 0, 255)


def _gradient_background(rng: np.random.Generator, spec: SyntheticSpec) -> np.ndarray:
    size = spec.image_size
    c0 = _jitter(rng, spec.background_a, spec.background_jitter)
    c1 = _jitter(rng, spec.background_b, spec.background_jitter)
    theta = rng.uniform(0, 2 * np.pi)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    proj = xs * np.cos(theta) + ys * np.sin(theta)
    span = proj.max() - proj.min()
    w = (proj - proj.min()) / (span if span > 0 else 1.0)
    return c0[None, None, :] * (1 - w[..., None]) + c1[None, None, :] * w[..., None]


def _draw_shape(rng: np.random.Generator, spec: SyntheticSpec, label: int) -> np.ndarray:
    """Rasterize one shape; returns a boolean (H, W) coverage map."""
    size = spec.image_size
    layer = Image.new("L", (size, size), 0)
    draw = ImageDraw.Draw(layer)
    if label == 2:  # triangle
        pts = [(float(rng.uniform(1, size - 1)), float(rng.uniform(1, size - 1)))
               for _ in range(3)]
        draw.polygon(pts, fill=255)
    else:  # ellipse
        rx = rng.uniform(size * 0.12, size * 0.28)
        ry = rng.uniform(size * 0.12, size * 0.28)
        cx = rng.uniform(rx + 1, size - rx - 1)
        cy = rng.uniform(ry + 1, size - ry - 1)
        draw.ellipse([cx - rx, cy - ry, cx + rx, cy + ry], fill=255)
    return np.asarray(layer) > 0


def synthesize_example(rng: np.random.Generator, spec: SyntheticSpec):
    """One (image uint8 (H, W, 3), mask uint8 (H, W)) pair, all labels present."""
    size = spec.image_size
    for _ in range(64):
        image = _gradient_background(rng, spec)
        mask = np.zeros((size, size), dtype=np.uint8)
        for label in range(1, spec.num_labels):
            cover = _draw_shape(rng, spec, label)
            color = _jitter(rng, spec.shape_palette[label - 1], spec.shape_jitter)
            image[cover] = color
            mask[cover] = label
        counts = np.bincount(mask.ravel(), minlength=spec.num_labels)
        if (counts >= spec.min_label_pixels).all():
            return np.round(image).astype(np.uint8), mask
    raise DataError("failed to synthesize an image containing every label")


def generate_synthetic(spec: SyntheticSpec, root: str) -> dict:
    """Write train/test splits under root; fixed seed -> identical bytes.

    Returns {"train": manifest, "test": manifest}.
    """
    rng = np.random.default_rng(spec.seed)
    out = {}
    for split, count in (("train", spec.train_count), ("test", spec.test_count)):
        img_dir = os.path.join(root, split, "images")
        msk_dir = os.path.join(root, split, "masks")
        os.makedirs(img_dir, exist_ok=True)
        os.makedirs(msk_dir, exist_ok=True)
        lines = []
        for i in range(count):
            image, mask = synthesize_example(rng, spec)
            stem = f"{split}_{i:05d}"
            Image.fromarray(image, mode="RGB").save(os.path.join(img_dir, stem + ".png"))
            Image.fromarray(mask, mode="L").save(os.path.join(msk_dir, stem + ".png"))
            lines.append(f"images/{stem}.png masks/{stem}.png")
        with open(os.path.join(root, split, "index.txt"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        out[split] = load_manifest(root, split, spec.num_labels,
                                   required_labels=range(spec.num_labels))
    return out
