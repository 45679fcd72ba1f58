"""Image ingestion, resizing, splitting and the synthetic cell generator.

The synthetic generator produces desk-scale stand-ins for the real blood
smear crops: a dark background, one pink-ish elliptical cell, and (for the
positive class) a few small dark-purple dots strictly inside the cell.
Positive/negative twins share every draw except the dots, so the two
classes differ only inside the cell region.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, DataError
from .numerics import require_finite

PARASITIZED = "parasitized"
UNINFECTED = "uninfected"
CLASS_LABELS = (PARASITIZED, UNINFECTED)
CLASS_MAP = {1: PARASITIZED, 0: UNINFECTED}

POLICY_SIZES = (32, 128)


@dataclass
class ImageSample:
    id: str
    pixels: np.ndarray  # [3, h, w] float64 in [0, 1]
    label: str
    source: str


@dataclass
class Dataset:
    samples: list[ImageSample]

    @property
    def class_counts(self) -> dict[str, int]:
        counts = {label: 0 for label in CLASS_LABELS}
        for s in self.samples:
            counts[s.label] = counts.get(s.label, 0) + 1
        return counts

    def __len__(self) -> int:
        return len(self.samples)


def resize_image(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resize of a [c, h, w] image."""
    if out_h <= 0 or out_w <= 0:
        raise ConfigError(f"target size must be positive, got {out_h}x{out_w}")
    c, h, w = pixels.shape

    def axis_positions(n_in: int, n_out: int) -> np.ndarray:
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out)
        return np.arange(n_out) * ((n_in - 1) / (n_out - 1))

    ys = axis_positions(h, out_h)
    y0 = np.floor(ys).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    ty = (ys - y0)[None, :, None]
    rows = pixels[:, y0, :] * (1.0 - ty) + pixels[:, y1, :] * ty

    xs = axis_positions(w, out_w)
    x0 = np.floor(xs).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    tx = (xs - x0)[None, None, :]
    return rows[:, :, x0] * (1.0 - tx) + rows[:, :, x1] * tx


def decode_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            if img.format != "PNG":
                raise DataError(f"only PNG images are supported: {path}")
            arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"cannot decode image file {path}: {exc}") from exc
    return arr.transpose(2, 0, 1)  # [h, w, 3] -> [3, h, w]


def load_dataset(root_dir: str | Path, target_size: int = 128) -> Dataset:
    """Load `<root>/parasitized/*.png` and `<root>/uninfected/*.png`.

    Every image is decoded, resized to target_size x target_size and
    normalized to [0, 1]. Sample order is deterministic (sorted paths)
    regardless of filesystem enumeration order.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    class_dirs: dict[str, Path] = {}
    for entry in sorted(root.iterdir()):
        if not entry.is_dir():
            continue
        name = entry.name.lower()
        if name not in CLASS_LABELS:
            raise DataError(f"unknown class directory {entry.name!r} under {root}")
        class_dirs[name] = entry

    samples = []
    for label in CLASS_LABELS:
        directory = class_dirs.get(label)
        files = sorted(directory.glob("*.png")) if directory else []
        if not files:
            raise DataError(f"class {label!r} has zero samples under {root}")
        for path in files:
            pixels = decode_png(path)
            require_finite(pixels, f"image {path}")
            pixels = resize_image(pixels, target_size, target_size)
            samples.append(
                ImageSample(
                    id=f"{label}/{path.name}",
                    pixels=pixels,
                    label=label,
                    source=str(path),
                )
            )
    return Dataset(samples=samples)


def split(
    dataset: Dataset,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[Dataset, Dataset, Dataset]:
    """Stratified, seeded train/val/test split; disjoint and exhaustive."""
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigError(f"need three non-negative ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must sum to 1, got {sum(ratios)}")
    rng = np.random.default_rng(seed)
    parts: tuple[list, list, list] = ([], [], [])
    for label in CLASS_LABELS:
        members = [s for s in dataset.samples if s.label == label]
        if len(members) < 3:
            raise DataError(f"class {label!r} has fewer than 3 samples")
        order = rng.permutation(len(members))
        n = len(members)
        cut1 = int(round(n * ratios[0]))
        cut2 = int(round(n * (ratios[0] + ratios[1])))
        for part_idx, idxs in enumerate((order[:cut1], order[cut1:cut2], order[cut2:])):
            parts[part_idx].extend(members[i] for i in idxs)
    return Dataset(parts[0]), Dataset(parts[1]), Dataset(parts[2])


def synthesize_dataset(n: int, size: int, seed: int = 0) -> Dataset:
    """Generate n synthetic cell images, exactly n/2 per class.

    Sample 2p is parasitized and 2p+1 is its uninfected twin: both are
    built from identical background/cell draws, then the parasitized one
    receives 1-3 dots. Fully deterministic for a given seed.
    """
    if n % 2 != 0:
        raise ConfigError(f"sample count must be even for balanced classes, got {n}")
    if size not in POLICY_SIZES:
        raise ConfigError(f"size must be one of {POLICY_SIZES}, got {size}")

    samples = []
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for pair in range(n // 2):
        rng = np.random.default_rng([seed, pair])
        background = rng.uniform(0.0, 0.015, size=(3, size, size))
        color = np.array(
            [rng.uniform(0.75, 0.95), rng.uniform(0.45, 0.65), rng.uniform(0.55, 0.75)]
        )
        semi_x = rng.uniform(0.28, 0.42) * size
        semi_y = rng.uniform(0.28, 0.42) * size
        cx = rng.uniform(semi_x + 0.5, size - 1.5 - semi_x)
        cy = rng.uniform(semi_y + 0.5, size - 1.5 - semi_y)
        texture = rng.uniform(-0.04, 0.04, size=(3, size, size))

        cell_mask = ((xx - cx) / semi_x) ** 2 + ((yy - cy) / semi_y) ** 2 <= 1.0
        base = background.copy()
        base[:, cell_mask] = color[:, None] + texture[:, cell_mask]

        infected = base.copy()
        for _ in range(int(rng.integers(1, 4))):
            theta = rng.uniform(0.0, 2.0 * np.pi)
            radial = 0.55 * np.sqrt(rng.uniform(0.0, 1.0))
            dx = cx + radial * semi_x * np.cos(theta)
            dy = cy + radial * semi_y * np.sin(theta)
            dot_r = rng.uniform(0.07, 0.11) * size
            dot_color = np.array(
                [rng.uniform(0.25, 0.35), rng.uniform(0.02, 0.08), rng.uniform(0.30, 0.42)]
            )
            dot_mask = (xx - dx) ** 2 + (yy - dy) ** 2 <= dot_r**2
            infected[:, dot_mask] = dot_color[:, None]

        source = f"synthetic:seed={seed},pair={pair}"
        samples.append(
            ImageSample(
                id=f"synthetic-{pair:05d}-{PARASITIZED}",
                pixels=np.clip(infected, 0.0, 1.0),
                label=PARASITIZED,
                source=source,
            )
        )
        samples.append(
            ImageSample(
                id=f"synthetic-{pair:05d}-{UNINFECTED}",
                pixels=np.clip(base, 0.0, 1.0),
                label=UNINFECTED,
                source=source,
            )
        )
    return Dataset(samples=samples)


def save_dataset_png(dataset: Dataset, out_dir: str | Path) -> Path:
    """Write a dataset as `<out>/<label>/<id>.png` 8-bit files."""
    out = Path(out_dir)
    for label in CLASS_LABELS:
        (out / label).mkdir(parents=True, exist_ok=True)
    for sample in dataset.samples:
        arr = np.round(sample.pixels.transpose(1, 2, 0) * 255.0).astype(np.uint8)
        name = sample.id.split("/")[-1]
        if not name.endswith(".png"):
            name += ".png"
        Image.fromarray(arr).save(out / sample.label / name, format="PNG")
    return out
