"""Synthetic camouflage dataset generator.

Backgrounds are multi-octave value noise confined to a mid-gray band; objects
are irregular noise blobs filled with the background texture blended toward a
contrasting texture by (1 - lambda). lambda = 0 therefore guarantees at least
0.3 mean-intensity contrast by construction, lambda = 1 makes object texture
statistics identical to the background. Generation is a pure function of the
spec: every image derives its own RNG stream from (seed, split, index).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError

BG_LO, BG_HI = 0.35, 0.65
CONTRAST_BAND = 0.05


@dataclass
class SynthSpec:
    size: int = 64
    n_train: int = 16
    n_test: int = 8
    objects_min: int = 1
    objects_max: int = 3
    lam: float = 0.5
    octaves: int = 3
    seed: int = 0

    def validate(self) -> "SynthSpec":
        if not 0.0 <= self.lam <= 1.0:
            raise DataError(f"camouflage strength lambda must be in [0,1]; got {self.lam}")
        if self.size % 32 != 0 or self.size <= 0:
            raise DataError(f"image size must be a positive multiple of 32; got {self.size}")
        if not 1 <= self.objects_min <= self.objects_max <= 3:
            raise DataError("object count bounds must satisfy 1 <= min <= max <= 3")
        if self.octaves < 1:
            raise DataError("texture octave count must be >= 1")
        return self


def _value_noise(rng: np.random.Generator, size: int, freq: int) -> np.ndarray:
    """Bilinear value noise in [0,1) at the given grid frequency."""
    grid = rng.random((freq + 1, freq + 1))
    coords = np.arange(size, dtype=np.float64) * (freq / size)
    i0 = coords.astype(np.int64)
    frac = coords - i0
    i1 = np.minimum(i0 + 1, freq)
    rows = grid[i0][:, i0] * np.outer(1 - frac, 1 - frac) \
        + grid[i0][:, i1] * np.outer(1 - frac, frac) \
        + grid[i1][:, i0] * np.outer(frac, 1 - frac) \
        + grid[i1][:, i1] * np.outer(frac, frac)
    return rows


def _octave_noise(rng: np.random.Generator, size: int, octaves: int,
                  base_freq: int = 4) -> np.ndarray:
    total = np.zeros((size, size))
    amp_sum = 0.0
    for k in range(octaves):
        freq = min(base_freq * 2 ** k, size)
        amp = 0.5 ** k
        total += amp * _value_noise(rng, size, freq)
        amp_sum += amp
    total /= amp_sum
    lo, hi = total.min(), total.max()
    return (total - lo) / (hi - lo) if hi > lo else np.zeros_like(total)


def _blob_mask(rng: np.random.Generator, size: int, n_objects: int,
               octaves: int) -> np.ndarray:
    yy, xx = np.indices((size, size), dtype=np.float64)
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(n_objects):
        margin = size // 5
        cy = rng.uniform(margin, size - margin)
        cx = rng.uniform(margin, size - margin)
        radius = rng.uniform(size / 8, size / 4)
        wobble = _octave_noise(rng, size, max(1, octaves - 1))
        dist = np.hypot(yy - cy, xx - cx) / radius
        mask |= (dist + 0.8 * (wobble - 0.5)) < 1.0
    if not mask.any():  # wobble cannot erase the blob center, but stay safe
        mask[size // 2, size // 2] = True
    return mask


def _render_sample(spec: SynthSpec, rng: np.random.Generator):
    size = spec.size
    n_objects = int(rng.integers(spec.objects_min, spec.objects_max + 1))
    bg_gray = BG_LO + (BG_HI - BG_LO) * _octave_noise(rng, size, spec.octaves)
    tints = rng.uniform(-0.04, 0.04, size=3)
    bg = np.clip(bg_gray[None] + tints[:, None, None], 0.0, 1.0)

    mask = _blob_mask(rng, size, n_objects, spec.octaves)

    dark_side = bg_gray[mask].mean() >= 0.5
    band_lo = 0.0 if dark_side else 1.0 - CONTRAST_BAND
    contrast_gray = band_lo + CONTRAST_BAND * _octave_noise(rng, size, spec.octaves)
    contrast = np.clip(contrast_gray[None] + tints[:, None, None], 0.0, 1.0)

    fill = spec.lam * bg + (1.0 - spec.lam) * contrast
    image = np.where(mask[None], fill, bg)
    return image, mask, n_objects


def _save_png(arr: np.ndarray, path: Path) -> None:
    if arr.ndim == 3:
        img = Image.fromarray(np.moveaxis(arr, 0, -1))
    else:
        img = Image.fromarray(arr)
    img.save(path, format="PNG")


def gen_dataset(spec: SynthSpec, out_dir) -> dict:
    """Write images/, masks/ under train/ and test/; return (and save) the manifest."""
    spec.validate()
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out_dir}: {exc}") from exc

    manifest = {"spec": asdict(spec), "splits": {}}
    for split_idx, (split, count) in enumerate((("train", spec.n_train),
                                                ("test", spec.n_test))):
        img_dir = out_dir / split / "images"
        mask_dir = out_dir / split / "masks"
        img_dir.mkdir(parents=True, exist_ok=True)
        mask_dir.mkdir(parents=True, exist_ok=True)
        records = []
        for idx in range(count):
            rng = np.random.default_rng([spec.seed, split_idx, idx])
            image, mask, n_objects = _render_sample(spec, rng)
            stem = f"{idx:04d}"
            _save_png((np.clip(image, 0, 1) * 255.0).round().astype(np.uint8),
                      img_dir / f"{stem}.png")
            _save_png(np.where(mask, 255, 0).astype(np.uint8), mask_dir / f"{stem}.png")
            records.append({"stem": stem, "seed": [spec.seed, split_idx, idx],
                            "lam": spec.lam, "objects": n_objects})
        manifest["splits"][split] = records

    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_split(data_dir, split: str) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Load one split as float arrays: images (N,3,H,W) in [0,1], masks (N,1,H,W) in {0,1}."""
    root = Path(data_dir) / split
    img_dir, mask_dir = root / "images", root / "masks"
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise DataError(f"split {split!r} not found under {data_dir}")
    stems = sorted(p.stem for p in img_dir.glob("*.png"))
    if not stems:
        raise DataError(f"no images in {img_dir}")
    images, masks = [], []
    for stem in stems:
        mask_path = mask_dir / f"{stem}.png"
        if not mask_path.exists():
            raise DataError(f"mask missing for stem {stem!r}")
        with Image.open(img_dir / f"{stem}.png") as im:
            images.append(np.moveaxis(np.asarray(im.convert("RGB"), np.float32), -1, 0) / 255.0)
        with Image.open(mask_path) as im:
            masks.append((np.asarray(im.convert("L"), np.float32) >= 128.0)[None]
                         .astype(np.float32))
    return np.stack(images), np.stack(masks), stems
