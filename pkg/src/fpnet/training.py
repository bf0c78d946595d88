"""Deterministic training loop with a CSV loss trace.

Batch order and augmentation draw from per-epoch RNG streams derived from
(seed, epoch), and the optimizer step counter is checkpointed, so a resumed
run at an epoch boundary continues the exact loss trace of an uninterrupted
one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, UsageError
from .losses import total_loss
from .model import FPNet
from .params import adam_step
from . import tensor as T
from .tensor import Tensor


@dataclass
class TraceRow:
    step: int
    l1: float
    l2: float
    l_output: float
    total: float

    def format(self) -> str:
        return (f"{self.step},{self.l1:.9g},{self.l2:.9g},"
                f"{self.l_output:.9g},{self.total:.9g}")


CSV_HEADER = "step,l1,l2,l_output,total"


def _nearest_resize2(arr: np.ndarray, out_hw: int) -> np.ndarray:
    h, w = arr.shape[-2:]
    iy = np.minimum((np.arange(out_hw) * (h / out_hw)).astype(np.int64), h - 1)
    ix = np.minimum((np.arange(out_hw) * (w / out_hw)).astype(np.int64), w - 1)
    return arr[..., iy[:, None], ix[None, :]]


def _augment(image: np.ndarray, mask: np.ndarray, rng: np.random.Generator):
    """Horizontal flip and random crop-and-resize on one (3,H,W)/(1,H,W) pair."""
    if rng.random() < 0.5:
        image = image[..., ::-1]
        mask = mask[..., ::-1]
    size = image.shape[-1]
    crop = int(round(size * rng.uniform(0.7, 1.0)))
    if crop < size:
        oy = int(rng.integers(0, size - crop + 1))
        ox = int(rng.integers(0, size - crop + 1))
        image = _nearest_resize2(image[..., oy:oy + crop, ox:ox + crop], size)
        mask = _nearest_resize2(mask[..., oy:oy + crop, ox:ox + crop], size)
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)


def train_loop(model: FPNet, images: np.ndarray, masks: np.ndarray, *,
               total_steps: int, augment: bool | None = None,
               on_step=None) -> list[TraceRow]:
    """Run total_steps optimizer steps (continuing from the store's counter)."""
    cfg = model.config
    if images.shape[0] != masks.shape[0] or images.shape[0] == 0:
        raise DataError(f"bad training set: {images.shape[0]} images, "
                        f"{masks.shape[0]} masks")
    if images.shape[2] != cfg.input_size:
        raise DataError(f"training images are {images.shape[2]}px but the model "
                        f"expects {cfg.input_size}px")
    if augment is None:
        augment = cfg.augment
    n = images.shape[0]
    batch = min(cfg.batch_size, n)
    steps_per_epoch = max(1, (n + batch - 1) // batch)
    start_step = model.store.step_count
    if start_step % steps_per_epoch != 0:
        raise UsageError(f"resume step {start_step} is not an epoch boundary "
                         f"(steps per epoch: {steps_per_epoch})")

    rows: list[TraceRow] = []
    step = start_step
    epoch = start_step // steps_per_epoch
    while step < start_step + total_steps:
        rng = np.random.default_rng([cfg.seed, 1000 + epoch])
        order = rng.permutation(n)
        for lo in range(0, n, batch):
            if step >= start_step + total_steps:
                break
            idx = order[lo:lo + batch]
            imgs = images[idx]
            gts = masks[idx]
            if augment:
                pairs = [_augment(imgs[i], gts[i], rng) for i in range(len(idx))]
                imgs = np.stack([p[0] for p in pairs])
                gts = np.stack([p[1] for p in pairs])
            preds = model.forward(Tensor(imgs), training=True)
            loss = total_loss(preds.s1, preds.s2, preds.s_output, gts)
            T.backward(loss.tensor)
            adam_step(model.store, cfg.lr, cfg.weight_decay)
            step = model.store.step_count
            row = TraceRow(step=step, l1=loss.l1, l2=loss.l2,
                           l_output=loss.l_output, total=loss.total)
            rows.append(row)
            if on_step is not None:
                on_step(row)
        epoch += 1
    return rows


def write_trace(path, rows: list[TraceRow], provenance: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in provenance.items():
            fh.write(f"# {key}={value}\n")
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(row.format() + "\n")
