"""Context-branch visualization.

Runs an image through a model and captures the context output of one
modulation block (computed on that block's post-norm input), reduced to a
grayscale grid: channel mean, then min-max normalized to 0..255. A constant
map (e.g. zero input through a bias-free model) normalizes to all zeros.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, PreconditionError
from .model import Model, model_forward


@dataclass
class ContextMap:
    stage: int
    block: int
    grid: np.ndarray  # [h, w] uint8
    raw_min: float
    raw_max: float


def context_map(model: Model, image: np.ndarray, stage: int, block: int) -> ContextMap:
    """Capture one block's context output for a single [3, h, w] or [1, 3, h, w] image."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 3:
        img = img[None]
    if img.ndim != 4 or img.shape[0] != 1 or img.shape[1] != 3:
        raise PreconditionError(f"context_map wants one RGB image, got shape {image.shape}")
    if not 0 <= stage < len(model.stages):
        raise ConfigError(f"stage {stage} out of range (model has {len(model.stages)})")
    entries = model.stages[stage]
    mods = [i for i, e in enumerate(entries) if e.kind == "mod"]
    if block not in mods:
        raise ConfigError(
            f"stage {stage} block {block} is not a modulation block (candidates: {mods})"
        )
    _, ctx = model_forward(model, img, ctx_tap=(stage, block))
    raw = ctx[0].mean(axis=0)  # channel mean -> [h, w]
    lo, hi = float(raw.min()), float(raw.max())
    if hi > lo:
        grid = np.round((raw - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        grid = np.zeros_like(raw, dtype=np.uint8)
    return ContextMap(stage=stage, block=block, grid=grid, raw_min=lo, raw_max=hi)
