"""Seeded synthetic road scenes.

Procedural stand-ins for dashcam frames: sky gradient, textured ground, a
perspective road wedge with a center stripe, plus per-pixel noise. Scenes are
deterministic in the seed, span a realistic dynamic range, and come with the
exact road mask, which makes them usable for calibration, numeric-budget
comparisons, and metric demos without shipping image assets.
"""
from __future__ import annotations

import numpy as np


def synthetic_road_scene(
    dims: tuple[int, int] = (280, 960), seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Returns (image, mask): float32 HxWx3 in [0, 1] and the bool road mask."""
    h, w = dims
    rng = np.random.default_rng(seed)
    ys = np.linspace(0.0, 1.0, h)[:, None]
    xs = np.linspace(0.0, 1.0, w)[None, :]

    horizon = 0.35 + 0.1 * rng.uniform(-1, 1)
    vanish_x = 0.5 + 0.15 * rng.uniform(-1, 1)
    bottom_half_width = 0.28 + 0.08 * rng.uniform(-1, 1)
    curve = 0.2 * rng.uniform(-1, 1)

    # road geometry: center drifts with depth, width shrinks to the vanish point
    depth = np.clip((ys - horizon) / (1.0 - horizon), 0.0, 1.0)
    center = vanish_x + (0.5 - vanish_x + curve * (1.0 - depth)) * depth
    half_width = bottom_half_width * depth
    mask = (ys > horizon) & (np.abs(xs - center) < half_width)

    img = np.empty((h, w, 3), dtype=np.float32)
    sky_t = np.clip(ys / max(horizon, 1e-6), 0.0, 1.0)
    img[..., 0] = 0.55 - 0.25 * sky_t
    img[..., 1] = 0.70 - 0.30 * sky_t
    img[..., 2] = 0.95 - 0.35 * sky_t

    ground = ys > horizon
    veg = 0.25 + 0.15 * rng.random((h, w))
    img[..., 0] = np.where(ground, 0.35 * veg + 0.15, img[..., 0])
    img[..., 1] = np.where(ground, 0.55 * veg + 0.25, img[..., 1])
    img[..., 2] = np.where(ground, 0.25 * veg + 0.10, img[..., 2])

    asphalt = 0.42 + 0.10 * rng.random((h, w)) + 0.12 * (1.0 - depth)
    for c in range(3):
        img[..., c] = np.where(mask, asphalt, img[..., c])
    stripe = mask & (np.abs(xs - center) < 0.06 * half_width)
    for c, level in enumerate((0.9, 0.9, 0.75)):
        img[..., c] = np.where(stripe, level, img[..., c])

    img += rng.normal(0.0, 0.015, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0, out=img), mask
