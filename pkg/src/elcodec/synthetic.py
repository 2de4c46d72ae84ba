"""Procedural 8-bit luma content for desk-scale corpora and test clips."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

__all__ = ["textured_image", "textured_sequence", "constant_sequence", "write_corpus"]


def _canvas(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = 128.0 + rng.uniform(-40, 40) * (xx / w - 0.5) + rng.uniform(-40, 40) * (yy / h - 0.5)

    # oriented gratings of mixed frequency
    for _ in range(rng.integers(2, 5)):
        theta = rng.uniform(0, np.pi)
        period = rng.uniform(4.0, 40.0)
        amp = rng.uniform(6, 28)
        phase = rng.uniform(0, 2 * np.pi)
        u = xx * np.cos(theta) + yy * np.sin(theta)
        img += amp * np.sin(2 * np.pi * u / period + phase)

    # flat-shaded shapes give sharp edges
    for _ in range(rng.integers(4, 10)):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(6, h / 4), rng.uniform(6, w / 4)
        level = rng.uniform(-60, 60)
        if rng.random() < 0.5:
            m = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            m = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        img[m] += level

    # band-limited noise texture
    noise = gaussian_filter(rng.normal(0, 1, (h, w)), rng.uniform(0.6, 2.0))
    img += rng.uniform(4, 14) * noise / (noise.std() + 1e-12)
    return img


def textured_image(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    return np.clip(np.rint(_canvas(rng, height, width)), 0, 255).astype(np.uint8)


def textured_sequence(seed: int, n_frames: int, height: int, width: int, speed: float = 1.5) -> list:
    """Frames cut from one larger canvas by a window that pans at ``speed`` px/frame."""
    rng = np.random.default_rng(seed)
    margin = int(np.ceil(speed * n_frames)) + 2
    big = _canvas(rng, height + margin, width + margin)
    angle = rng.uniform(0, np.pi / 2)
    frames = []
    for k in range(n_frames):
        dy = int(round(k * speed * np.sin(angle)))
        dx = int(round(k * speed * np.cos(angle)))
        crop = big[dy : dy + height, dx : dx + width]
        frames.append(np.clip(np.rint(crop), 0, 255).astype(np.uint8))
    return frames


def constant_sequence(value: int, n_frames: int, height: int, width: int) -> list:
    return [np.full((height, width), value, dtype=np.uint8) for _ in range(n_frames)]


def write_corpus(directory, count: int, size: int = 128, seed: int = 0) -> list[Path]:
    """Write ``count`` PNG images into ``directory``."""
    from PIL import Image

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for k in range(count):
        p = d / f"img_{k:03d}.png"
        Image.fromarray(textured_image(rng, size, size), mode="L").save(p)
        paths.append(p)
    return paths
