"""Procedural captioned scenes for desk-scale experiments.

Each scene is a single bright colored shape on a dark background, rendered
from a signed distance function with a soft edge.  Captions are short
templated phrases naming the color and shape, so a small text encoder can
learn them from a few hundred samples.  Shape brightness ranges overlap
between the transmission and reflection slots, which keeps layer assignment
ambiguous without language guidance.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .synthdata import SourcePair

PALETTE = {
    "red": (0.85, 0.10, 0.10),
    "green": (0.10, 0.75, 0.15),
    "blue": (0.15, 0.25, 0.90),
    "yellow": (0.90, 0.85, 0.10),
    "magenta": (0.85, 0.15, 0.80),
    "cyan": (0.10, 0.80, 0.85),
    "orange": (0.95, 0.55, 0.05),
    "white": (0.90, 0.90, 0.90),
}

SHAPES = ("circle", "square", "triangle", "ring", "bar", "cross")

CAPTION_TEMPLATES = (
    "a {color} {shape}",
    "the {color} {shape} on a dark background",
    "one bright {color} {shape}",
)


def _shape_sdf(shape: str, x: np.ndarray, y: np.ndarray, size: float) -> np.ndarray:
    """Signed distance to the shape boundary; negative inside.

    Args:
        shape: one of SHAPES.
        x, y: coordinate grids centered on the shape, in [-1, 1] units.
        size: shape radius in the same units.
    """
    if shape == "circle":
        return np.hypot(x, y) - size
    if shape == "square":
        return np.maximum(np.abs(x), np.abs(y)) - size
    if shape == "triangle":
        # Equilateral, apex up: intersection of three half planes.
        k = np.sqrt(3.0)
        d1 = y - size
        d2 = -0.5 * y - (k / 2.0) * x - size * 0.5
        d3 = -0.5 * y + (k / 2.0) * x - size * 0.5
        return np.maximum(d1, np.maximum(d2, d3))
    if shape == "ring":
        return np.abs(np.hypot(x, y) - size * 0.8) - size * 0.3
    if shape == "bar":
        return np.maximum(np.abs(x) - size, np.abs(y) - size * 0.35)
    if shape == "cross":
        horiz = np.maximum(np.abs(x) - size, np.abs(y) - size * 0.35)
        vert = np.maximum(np.abs(x) - size * 0.35, np.abs(y) - size)
        return np.minimum(horiz, vert)
    raise ValueError(f"unknown shape {shape!r}")


def render_scene(
    shape: str,
    color: str,
    rng: np.random.Generator,
    size_px: int = 96,
    edge_px: float = 4.0,
) -> np.ndarray:
    """Render one shape scene as an (H, W, 3) float image in [0, 1].

    ``edge_px`` controls the soft-edge width in pixels; wider edges keep the
    scenes band-limited, which makes desk-scale models easier to fit.
    """
    rgb = PALETTE[color]
    background = float(rng.uniform(0.03, 0.18))
    brightness = float(rng.uniform(0.55, 1.0) / max(rgb))
    center_x = float(rng.uniform(-0.3, 0.3))
    center_y = float(rng.uniform(-0.3, 0.3))
    size = float(rng.uniform(0.35, 0.6))
    angle = float(rng.uniform(0.0, 2.0 * np.pi))

    coords = np.linspace(-1.0, 1.0, size_px)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    x = xx - center_x
    y = yy - center_y
    xr = np.cos(angle) * x - np.sin(angle) * y
    yr = np.sin(angle) * x + np.cos(angle) * y

    sdf = _shape_sdf(shape, xr, yr, size)
    edge = edge_px / size_px
    mask = np.clip(0.5 - sdf / (2.0 * edge), 0.0, 1.0)  # (H, W) soft coverage

    img = np.empty((size_px, size_px, 3), dtype=np.float64)
    for c in range(3):
        fg = min(brightness * rgb[c], 1.0)
        img[..., c] = background + mask * (fg - background)
    return np.clip(img, 0.0, 1.0)


def make_toy_sources(
    n_sources: int,
    seed: int,
    size_px: int = 96,
    edge_px: float = 4.0,
    shapes: Sequence[str] = SHAPES,
    colors: Sequence[str] = tuple(PALETTE),
) -> list[SourcePair]:
    """Generate ``n_sources`` captioned single-shape scenes.

    Shape and color cycle through all combinations before repeating, so even
    small corpora cover the full vocabulary.  Caption order is shuffled per
    scene; every scene carries all three template variants.
    """
    combos = [(s, c) for s in shapes for c in colors]
    pairs = []
    for i in range(n_sources):
        rng = np.random.default_rng((seed, i))
        shape, color = combos[i % len(combos)]
        image = render_scene(shape, color, rng, size_px=size_px, edge_px=edge_px)
        captions = [t.format(color=color, shape=shape) for t in CAPTION_TEMPLATES]
        order = rng.permutation(len(captions))
        pairs.append(SourcePair(
            image=image,
            captions=tuple(captions[k] for k in order),
            source_id=f"toy_{i:04d}_{color}_{shape}",
        ))
    return pairs
