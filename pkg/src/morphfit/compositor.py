"""Deterministic compositing of a re-rendered face into the source image.

The rendered coverage mask is dilated with a square kernel; inside coverage the
output is an alpha blend weighted by per-pixel geometric change, across the dilated
margin it feathers linearly back to the input, and outside the dilated mask the
input passes through bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt

from .errors import SizingError
from .model import BilinearModel, Shape
from .raster import Image, Texture, render


@dataclass
class BlendConfig:
    kernel_size: int = 12        # square dilation window
    sigma2: float = 4.0          # mm^2 falloff of the geometry-change alpha
    alpha_weights_input: bool = True  # alpha multiplies the input (flip to weight the render)


def dilate(mask: np.ndarray, kernel_size: int) -> np.ndarray:
    """Binary dilation with a square window.

    out[y, x] = OR of mask[y + dy, x + dx] for dy, dx in [-(k//2), k - 1 - k//2];
    out-of-range input reads as False. Even kernels are therefore biased one pixel
    toward the top-left, matching a size-k window with origin at index k//2.
    """
    if kernel_size < 1:
        raise SizingError("kernel size must be >= 1")
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise SizingError("mask must be 2-D")
    h, w = m.shape
    out = np.zeros_like(m)
    k = kernel_size
    for dy in range(-(k // 2), k - k // 2):
        ys_lo, ys_hi = max(0, -dy), min(h, h - dy)
        src_lo, src_hi = max(0, dy), min(h, h + dy)
        if ys_lo >= ys_hi:
            continue
        for dx in range(-(k // 2), k - k // 2):
            xs_lo, xs_hi = max(0, -dx), min(w, w - dx)
            sx_lo, sx_hi = max(0, dx), min(w, w + dx)
            if xs_lo >= xs_hi:
                continue
            out[ys_lo:ys_hi, xs_lo:xs_hi] |= m[src_lo:src_hi, sx_lo:sx_hi]
    return out


def margin_band(mask: np.ndarray, kernel_size: int) -> np.ndarray:
    """Dilated-minus-original band around a mask."""
    return dilate(mask, kernel_size) & ~np.asarray(mask, dtype=bool)


def vertex_distance_plane(model: BilinearModel, shape_src: Shape, shape_tgt: Shape,
                          pose, size):
    """Per-pixel ||x_src - x_tgt|| (mm) rasterized at the target shape's projection.

    Returns (plane, coverage) where coverage is the target's raw raster mask."""
    if shape_src.n_vertices != shape_tgt.n_vertices:
        raise SizingError("source and target shapes must share the vertex count")
    distances = np.linalg.norm(
        shape_src.as_points() - shape_tgt.as_points(), axis=1
    )
    # Geometry-only pass: an all-valid stub texture, only the scalar plane matters.
    stub = Texture(Image(np.zeros((4, 4, 3))), np.ones((4, 4), dtype=bool))
    result = render(shape_tgt, stub, pose, model, size, vertex_scalar=distances)
    return result.scalar_plane, result.geometry_mask


def blend(rendered: Image, source: Image, coverage: np.ndarray,
          distance_plane: np.ndarray, config: BlendConfig | None = None) -> Image:
    """Composite a rendered face into the source image.

    Inside coverage: out = alpha * source + (1 - alpha) * rendered with
    alpha = exp(-d^2 / sigma2), so unchanged geometry (d = 0) keeps source pixels.
    Across the dilated margin the output feathers linearly from rendered to source
    along the distance to coverage; outside the dilated mask the source passes
    through bit-identical. The orientation flag swaps which image alpha weights.
    """
    config = config or BlendConfig()
    cov = np.asarray(coverage, dtype=bool)
    if rendered.data.shape != source.data.shape:
        raise SizingError("rendered and source images must share a shape")
    if cov.shape != source.data.shape[:2]:
        raise SizingError("coverage mask must match the image extent")
    if np.asarray(distance_plane).shape != cov.shape:
        raise SizingError("distance plane must match the image extent")
    if config.sigma2 <= 0:
        raise SizingError("sigma2 must be positive")

    alpha = np.exp(-np.asarray(distance_plane, dtype=np.float64) ** 2 / config.sigma2)
    if not config.alpha_weights_input:
        alpha = 1.0 - alpha

    out = source.data.copy()
    a = alpha[cov][:, None]
    out[cov] = a * source.data[cov] + (1.0 - a) * rendered.data[cov]

    dilated = dilate(cov, config.kernel_size)
    margin = dilated & ~cov
    if margin.any():
        dist = distance_transform_edt(~cov)
        feather_width = max(config.kernel_size // 2, 1)
        t = np.clip(dist[margin] / feather_width, 0.0, 1.0)[:, None]
        out[margin] = (1.0 - t) * rendered.data[margin] + t * source.data[margin]
    return Image(out)
