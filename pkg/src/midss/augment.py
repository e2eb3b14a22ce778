"""Weak (geometric) and strong (geometric + intensity) augmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import as_grid


@dataclass(frozen=True)
class AugmentRanges:
    rotation: float = 25.0
    crop_pad: int = 8
    flip_prob: float = 0.5
    elastic_max: float = 4.0
    elastic_sigma: float = 3.0
    brightness: float = 0.2
    contrast: float = 0.2
    blur_sigma: float = 1.0


@dataclass(frozen=True)
class GeoParams:
    crop_offset: tuple = (0, 0)
    rotation: float = 0.0
    flip_h: bool = False
    flip_v: bool = False
    elastic_field: np.ndarray | None = field(default=None, repr=False)

    def is_identity(self):
        no_elastic = self.elastic_field is None or not np.any(self.elastic_field)
        return self.crop_offset == (0, 0) and self.rotation == 0 and not self.flip_h and not self.flip_v and no_elastic


@dataclass(frozen=True)
class IntensityParams:
    brightness_shift: float = 0.0
    contrast_scale: float = 1.0
    blur_sigma: float = 0.0


def gaussian_kernel(sigma):
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(a, sigma):
    """Separable Gaussian blur over the first two axes, truncated at 3 sigma, border-replicated."""
    a = np.asarray(a, dtype=np.float64)
    if sigma <= 0:
        return a.copy()
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    out = a
    for axis in (0, 1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode="edge")
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for i, kv in enumerate(k):
            acc += kv * np.take(padded, np.arange(i, i + n), axis=axis)
        out = acc
    return out


def sample_weak(rng, shape, ranges=AugmentRanges()):
    """Draw geometric parameters for an ``(H, W)`` grid; every draw is made even for zero ranges."""
    h, w = shape[:2]
    pad = int(ranges.crop_pad)
    dy, dx = (int(v) for v in rng.integers(-pad, pad + 1, size=2))
    rotation = float(rng.uniform(-ranges.rotation, ranges.rotation))
    flip_h = bool(rng.random() < ranges.flip_prob)
    flip_v = bool(rng.random() < ranges.flip_prob)
    magnitude = float(rng.uniform(0.0, ranges.elastic_max))
    noise = gaussian_blur(rng.normal(size=(h, w, 2)), ranges.elastic_sigma)
    peak = np.max(np.abs(noise))
    elastic = noise * (magnitude / peak) if peak > 0 else np.zeros_like(noise)
    return GeoParams((dy, dx), rotation, flip_h, flip_v, elastic)


def sample_strong(rng, ranges=AugmentRanges()):
    return IntensityParams(
        brightness_shift=float(rng.uniform(-ranges.brightness, ranges.brightness)),
        contrast_scale=float(rng.uniform(1.0 - ranges.contrast, 1.0 + ranges.contrast)),
        blur_sigma=float(rng.uniform(0.0, ranges.blur_sigma)),
    )


def _source_coords(h, w, g):
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    y = rows - g.crop_offset[0] - cy
    x = cols - g.crop_offset[1] - cx
    theta = math.radians(g.rotation)
    s, c = math.sin(theta), math.cos(theta)
    sy = cy + s * x + c * y
    sx = cx + c * x - s * y
    if g.flip_h:
        sx = (w - 1) - sx
    if g.flip_v:
        sy = (h - 1) - sy
    if g.elastic_field is not None:
        sy = sy + g.elastic_field[..., 0]
        sx = sx + g.elastic_field[..., 1]
    return np.clip(sy, 0, h - 1), np.clip(sx, 0, w - 1)


def apply_geo(grid, g, interpolation="bilinear"):
    """Resample ``grid`` under ``g``.  Out-of-bounds samples take the nearest border value.

    Use ``"nearest"`` for label maps; the output of a one-hot input stays one-hot.
    """
    a = as_grid(grid)
    h, w = a.shape[:2]
    if g.is_identity():
        return a.copy()
    sy, sx = _source_coords(h, w, g)
    if interpolation == "nearest":
        iy = np.floor(sy + 0.5).astype(np.intp)
        ix = np.floor(sx + 0.5).astype(np.intp)
        return a[iy, ix]
    if interpolation != "bilinear":
        raise ValueError(f"unknown interpolation {interpolation!r}")
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[..., None]
    fx = (sx - x0)[..., None]
    top = a[y0, x0] * (1 - fx) + a[y0, x1] * fx
    bottom = a[y1, x0] * (1 - fx) + a[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def apply_strong(image, p):
    """Blur, rescale contrast, shift brightness, clamp to [-1, 1]."""
    img = as_grid(image, "image")
    return np.clip(p.contrast_scale * gaussian_blur(img, p.blur_sigma) + p.brightness_shift, -1.0, 1.0)


def weak_labeled(x, y, rng, ranges=AugmentRanges()):
    """Weak view of a labeled pair; image and label share the geometric draw."""
    g = sample_weak(rng, np.shape(x), ranges)
    return apply_geo(x, g, "bilinear"), apply_geo(y, g, "nearest")


def make_views(u, rng, ranges=AugmentRanges(), return_params=False):
    """Weak and strong views of an unlabeled image under one shared geometric transform."""
    g = sample_weak(rng, np.shape(u), ranges)
    u_w = apply_geo(u, g, "bilinear")
    p = sample_strong(rng, ranges)
    u_s = apply_strong(u_w, p)
    if return_params:
        return u_w, u_s, g, p
    return u_w, u_s
