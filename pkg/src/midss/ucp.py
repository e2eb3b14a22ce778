"""Unified copy-paste between a labeled and an unlabeled sample.

A single centered rectangle ``m`` is pasted in both directions at once: the
"in" intermediate carries labeled content inside ``m``, the "out"
intermediate carries unlabeled content inside ``m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, DimensionError
from .grid import elementwise_mix


@dataclass(frozen=True)
class CenterMask:
    grid: np.ndarray
    ratio: tuple


def center_mask(height, width, r_h, r_w):
    """Binary mask with a centered ``round(r_h*H) x round(r_w*W)`` block of ones.

    Sizes round half up; the block starts at ``floor((H - h) / 2)``.
    """
    h = min(height, int(math.floor(r_h * height + 0.5)))
    w = min(width, int(math.floor(r_w * width + 0.5)))
    top, left = (height - h) // 2, (width - w) // 2
    grid = np.zeros((height, width))
    grid[top : top + h, left : left + w] = 1.0
    return CenterMask(grid, (float(r_h), float(r_w)))


def generate_center_mask(height, width, rng, ratio_range=(1 / 3, 2 / 3)):
    lo, hi = ratio_range
    if not 0.0 <= lo <= hi <= 1.0:
        raise ConfigError(f"ratio_range must satisfy 0 <= lo <= hi <= 1, got {ratio_range}")
    r_h = rng.uniform(lo, hi)
    r_w = rng.uniform(lo, hi)
    return center_mask(height, width, r_h, r_w)


@dataclass(frozen=True)
class MixedTriple:
    sample_in: np.ndarray
    sample_out: np.ndarray
    prob_in: np.ndarray
    prob_out: np.ndarray
    pseudo_in: np.ndarray
    pseudo_out: np.ndarray
    weight_in: np.ndarray
    weight_out: np.ndarray


def _mask_grid(m):
    return m.grid if isinstance(m, CenterMask) else np.asarray(m, dtype=np.float64)


def unified_copy_paste(x_w, y_w, u_s, p_w, p_hat, w, m):
    """Build both copy-paste intermediates with their probabilities, pseudo labels and weights.

    Labeled regions get weight 1; unlabeled regions inherit the confidence
    weight ``w``.
    """
    mask = _mask_grid(m)
    x_w, u_s = np.asarray(x_w, dtype=np.float64), np.asarray(u_s, dtype=np.float64)
    if x_w.shape[:-1] != u_s.shape[:-1] or np.shape(y_w)[:-1] != x_w.shape[:-1] or np.shape(w) != x_w.shape[:-1]:
        raise DimensionError("unified copy-paste operands must share spatial dimensions")
    w = np.asarray(w, dtype=np.float64)
    return MixedTriple(
        sample_in=elementwise_mix(x_w, u_s, mask),
        sample_out=elementwise_mix(u_s, x_w, mask),
        prob_in=elementwise_mix(y_w, p_w, mask),
        prob_out=elementwise_mix(p_w, y_w, mask),
        pseudo_in=elementwise_mix(y_w, p_hat, mask),
        pseudo_out=elementwise_mix(p_hat, y_w, mask),
        weight_in=elementwise_mix(1.0, w[..., None], mask)[..., 0],
        weight_out=elementwise_mix(w[..., None], 1.0, mask)[..., 0],
    )


def merge_unlabeled_regions(p_hat_w_out, p_hat_w_in, m):
    """Reassemble the unlabeled image's view from the two intermediates.

    Inside the mask the unlabeled content lives in the "out" intermediate,
    outside it lives in the "in" intermediate.  Works for one-hot maps
    ``(..., H, W, C)`` and for weight maps ``(..., H, W)``.
    """
    mask = _mask_grid(m)
    a = np.asarray(p_hat_w_out, dtype=np.float64)
    b = np.asarray(p_hat_w_in, dtype=np.float64)
    if a.shape == mask.shape and b.shape == mask.shape:
        return elementwise_mix(a[..., None], b[..., None], mask)[..., 0]
    return elementwise_mix(a, b, mask)
