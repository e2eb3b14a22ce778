"""Loss terms, confidence gating and warm-up schedules.

All segmentation losses accept a single map ``(H, W, C)`` or a batch
``(N, H, W, C)``; batched values are the mean of the per-element losses.
Weight maps have the matching spatial shape without the channel axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, TrainingIntegrityError
from .grid import class_indices

PROB_EPS = 1e-7
DICE_SMOOTH = 1e-5


def confidence_weight(p_w, tau=0.95):
    """1 where the most probable class reaches ``tau``, else 0."""
    return (np.max(np.asarray(p_w), axis=-1) >= tau).astype(np.float64)


def _batched(y, p, w):
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    single = y.ndim == 3
    if single:
        y, p = y[None], p[None]
    if w is None:
        w = np.ones(y.shape[:-1])
    else:
        w = np.asarray(w, dtype=np.float64)
        if single:
            w = w[None]
    if y.shape != p.shape or w.shape != y.shape[:-1]:
        raise DimensionError(f"loss operands disagree: y {y.shape}, p {p.shape}, w {w.shape}")
    return y, p, w


def _ce_per_element(y, p, w):
    hw = y.shape[1] * y.shape[2]
    logp = np.log(np.clip(p, PROB_EPS, 1.0 - PROB_EPS))
    return -np.einsum("nhw,nhwc->n", w, y * logp) / hw


def _dice_per_element(y, p, w):
    wf = w[..., None]
    num = 2.0 * np.sum(wf * p * y, axis=(1, 2)) + DICE_SMOOTH
    den = np.sum(wf * (p * p + y * y), axis=(1, 2)) + DICE_SMOOTH
    return np.mean(1.0 - num[:, 1:] / den[:, 1:], axis=1)


def weighted_ce(y, p, w=None):
    """Pixel-weighted cross entropy, normalized by the pixel count (not by the weight mass)."""
    y, p, w = _batched(y, p, w)
    return float(np.mean(_ce_per_element(y, p, w)))


def weighted_dice(y, p, w=None):
    """Pixel-weighted soft Dice loss averaged over the foreground channels (1..C-1)."""
    y, p, w = _batched(y, p, w)
    if y.shape[-1] < 2:
        raise DimensionError("dice loss needs a background and at least one foreground channel")
    return float(np.mean(_dice_per_element(y, p, w)))


def segmentation_loss(y, p, w=None):
    """Weighted CE plus weighted Dice: the form shared by every consistency term."""
    return weighted_ce(y, p, w) + weighted_dice(y, p, w)


def weighted_ce_grad(y, p, w=None):
    """Derivative of :func:`weighted_ce` with respect to ``p`` (zero where ``p`` is clipped)."""
    yb, pb, wb = _batched(y, p, w)
    n, h, wd = yb.shape[:3]
    inside = (pb > PROB_EPS) & (pb < 1.0 - PROB_EPS)
    g = -wb[..., None] * yb / (n * h * wd * np.clip(pb, PROB_EPS, None)) * inside
    return g.reshape(np.shape(p))


def weighted_ce_logit_grad(y, p, w=None):
    """Derivative of the unclipped cross entropy with respect to the softmax logits.

    This is the fused softmax/CE path; it stays informative where ``p`` is
    saturated and the clipped derivative would vanish.
    """
    yb, pb, wb = _batched(y, p, w)
    n, h, wd = yb.shape[:3]
    g = wb[..., None] * (pb * yb.sum(axis=-1, keepdims=True) - yb) / (n * h * wd)
    return g.reshape(np.shape(p))


def weighted_dice_grad(y, p, w=None):
    """Derivative of :func:`weighted_dice` with respect to ``p``."""
    yb, pb, wb = _batched(y, p, w)
    n, c = yb.shape[0], yb.shape[-1]
    wf = wb[..., None]
    num = 2.0 * np.sum(wf * pb * yb, axis=(1, 2), keepdims=True) + DICE_SMOOTH
    den = np.sum(wf * (pb * pb + yb * yb), axis=(1, 2), keepdims=True) + DICE_SMOOTH
    g = -(2.0 * wf * yb * den - num * 2.0 * wf * pb) / (den * den)
    g[..., 0] = 0.0
    g /= n * (c - 1)
    return g.reshape(np.shape(p))


def segmentation_loss_grad(y, p, w=None, fused=True):
    """Value and gradient pieces of :func:`segmentation_loss`.

    Returns ``(value, grad_probs, grad_logits)``.  With ``fused`` the CE part is
    expressed on the logits; otherwise everything is on the probabilities and
    ``grad_logits`` is zero.
    """
    value = segmentation_loss(y, p, w)
    g_dice = weighted_dice_grad(y, p, w)
    if fused:
        return value, g_dice, weighted_ce_logit_grad(y, p, w)
    return value, g_dice + weighted_ce_grad(y, p, w), np.zeros_like(g_dice)


def intermediate_losses(triple, p_s_in, p_s_out):
    """Consistency losses of the student on both copy-paste intermediates."""
    l_in = segmentation_loss(triple.pseudo_in, p_s_in, triple.weight_in)
    l_out = segmentation_loss(triple.pseudo_out, p_s_out, triple.weight_out)
    return l_in, l_out


def ensemble_weight(p_hat, p_hat_mg, w, w_mg):
    """Keep pixels where both pseudo labels agree on the class and both are confident."""
    agree = (class_indices(p_hat) == class_indices(p_hat_mg)).astype(np.float64)
    return agree * np.asarray(w, dtype=np.float64) * np.asarray(w_mg, dtype=np.float64)


def symmetric_loss(p_hat_mg, p_s, w_sym):
    """Guidance of the student's prediction on the unlabeled view by the merged pseudo label."""
    return segmentation_loss(p_hat_mg, p_s, w_sym)


def supervised_loss(y_w, p_x):
    return segmentation_loss(y_w, p_x, None)


def lambda_schedule(t, t_total):
    """Gaussian-style warm-up exp(-5 (1 - t/t_total))."""
    if t_total <= 0:
        return 1.0
    return math.exp(-5.0 * (1.0 - min(t, t_total) / t_total))


@dataclass(frozen=True)
class LossBundle:
    l_s: float
    l_in: float
    l_out: float
    l_sym: float
    l_total: float
    lam: float


def total_loss(l_s, l_in, l_out, l_sym, t, t_total):
    """Combine the terms as ``l_s + lam*(l_in + l_out + lam*l_sym)``."""
    for name, value in (("l_s", l_s), ("l_in", l_in), ("l_out", l_out), ("l_sym", l_sym)):
        if not math.isfinite(value):
            raise TrainingIntegrityError(name, value)
    lam = lambda_schedule(t, t_total)
    l_total = l_s + lam * (l_in + l_out + lam * l_sym)
    if not math.isfinite(l_total):
        raise TrainingIntegrityError("l_total", l_total)
    return LossBundle(float(l_s), float(l_in), float(l_out), float(l_sym), float(l_total), lam)
