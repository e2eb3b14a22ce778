"""Overlap and surface-distance metrics for binary masks, plus per-domain aggregation."""

from __future__ import annotations

import math

import numpy as np

METRIC_NAMES = ("dc", "jc", "hd95", "asd")


def dice(pred, gt):
    """2|P & G| / (|P| + |G|); two empty masks score 1."""
    p, g = np.asarray(pred, bool), np.asarray(gt, bool)
    total = p.sum() + g.sum()
    if total == 0:
        return 1.0
    return 2.0 * np.logical_and(p, g).sum() / total


def jaccard(pred, gt):
    p, g = np.asarray(pred, bool), np.asarray(gt, bool)
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return np.logical_and(p, g).sum() / union


def boundary(mask):
    """Mask pixels with at least one 4-neighbour outside the mask (the image exterior counts as outside)."""
    m = np.asarray(mask, bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    return m & ~interior


def surface_distances(pred, gt):
    """95th-percentile Hausdorff distance and average surface distance.

    Distances are Euclidean between boundary pixel centres, by brute force.
    HD95 is the linearly interpolated 95th percentile of both directed
    distance sets pooled; ASD averages the two directed means.  When exactly
    one mask is empty both values are the image diagonal; two empty masks give 0.
    """
    p, g = np.asarray(pred, bool), np.asarray(gt, bool)
    if not p.any() and not g.any():
        return 0.0, 0.0
    if not p.any() or not g.any():
        diag = math.hypot(*p.shape)
        return diag, diag
    bp = np.argwhere(boundary(p)).astype(np.float64)
    bg = np.argwhere(boundary(g)).astype(np.float64)
    d = np.sqrt(((bp[:, None, :] - bg[None, :, :]) ** 2).sum(axis=-1))
    d_pg = d.min(axis=1)
    d_gp = d.min(axis=0)
    hd95 = float(np.percentile(np.concatenate([d_pg, d_gp]), 95))
    asd = float((d_pg.mean() + d_gp.mean()) / 2.0)
    return hd95, asd


def binary_metrics(pred, gt):
    hd95, asd = surface_distances(pred, gt)
    return {"dc": float(dice(pred, gt)), "jc": float(jaccard(pred, gt)), "hd95": hd95, "asd": asd}


def evaluate_predictions(pred_labels, gt_labels, domain_ids, n_classes):
    """Per-domain, per-foreground-class means of DC/JC/HD95/ASD.

    ``pred_labels``/``gt_labels`` are sequences of ``(H, W)`` class index maps.
    Returns ``{"domain_<k>": {"class_<c>": {...}}, "averages": {...}}`` where
    averages are taken over domains and classes with equal weight, and
    ``averages["dc_per_domain"]`` maps each domain to its class-mean Dice.
    """
    per = {}
    for pred, gt, d in zip(pred_labels, gt_labels, domain_ids):
        dom = per.setdefault(int(d), {c: [] for c in range(1, n_classes)})
        for c in range(1, n_classes):
            dom[c].append(binary_metrics(np.asarray(pred) == c, np.asarray(gt) == c))
    report = {}
    dc_per_domain = {}
    pooled = {k: [] for k in METRIC_NAMES}
    for d in sorted(per):
        entry = {}
        for c, rows in per[d].items():
            entry[f"class_{c}"] = {k: float(np.mean([r[k] for r in rows])) for k in METRIC_NAMES}
            for k in METRIC_NAMES:
                pooled[k].append(entry[f"class_{c}"][k])
        report[f"domain_{d}"] = entry
        dc_per_domain[f"domain_{d}"] = float(np.mean([v["dc"] for v in entry.values()]))
    averages = {k: float(np.mean(v)) if v else float("nan") for k, v in pooled.items()}
    averages["dc_per_domain"] = dc_per_domain
    report["averages"] = averages
    return report
