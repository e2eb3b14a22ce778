"""Synthetic multi-domain segmentation data, PGM/manifest I/O and batch sampling.

Every sample is an ellipse "organ" (with a concentric inner ellipse when
there are three or more classes) rendered as a label map, then styled per
domain: gamma, optional contrast flip, low-frequency texture and white noise.
Geometry is shared across domains; only the style differs.
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import ConfigError, ParseError
from .grid import class_indices, fork_rng, one_hot

# geometry ranges, as fractions of the image side
CENTER_RANGE = (0.38, 0.62)
RADIUS_RANGE = (0.2, 0.32)
INNER_SCALE_RANGE = (0.45, 0.65)
BASE_LEVELS = (0.25, 0.6, 0.95)


@dataclass(frozen=True)
class DomainStyle:
    domain_id: int
    gamma: float = 1.0
    contrast_flip: bool = False
    texture_amplitude: float = 0.0
    texture_cutoff_fraction: float = 0.15
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if not 0 < self.texture_cutoff_fraction <= 0.5:
            raise ConfigError(f"texture_cutoff_fraction must lie in (0, 0.5], got {self.texture_cutoff_fraction}")
        if self.noise_sigma < 0 or self.texture_amplitude < 0:
            raise ConfigError("noise_sigma and texture_amplitude must be >= 0")


@dataclass(frozen=True)
class DatasetSpec:
    K: int = 3
    labeled_domain: int = 1
    n_labeled: int = 8
    n_unlabeled_per_domain: int | tuple = 40
    n_test_per_domain: int = 20
    H: int = 16
    W: int = 16
    C: int = 2
    seed: int = 0

    def unlabeled_counts(self):
        n = self.n_unlabeled_per_domain
        counts = [int(n)] * self.K if np.isscalar(n) else [int(v) for v in n]
        if len(counts) != self.K:
            raise ConfigError(f"need {self.K} unlabeled counts, got {len(counts)}")
        return counts

    def validate(self):
        if self.K < 1 or not 1 <= self.labeled_domain <= self.K:
            raise ConfigError(f"labeled_domain must lie in 1..{self.K}, got {self.labeled_domain}")
        if self.n_labeled < 1:
            raise ConfigError("n_labeled must be >= 1")
        if sum(self.unlabeled_counts()) <= self.n_labeled:
            raise ConfigError("there must be more unlabeled than labeled images")
        if self.C < 2 or self.H < 1 or self.W < 1:
            raise ConfigError("need C >= 2 and positive image size")


@dataclass
class SampleRecord:
    """One image with its domain and case id.

    ``label`` is set for labeled and test records only.  ``reference_label``
    holds the hidden ground truth of an unlabeled synthetic image; it feeds
    pseudo-label quality diagnostics and is never used as a training target.
    """

    image: np.ndarray
    label: np.ndarray | None
    domain_id: int
    case_id: int
    reference_label: np.ndarray | None = field(default=None, repr=False)


def default_styles(K=3):
    """Domain 1 is the plain rendering; further domains add gamma, texture, noise and contrast changes.

    The first three presets form the standard benchmark; contrast inversion only
    appears from domain 4 on.
    """
    presets = [
        dict(gamma=1.0, texture_amplitude=0.05, noise_sigma=0.02),
        dict(gamma=2.5, texture_amplitude=0.3, texture_cutoff_fraction=0.1, noise_sigma=0.04),
        dict(gamma=0.5, texture_amplitude=0.15, noise_sigma=0.2),
        dict(gamma=0.35, contrast_flip=True, texture_amplitude=0.2, noise_sigma=0.06),
        dict(gamma=1.8, texture_amplitude=0.5, texture_cutoff_fraction=0.08, noise_sigma=0.03),
    ]
    return [DomainStyle(domain_id=k + 1, **presets[k % len(presets)]) for k in range(K)]


# -- rendering -------------------------------------------------------------------


def _ellipse(h, w, cy, cx, ry, rx, angle):
    rows, cols = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    y, x = rows - cy, cols - cx
    c, s = math.cos(angle), math.sin(angle)
    u = c * x + s * y
    v = -s * x + c * y
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def render_anatomy(h, w, n_classes, rng):
    """Draw a random nested-ellipse label map ``(H, W)`` of class indices."""
    cy = rng.uniform(*CENTER_RANGE) * h
    cx = rng.uniform(*CENTER_RANGE) * w
    ry = rng.uniform(*RADIUS_RANGE) * h
    rx = rng.uniform(*RADIUS_RANGE) * w
    angle = rng.uniform(0.0, math.pi)
    inner = rng.uniform(*INNER_SCALE_RANGE)
    labels = _ellipse(h, w, cy, cx, ry, rx, angle).astype(np.int64)
    if n_classes >= 3:
        labels[_ellipse(h, w, cy, cx, ry * inner, rx * inner, angle)] = 2
    return labels


def _renormalize(a):
    lo, hi = a.min(), a.max()
    if hi - lo <= 0:
        return np.zeros_like(a)
    return 2.0 * (a - lo) / (hi - lo) - 1.0


def low_frequency_texture(h, w, cutoff, rng):
    """Random-phase field using only frequencies below ``cutoff`` (cycles/pixel); peak |value| is 1."""
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    band = (np.hypot(fy, fx) <= cutoff) & ((fy != 0) | (fx != 0))
    phases = rng.uniform(0.0, 2 * np.pi, size=(h, w))
    field_ = np.fft.ifft2(band * np.exp(1j * phases)).real
    peak = np.max(np.abs(field_))
    return field_ / peak if peak > 0 else field_


def style_image(labels, style, rng):
    """Render class indices through a domain style into an image in [-1, 1]."""
    h, w = labels.shape
    levels = np.asarray(BASE_LEVELS)
    base = levels[np.minimum(labels, len(levels) - 1)]
    img = base**style.gamma
    if style.contrast_flip:
        img = -img
    texture = low_frequency_texture(h, w, style.texture_cutoff_fraction, rng)
    noise = rng.normal(0.0, 1.0, size=(h, w))
    img = img + style.texture_amplitude * texture + style.noise_sigma * noise
    return _renormalize(img)[:, :, None]


def _make_sample(spec, style, index, labeled):
    rng = fork_rng(spec.seed, index)
    labels = render_anatomy(spec.H, spec.W, spec.C, rng)
    image = style_image(labels, style, rng)
    onehot = one_hot(labels, spec.C)
    if labeled:
        return SampleRecord(image, onehot, style.domain_id, index)
    return SampleRecord(image, None, style.domain_id, index, reference_label=onehot)


def generate_dataset(spec, styles=None):
    """Build ``(labeled, unlabeled, test)`` record lists.

    Sample ``i`` (its index doubles as the case id) is drawn from
    ``fork_rng(spec.seed, i)``, so the output does not depend on generation order.
    """
    spec.validate()
    styles = list(styles) if styles is not None else default_styles(spec.K)
    if len(styles) != spec.K:
        raise ConfigError(f"expected {spec.K} domain styles, got {len(styles)}")
    by_id = {s.domain_id: s for s in styles}
    if sorted(by_id) != list(range(1, spec.K + 1)):
        raise ConfigError("domain styles must carry ids 1..K")
    index = 0
    labeled, unlabeled, test = [], [], []
    for _ in range(spec.n_labeled):
        labeled.append(_make_sample(spec, by_id[spec.labeled_domain], index, True))
        index += 1
    for d, count in enumerate(spec.unlabeled_counts(), start=1):
        for _ in range(count):
            unlabeled.append(_make_sample(spec, by_id[d], index, False))
            index += 1
    for d in range(1, spec.K + 1):
        for _ in range(spec.n_test_per_domain):
            test.append(_make_sample(spec, by_id[d], index, True))
            index += 1
    return labeled, unlabeled, test


def sample_batch(labeled, unlabeled, batch_size_labeled, batch_size_unlabeled, rng):
    """Uniform draws with replacement from each pool."""
    if not labeled or (not unlabeled and batch_size_unlabeled > 0):
        raise ConfigError("cannot sample a batch from an empty pool")
    li = rng.integers(0, len(labeled), size=batch_size_labeled)
    ui = rng.integers(0, len(unlabeled), size=batch_size_unlabeled)
    return [labeled[i] for i in li], [unlabeled[i] for i in ui]


# -- PGM -----------------------------------------------------------------------------

_WS = b" \t\r\n"


def _read_pgm(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] != b"P5":
        raise ParseError(f"{path}: not a binary PGM (P5)", 0)
    pos = 2
    values = []
    while len(values) < 3:
        if pos >= len(buf):
            raise ParseError(f"{path}: truncated header", pos)
        ch = buf[pos : pos + 1]
        if ch in (b" ", b"\t", b"\r", b"\n"):
            pos += 1
        elif ch == b"#":
            end = buf.find(b"\n", pos)
            if end < 0:
                raise ParseError(f"{path}: unterminated comment", pos)
            pos = end + 1
        else:
            m = re.compile(rb"\d+").match(buf, pos)
            if m is None:
                raise ParseError(f"{path}: expected an integer in header", pos)
            values.append(int(m.group()))
            pos = m.end()
    if pos >= len(buf) or buf[pos] not in _WS:
        raise ParseError(f"{path}: missing whitespace after header", pos)
    pos += 1
    w, h, maxval = values
    if w < 1 or h < 1 or not 0 < maxval <= 255:
        raise ParseError(f"{path}: unsupported header width={w} height={h} maxval={maxval}", pos)
    if len(buf) - pos < w * h:
        raise ParseError(f"{path}: truncated payload, need {w * h} bytes", len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)


def _write_pgm(path, pixels):
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(pixels.tobytes())


def load_pgm(path):
    """8-bit PGM to a ``(H, W, 1)`` image in [-1, 1] via ``2*v/255 - 1``."""
    return (2.0 * _read_pgm(path).astype(np.float64) / 255.0 - 1.0)[:, :, None]


def save_pgm(image, path):
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        if img.shape[2] != 1:
            raise ConfigError("PGM holds single-channel images only")
        img = img[:, :, 0]
    v = np.floor((np.clip(img, -1.0, 1.0) + 1.0) * 127.5 + 0.5)
    _write_pgm(path, np.clip(v, 0, 255))


def load_label_pgm(path, n_classes):
    return one_hot(_read_pgm(path), n_classes)


def save_label_pgm(onehot, path):
    _write_pgm(path, class_indices(onehot))


# -- on-disk datasets -----------------------------------------------------------------


def write_dataset(root, labeled, unlabeled, test, n_classes, n_domains, extra=None):
    """Write PGM files plus ``manifest.json`` under ``root``."""
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "labels"), exist_ok=True)
    records = []
    for split, items in (("labeled", labeled), ("unlabeled", unlabeled), ("test", test)):
        for rec in items:
            img_rel = f"images/{rec.case_id:06d}.pgm"
            save_pgm(rec.image, os.path.join(root, img_rel))
            lab_rel = None
            if rec.label is not None:
                lab_rel = f"labels/{rec.case_id:06d}.pgm"
                save_label_pgm(rec.label, os.path.join(root, lab_rel))
            records.append({
                "path": img_rel,
                "label_path": lab_rel,
                "domain_id": int(rec.domain_id),
                "case_id": int(rec.case_id),
                "split": split,
            })
    manifest = {"n_classes": int(n_classes), "n_domains": int(n_domains), "records": records}
    if extra:
        manifest.update(extra)
    with open(os.path.join(root, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def read_dataset(root):
    """Load a dataset written by :func:`write_dataset`; returns ``(labeled, unlabeled, test, manifest)``."""
    with open(os.path.join(root, "manifest.json")) as fh:
        manifest = json.load(fh)
    c = manifest["n_classes"]
    splits = {"labeled": [], "unlabeled": [], "test": []}
    for r in manifest["records"]:
        image = load_pgm(os.path.join(root, r["path"]))
        label = load_label_pgm(os.path.join(root, r["label_path"]), c) if r["label_path"] else None
        if r["split"] == "unlabeled":
            label = None
        splits[r["split"]].append(SampleRecord(image, label, r["domain_id"], r["case_id"]))
    return splits["labeled"], splits["unlabeled"], splits["test"], manifest


def spec_to_dict(spec):
    d = asdict(spec)
    if not np.isscalar(d["n_unlabeled_per_domain"]):
        d["n_unlabeled_per_domain"] = list(d["n_unlabeled_per_domain"])
    return d
