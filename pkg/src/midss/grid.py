"""Grid primitives shared by every stage of the pipeline.

Grids are numpy arrays laid out channel-last: an image is ``(H, W, D)``, a
probability or one-hot map is ``(H, W, C)`` and masks/weight maps are
``(H, W)``.  Most helpers also accept a leading batch axis.
"""

from __future__ import annotations

import struct

import numpy as np

from .exceptions import DimensionError, ParseError

MDG1_MAGIC = b"MDG1"
_MDG1_HEADER = struct.Struct("<4sIII")


def as_grid(a, name="grid"):
    """Return ``a`` as a float64 ``(H, W, C)`` array, validating its shape."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or min(a.shape) < 1:
        raise DimensionError(f"{name} must have shape (H, W, C) with all dims >= 1, got {a.shape}")
    return a


def elementwise_mix(a, b, mask):
    """Blend ``a * mask + b * (1 - mask)`` with the mask broadcast over channels.

    ``a`` and ``b`` share a shape ``(..., H, W, C)``; either may also be a
    scalar.  ``mask`` has the spatial shape ``(..., H, W)``.
    """
    mask = np.asarray(mask, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ref = a if a.ndim else b
    if a.ndim and b.ndim and a.shape != b.shape:
        raise DimensionError(f"cannot mix grids of shapes {a.shape} and {b.shape}")
    if ref.ndim == 0:
        raise DimensionError("at least one mixing operand must be a grid")
    if mask.shape != ref.shape[:-1]:
        raise DimensionError(f"mask shape {mask.shape} does not match grid spatial shape {ref.shape[:-1]}")
    m = mask[..., None]
    out = a * m + b * (1.0 - m)
    return np.broadcast_to(out, ref.shape).copy()


def argmax_channels(p):
    """One-hot encode the most probable channel per pixel (ties go to the lowest index)."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim < 3 or p.shape[-1] < 2:
        raise DimensionError(f"probability map needs >= 2 channels on the last axis, got {p.shape}")
    return one_hot(np.argmax(p, axis=-1), p.shape[-1])


def one_hot(labels, n_classes):
    """Expand an integer label map ``(..., H, W)`` to ``(..., H, W, n_classes)``."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DimensionError(f"labels must lie in [0, {n_classes}), got range [{labels.min()}, {labels.max()}]")
    return np.eye(n_classes, dtype=np.float64)[labels.astype(np.intp)]


def class_indices(onehot):
    """Inverse of :func:`one_hot`."""
    return np.argmax(np.asarray(onehot), axis=-1)


def is_one_hot(a):
    a = np.asarray(a)
    return bool(np.all((a == 0) | (a == 1)) and np.all(a.sum(axis=-1) == 1))


# -- random streams ----------------------------------------------------------


def make_rng(seed):
    """Seeded PCG64 generator; identical seeds give identical streams on every platform."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def fork_rng(rng_or_seed, *stream_ids):
    """Derive an independent generator from a seed (or a generator's seed) and a stream path.

    The result depends only on the originating seed and ``stream_ids``, never on
    how many values were already drawn from the parent.
    """
    if isinstance(rng_or_seed, np.random.Generator):
        ss = rng_or_seed.bit_generator.seed_seq
        entropy, key = ss.entropy, tuple(ss.spawn_key)
    else:
        entropy, key = int(rng_or_seed), ()
    key = key + tuple(int(s) for s in stream_ids)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy, spawn_key=key)))


# -- MDG1 tensor dumps -------------------------------------------------------


def encode_mdg1(grid):
    grid = as_grid(grid)
    h, w, c = grid.shape
    return _MDG1_HEADER.pack(MDG1_MAGIC, h, w, c) + np.ascontiguousarray(grid, dtype="<f4").tobytes()


def decode_mdg1(buf, offset=0):
    """Decode one MDG1 frame starting at ``offset``; returns ``(grid, next_offset)``."""
    if len(buf) - offset < _MDG1_HEADER.size:
        raise ParseError("truncated MDG1 header", offset)
    magic, h, w, c = _MDG1_HEADER.unpack_from(buf, offset)
    if magic != MDG1_MAGIC:
        raise ParseError(f"bad MDG1 magic {magic!r}", offset)
    if min(h, w, c) < 1:
        raise ParseError(f"invalid MDG1 dims {(h, w, c)}", offset + 4)
    start = offset + _MDG1_HEADER.size
    n = h * w * c * 4
    if len(buf) - start < n:
        raise ParseError(f"truncated MDG1 payload: need {n} bytes, have {len(buf) - start}", len(buf))
    data = np.frombuffer(buf, dtype="<f4", count=h * w * c, offset=start)
    return data.reshape(h, w, c).astype(np.float64), start + n


def save_mdg1(grid, path):
    with open(path, "wb") as fh:
        fh.write(encode_mdg1(grid))


def load_mdg1(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    grid, end = decode_mdg1(buf)
    if end != len(buf):
        raise ParseError("trailing bytes after MDG1 payload", end)
    return grid


__all__ = [
    "as_grid",
    "elementwise_mix",
    "argmax_channels",
    "one_hot",
    "class_indices",
    "is_one_hot",
    "make_rng",
    "fork_rng",
    "encode_mdg1",
    "decode_mdg1",
    "save_mdg1",
    "load_mdg1",
]
