"""Small U-Net with hand-written backpropagation, SGD with momentum, and EMA.

Images and probability maps enter and leave channel-last (``(N, H, W, C)``);
the layers run channel-major ``(C, N, H, W)`` internally.  Architecture: ``depth`` encoder
stages of two 3x3 conv + leaky-ReLU followed by 2x2 average pooling, a
two-conv bottleneck, mirrored decoder stages (nearest 2x upsampling, skip
concatenation, two convs) and a 1x1 conv into a per-pixel softmax.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import ArchitectureMismatchError, DimensionError, NumericalIntegrityError, ParseError
from .grid import decode_mdg1, encode_mdg1


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 1
    n_classes: int = 2
    depth: int = 3
    base_width: int = 8
    leaky_slope: float = 0.01

    def widths(self):
        return [self.base_width * 2**s for s in range(self.depth + 1)]

    def layer_shapes(self):
        """Ordered ``(name, weight_shape)`` for every conv layer."""
        w = self.widths()
        shapes = []
        cin = self.in_channels
        for s in range(self.depth):
            shapes.append((f"enc{s}.conv1", (w[s], cin, 3, 3)))
            shapes.append((f"enc{s}.conv2", (w[s], w[s], 3, 3)))
            cin = w[s]
        shapes.append(("mid.conv1", (w[-1], cin, 3, 3)))
        shapes.append(("mid.conv2", (w[-1], w[-1], 3, 3)))
        cin = w[-1]
        for s in reversed(range(self.depth)):
            shapes.append((f"dec{s}.conv1", (w[s], cin + w[s], 3, 3)))
            shapes.append((f"dec{s}.conv2", (w[s], w[s], 3, 3)))
            cin = w[s]
        shapes.append(("out", (self.n_classes, cin, 1, 1)))
        return shapes


class NetParams:
    """Ordered parameter blocks of one network.

    ``version`` increases on every in-place update so that activation caches
    taken before an update can be detected as stale.
    """

    def __init__(self, config, blocks):
        self.config = config
        self.blocks = dict(blocks)
        self.version = 0

    def names(self):
        return list(self.blocks)

    def copy(self):
        return NetParams(self.config, {k: v.copy() for k, v in self.blocks.items()})

    def zeros_like(self):
        return {k: np.zeros_like(v) for k, v in self.blocks.items()}

    def fingerprint(self):
        h = hashlib.sha256()
        for name, value in self.blocks.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(value).tobytes())
        return h.hexdigest()

    def n_parameters(self):
        return int(sum(v.size for v in self.blocks.values()))

    def same_shapes(self, other):
        return list(self.blocks) == list(other.blocks) and all(
            self.blocks[k].shape == other.blocks[k].shape for k in self.blocks
        )


def init_params(config, rng):
    """He fan-in initialization of weights, zero biases."""
    blocks = {}
    for name, shape in config.layer_shapes():
        fan_in = shape[1] * shape[2] * shape[3]
        blocks[name + ".w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        blocks[name + ".b"] = np.zeros(shape[0])
    return NetParams(config, blocks)


def zero_params(config):
    return NetParams(config, {
        k: np.zeros(s) for name, shape in config.layer_shapes() for k, s in ((name + ".w", shape), (name + ".b", shape[:1]))
    })


# -- layers (channel-major: (C, N, H, W), so each conv is one GEMM) -----------------


def _conv3_forward(x, w, b):
    cin, n, h, wd = x.shape
    xp = np.zeros((cin, n, h + 2, wd + 2))
    xp[:, :, 1:-1, 1:-1] = x
    cols = np.empty((cin, 9, n, h, wd))
    for i in range(3):
        for j in range(3):
            cols[:, 3 * i + j] = xp[:, :, i : i + h, j : j + wd]
    cols = cols.reshape(cin * 9, n * h * wd)
    out = w.reshape(w.shape[0], -1) @ cols
    out += b[:, None]
    return out.reshape(w.shape[0], n, h, wd), cols


def _conv3_backward(dout, cols, w, x_shape):
    cin, n, h, wd = x_shape
    d2 = dout.reshape(dout.shape[0], -1)
    dw = (d2 @ cols.T).reshape(w.shape)
    db = d2.sum(axis=1)
    dcols = (w.reshape(w.shape[0], -1).T @ d2).reshape(cin, 3, 3, n, h, wd)
    dxp = np.zeros((cin, n, h + 2, wd + 2))
    for i in range(3):
        for j in range(3):
            dxp[:, :, i : i + h, j : j + wd] += dcols[:, i, j]
    return dxp[:, :, 1:-1, 1:-1], dw, db


def _leaky(x, slope):
    return np.where(x > 0, x, slope * x)


def _leaky_grad(dout, pre, slope):
    return np.where(pre > 0, dout, slope * dout)


def _pool(x):
    c, n, h, w = x.shape
    return x.reshape(c, n, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def _pool_backward(dout):
    return np.repeat(np.repeat(dout, 2, axis=2), 2, axis=3) * 0.25


def _upsample(x):
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def _upsample_backward(dout):
    c, n, h, w = dout.shape
    return dout.reshape(c, n, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def softmax(z, axis=1):
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class ForwardCache:
    params_id: int
    version: int
    single: bool
    tape: list = field(default_factory=list)
    probs: np.ndarray | None = None


def forward(params, images):
    """Class probabilities for ``(N, H, W, D)`` (or a single ``(H, W, D)``) images.

    Returns ``(probs, cache)``; ``probs`` matches the input's batch convention.
    """
    cfg = params.config
    x = np.asarray(images, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[-1] != cfg.in_channels:
        raise DimensionError(f"expected images (N, H, W, {cfg.in_channels}), got {np.shape(images)}")
    h, w = x.shape[1:3]
    step = 2**cfg.depth
    if h % step or w % step:
        raise DimensionError(f"image size {h}x{w} is not divisible by {step}")
    slope = cfg.leaky_slope
    blocks = params.blocks
    cache = ForwardCache(id(params), params.version, single)
    tape = cache.tape

    def conv_act(a, name):
        out, cols = _conv3_forward(a, blocks[name + ".w"], blocks[name + ".b"])
        tape.append((name, a.shape, cols, out))
        return _leaky(out, slope)

    a = np.ascontiguousarray(x.transpose(3, 0, 1, 2))
    skips = []
    for s in range(cfg.depth):
        a = conv_act(a, f"enc{s}.conv1")
        a = conv_act(a, f"enc{s}.conv2")
        skips.append(a)
        a = _pool(a)
    a = conv_act(a, "mid.conv1")
    a = conv_act(a, "mid.conv2")
    for s in reversed(range(cfg.depth)):
        a = np.concatenate([_upsample(a), skips[s]], axis=0)
        a = conv_act(a, f"dec{s}.conv1")
        a = conv_act(a, f"dec{s}.conv2")
    tape.append(("out", a, None, None))
    c, n, h, w = a.shape
    logits = blocks["out.w"][:, :, 0, 0] @ a.reshape(c, -1) + blocks["out.b"][:, None]
    if not np.all(np.isfinite(logits)):
        raise NumericalIntegrityError("non-finite logits in forward pass")
    probs = softmax(logits.reshape(-1, n, h, w), axis=0).transpose(1, 2, 3, 0)
    cache.probs = probs
    return (probs[0] if single else probs), cache


def backward(params, cache, grad_probs=None, grad_logits=None):
    """Parameter gradients given upstream gradients on the probabilities and/or logits.

    Both gradients are channel-last with the shape returned by :func:`forward`.
    ``grad_logits`` is the fused softmax path and is added after the softmax
    Jacobian has been applied to ``grad_probs``.
    """
    if cache.params_id != id(params) or cache.version != params.version:
        raise NumericalIntegrityError("activation cache is stale: parameters changed since the forward pass")
    cfg = params.config
    slope = cfg.leaky_slope
    blocks = params.blocks
    p = cache.probs
    dz = np.zeros_like(p)
    if grad_probs is not None:
        g = np.asarray(grad_probs, dtype=np.float64)
        g = g[None] if cache.single else g
        dz += p * (g - np.sum(g * p, axis=-1, keepdims=True))
    if grad_logits is not None:
        g = np.asarray(grad_logits, dtype=np.float64)
        dz += g[None] if cache.single else g
    dz = dz.transpose(3, 0, 1, 2).reshape(p.shape[-1], -1)

    grads = {}
    tape = list(cache.tape)
    _, a_last, _, _ = tape.pop()
    a2 = a_last.reshape(a_last.shape[0], -1)
    grads["out.w"] = (dz @ a2.T)[:, :, None, None]
    grads["out.b"] = dz.sum(axis=1)
    da = (blocks["out.w"][:, :, 0, 0].T @ dz).reshape(a_last.shape)

    def conv_act_back(d):
        name, x_shape, cols, pre = tape.pop()
        d = _leaky_grad(d, pre, slope)
        dx, dw, db = _conv3_backward(d, cols, blocks[name + ".w"], x_shape)
        grads[name + ".w"] = dw
        grads[name + ".b"] = db
        return dx

    skip_grads = [None] * cfg.depth
    for s in range(cfg.depth):
        da = conv_act_back(da)
        da = conv_act_back(da)
        cup = da.shape[0] - cfg.widths()[s]
        skip_grads[s] = da[cup:]
        da = _upsample_backward(da[:cup])
    da = conv_act_back(da)
    da = conv_act_back(da)
    for s in reversed(range(cfg.depth)):
        da = _pool_backward(da) + skip_grads[s]
        da = conv_act_back(da)
        da = conv_act_back(da)
    return {k: grads[k] for k in blocks}


# -- optimization ------------------------------------------------------------------


@dataclass
class OptState:
    lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 1e-4
    buffers: dict | None = None


def sgd_step(params, grads, opt):
    """In-place SGD: ``v = momentum*v + grad + wd*param; param -= lr*v``."""
    if opt.buffers is None:
        opt.buffers = params.zeros_like()
    new_v, new_p = {}, {}
    for k, theta in params.blocks.items():
        g = grads[k]
        if g.shape != theta.shape:
            raise DimensionError(f"gradient for {k} has shape {g.shape}, parameter has {theta.shape}")
        v = opt.momentum * opt.buffers[k] + g + opt.weight_decay * theta
        new_v[k] = v
        new_p[k] = theta - opt.lr * v
        if not np.all(np.isfinite(new_p[k])):
            raise NumericalIntegrityError(f"non-finite update for parameter block {k}")
    opt.buffers = new_v
    params.blocks = new_p
    params.version += 1
    return params


def ema_update(teacher, student, decay=0.99):
    """In-place ``teacher = decay*teacher + (1-decay)*student`` over every block."""
    if not 0.0 <= decay <= 1.0:
        raise ValueError(f"decay must lie in [0, 1], got {decay}")
    if not teacher.same_shapes(student):
        raise DimensionError("teacher and student parameter shapes differ")
    if decay == 0.0:
        teacher.blocks = {k: v.copy() for k, v in student.blocks.items()}
    else:
        # increment form: exact when student == teacher and when decay == 1
        teacher.blocks = {k: v + (1.0 - decay) * (student.blocks[k] - v) for k, v in teacher.blocks.items()}
    teacher.version += 1
    return teacher


# -- checkpoints ---------------------------------------------------------------------

CHECKPOINT_MAGIC = b"MDCK"


def _block_frame_shape(shape):
    if len(shape) == 1:
        return (shape[0], 1, 1)
    return (shape[0], shape[1], int(np.prod(shape[2:])))


def save_checkpoint(path, params, **meta):
    """Write ``MDCK``, a uint32 header length, a JSON header, then one MDG1 frame per block."""
    header = {
        "architecture": asdict(params.config),
        "blocks": [{"name": k, "shape": list(v.shape)} for k, v in params.blocks.items()],
        **meta,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<I", len(hbytes)) + hbytes)
        for v in params.blocks.values():
            fh.write(encode_mdg1(v.reshape(_block_frame_shape(v.shape))))


def load_checkpoint(path, expected=None):
    """Read a checkpoint; returns ``(params, header)``.

    Raises ArchitectureMismatchError when ``expected`` (a UNetConfig) differs
    from the stored architecture.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ParseError("not a checkpoint file", 0)
    if len(buf) < 8:
        raise ParseError("truncated checkpoint header", 4)
    (n,) = struct.unpack_from("<I", buf, 4)
    try:
        header = json.loads(buf[8 : 8 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"bad checkpoint header: {exc}", 8) from None
    config = UNetConfig(**header["architecture"])
    if expected is not None and expected != config:
        raise ArchitectureMismatchError(f"checkpoint architecture {config} does not match expected {expected}")
    offset = 8 + n
    blocks = {}
    for entry in header["blocks"]:
        frame, offset = decode_mdg1(buf, offset)
        blocks[entry["name"]] = frame.reshape(entry["shape"])
    params = NetParams(config, blocks)
    if not params.same_shapes(zero_params(config)):
        raise ArchitectureMismatchError("checkpoint blocks do not match the declared architecture")
    return params, header
