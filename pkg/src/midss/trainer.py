"""Mean-teacher training loop with copy-paste intermediates, symmetric guidance and amplitude mixup.

Random streams are forked per iteration (and per pair within an iteration)
from the config seed, so a run is a pure function of config and data.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .data import sample_batch
from .augment import AugmentRanges, apply_geo, make_views, weak_labeled
from .exceptions import ConfigError
from .fourier import tp_ram
from .grid import argmax_channels, class_indices, elementwise_mix, fork_rng
from .metrics import dice, evaluate_predictions
from .network import OptState, UNetConfig, backward, ema_update, forward, init_params, save_checkpoint, sgd_step
from .objective import (
    confidence_weight,
    ensemble_weight,
    segmentation_loss_grad,
    total_loss,
)
from .ucp import generate_center_mask, merge_unlabeled_regions, unified_copy_paste

log = logging.getLogger(__name__)

STREAM_INIT, STREAM_BATCH, STREAM_AUG = 0, 1, 2


@dataclass(frozen=True)
class MethodFlags:
    ucp: bool = True
    vanilla_gd: bool = False
    sym_gd: bool = True
    tp_ram: bool = True
    ram: bool = False
    supervised_only: bool = False


ABLATION_ROWS = {
    "supervised": MethodFlags(ucp=False, sym_gd=False, tp_ram=False, supervised_only=True),
    "row1": MethodFlags(ucp=True, sym_gd=False, tp_ram=False),
    "row2": MethodFlags(ucp=True, vanilla_gd=True, sym_gd=False, tp_ram=False),
    "row3": MethodFlags(ucp=True, sym_gd=True, tp_ram=False),
    "row4": MethodFlags(ucp=True, sym_gd=False, tp_ram=True),
    "row5": MethodFlags(ucp=True, sym_gd=True, tp_ram=False, ram=True),
    "full": MethodFlags(ucp=True, sym_gd=True, tp_ram=True),
}
ABLATION_ROWS["row6"] = ABLATION_ROWS["full"]


@dataclass(frozen=True)
class TrainConfig:
    t_total: int = 2000
    tau: float = 0.95
    beta: float = 0.01
    ratio_range: tuple = (1 / 3, 2 / 3)
    lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 1e-4
    ema_decay: float = 0.99
    batch_labeled: int = 4
    batch_unlabeled: int = 4
    seed: int = 0
    eval_every: int = 500
    method_flags: MethodFlags = MethodFlags()
    # weight map for the symmetric term: "ensemble" (agreement-gated) or "merged"
    sym_weight: str = "ensemble"
    # image pasted into the teacher's weak intermediates: "tp_ram" output or plain "x_w"
    weak_mix_source: str = "tp_ram"
    base_width: int = 8
    depth: int = 3
    augment: AugmentRanges = AugmentRanges()

    def validate(self):
        f = self.method_flags
        if f.sym_gd and f.vanilla_gd:
            raise ConfigError("sym_gd and vanilla_gd are mutually exclusive")
        if f.tp_ram and f.ram:
            raise ConfigError("tp_ram and ram are mutually exclusive")
        if not f.ucp and not f.supervised_only and (f.sym_gd or f.tp_ram or f.ram):
            raise ConfigError("sym_gd, tp_ram and ram build on ucp")
        if self.batch_labeled != self.batch_unlabeled and not f.supervised_only:
            raise ConfigError("labeled and unlabeled batches are paired positionally and must be equal in size")
        if self.sym_weight not in ("ensemble", "merged"):
            raise ConfigError(f"sym_weight must be 'ensemble' or 'merged', got {self.sym_weight!r}")
        if self.weak_mix_source not in ("tp_ram", "x_w"):
            raise ConfigError(f"weak_mix_source must be 'tp_ram' or 'x_w', got {self.weak_mix_source!r}")
        if self.t_total < 0 or self.eval_every < 1:
            raise ConfigError("t_total must be >= 0 and eval_every >= 1")
        if not 0 <= self.ratio_range[0] <= self.ratio_range[1] <= 1:
            raise ConfigError(f"invalid ratio_range {self.ratio_range}")
        if not 0 < self.beta <= 0.5:
            raise ConfigError(f"beta must lie in (0, 0.5], got {self.beta}")
        return self

    def to_dict(self):
        d = asdict(self)
        d["ratio_range"] = list(self.ratio_range)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training options: {sorted(unknown)}")
        if "method_flags" in d and isinstance(d["method_flags"], dict):
            d["method_flags"] = MethodFlags(**d["method_flags"])
        if "augment" in d and isinstance(d["augment"], dict):
            d["augment"] = AugmentRanges(**d["augment"])
        if "ratio_range" in d:
            d["ratio_range"] = tuple(d["ratio_range"])
        return cls(**d)

    def with_ablation(self, row):
        if row not in ABLATION_ROWS:
            raise ConfigError(f"unknown ablation row {row!r}; choose from {sorted(ABLATION_ROWS)}")
        return replace(self, method_flags=ABLATION_ROWS[row])


@dataclass
class TrainState:
    config: TrainConfig
    student: object
    teacher: object
    opt: OptState
    t: int = 0


@dataclass
class IterationTrace:
    t: int
    losses: object
    accept_rate: float | None
    pseudo_dice: dict = field(default_factory=dict)


def init_state(config, in_channels, n_classes):
    config.validate()
    net = UNetConfig(in_channels=in_channels, n_classes=n_classes, depth=config.depth, base_width=config.base_width)
    student = init_params(net, fork_rng(config.seed, STREAM_INIT))
    opt = OptState(lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay)
    return TrainState(config, student, student.copy(), opt)


def _stack(items):
    return np.stack(items, axis=0)


def _prepare_pair(cfg, t, k, lab, unl, want_unlabeled):
    """Augmented views, mask and style-mixed labeled image for pair ``k`` of iteration ``t``."""
    rng = fork_rng(cfg.seed, STREAM_AUG, t, k)
    x_w, y_w = weak_labeled(lab.image, lab.label, rng, cfg.augment)
    out = {"x_w": x_w, "y_w": y_w}
    if not want_unlabeled:
        return out
    flags = cfg.method_flags
    u_w, u_s, g, _ = make_views(unl.image, rng, cfg.augment, return_params=True)
    out.update(u_w=u_w, u_s=u_s, domain=unl.domain_id)
    if unl.reference_label is not None:
        out["truth"] = apply_geo(unl.reference_label, g, "nearest")
    if flags.ucp:
        out["mask"] = generate_center_mask(x_w.shape[0], x_w.shape[1], rng, cfg.ratio_range).grid
    x_mix = x_w
    if flags.tp_ram or flags.ram:
        x_mix = tp_ram(x_w, u_w, cfg.beta, t, cfg.t_total, rng, progress_aware=flags.tp_ram)
    out["x_mix"] = x_mix
    return out


def train_iteration(state, labeled_batch, unlabeled_batch):
    """Advance the state by one iteration over positionally paired batches; returns the trace."""
    cfg = state.config
    flags = cfg.method_flags
    t = state.t
    semi = not flags.supervised_only
    n = len(labeled_batch)
    pairs = [
        _prepare_pair(cfg, t, k, labeled_batch[k], unlabeled_batch[k] if semi else None, semi)
        for k in range(n)
    ]
    x_w = _stack([p["x_w"] for p in pairs])
    y_w = _stack([p["y_w"] for p in pairs])

    student_inputs = [x_w]
    accept_rate = None
    pseudo_dice = {}
    use_direct = semi and (flags.sym_gd or flags.vanilla_gd or not flags.ucp)
    if semi:
        u_w = _stack([p["u_w"] for p in pairs])
        u_s = _stack([p["u_s"] for p in pairs])
        x_mix = _stack([p["x_mix"] for p in pairs])
        teacher_inputs = [u_w]
        if flags.ucp:
            masks = _stack([p["mask"] for p in pairs])
            if flags.sym_gd:
                src = x_mix if cfg.weak_mix_source == "tp_ram" else x_w
                teacher_inputs += [elementwise_mix(src, u_w, masks), elementwise_mix(u_w, src, masks)]
        t_probs, _ = forward(state.teacher, np.concatenate(teacher_inputs, axis=0))
        p_w = t_probs[:n]
        p_hat = argmax_channels(p_w)
        w = confidence_weight(p_w, cfg.tau)
        accept_rate = float(w.mean())
        by_domain = {}
        for k, p in enumerate(pairs):
            if "truth" in p:
                fg = [dice(class_indices(p_hat[k]) == c, class_indices(p["truth"]) == c) for c in range(1, p_w.shape[-1])]
                by_domain.setdefault(p["domain"], []).append(float(np.mean(fg)))
        pseudo_dice = {d: float(np.mean(v)) for d, v in sorted(by_domain.items())}

        if flags.ucp:
            triple = unified_copy_paste(x_mix, y_w, u_s, p_w, p_hat, w, masks)
            student_inputs += [triple.sample_in, triple.sample_out]
            if flags.sym_gd:
                p_hat_in = argmax_channels(t_probs[n : 2 * n])
                p_hat_out = argmax_channels(t_probs[2 * n : 3 * n])
                w_in = confidence_weight(t_probs[n : 2 * n], cfg.tau)
                w_out = confidence_weight(t_probs[2 * n : 3 * n], cfg.tau)
                p_hat_mg = merge_unlabeled_regions(p_hat_out, p_hat_in, masks)
                w_mg = merge_unlabeled_regions(w_out, w_in, masks)
                w_sym = ensemble_weight(p_hat, p_hat_mg, w, w_mg) if cfg.sym_weight == "ensemble" else w_mg
        if use_direct:
            student_inputs.append(u_s)

    s_probs, cache = forward(state.student, np.concatenate(student_inputs, axis=0))
    grad_p = np.zeros_like(s_probs)
    grad_z = np.zeros_like(s_probs)
    lam_terms = {}

    def term(name, sl, target, weight):
        value, gp, gz = segmentation_loss_grad(target, s_probs[sl], weight)
        lam_terms[name] = (sl, value, gp, gz)
        return value

    l_s = term("l_s", slice(0, n), y_w, None)
    l_in = l_out = l_sym = 0.0
    if semi:
        if flags.ucp:
            l_in = term("l_in", slice(n, 2 * n), triple.pseudo_in, triple.weight_in)
            l_out = term("l_out", slice(2 * n, 3 * n), triple.pseudo_out, triple.weight_out)
            direct = slice(3 * n, 4 * n)
            if flags.sym_gd:
                l_sym = term("l_sym", direct, p_hat_mg, w_sym)
            elif flags.vanilla_gd:
                l_sym = term("l_sym", direct, p_hat, w)
        else:
            # plain confidence-gated pseudo labelling on the strong view
            l_in = term("l_in", slice(n, 2 * n), p_hat, w)
    bundle = total_loss(l_s, l_in, l_out, l_sym, t, cfg.t_total)
    lam = bundle.lam
    coeff = {"l_s": 1.0, "l_in": lam, "l_out": lam, "l_sym": lam * lam}
    for name, (sl, _, gp, gz) in lam_terms.items():
        grad_p[sl] += coeff[name] * gp
        grad_z[sl] += coeff[name] * gz

    grads = backward(state.student, cache, grad_probs=grad_p, grad_logits=grad_z)
    sgd_step(state.student, grads, state.opt)
    ema_update(state.teacher, state.student, cfg.ema_decay)
    state.t = t + 1
    return IterationTrace(t, bundle, accept_rate, pseudo_dice)


def predict_proba(params, images, chunk=32):
    images = np.asarray(images, dtype=np.float64)
    out = [forward(params, images[i : i + chunk])[0] for i in range(0, len(images), chunk)]
    return np.concatenate(out, axis=0) if out else np.zeros((0,) + images.shape[1:3] + (params.config.n_classes,))


def evaluate(params, records):
    """Student-only inference and per-domain metrics on labeled records."""
    n_classes = params.config.n_classes
    probs = predict_proba(params, _stack([r.image for r in records]))
    preds = np.argmax(probs, axis=-1)
    gts = [class_indices(r.label) for r in records]
    return evaluate_predictions(preds, gts, [r.domain_id for r in records], n_classes)


TRACE_BASE_COLUMNS = ["t", "l_s", "l_in", "l_out", "l_sym", "lambda", "accept_rate"]


def _fmt(v):
    return "" if v is None else repr(float(v))


def run(config, labeled, unlabeled, test, out_dir=None, callback=None):
    """Train for ``config.t_total`` iterations, evaluating the student every ``eval_every``.

    Returns ``(state, report, traces)``.  With ``out_dir`` the resolved config,
    ``trace.csv``, ``report.json`` and ``checkpoint.bin`` are written there.
    """
    config.validate()
    if not labeled:
        raise ConfigError("no labeled records")
    in_channels = labeled[0].image.shape[-1]
    n_classes = labeled[0].label.shape[-1]
    state = init_state(config, in_channels, n_classes)
    domains = sorted({r.domain_id for r in test})
    columns = TRACE_BASE_COLUMNS + [f"dc_domain_{d}" for d in domains]
    rows, traces, evals = [], [], []
    report = None
    n_unl = 0 if config.method_flags.supervised_only else config.batch_unlabeled
    for it in range(config.t_total):
        lab, unl = sample_batch(labeled, unlabeled, config.batch_labeled, n_unl,
                                fork_rng(config.seed, STREAM_BATCH, it))
        trace = train_iteration(state, lab, unl)
        traces.append(trace)
        b = trace.losses
        row = [str(trace.t), _fmt(b.l_s), _fmt(b.l_in), _fmt(b.l_out), _fmt(b.l_sym), _fmt(b.lam),
               _fmt(trace.accept_rate)] + [""] * len(domains)
        if test and (state.t % config.eval_every == 0 or state.t == config.t_total):
            report = evaluate(state.student, test)
            evals.append((state.t, report))
            per = report["averages"]["dc_per_domain"]
            row[len(TRACE_BASE_COLUMNS):] = [_fmt(per[f"domain_{d}"]) for d in domains]
            log.info("t=%d avg dc=%.4f", state.t, report["averages"]["dc"])
        rows.append(row)
        if callback is not None:
            callback(state, trace)
    if report is None:
        report = evaluate(state.student, test) if test else {}
        evals.append((state.t, report))
    report = dict(report)
    report["iteration"] = state.t
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            json.dump(config.to_dict(), fh, indent=1, sort_keys=True)
        with open(os.path.join(out_dir, "trace.csv"), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            writer.writerows(rows)
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
        save_checkpoint(os.path.join(out_dir, "checkpoint.bin"), state.student,
                        iteration=state.t, rng_state={"seed": config.seed, "next_iteration": state.t})
    return state, report, traces
