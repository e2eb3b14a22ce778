"""Command-line front end: ``midss gen | train | eval | sweep``.

Options come from an optional JSON experiment file (``--config``) with keys
``dataset``, ``styles`` and ``train``; ``MIDSS_SEED`` overrides the seed in
that file, and explicit flags override both.  Exit codes: 0 ok, 1 numerical
integrity failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict

from .data import DatasetSpec, DomainStyle, default_styles, generate_dataset, read_dataset, spec_to_dict, write_dataset
from .exceptions import ArchitectureMismatchError, ConfigError, NumericalIntegrityError, ParseError
from .network import UNetConfig, load_checkpoint
from .trainer import ABLATION_ROWS, TrainConfig, evaluate, run

log = logging.getLogger("midss")

SWEEP_METRICS = ("jc", "hd95", "asd")


class UsageError(Exception):
    """Bad invocation: missing paths, refused overwrite, unknown options."""


# -- experiment config ---------------------------------------------------------------


def load_experiment(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            exp = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    unknown = set(exp) - {"dataset", "styles", "train", "data", "out"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return exp


def _env_seed():
    raw = os.environ.get("MIDSS_SEED")
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"MIDSS_SEED must be an integer, got {raw!r}") from None


def resolve_dataset(exp, args):
    d = dict(exp.get("dataset", {}))
    if "n_unlabeled_per_domain" in d and isinstance(d["n_unlabeled_per_domain"], list):
        d["n_unlabeled_per_domain"] = tuple(d["n_unlabeled_per_domain"])
    seed = _env_seed()
    if seed is not None:
        d["seed"] = seed
    for flag, key in (("domains", "K"), ("n_labeled", "n_labeled"), ("n_unlabeled", "n_unlabeled_per_domain"),
                      ("n_test", "n_test_per_domain"), ("labeled_domain", "labeled_domain"), ("seed", "seed")):
        value = getattr(args, flag, None)
        if value is not None:
            d[key] = value
    if getattr(args, "size", None) is not None:
        d["H"] = d["W"] = args.size
    try:
        spec = DatasetSpec(**d)
    except TypeError as exc:
        raise ConfigError(f"bad dataset options: {exc}") from None
    spec.validate()
    if "styles" in exp:
        styles = [DomainStyle(**s) for s in exp["styles"]]
    else:
        styles = default_styles(spec.K)
    if len(styles) != spec.K:
        raise ConfigError(f"{len(styles)} domain styles given for {spec.K} domains")
    return spec, styles


TRAIN_FLAGS = {
    "tau": "tau", "beta": "beta", "lr": "lr", "momentum": "momentum", "weight_decay": "weight_decay",
    "ema_decay": "ema_decay", "iterations": "t_total", "eval_every": "eval_every", "seed": "seed",
    "base_width": "base_width", "depth": "depth", "sym_weight": "sym_weight", "weak_mix_source": "weak_mix_source",
}


def resolve_train(exp, args):
    d = dict(exp.get("train", {}))
    seed = _env_seed()
    if seed is not None:
        d["seed"] = seed
    for flag, key in TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            d[key] = value
    if getattr(args, "batch", None) is not None:
        d["batch_labeled"] = d["batch_unlabeled"] = args.batch
    try:
        cfg = TrainConfig.from_dict(d)
    except TypeError as exc:
        raise ConfigError(f"bad training options: {exc}") from None
    if getattr(args, "ablation", None):
        cfg = cfg.with_ablation(args.ablation)
    if getattr(args, "supervised_only", False):
        cfg = cfg.with_ablation("supervised")
    return cfg.validate()


def train_config_dict(cfg):
    d = cfg.to_dict()
    d["augment"] = asdict(cfg.augment)
    return d


def _prepare_out_dir(path, force):
    if os.path.isdir(path) and os.listdir(path) and not force:
        raise UsageError(f"output directory {path} is not empty (use --force to overwrite)")
    os.makedirs(path, exist_ok=True)


def _load_data(path):
    if path is None:
        raise UsageError("no dataset given (use --data)")
    if not os.path.isfile(os.path.join(path, "manifest.json")):
        raise UsageError(f"dataset not found: {path} (no manifest.json)")
    return read_dataset(path)


# -- subcommands -----------------------------------------------------------------------


def cmd_gen(args):
    exp = load_experiment(args.config)
    spec, styles = resolve_dataset(exp, args)
    out = args.out or exp.get("data")
    if out is None:
        raise UsageError("no output directory given")
    _prepare_out_dir(out, args.force)
    labeled, unlabeled, test = generate_dataset(spec, styles)
    extra = {"spec": spec_to_dict(spec), "styles": [asdict(s) for s in styles]}
    write_dataset(out, labeled, unlabeled, test, spec.C, spec.K, extra)
    log.info("wrote %d labeled, %d unlabeled, %d test images to %s", len(labeled), len(unlabeled), len(test), out)
    return 0


def _train_one(cfg, data_path, out):
    labeled, unlabeled, test, _ = _load_data(data_path)
    with open(os.path.join(out, "experiment.json"), "w") as fh:
        json.dump({"data": data_path, "train": train_config_dict(cfg)}, fh, indent=1, sort_keys=True)
    _, report, _ = run(cfg, labeled, unlabeled, test, out_dir=out)
    return report


def cmd_train(args):
    exp = load_experiment(args.config)
    cfg = resolve_train(exp, args)
    data = args.data or exp.get("data")
    out = args.out or exp.get("out")
    if out is None:
        raise UsageError("no output directory given (use --out)")
    _load_data(data)
    _prepare_out_dir(out, args.force)
    report = _train_one(cfg, data, out)
    log.info("final avg dc %.4f", report["averages"]["dc"])
    return 0


def cmd_eval(args):
    exp = load_experiment(args.config)
    data = args.data or exp.get("data")
    labeled, unlabeled, test, manifest = _load_data(data)
    if not os.path.isfile(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    expected = None
    if "train" in exp or args.base_width is not None or args.depth is not None:
        cfg = resolve_train(exp, args)
        expected = UNetConfig(in_channels=1, n_classes=manifest["n_classes"], depth=cfg.depth, base_width=cfg.base_width)
    params, header = load_checkpoint(args.checkpoint, expected)
    report = evaluate(params, test)
    report["iteration"] = header.get("iteration")
    text = json.dumps(report, indent=1, sort_keys=True)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def sweep_row(name, report, domains):
    avg = report["averages"]
    row = [name] + [avg["dc_per_domain"][f"domain_{d}"] for d in domains] + [avg["dc"]]
    return row + [avg[k] for k in SWEEP_METRICS]


def cmd_sweep(args):
    exp = load_experiment(args.config)
    data = args.data or exp.get("data")
    out = args.out or exp.get("out")
    if out is None:
        raise UsageError("no output directory given (use --out)")
    _, _, _, manifest = _load_data(data)
    for row in args.rows:
        if row not in ABLATION_ROWS:
            raise ConfigError(f"unknown ablation row {row!r}; choose from {sorted(ABLATION_ROWS)}")
    os.makedirs(out, exist_ok=True)
    base = resolve_train(exp, replace_ns(args, ablation=None, supervised_only=False))
    domains = list(range(1, manifest["n_domains"] + 1))
    table = []
    for row in args.rows:
        run_dir = os.path.join(out, row)
        report_path = os.path.join(run_dir, "report.json")
        if os.path.isfile(report_path):
            log.info("%s: report present, skipping", row)
            with open(report_path) as fh:
                report = json.load(fh)
        else:
            os.makedirs(run_dir, exist_ok=True)
            report = _train_one(base.with_ablation(row), data, run_dir)
        table.append(sweep_row(row, report, domains))
    header = ["config"] + [f"dc_domain_{d}" for d in domains] + ["dc_avg"] + list(SWEEP_METRICS)
    with open(os.path.join(out, "sweep.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([r[0]] + [repr(float(v)) for v in r[1:]] for r in table)
    return 0


def replace_ns(ns, **kw):
    d = vars(ns).copy()
    d.update(kw)
    return argparse.Namespace(**d)


# -- parser ------------------------------------------------------------------------------


def _add_train_flags(p):
    p.add_argument("--tau", type=float, help="confidence threshold (default 0.95)")
    p.add_argument("--beta", type=float, help="low-frequency window ratio (default 0.01)")
    p.add_argument("--lr", type=float, help="learning rate (default 0.03)")
    p.add_argument("--momentum", type=float, help="SGD momentum (default 0.9)")
    p.add_argument("--weight-decay", type=float, help="weight decay (default 1e-4)")
    p.add_argument("--ema-decay", type=float, help="teacher EMA decay (default 0.99)")
    p.add_argument("--iterations", type=int, help="training iterations t_total")
    p.add_argument("--eval-every", type=int)
    p.add_argument("--batch", type=int, help="labeled and unlabeled batch size")
    p.add_argument("--base-width", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--sym-weight", choices=["ensemble", "merged"])
    p.add_argument("--weak-mix-source", choices=["tp_ram", "x_w"])


def build_parser():
    parser = argparse.ArgumentParser(prog="midss", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate the synthetic multi-domain dataset")
    g.add_argument("out", nargs="?")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--domains", type=int)
    g.add_argument("--labeled-domain", type=int)
    g.add_argument("--n-labeled", type=int)
    g.add_argument("--n-unlabeled", type=int, help="unlabeled images per domain")
    g.add_argument("--n-test", type=int, help="test images per domain")
    g.add_argument("--size", type=int, help="image height and width")
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train on a generated dataset")
    t.add_argument("--config")
    t.add_argument("--data")
    t.add_argument("--out")
    t.add_argument("--seed", type=int)
    t.add_argument("--ablation", choices=sorted(ABLATION_ROWS))
    t.add_argument("--supervised-only", action="store_true")
    t.add_argument("--force", action="store_true")
    _add_train_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    e.add_argument("checkpoint")
    e.add_argument("--config")
    e.add_argument("--data")
    e.add_argument("--report", help="write the JSON report here instead of stdout")
    e.add_argument("--base-width", type=int)
    e.add_argument("--depth", type=int)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="train several ablation rows and tabulate them")
    s.add_argument("--config")
    s.add_argument("--data")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--rows", nargs="+", default=["supervised", "row1", "full"])
    _add_train_flags(s)
    s.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ParseError, ArchitectureMismatchError) as exc:
        print(f"midss {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except NumericalIntegrityError as exc:
        print(f"midss {args.command}: integrity error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"midss {args.command}: I/O error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
