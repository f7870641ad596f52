"""Command-line entry point: ``fewshot {make-synth,train,eval,inspect}``.

Exit codes: 0 ok, 2 configuration error, 3 data or I/O error, 4 divergence.
Progress lines go to stderr prefixed with ``#``; stdout carries only
deterministic summaries.
"""
import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from .data import load_dataset, make_synthetic, save_dataset
from .errors import (
    CapacityError, CompatibilityError, ConfigError, ContractError, DimensionError, DivergenceError,
    FewShotError, FormatError, IntegrityError, SamplingError,
)
from .evaluation import EvalProtocol, eval_protocol
from .models import ModelConfig, analytic_param_count
from .training import Checkpoint, TrainConfig, train_stage1
from .training.config import from_dict

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

SECTIONS = ("dataset", "model", "train", "eval", "seed")


@dataclass
class DatasetSection:
    path: str = None
    unlabeled: str = None


@dataclass
class RunConfig:
    dataset: DatasetSection
    model: ModelConfig
    train: TrainConfig
    eval: EvalProtocol
    seed: int = 0

    def to_dict(self):
        return {"dataset": asdict(self.dataset), "model": self.model.to_dict(),
                "train": self.train.to_dict(), "eval": asdict(self.eval), "seed": self.seed}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _set_path(doc, dotted, raw):
    keys = dotted.split(".")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = doc
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {dotted}: {k!r} is not a section")
    node[keys[-1]] = value


def parse_run_config(doc, overrides=(), image_size=None):
    """Materialize a RunConfig from a JSON document plus ``key.path=value`` overrides.

    The top-level seed fills ``train.seed`` and ``eval.base_seed`` unless those
    are given explicitly; ``model.image_size`` defaults to the dataset's.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc = json.loads(json.dumps(doc))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key.path=value, got {item!r}")
        key, raw = item.split("=", 1)
        _set_path(doc, key, raw)
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown top-level keys: {unknown}")
    for name in SECTIONS[:4]:
        if not isinstance(doc.get(name, {}), dict):
            raise ConfigError(f"section {name!r} must be an object")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    train = dict(doc.get("train", {}))
    train.setdefault("seed", seed)
    ev = dict(doc.get("eval", {}))
    ev.setdefault("base_seed", seed)
    ev.setdefault("method", train.get("method", "CC"))
    model = dict(doc.get("model", {}))
    if image_size is not None:
        model.setdefault("image_size", image_size)
    return RunConfig(
        dataset=from_dict(DatasetSection, doc.get("dataset", {}), "dataset"),
        model=from_dict(ModelConfig, model, "model"),
        train=from_dict(TrainConfig, train, "train"),
        eval=from_dict(EvalProtocol, ev, "eval"),
        seed=seed,
    )


def _progress(msg):
    print(f"# {time.strftime('%Y-%m-%dT%H:%M:%S')} {msg}", file=sys.stderr, flush=True)


def _write(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None


def split_summary(ds):
    lines = []
    for name in ("base", "validation", "novel"):
        classes = ds.split[name]
        n = int(np.isin(ds.labels, classes).sum()) if classes else 0
        lines.append(f"{name}: {len(classes)} classes, {n} images")
    return lines


def cmd_make_synth(args):
    ds = make_synthetic((args.base, args.val, args.novel), args.per_class, args.size, args.seed)
    save_dataset(ds, args.out)
    print(f"wrote {args.out}: {ds.num_images} images of shape {tuple(ds.image_shape)}")
    for line in split_summary(ds):
        print(line)
    return EXIT_OK


def cmd_train(args):
    doc = _read_json(args.config) if args.config else {}
    ds_path = args.dataset or (doc.get("dataset") or {}).get("path")
    if not ds_path:
        raise ConfigError("no dataset given (--dataset or dataset.path)")
    ds = load_dataset(ds_path)
    doc.setdefault("dataset", {})
    doc["dataset"]["path"] = ds_path
    if args.unlabeled:
        doc["dataset"]["unlabeled"] = args.unlabeled
    cfg = parse_run_config(doc, args.set or (), image_size=ds.image_shape[1])
    if ds.image_shape[1] != cfg.model.image_size or ds.image_shape[2] != cfg.model.image_size:
        raise ConfigError(f"model.image_size {cfg.model.image_size} does not match dataset images "
                          f"{ds.image_shape[1]}x{ds.image_shape[2]}")
    unlabeled = load_dataset(cfg.dataset.unlabeled) if cfg.dataset.unlabeled else None
    if unlabeled is not None and unlabeled.image_shape != ds.image_shape:
        raise ConfigError(f"unlabeled images {unlabeled.image_shape} differ from {ds.image_shape}")

    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "effective_config.json"), cfg.to_json())
    log_path = os.path.join(args.out, "train_log.jsonl")
    _write(log_path, "")

    def on_epoch(record):
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        _progress(f"epoch {record['epoch']} loss {record['loss_total']:.4f}"
                  + (f" val {record['val_acc']:.4f}" if "val_acc" in record else ""))

    result = train_stage1(cfg.model, cfg.train, ds, unlabeled, on_epoch)
    ckpt_dir = os.path.join(args.out, "checkpoint")
    result.checkpoint.save(ckpt_dir)
    digest = result.checkpoint.digest()
    print(f"checkpoint {ckpt_dir} sha256 {digest} epoch {result.best_epoch}")
    if args.evaluate:
        report = eval_protocol(result.checkpoint.to_model(), ds, cfg.eval, digest, args.workers)
        _write(os.path.join(args.out, "eval_report.json"), report.to_json())
        print(report.summary())
    return EXIT_OK


def cmd_eval(args):
    ckpt = Checkpoint.load(args.checkpoint)
    ds = load_dataset(args.dataset)
    train_cfg = ckpt.manifest.get("train_config") or {}
    method = args.method or train_cfg.get("method") or ("CC" if ckpt.has_component("classifier") else "PN")
    try:
        protocol = EvalProtocol(args.n_way, args.k_shot, args.m_query, args.episodes, args.seed,
                                method, args.similarity, args.split)
    except ContractError as exc:
        raise ConfigError(str(exc)) from None
    report = eval_protocol(ckpt.to_model(), ds, protocol, ckpt.digest(), args.workers)
    text = report.to_json()
    if args.out:
        _write(args.out, text)
    print(report.summary())
    sys.stdout.write(text)
    return EXIT_OK


def cmd_inspect(args):
    if args.checkpoint:
        ckpt = Checkpoint.load(args.checkpoint)
        m = ckpt.manifest
        config = ModelConfig(**m["model_config"])
        print(f"checkpoint {args.checkpoint}")
        print(f"components: {', '.join(m['components'])}")
        print(f"widths: {config.widths} image_size: {config.image_size} feature_dim: {config.feature_dim}")
        print(f"base classes: {m['n_base_classes']} epoch: {m['epoch']}")
        print(f"parameters: {ckpt.n_parameters} "
              f"(analytic {analytic_param_count(config, m['n_base_classes'], m['components'])})")
        print(f"tensors: {len(m['entries'])} payload bytes: {m['payload_bytes']}")
        if m.get("val_history"):
            print(f"val history: {', '.join(f'{v:.4f}' for v in m['val_history'])}")
        print(f"sha256: {ckpt.digest()}")
    else:
        ds = load_dataset(args.dataset)
        print(f"dataset {args.dataset}: {ds.num_images} images of shape {tuple(ds.image_shape)}, "
              f"{len(ds.class_names)} classes")
        for line in split_summary(ds):
            print(line)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="fewshot", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-synth", help="write a synthetic FSDS dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--base", type=int, default=24)
    s.add_argument("--val", type=int, default=8)
    s.add_argument("--novel", type=int, default=8)
    s.add_argument("--per-class", type=int, default=200)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_synth)

    s = sub.add_parser("train", help="first-stage training")
    s.add_argument("--config")
    s.add_argument("--dataset")
    s.add_argument("--unlabeled")
    s.add_argument("--out", required=True)
    s.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key, e.g. train.epochs=5 (value parsed as JSON)")
    s.add_argument("--evaluate", action="store_true", help="run the eval section after training")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="episodic few-shot evaluation of a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--n-way", type=int, default=5)
    s.add_argument("--k-shot", type=int, default=1)
    s.add_argument("--m-query", type=int, default=15)
    s.add_argument("--episodes", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split", choices=("novel", "validation"), default="novel")
    s.add_argument("--method", choices=("CC", "PN"))
    s.add_argument("--similarity", choices=("neg_sq_euclidean", "cosine"), default="neg_sq_euclidean")
    s.add_argument("--out", help="also write the JSON report here")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("inspect", help="summarize a checkpoint or dataset")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--checkpoint")
    g.add_argument("--dataset")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        print(json.dumps(exc.snapshot, sort_keys=True), file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, CapacityError, CompatibilityError, SamplingError, ContractError,
            DimensionError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, IntegrityError, OSError, FewShotError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
