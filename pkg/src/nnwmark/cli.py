"""Command-line front end.

Subcommands: keygen, dataset, embed, extract, attack, report.
Settings resolve as command-line flag > config file > built-in default.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, fields

import numpy as np
from threadpoolctl import threadpool_limits

from . import persistence
from .attacks import (
    PRUNE_ORDERS,
    OverwriteSpec,
    Watermark,
    distill_attack,
    finetune_attack,
    overwrite_attack,
    prune_sweep,
)
from .data import Dataset, SynthSpec, load_cifar10_binary, synth_dataset
from .errors import ConfigurationError, WatermarkError
from .nn.model import build_host
from .nn.training import RegularizerHook, TrainConfig, evaluate, train
from .record import ExperimentRecord
from .watermark.core import detection_report, layer_mean, ones_payload
from .watermark.keys import KEY_FAMILIES, generate_key

SITUATIONS = ("train-to-embed", "finetune-to-embed", "distill-to-embed")
ATTACKS = ("prune", "finetune", "overwrite", "distill")


class CLIError(Exception):
    pass


# -- configuration ---------------------------------------------------------

DEFAULTS = {
    "situation": "train-to-embed",
    "train": asdict(TrainConfig()),
    "data": asdict(SynthSpec()),
    "model": {"widths": [16, 64, 64, 64], "residual": False, "seed": None},
    "embed": {"family": "random", "bits": 64, "lambda": 0.01, "layer": "conv3",
              "key_seed": 1, "payload": None},
    "source_model": None,
    "cifar_dir": None,
    "data_file": None,
}

# flag name -> (section, key)
FLAG_MAP = {
    "situation": (None, "situation"),
    "source_model": (None, "source_model"),
    "cifar_dir": (None, "cifar_dir"),
    "data_file": (None, "data_file"),
    "epochs": ("train", "epochs"),
    "batch_size": ("train", "batch_size"),
    "lr": ("train", "lr_initial"),
    "lr_drops": ("train", "lr_drop_epochs"),
    "momentum": ("train", "momentum"),
    "weight_decay": ("train", "weight_decay"),
    "family": ("embed", "family"),
    "bits": ("embed", "bits"),
    "lam": ("embed", "lambda"),
    "layer": ("embed", "layer"),
    "key_seed": ("embed", "key_seed"),
    "payload": ("embed", "payload"),
    "classes": ("data", "num_classes"),
    "noise": ("data", "noise"),
    "domain": ("data", "domain"),
    "image_size": ("data", "image_size"),
    "train_per_class": ("data", "train_per_class"),
    "test_per_class": ("data", "test_per_class"),
    "data_seed": ("data", "seed"),
}


def _merge(base, override):
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(args) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                cfg = _merge(cfg, json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise CLIError(f"cannot read config {args.config}: {exc}") from None
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
    for flag, (section, key) in FLAG_MAP.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if section is None:
            cfg[key] = value
        else:
            cfg[section][key] = value
    if cfg["model"].get("seed") is None:
        cfg["model"]["seed"] = cfg["train"]["seed"]
    if cfg["situation"] not in SITUATIONS:
        raise CLIError(f"unknown situation {cfg['situation']!r}; choose from {', '.join(SITUATIONS)}")
    if cfg["situation"] != "train-to-embed" and not cfg.get("source_model"):
        raise CLIError(f"{cfg['situation']} needs source_model (the model to start from)")
    return cfg


def _train_config(section: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    return TrainConfig(**{k: v for k, v in section.items() if k in known})


def _datasets(cfg):
    if cfg.get("data_file"):
        return _load_dataset_file(cfg["data_file"])
    if cfg.get("cifar_dir"):
        return load_cifar10_binary(cfg["cifar_dir"])
    return synth_dataset(SynthSpec(**cfg["data"]))


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _str_list(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _out(args, name):
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def _load_dataset_file(path):
    with np.load(path) as data:
        missing = {"train_images", "train_labels", "test_images", "test_labels", "num_classes"} - set(data.files)
        if missing:
            raise CLIError(f"{path}: missing arrays {', '.join(sorted(missing))}")
        nc = int(data["num_classes"])
        return (
            Dataset(data["train_images"], data["train_labels"], "train", nc),
            Dataset(data["test_images"], data["test_labels"], "test", nc),
        )


# -- commands --------------------------------------------------------------

def cmd_keygen(args):
    key = generate_key(args.family, args.bits, args.dim, args.seed if args.seed is not None else 0)
    path = args.out or _out(args, "key.json")
    persistence.save_key(key, path, layer_id=args.layer, explicit=args.explicit)
    print(f"key family={key.family} T={key.T} M={key.M} seed={key.seed} -> {path}")


def cmd_dataset(args):
    spec = SynthSpec(
        num_classes=args.classes,
        train_per_class=args.train_per_class,
        test_per_class=args.test_per_class,
        image_size=args.image_size,
        noise=args.noise,
        seed=args.seed if args.seed is not None else 0,
        domain=args.domain,
    )
    train_set, test_set = synth_dataset(spec)
    path = args.out or _out(args, "dataset.npz")
    with open(path, "wb") as fh:
        np.savez(
            fh,
            train_images=train_set.images,
            train_labels=train_set.labels,
            test_images=test_set.images,
            test_labels=test_set.labels,
            num_classes=np.int64(spec.num_classes),
        )
    print(f"dataset classes={spec.num_classes} train={len(train_set)} test={len(test_set)} -> {path}")


def run_embed(cfg, log=None):
    """Run one embedding situation. Returns (model, key, payload, record, report, extras)."""
    tcfg = _train_config(cfg["train"])
    train_set, test_set = _datasets(cfg)
    emb = cfg["embed"]
    situation = cfg["situation"]
    if situation == "train-to-embed":
        model = build_host(
            input_shape=train_set.input_shape,
            num_classes=train_set.num_classes,
            widths=tuple(cfg["model"]["widths"]),
            residual=cfg["model"]["residual"],
            seed=cfg["model"]["seed"],
        )
    else:
        model = persistence.load_model(cfg["source_model"])
    layer = emb["layer"]
    M = model.conv_layer(layer).fan_in
    payload = persistence.load_bits(emb["payload"]) if emb.get("payload") else ones_payload(emb["bits"])
    key = generate_key(emb["family"], payload.size, M, emb["key_seed"])
    hook = RegularizerHook(key, payload, layer, emb["lambda"])
    soft = None
    if situation == "distill-to-embed":
        from .attacks import teacher_probabilities

        soft = teacher_probabilities(model, train_set.images)
    model, record = train(model, train_set, tcfg, hook, test=test_set, soft_targets=soft, log=log)
    model.embed_layer_id = layer
    report = detection_report(key, layer_mean(model, layer), payload)
    extras = {
        "situation": situation,
        "layer": layer,
        "T": int(payload.size),
        "M": int(M),
        "test_error": evaluate(model, test_set),
        "embedding_loss": hook.loss(model),
        "overdetermined": bool(payload.size > M),
    }
    return model, key, payload, record, report, extras


def cmd_embed(args):
    cfg = resolve_config(args)
    log = print if args.verbose else None
    model, key, payload, record, report, extras = run_embed(cfg, log)
    persistence.save_model(model, _out(args, "model.nnwm"))
    persistence.save_key(key, _out(args, "key.json"), layer_id=extras["layer"])
    persistence.save_bits(payload, _out(args, "payload.json"))
    persistence.export_record(record, _out(args, "record.csv"))
    with open(_out(args, "report.json"), "w") as fh:
        json.dump({**extras, **report.summary()}, fh, indent=1)
        fh.write("\n")
    print(f"situation      {extras['situation']}  layer={extras['layer']} T={extras['T']} M={extras['M']}")
    print(f"test error     {extras['test_error']:.4f}")
    print(f"E_R            {extras['embedding_loss']:.6g}")
    print(report.format())
    if extras["overdetermined"]:
        print(f"warning        T={extras['T']} exceeds M={extras['M']}: embedding is overdetermined; "
              "expect elevated E_R")


def _watermark_from_args(args):
    key, stored_layer = persistence.load_key(args.key)
    layer = args.layer or stored_layer
    if layer is None:
        raise CLIError("no layer given (--layer) and the key file names none")
    payload = persistence.load_bits(args.payload) if args.payload else ones_payload(key.T)
    return Watermark(key, payload, layer)


def cmd_extract(args):
    model = persistence.load_model(args.model)
    wm = _watermark_from_args(args)
    report = detection_report(wm.key, layer_mean(model, wm.layer_id), wm.bits)
    print(f"layer          {wm.layer_id}")
    print(report.format())


def cmd_attack(args):
    if args.kind not in ATTACKS:
        raise CLIError(f"unknown attack {args.kind!r}; choose from {', '.join(ATTACKS)}")
    cfg = resolve_config(args)
    model = persistence.load_model(args.model)
    wm = _watermark_from_args(args)
    needs_data = args.kind != "prune" or args.evaluate
    train_set, test_set = _datasets(cfg) if needs_data else (None, None)
    tcfg = _train_config(cfg["train"])
    csv_path = _out(args, f"attack_{args.kind}.csv")

    if args.kind == "prune":
        rates = _float_list(args.rates)
        orders = _str_list(args.orders)
        bad = set(orders) - set(PRUNE_ORDERS)
        if bad:
            raise CLIError(f"unknown pruning order(s): {', '.join(sorted(bad))}")
        record = prune_sweep(model, wm, rates, orders, seed=args.prune_seed, test=test_set)
        persistence.export_record(record, csv_path)
        for row in record.rows:
            print(f"{row.tag:<10} alpha={row.index:.3f} E_R={row.e_r:.6g} BER={row.ber:.4f}")
    elif args.kind == "finetune":
        tuned, rep = finetune_attack(model, train_set, tcfg, wm, test=test_set)
        persistence.save_model(tuned, _out(args, "finetuned.nnwm"))
        persistence.export_record(rep.record, csv_path)
        print(f"E_R before {rep.e_r_before:.6g} after {rep.e_r_after:.6g}")
        print(f"BER before {rep.ber_before:.4f} after {rep.ber_after:.4f}  test error {rep.test_error:.4f}")
    elif args.kind == "overwrite":
        targets = _str_list(args.targets) if args.targets else [wm.layer_id]
        record = ExperimentRecord("bits")
        for n_bits in _int_list(args.bits or str(wm.key.T)):
            spec = OverwriteSpec(targets, args.family or "random", args.overwrite_seed, n_bits,
                                 tcfg, cfg["embed"]["lambda"])
            attacked, rep = overwrite_attack(model, spec, train_set, wm, test=test_set)
            record.append(n_bits, math.nan, rep.original_e_r, math.nan, rep.test_error,
                          rep.original_ber, tag="original")
            record.append(n_bits, math.nan, rep.new_e_r, math.nan, rep.test_error,
                          rep.new_ber, tag="new")
            persistence.save_model(attacked, _out(args, f"overwritten_{n_bits}.nnwm"))
            print(f"T'={n_bits:<6} original BER={rep.original_ber:.4f} E_R={rep.original_e_r:.6g} "
                  f"new BER={rep.new_ber:.4f} test error={rep.test_error:.4f}")
        persistence.export_record(record, csv_path)
    else:
        student, rep = distill_attack(model, tcfg, train_set, wm, test=test_set)
        persistence.save_model(student, _out(args, "student.nnwm"))
        persistence.export_record(rep.record, csv_path)
        print(f"teacher test error {rep.teacher_test_error:.4f}  student test error "
              f"{rep.student_test_error:.4f}  BER {rep.ber:.4f}  E_R {rep.e_r:.6g}")


def cmd_report(args):
    for path in args.records:
        record = persistence.read_record(path)
        print(f"{path}: {len(record)} rows ({record.index_name})")
        for row in record.rows if args.all else record.rows[-1:]:
            tag = f" [{row.tag}]" if row.tag else ""
            print(f"  {record.index_name}={row.index:g}{tag} E0={row.e0:.6g} E_R={row.e_r:.6g} "
                  f"total={row.total:.6g} test_error={row.test_error:.4f} BER={row.ber:.4f}")


# -- parser ----------------------------------------------------------------

def _add_training_flags(p):
    p.add_argument("--situation", help=f"one of {', '.join(SITUATIONS)}")
    p.add_argument("--source-model", dest="source_model")
    p.add_argument("--cifar-dir", dest="cifar_dir")
    p.add_argument("--data", dest="data_file", help=".npz written by the dataset command")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-drops", dest="lr_drops", type=_int_list)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--key-seed", dest="key_seed", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--domain", type=int)
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--train-per-class", dest="train_per_class", type=int)
    p.add_argument("--test-per-class", dest="test_per_class", type=int)
    p.add_argument("--data-seed", dest="data_seed", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="nnwmark", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--config")
    parser.add_argument("--out-dir", dest="out_dir", default=".")
    parser.add_argument("--threads", type=int, default=1)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate a secret key file")
    p.add_argument("--family", required=True, choices=KEY_FAMILIES)
    p.add_argument("--bits", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--layer")
    p.add_argument("--explicit", action="store_true", help="store the full matrix")
    p.add_argument("--out")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("dataset", help="write a synthetic dataset (.npz)")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--train-per-class", dest="train_per_class", type=int, default=500)
    p.add_argument("--test-per-class", dest="test_per_class", type=int, default=125)
    p.add_argument("--image-size", dest="image_size", type=int, default=16)
    p.add_argument("--noise", type=float, default=0.6)
    p.add_argument("--domain", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("embed", help="train with the embedding regularizer")
    _add_training_flags(p)
    p.add_argument("--family", choices=KEY_FAMILIES)
    p.add_argument("--bits", type=int)
    p.add_argument("--layer")
    p.add_argument("--payload", help="payload file (default: all ones)")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("extract", help="measure a watermark in a model")
    p.add_argument("--model", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--payload")
    p.add_argument("--layer")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("attack", help="run an attack and re-measure the watermark")
    p.add_argument("kind")
    p.add_argument("--model", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--payload")
    p.add_argument("--layer")
    _add_training_flags(p)
    p.add_argument("--rates", default="0,0.25,0.5,0.75")
    p.add_argument("--orders", default=",".join(PRUNE_ORDERS))
    p.add_argument("--prune-seed", dest="prune_seed", type=int, default=0)
    p.add_argument("--evaluate", action="store_true", help="also measure test error when pruning")
    p.add_argument("--bits", help="comma-separated overwrite payload lengths")
    p.add_argument("--targets", help="comma-separated layers to overwrite")
    p.add_argument("--family", choices=KEY_FAMILIES)
    p.add_argument("--overwrite-seed", dest="overwrite_seed", type=int, default=7)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("report", help="summarize record CSV files")
    p.add_argument("records", nargs="+")
    p.add_argument("--all", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        with threadpool_limits(limits=args.threads):
            args.func(args)
    except (CLIError, WatermarkError, OSError, KeyError) as exc:
        print(f"nnwmark {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
