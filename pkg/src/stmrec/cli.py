"""Command-line entry point.

Commands: ingest, synth, train, eval, coldstart, compare, inspect-topics.
Options may come from a JSON config file (--config); explicit flags win.
Every report embeds the fully resolved configuration, and every command is
deterministic given its seed(s).

Exit codes: 0 success, 2 usage error, 3 file or data error, 4 training
abort.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .baselines import train_ctr_i, train_pmf, train_sorec
from .data import (Dataset, Hyperparams, ParseError, SchemaError, block_split,
                   ingest_dataset, write_dataset)
from .dictionary import DualAscentError
from .evaluation import cold_start_protocol, maps
from .l1qp import SolverError
from .model_io import load_model, save_model
from .social import train_sostm
from .stm import TrainingError, train_stm
from .synthetic import PRESETS, SynthConfig, generate_planted

EXIT_USAGE = 2
EXIT_FILE = 3
EXIT_TRAINING = 4

MODEL_KINDS = ("stm", "sostm", "pmf", "sorec", "ctr-i")
SOCIAL_KINDS = ("sostm", "sorec")

HYPER_KEYS = ("lambda_r", "lambda_u", "lambda_v", "lambda_s", "lambda_z",
              "k", "max_iters", "tol", "seed")
FACTOR_KEYS = ("factors", "reg", "lr", "epochs", "social_weight")
SPLIT_KEYS = ("split_seed", "user_fraction", "item_fraction")


def _add_hyper_flags(p):
    p.add_argument("--lambda-r", dest="lambda_r", type=float)
    p.add_argument("--lambda-u", dest="lambda_u", type=float)
    p.add_argument("--lambda-v", dest="lambda_v", type=float)
    p.add_argument("--lambda-s", dest="lambda_s", type=float)
    p.add_argument("--lambda-z", dest="lambda_z", type=float)
    p.add_argument("-k", "--topics", dest="k", type=int)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--tol", dest="tol", type=float)
    p.add_argument("--seed", dest="seed", type=int)


def _add_split_flags(p):
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.add_argument("--user-fraction", dest="user_fraction", type=float)
    p.add_argument("--item-fraction", dest="item_fraction", type=float)


def _add_factor_flags(p):
    p.add_argument("--factors", dest="factors", type=int)
    p.add_argument("--reg", dest="reg", type=float)
    p.add_argument("--lr", dest="lr", type=float)
    p.add_argument("--epochs", dest="epochs", type=int)
    p.add_argument("--social-weight", dest="social_weight", type=float)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="stmrec",
        description="Sparse topic model recommenders: train, evaluate, and "
                    "compare content-aware collaborative filtering models.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = {"--config": dict(dest="config", help="JSON config file; flags win"),
              "--threads": dict(dest="threads", type=int,
                                help="cap BLAS worker threads")}

    def add(name, **kwargs):
        p = sub.add_parser(name, **kwargs)
        for flag, opts in common.items():
            p.add_argument(flag, **opts)
        return p

    p = add("ingest", help="validate raw files and write a normalized dataset")
    p.add_argument("--ratings", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--social")
    p.add_argument("--groups")
    p.add_argument("--raw-features", action="store_true",
                   help="skip per-dimension standardization")
    p.add_argument("--out", required=True)

    p = add("synth", help="generate a planted-model synthetic dataset")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--features-format", choices=("csv", "binary"), default="csv")
    for name in ("dim", "k", "n-users", "n-items"):
        p.add_argument(f"--{name}", dest=name.replace("-", "_"), type=int)
    for name in ("user-sparsity", "item-sparsity", "rating-density",
                 "feature-noise", "rating-noise", "social-noise"):
        p.add_argument(f"--{name}", dest=name.replace("-", "_"), type=float)

    p = add("train", help="fit a model and write the model container")
    p.add_argument("--model", required=True, choices=MODEL_KINDS)
    p.add_argument("--data", help="dataset directory (or $STMREC_DATA_DIR)")
    p.add_argument("--out", required=True)
    p.add_argument("--raw-features", action="store_true")
    _add_hyper_flags(p)
    _add_factor_flags(p)
    _add_split_flags(p)

    p = add("eval", help="evaluate a trained model on its held-out block")
    p.add_argument("--model", required=True)
    p.add_argument("--data")
    p.add_argument("--report", help="write the JSON report here (also printed)")
    p.add_argument("--curve", help="write the percentile curve CSV here")

    p = add("coldstart", help="run the held-out-items protocol")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--unseen-fraction", dest="unseen_fraction", type=float)
    p.add_argument("--train-fractions", dest="train_fractions",
                   help="comma-separated shares, e.g. 1.0,0.8,0.6,0.4,0.2")
    p.add_argument("--raw-features", action="store_true")
    _add_hyper_flags(p)

    p = add("compare", help="train all model kinds on one split and report")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--raw-features", action="store_true")
    _add_hyper_flags(p)
    _add_factor_flags(p)
    _add_split_flags(p)

    p = add("inspect-topics", help="items with the strongest response on a topic")
    p.add_argument("--model", required=True)
    p.add_argument("--topic", type=int, required=True)
    p.add_argument("--top", type=int, default=10)

    return parser


def _load_config(path):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ParseError(f"{path}: config must be a JSON object")
    return cfg


def _resolve(args, config, keys, defaults):
    """Merge flag values over config-file values over defaults."""
    out = {}
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in config:
            out[key] = config[key]
        else:
            out[key] = defaults[key]
    return out


def _cap_threads(n):
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(n)
    except ImportError:
        pass


def _data_dir(args):
    path = getattr(args, "data", None) or os.environ.get("STMREC_DATA_DIR")
    if not path:
        raise FileNotFoundError(
            "no dataset directory: pass --data or set STMREC_DATA_DIR")
    if not os.path.isdir(path):
        raise FileNotFoundError(f"dataset directory not found: {path}")
    return path


def _dataset_paths(dir_path):
    ratings = os.path.join(dir_path, "ratings.csv")
    if not os.path.exists(ratings):
        raise FileNotFoundError(f"missing ratings file: {ratings}")
    features = None
    for name in ("features.csv", "features.bin"):
        candidate = os.path.join(dir_path, name)
        if os.path.exists(candidate):
            features = candidate
            break
    if features is None:
        raise FileNotFoundError(f"missing features file in {dir_path}")
    social = os.path.join(dir_path, "social.csv")
    groups = os.path.join(dir_path, "groups.csv")
    return {"ratings": ratings, "features": features,
            "social": social if os.path.exists(social) else None,
            "groups": groups if os.path.exists(groups) else None}


def _load_dataset(dir_path, standardize=True) -> Dataset:
    paths = _dataset_paths(dir_path)
    return ingest_dataset(paths["ratings"], paths["features"],
                          paths["social"], paths["groups"],
                          standardize=standardize)


def _hyper_from(resolved) -> Hyperparams:
    return Hyperparams(**{key: resolved[key] for key in HYPER_KEYS})


def _split_fingerprint(masks) -> str:
    digest = hashlib.sha256(np.flatnonzero(masks.test).tobytes())
    return digest.hexdigest()[:16]


def _train_one(kind, dataset, masks, hyper, factor_cfg):
    if kind == "stm":
        return train_stm(dataset, masks, hyper)
    if kind == "sostm":
        return train_sostm(dataset, masks, hyper)
    if kind == "ctr-i":
        return train_ctr_i(dataset, masks, hyper)
    if kind == "pmf":
        return train_pmf(dataset, masks, n_factors=factor_cfg["factors"],
                         reg=factor_cfg["reg"], lr=factor_cfg["lr"],
                         iters=factor_cfg["epochs"], seed=hyper.seed)
    if kind == "sorec":
        return train_sorec(dataset, masks, n_factors=factor_cfg["factors"],
                           reg=factor_cfg["reg"],
                           lam_social=factor_cfg["social_weight"],
                           lr=factor_cfg["lr"], iters=factor_cfg["epochs"],
                           seed=hyper.seed)
    raise ValueError(f"unknown model kind {kind!r}")


def _require_social(kind, dataset, dir_path):
    if kind in SOCIAL_KINDS and dataset.social is None:
        raise FileNotFoundError(
            f"model {kind!r} needs social links but {dir_path} has no social.csv")


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _report_body(report, resolved):
    hist, edges = np.histogram(list(report.aps_per_user.values()),
                               bins=10, range=(0.0, 100.0))
    return {
        "maps": report.maps,
        "n_evaluated_users": report.n_evaluated_users,
        "n_excluded_users": report.n_excluded_users,
        "aps_histogram": {"bin_edges": edges.tolist(),
                          "counts": hist.tolist()},
        "config": resolved,
    }


def cmd_ingest(args, config):
    dataset = ingest_dataset(args.ratings, args.features, args.social,
                             args.groups, standardize=not args.raw_features)
    paths = write_dataset(dataset, args.out)
    print(json.dumps({"written": paths, "n_users": dataset.n_users,
                      "n_items": dataset.n_items,
                      "n_ratings": dataset.ratings.n_entries}))
    return 0


def cmd_synth(args, config):
    if args.preset:
        base = dataclasses.asdict(PRESETS[args.preset])
    else:
        base = dataclasses.asdict(SynthConfig())
    for key in base:
        flag = getattr(args, key, None)
        if flag is not None:
            base[key] = flag
        elif key in config:
            base[key] = config[key]
    synth_config = SynthConfig(**base)
    dataset, truth = generate_planted(synth_config)
    paths = write_dataset(dataset, args.out, features_format=args.features_format)
    sidecar = os.path.join(args.out, "ground_truth.npz")
    np.savez_compressed(sidecar, dictionary=truth.dictionary,
                        user_profiles=truth.user_profiles,
                        item_profiles=truth.item_profiles,
                        affinity=truth.affinity,
                        oracle_maps=np.array(truth.oracle_maps),
                        config_json=np.array(json.dumps(base)))
    paths["ground_truth"] = sidecar
    print(json.dumps({"written": paths, "oracle_maps": truth.oracle_maps,
                      "config": base}))
    return 0


def _resolved_training(args, config):
    hyper_defaults = dataclasses.asdict(Hyperparams())
    factor_defaults = {"factors": 30, "reg": 0.05, "lr": 0.01, "epochs": 200,
                       "social_weight": 1.0}
    split_defaults = {"split_seed": 0, "user_fraction": 0.5,
                      "item_fraction": 0.5}
    resolved = _resolve(args, config, HYPER_KEYS, hyper_defaults)
    resolved.update(_resolve(args, config, FACTOR_KEYS, factor_defaults))
    resolved.update(_resolve(args, config, SPLIT_KEYS, split_defaults))
    resolved["standardize"] = not getattr(args, "raw_features", False)
    return resolved


def cmd_train(args, config):
    resolved = _resolved_training(args, config)
    dir_path = _data_dir(args)
    dataset = _load_dataset(dir_path, standardize=resolved["standardize"])
    _require_social(args.model, dataset, dir_path)
    masks = block_split(dataset, resolved["split_seed"],
                        resolved["user_fraction"], resolved["item_fraction"])
    hyper = _hyper_from(resolved)
    model = _train_one(args.model, dataset, masks, hyper, resolved)
    meta = {"data_dir": os.path.abspath(dir_path), "model": args.model,
            "config": resolved}
    save_model(model, args.out, extra_meta=meta)
    trace = getattr(model, "objective_trace", None) or getattr(model, "loss_trace")
    trace_path = args.out + ".trace.csv"
    with open(trace_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective"])
        for it, value in enumerate(trace):
            w.writerow([it, repr(float(value))])
    print(json.dumps({"model": args.out, "trace": trace_path,
                      "final_objective": float(trace[-1]),
                      "iterations": len(trace) - 1, "config": resolved}))
    return 0


def cmd_eval(args, config):
    model, meta = load_model(args.model)
    train_cfg = meta.get("config", {})
    dir_path = getattr(args, "data", None) or os.environ.get("STMREC_DATA_DIR") \
        or meta.get("data_dir")
    if not dir_path or not os.path.isdir(dir_path):
        raise FileNotFoundError(f"dataset directory not found: {dir_path}")
    dataset = _load_dataset(dir_path, standardize=train_cfg.get("standardize", True))
    masks = block_split(dataset, train_cfg.get("split_seed", 0),
                        train_cfg.get("user_fraction", 0.5),
                        train_cfg.get("item_fraction", 0.5))
    report = maps(model, dataset, masks)
    body = _report_body(report, {"model_file": args.model, "data_dir": dir_path,
                                 "training": train_cfg})
    print(json.dumps(body, sort_keys=True))
    if args.report:
        _write_json(args.report, body)
    if args.curve:
        with open(args.curve, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["percentile", "cumulative_fraction"])
            for g, frac in report.pps_curve:
                w.writerow([g, repr(float(frac))])
    return 0


def cmd_coldstart(args, config):
    hyper_defaults = dataclasses.asdict(Hyperparams())
    resolved = _resolve(args, config, HYPER_KEYS, hyper_defaults)
    resolved["unseen_fraction"] = (
        args.unseen_fraction if args.unseen_fraction is not None
        else config.get("unseen_fraction", 0.2))
    if args.train_fractions is not None:
        fractions = [float(f) for f in args.train_fractions.split(",")]
    else:
        fractions = config.get("train_fractions", [1.0, 0.8, 0.6, 0.4, 0.2])
    resolved["train_fractions"] = fractions
    resolved["standardize"] = not args.raw_features

    dir_path = _data_dir(args)
    dataset = _load_dataset(dir_path, standardize=resolved["standardize"])
    report = cold_start_protocol(dataset, seed=resolved["seed"],
                                 unseen_fraction=resolved["unseen_fraction"],
                                 train_fractions=fractions,
                                 hyper=_hyper_from(resolved))
    body = {
        "unseen_items": report.unseen_items.tolist(),
        "results": [{"train_fraction": f, "maps": m, "n_evaluated_users": n}
                    for f, m, n in report.results],
        "config": resolved,
    }
    _write_json(args.out, body)
    print(json.dumps({"out": args.out,
                      "results": body["results"]}, sort_keys=True))
    return 0


def cmd_compare(args, config):
    resolved = _resolved_training(args, config)
    dir_path = _data_dir(args)
    dataset = _load_dataset(dir_path, standardize=resolved["standardize"])
    for kind in SOCIAL_KINDS:
        _require_social(kind, dataset, dir_path)
    masks = block_split(dataset, resolved["split_seed"],
                        resolved["user_fraction"], resolved["item_fraction"])
    hyper = _hyper_from(resolved)
    audit = {"split_seed": resolved["split_seed"],
             "user_fraction": resolved["user_fraction"],
             "item_fraction": resolved["item_fraction"],
             "n_train": int(np.count_nonzero(masks.train)),
             "n_test": int(np.count_nonzero(masks.test)),
             "test_fingerprint": _split_fingerprint(masks)}
    rows = {}
    for kind in MODEL_KINDS:
        model = _train_one(kind, dataset, masks, hyper, resolved)
        report = maps(model, dataset, masks)
        rows[kind] = {"maps": report.maps,
                      "n_evaluated_users": report.n_evaluated_users,
                      "split": dict(audit)}
    body = {"results": rows, "split": audit, "config": resolved}
    _write_json(args.out, body)
    print(json.dumps({k: rows[k]["maps"] for k in MODEL_KINDS}, sort_keys=True))
    return 0


def cmd_inspect_topics(args, config):
    from .evaluation import topic_top_items
    model, _ = load_model(args.model)
    items = topic_top_items(model.V, args.topic, args.top)
    print(json.dumps({"topic": args.topic, "items": items}))
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "coldstart": cmd_coldstart,
    "compare": cmd_compare,
    "inspect-topics": cmd_inspect_topics,
}


def run_command(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _cap_threads(getattr(args, "threads", None))
    try:
        config = _load_config(getattr(args, "config", None))
        return COMMANDS[args.command](args, config)
    except (OSError, ParseError, SchemaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FILE
    except (TrainingError, SolverError, DualAscentError) as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_TRAINING


def main():
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
