"""Command-line entry point: train / predict / encode / experiment.

Configuration lives in a JSON file (validated strictly: unknown keys are
rejected before any computation) with per-invocation flag overrides.  Data
paths that are not absolute and do not exist relative to the working
directory are resolved against $SSDL_DATA_DIR.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import data as data_mod
from . import eval as eval_mod
from .errors import InvalidConfigurationError, NumericalError, SsdlError
from .inference import encode, predict_batch
from .model import HyperParams
from .solver import FistaParams
from .trainer import BatchSpec, TrainConfig, load_model, save_model, train

DATA_DIR_ENV = "SSDL_DATA_DIR"

_SCHEMA = {
    "data": {"format", "images", "labels", "path", "label_column",
             "delimiter", "classes", "per_class", "dim", "separation",
             "seed", "directory"},
    "preprocess": None,  # list of step strings
    "split": {"labelled_per_class", "unlabelled_per_class", "test_per_class",
              "seed"},
    "train": {"lam", "beta", "gamma", "mu", "alpha", "p", "k", "r",
              "outer_max_iters", "outer_rel_tol", "fista_max_iters",
              "fista_rel_tol", "fista_tau0", "fista_eta", "seed",
              "batch_count", "batch_epochs", "denoise_warmup"},
    "experiment": {"kind", "seed", "repetitions", "counts", "noise_levels",
                   "variants", "grid", "lam", "p", "alpha", "outer_iters",
                   "rel_tol", "init_seeds", "labelled_per_class",
                   "test_per_class"},
}

# defaults mirror the USPS digit protocol of the sweep experiments
_TRAIN_DEFAULTS = {
    "lam": 0.3, "beta": 0.5, "gamma": 0.5, "mu": 1.0, "alpha": 1.0,
    "p": 200, "k": 8, "r": 1.7,
    "outer_max_iters": 30, "outer_rel_tol": 1e-4,
    "fista_max_iters": 50, "fista_rel_tol": 1e-6,
    "fista_tau0": 1.0, "fista_eta": 1.5,
    "seed": 0, "batch_count": None, "batch_epochs": None,
    "denoise_warmup": 0,
}


def load_config(path) -> dict:
    with open(path) as f:
        try:
            cfg = json.load(f)
        except json.JSONDecodeError as exc:
            raise InvalidConfigurationError(f"{path}: invalid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise InvalidConfigurationError(f"{path}: config must be an object")
    for section, content in cfg.items():
        if section not in _SCHEMA:
            raise InvalidConfigurationError(
                f"{path}: unknown config section {section!r}")
        allowed = _SCHEMA[section]
        if allowed is None:
            if not isinstance(content, list):
                raise InvalidConfigurationError(
                    f"{path}: {section} must be a list")
            continue
        if not isinstance(content, dict):
            raise InvalidConfigurationError(
                f"{path}: {section} must be an object")
        for key in content:
            if key not in allowed:
                raise InvalidConfigurationError(
                    f"{path}: unknown key {section}.{key!r}")
    return cfg


def resolve_path(path):
    if os.path.isabs(path) or os.path.exists(path):
        return path
    base = os.environ.get(DATA_DIR_ENV)
    if base:
        candidate = os.path.join(base, path)
        if os.path.exists(candidate):
            return candidate
    return path


def load_dataset(cfg: dict):
    """Build the dataset(s) named by the config's data section.

    Returns (train_ds, test_ds_or_None).
    """
    section = cfg.get("data")
    if not section:
        raise InvalidConfigurationError("config has no data section")
    fmt = section.get("format")
    if fmt == "idx":
        ds = data_mod.load_idx(resolve_path(section["images"]),
                               resolve_path(section["labels"]))
        return ds, None
    if fmt == "delimited":
        ds = data_mod.load_delimited(resolve_path(section["path"]),
                                     label_column=section.get(
                                         "label_column", 0),
                                     delimiter=section.get("delimiter"))
        return ds, None
    if fmt == "blobs":
        ds = data_mod.synthetic_blobs(
            class_count=section.get("classes", 2),
            per_class=section.get("per_class", 100),
            dim=section.get("dim", 2),
            separation=section.get("separation", 4.0),
            seed=section.get("seed", 0))
        return ds, None
    if fmt == "usps":
        directory = resolve_path(section.get("directory", "usps"))
        return data_mod.load_usps(directory)
    raise InvalidConfigurationError(f"unknown data format {fmt!r}")


def apply_preprocess(cfg: dict, *datasets):
    steps = cfg.get("preprocess", [])
    out = []
    for ds in datasets:
        if ds is None:
            out.append(None)
        else:
            out.append(data_mod.LabeledDataset(
                X=data_mod.preprocess(ds.X, steps), y=ds.y,
                class_count=ds.class_count))
    return out


def build_train_config(cfg: dict, seed_override=None) -> TrainConfig:
    section = {**_TRAIN_DEFAULTS, **cfg.get("train", {})}
    hp = HyperParams(lam=section["lam"], beta=section["beta"],
                     gamma=section["gamma"], mu=section["mu"],
                     alpha=section["alpha"], p=section["p"],
                     k=section["k"], r=section["r"])
    fista = FistaParams(tau0=section["fista_tau0"], eta=section["fista_eta"],
                        max_iters=section["fista_max_iters"],
                        rel_tol=section["fista_rel_tol"])
    batching = None
    if section["batch_count"]:
        batching = BatchSpec(count=section["batch_count"],
                             epochs=section["batch_epochs"] or 1)
    seed = seed_override if seed_override is not None else section["seed"]
    return TrainConfig(hp=hp, outer_max_iters=section["outer_max_iters"],
                       outer_rel_tol=section["outer_rel_tol"], fista=fista,
                       batching=batching, seed=seed,
                       denoise_warmup=section["denoise_warmup"])


def build_split_spec(cfg: dict) -> data_mod.SplitSpec:
    section = cfg.get("split")
    if not section:
        raise InvalidConfigurationError("config has no split section")
    return data_mod.SplitSpec(
        labelled_per_class=section.get("labelled_per_class", 0),
        unlabelled_per_class=section.get("unlabelled_per_class", 0),
        test_per_class=section.get("test_per_class", 0),
        seed=section.get("seed", 0))


def load_input_matrix(path, fmt: str, delimiter=None):
    """Columns-of-samples matrix for predict/encode inputs."""
    path = resolve_path(path)
    if fmt == "idx":
        return data_mod.load_idx_images(path)
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            cells = line.split(delimiter) if delimiter else line.split()
            rows.append([float(c) for c in cells])
    if not rows:
        return np.zeros((0, 0))
    return np.asarray(rows, dtype=float).T


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    ds, _ = load_dataset(cfg)
    ds, = apply_preprocess(cfg, ds)
    sp = data_mod.split(ds, build_split_spec(cfg))
    config = build_train_config(cfg, seed_override=args.seed)
    steps = cfg.get("preprocess", [])
    X = np.hstack([sp.X_l, sp.X_u])
    log_path = args.log or (args.output + ".log.csv")
    try:
        state = train(X, sp.Y, config)
    except NumericalError as exc:
        with open(log_path, "w") as f:
            f.write("iteration,objective\n")
            for i, obj in enumerate(exc.history or []):
                f.write(f"{i},{obj!r}\n")
        print(f"training diverged at iteration {exc.iteration}; "
              f"diagnostic log in {log_path}", file=sys.stderr)
        return 3
    save_model(state, args.output)
    with open(log_path, "w") as f:
        f.write("iteration,objective\n")
        for i, obj in enumerate(state.history):
            f.write(f"{i},{obj!r}\n")
    print(f"model written to {args.output} "
          f"({len(state.history)} outer iterations, preprocess={steps})")
    return 0


def cmd_predict(args) -> int:
    state = load_model(args.model)
    X_new = load_input_matrix(args.input, args.input_format, args.delimiter)
    if X_new.size and X_new.shape[0] != state.D.shape[0]:
        raise InvalidConfigurationError(
            f"model expects {state.D.shape[0]} features, input has "
            f"{X_new.shape[0]}")
    C = state.clf.W.shape[0]
    fista = FistaParams()
    header = "index,predicted," + ",".join(f"score_{c}" for c in range(C))
    with open(args.output, "w") as f:
        f.write(header + "\n")
        if X_new.size == 0:
            print(f"predictions written to {args.output} (0 samples)")
            return 0
        classes, scores = predict_batch(state.clf, state.D, state.A, state.X,
                                        X_new, state.hp, fista,
                                        state.graph.omega)
        for j in range(X_new.shape[1]):
            cells = ",".join(repr(float(s)) for s in scores[:, j])
            f.write(f"{j},{classes[j]},{cells}\n")
    print(f"predictions written to {args.output} ({X_new.shape[1]} samples)")
    return 0


def cmd_encode(args) -> int:
    state = load_model(args.model)
    X_new = load_input_matrix(args.input, args.input_format, args.delimiter)
    if X_new.size and X_new.shape[0] != state.D.shape[0]:
        raise InvalidConfigurationError(
            f"model expects {state.D.shape[0]} features, input has "
            f"{X_new.shape[0]}")
    p = state.D.shape[1]
    fista = FistaParams()
    header = "index," + ",".join(f"code_{i}" for i in range(p))
    with open(args.output, "w") as f:
        f.write(header + "\n")
        for j in range(X_new.shape[1] if X_new.size else 0):
            enc = encode(X_new[:, j], state.D, state.A, state.X, state.hp,
                         fista, state.graph.omega)
            f.write(f"{j}," + ",".join(repr(float(v)) for v in enc.code)
                    + "\n")
    n = X_new.shape[1] if X_new.size else 0
    print(f"codes written to {args.output} ({n} samples)")
    return 0


def cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    section = cfg.get("experiment", {})
    kind = args.kind or section.get("kind")
    train_ds, test_ds = load_dataset(cfg)
    train_ds, test_ds = apply_preprocess(cfg, train_ds, test_ds)
    seed = args.seed if args.seed is not None else section.get("seed", None)

    if kind in ("laplacian-comparison", "noise-sweep"):
        labelled = section.get("labelled_per_class", 50)
        master = 0 if seed is None else seed
        if test_ds is None:
            sp = data_mod.split(train_ds, data_mod.SplitSpec(
                labelled, 0, section.get("test_per_class", 50),
                seed=master))
            lab_ds = data_mod.LabeledDataset(X=sp.X_l, y=sp.y_l,
                                             class_count=train_ds.class_count)
            test_ds = data_mod.LabeledDataset(X=sp.X_test, y=sp.y_test,
                                              class_count=train_ds.class_count)
        else:
            sp = data_mod.split(train_ds, data_mod.SplitSpec(
                labelled, 0, 0, seed=master))
            lab_ds = data_mod.LabeledDataset(X=sp.X_l, y=sp.y_l,
                                             class_count=train_ds.class_count)
        noise = section.get("noise_levels", [0.0]) \
            if kind == "noise-sweep" else [0.0]
        report = eval_mod.run_laplacian_comparison(
            lab_ds, test_ds,
            variants=section.get("variants", ["none", "lle"]),
            grid=section.get("grid"),
            noise_levels=noise,
            seed=0 if seed is None else seed,
            lam=section.get("lam", 0.5), p=section.get("p", 128),
            alpha=section.get("alpha", 1.0),
            outer_iters=section.get("outer_iters", 15),
            rel_tol=section.get("rel_tol", 1e-4),
            init_seeds=section.get("init_seeds", 3),
            jobs=args.jobs)
    elif kind == "unlabelled-sweep":
        config = build_train_config(cfg, seed_override=seed)
        report = eval_mod.run_unlabelled_sweep(
            train_ds,
            section.get("counts", list(eval_mod.DEFAULT_SWEEP_COUNTS)),
            config,
            repetitions=section.get("repetitions", 5),
            labelled_per_class=section.get("labelled_per_class", 20),
            test_per_class=section.get("test_per_class", 100),
            jobs=args.jobs)
    elif kind == "benchmark":
        config = build_train_config(cfg, seed_override=seed)
        spec = build_split_spec(cfg)
        report = eval_mod.run_benchmark(
            train_ds, spec, config,
            repetitions=section.get("repetitions", 5),
            include_beta0_ablation=bool(section.get("variants")
                                        and "beta0" in section["variants"]),
            jobs=args.jobs)
    else:
        raise InvalidConfigurationError(
            f"unknown experiment kind {kind!r}; pick one of "
            f"laplacian-comparison, noise-sweep, unlabelled-sweep, benchmark")

    eval_mod.emit_report(report, args.output, args.format)
    print(f"report written to {args.output} ({len(report.rows)} rows)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssdl",
        description="semi-supervised dictionary learning workflows")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--output", default="model.ssdl")
    p_train.add_argument("--log", default=None,
                         help="objective log path (default <output>.log.csv)")
    p_train.set_defaults(func=cmd_train)

    for name, fn, out_default in (("predict", cmd_predict, "predictions.csv"),
                                  ("encode", cmd_encode, "codes.csv")):
        p = sub.add_parser(name)
        p.add_argument("--model", required=True)
        p.add_argument("--input", required=True)
        p.add_argument("--input-format", choices=["delimited", "idx"],
                       default="delimited")
        p.add_argument("--delimiter", default=None)
        p.add_argument("--output", default=out_default)
        p.set_defaults(func=fn)

    p_exp = sub.add_parser("experiment", help="run an experiment protocol")
    p_exp.add_argument("--config", required=True)
    p_exp.add_argument("--kind", default=None,
                       choices=["laplacian-comparison", "noise-sweep",
                                "unlabelled-sweep", "benchmark"])
    p_exp.add_argument("--seed", type=int, default=None)
    p_exp.add_argument("--jobs", type=int, default=1)
    p_exp.add_argument("--output", default="report.json")
    p_exp.add_argument("--format", choices=["csv", "structured"],
                       default="structured")
    p_exp.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SsdlError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
