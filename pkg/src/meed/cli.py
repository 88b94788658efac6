"""Config-driven experiment runner.

Subcommands: train, explain, evaluate, sanity, ablate, synth. Configs are
flat `key = value` text files with `[section]` headers; all randomness flows
from the seeds declared there, so every command is rerun-idempotent.

Exit codes: 0 ok, 2 configuration problem, 3 training abort, 4 shape mismatch.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import data as datamod
from . import metrics as metricsmod
from .baselines import ABLATION_VARIANTS, ablation_config
from .core import ConfigError, TrainConfig
from .sampler import hard_topk
from .trainer import (TrainingAbort, load_checkpoint, nets_from_checkpoint,
                      train)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRAINING = 3
EXIT_SHAPE = 4


class ConfigFileError(ValueError):
    pass


def parse_config_file(path: str) -> dict:
    """`[section]` headers with `key = value` lines; returns nested dict."""
    if not os.path.exists(path):
        raise ConfigFileError(f"config file not found: {path}")
    sections: dict = {}
    current = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip()
                sections.setdefault(current, {})
                continue
            if "=" not in line or current is None:
                raise ConfigFileError(f"{path}:{lineno}: expected 'key = value' "
                                      f"inside a section, got: {line}")
            key, _, val = line.partition("=")
            sections[current][key.strip()] = val.strip()
    return sections


def _get(section: dict, key: str, conv, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigFileError(f"missing required config key: {key}")
        return default
    try:
        return conv(section[key])
    except ValueError as exc:
        raise ConfigFileError(f"bad value for config key {key}: {exc}") from exc


def _int_tuple(val: str) -> tuple:
    return tuple(int(v) for v in val.split(",")) if val else ()


def _bool(val: str) -> bool:
    if val.lower() in ("true", "1", "yes"):
        return True
    if val.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {val}")


def build_dataset(cfg: dict):
    """Returns (train_set, val_set, test_set, true_subset or None)."""
    section = cfg.get("data", {})
    kind = _get(section, "kind", str, required=True)
    if kind in datamod.SYNTH_KINDS:
        spec = datamod.SyntheticSpec(
            d=_get(section, "d", int, required=True),
            true_subset=_get(section, "true_subset", _int_tuple, required=True),
            n=_get(section, "n", int, required=True),
            noise_std=_get(section, "noise_std", float, 0.0),
            kind=kind,
            seed=_get(section, "seed", int, 0))
        ds, subset = datamod.generate_synthetic(spec)
        tr, va, te = datamod.split_dataset(ds)
        return tr, va, te, subset
    if kind == "idx":
        ds = datamod.load_idx_images(
            _get(section, "images_path", str, required=True),
            _get(section, "labels_path", str, required=True),
            tuple(_get(section, "class_pair", _int_tuple, required=True)))
        tr, va, te = datamod.split_dataset(ds)
        return tr, va, te, None
    if kind == "file":
        ds, subset = datamod.import_dataset(_get(section, "path", str, required=True))
        tr, va, te = datamod.split_dataset(ds)
        sel = None
        if subset:
            sel = datamod.SelectionSet(indices=tuple(sorted(subset)), d=ds.d)
        return tr, va, te, sel
    raise ConfigFileError(f"unknown data kind: {kind}")


def build_train_config(cfg: dict, seed_override=None) -> TrainConfig:
    s = cfg.get("train", {})
    try:
        return TrainConfig(
            k=_get(s, "k", int, required=True),
            epochs=_get(s, "epochs", int, required=True),
            seed=seed_override if seed_override is not None else _get(s, "seed", int, 0),
            tau=_get(s, "tau", float, 0.5),
            lambda_u=_get(s, "lambda_u", float, 1.0),
            lambda_e=_get(s, "lambda_e", float, 0.0),
            batch_size=_get(s, "batch_size", int, 64),
            optimizer=_get(s, "optimizer", str, "adam"),
            learning_rate=_get(s, "learning_rate", float, 1e-3),
            decay=_get(s, "decay", float, 0.0),
            loss_u=_get(s, "loss_u", str, "cross-entropy"),
            use_output_feedback=_get(s, "use_output_feedback", _bool, True),
            prior_method=_get(s, "prior_method", str, "none"),
            n_projections=_get(s, "n_projections", int, 128))
    except ConfigError as exc:
        raise ConfigFileError(str(exc)) from exc


def build_model(cfg: dict, train_set):
    s = cfg.get("model", {})
    return datamod.train_given_model(
        train_set,
        hidden=_get(s, "hidden", _int_tuple, (32, 32)),
        seed=_get(s, "seed", int, 0),
        epochs=_get(s, "epochs", int, 30),
        learning_rate=_get(s, "learning_rate", float, 1e-3))


def _run_section(cfg: dict) -> dict:
    s = dict(cfg.get("run", {}))
    return {
        "out_dir": s.get("out_dir", "out"),
        "explainer_hidden": _int_tuple(s.get("explainer_hidden", "32,32")),
        "approx_hidden": _int_tuple(s.get("approx_hidden", "32,32")),
        "fusion": s.get("fusion", "concat-raw"),
        "retrain_budget": int(s.get("retrain_budget", "20")),
    }


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = parse_config_file(args.config)
    run = _run_section(cfg)
    out_dir = args.out or run["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    section = cfg.get("data", {})
    spec = datamod.SyntheticSpec(
        d=_get(section, "d", int, required=True),
        true_subset=_get(section, "true_subset", _int_tuple, required=True),
        n=_get(section, "n", int, required=True),
        noise_std=_get(section, "noise_std", float, 0.0),
        kind=_get(section, "kind", str, required=True),
        seed=args.seed if args.seed is not None else _get(section, "seed", int, 0))
    ds, subset = datamod.generate_synthetic(spec)
    path = os.path.join(out_dir, "dataset.txt")
    datamod.export_dataset(ds, subset, path)
    print(f"wrote {path} ({len(ds)} samples, d={ds.d})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = parse_config_file(args.config)
    run = _run_section(cfg)
    out_dir = args.out or run["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    train_set, _, _, _ = build_dataset(cfg)
    config = build_train_config(cfg, seed_override=args.seed)
    model = build_model(cfg, train_set)
    datamod.save_model(model, os.path.join(out_dir, "model.bin"))
    features_only = datamod.Dataset(ids=list(train_set.ids), X=train_set.X)
    train(features_only, model, config,
          explainer_hidden=run["explainer_hidden"],
          approx_hidden=run["approx_hidden"],
          fusion=run["fusion"], out_dir=out_dir)
    print(f"wrote {os.path.join(out_dir, 'checkpoint.bin')}")
    return EXIT_OK


def cmd_explain(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    explainer, _ = nets_from_checkpoint(ckpt)
    model_path = args.model or os.path.join(os.path.dirname(args.checkpoint), "model.bin")
    model = datamod.load_model(model_path)
    ds, _ = datamod.import_dataset(args.data)
    if ds.d != ckpt.meta["d"]:
        print(f"error: checkpoint expects d={ckpt.meta['d']} but data has d={ds.d}",
              file=sys.stderr)
        return EXIT_SHAPE
    k = args.k if args.k is not None else ckpt.config.k
    y = model.evaluate(ds.X)
    z = explainer.score(ds.X, y)
    out_path = args.out or "explanations.txt"
    with open(out_path, "w", encoding="utf-8") as fh:
        for i in range(len(ds)):
            sel = hard_topk(z[i], k)
            idx_txt = ";".join(str(j) for j in sel.indices)
            score_txt = ";".join(f"{z[i][j]:.4f}" for j in sel.indices)
            fh.write(f"id={ds.ids[i]} selected={idx_txt} scores={score_txt}\n")
    print(f"wrote {out_path} ({len(ds)} records)")
    return EXIT_OK


def _load_run(args):
    cfg = parse_config_file(args.config)
    run = _run_section(cfg)
    train_set, _, test_set, _ = build_dataset(cfg)
    ckpt = load_checkpoint(args.checkpoint)
    explainer, _ = nets_from_checkpoint(ckpt)
    model_path = os.path.join(os.path.dirname(args.checkpoint), "model.bin")
    if os.path.exists(model_path):
        model = datamod.load_model(model_path)
    else:
        model = build_model(cfg, train_set)
    if train_set.d != ckpt.meta["d"]:
        raise ConfigError(f"checkpoint expects d={ckpt.meta['d']} but data has d={train_set.d}")
    return cfg, run, train_set, test_set, ckpt, explainer, model


def cmd_evaluate(args) -> int:
    cfg, run, train_set, test_set, ckpt, explainer, model = _load_run(args)
    features_tr = datamod.Dataset(ids=list(train_set.ids), X=train_set.X)
    features_te = datamod.Dataset(ids=list(test_set.ids), X=test_set.X)
    report = metricsmod.evaluate_explainer(
        explainer, model, features_tr, features_te, ckpt.config.k,
        retrain_budget=run["retrain_budget"], hidden=run["approx_hidden"],
        seed=ckpt.config.seed)
    out_dir = args.out or run["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "report.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report.serialize())
    print(report.serialize(), end="")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_sanity(args) -> int:
    cfg, run, train_set, test_set, ckpt, explainer, model = _load_run(args)
    features_te = datamod.Dataset(ids=list(test_set.ids), X=test_set.X)
    rng = np.random.default_rng(ckpt.config.seed)
    score_model = metricsmod.sanity_tests(explainer, model, features_te, ckpt.config.k,
                                          mode="model-randomization", rng=rng)
    score_data = metricsmod.sanity_tests(
        explainer, model, features_te, ckpt.config.k, mode="data-randomization",
        rng=rng, train_set=train_set, config=ckpt.config,
        train_kwargs={"explainer_hidden": run["explainer_hidden"],
                      "approx_hidden": run["approx_hidden"],
                      "fusion": run["fusion"]},
        model_builder=lambda ds: build_model(cfg, ds))
    out_dir = args.out or run["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "sanity.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"SANITY-MODEL={score_model:.2f}\nSANITY-DATA={score_data:.2f}\n")
    print(f"SANITY-MODEL={score_model:.2f}")
    print(f"SANITY-DATA={score_data:.2f}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = parse_config_file(args.config)
    run = _run_section(cfg)
    out_dir = args.out or run["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    train_set, _, test_set, _ = build_dataset(cfg)
    base = build_train_config(cfg, seed_override=args.seed)
    model = build_model(cfg, train_set)
    features_tr = datamod.Dataset(ids=list(train_set.ids), X=train_set.X)
    features_te = datamod.Dataset(ids=list(test_set.ids), X=test_set.X)
    for variant in ABLATION_VARIANTS:
        config = ablation_config(variant, base)
        explainer, _, _ = train(features_tr, model, config,
                                explainer_hidden=run["explainer_hidden"],
                                approx_hidden=run["approx_hidden"],
                                fusion=run["fusion"])
        report = metricsmod.evaluate_explainer(
            explainer, model, features_tr, features_te, config.k,
            retrain_budget=run["retrain_budget"], hidden=run["approx_hidden"],
            seed=config.seed)
        slug = variant.replace("/", "").replace(" ", "-").lower()
        path = os.path.join(out_dir, f"report-{slug}.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(report.serialize())
        print(f"{variant}: FS-M={report.fs_m:.2f} FU-A={report.fu_a:.2f} -> {path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="meed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, needs_config=True, needs_checkpoint=False, extra=()):
        p = sub.add_parser(name)
        if needs_config:
            p.add_argument("--config", required=True)
        if needs_checkpoint:
            p.add_argument("--checkpoint", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        for flag, kwargs in extra:
            p.add_argument(flag, **kwargs)
        p.set_defaults(fn=fn)
        return p

    add("synth", cmd_synth)
    add("train", cmd_train)
    add("explain", cmd_explain, needs_config=False, needs_checkpoint=True,
        extra=[("--data", {"required": True}),
               ("--k", {"type": int, "default": None}),
               ("--model", {"default": None})])
    add("evaluate", cmd_evaluate, needs_checkpoint=True)
    add("sanity", cmd_sanity, needs_checkpoint=True)
    add("ablate", cmd_ablate)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigFileError, ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingAbort as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
