"""Command-line pipeline: one binary with subcommands covering simulator
generation, dataset builds, training, prediction, evaluation, search
baselines and report rendering.

Exit codes: 0 success, 1 usage/config error, 2 data or contract error.
All diagnostics go to standard error; machine-readable output goes only
to files or standard out.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .datagen import build_dataset, load_dataset, save_dataset
from .errors import ConfigError, InverseForgeError
from .evaluation import (crossfold_report, emit_report, evaluate_model,
                         search_baseline)
from .inference import (InferenceConfig, designs_to_json, parse_query,
                        predict_designs)
from .simulator import TEMPERATURES, SimulatorSpec
from .training import TrainConfig, load, restore_model, save, train

N_FOLDS = 5


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as ConfigError (exit 1)."""

    def error(self, message):
        raise ConfigError(message)


def _resolve_seed(value):
    if value is not None:
        return int(value)
    env = os.environ.get("INVERSE_FORGE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"INVERSE_FORGE_SEED={env!r} is not an integer")
    return 0


def _read_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}")


def _read_text(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}")


def _load_sim(path: str) -> SimulatorSpec:
    try:
        return SimulatorSpec.from_json(_read_text(path))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed simulator spec {path}: {exc}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_sim(args) -> int:
    spec = SimulatorSpec(seed=_resolve_seed(args.seed))
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(spec.to_json())
        fh.write("\n")
    print(f"simulator spec (seed {spec.seed}) -> {args.out}", file=sys.stderr)
    return 0


def cmd_gen_data(args) -> int:
    spec = _load_sim(args.sim)
    ds = build_dataset(args.kind, args.size, spec, seed=_resolve_seed(args.seed),
                       symmetrize=args.symmetrize, bo_budget=args.bo_budget,
                       base=args.base)
    path = save_dataset(ds, args.out)
    print(f"{len(ds)} rows ({args.kind}) -> {path}", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    doc = _read_json(args.config)
    if args.seed is not None:
        doc["seed"] = int(args.seed)
    if args.epochs is not None:
        doc["epochs"] = int(args.epochs)
    cfg = TrainConfig.from_dict(doc)
    data = load_dataset(args.data)
    if not (0 <= args.fold < N_FOLDS):
        raise ConfigError(f"--fold must be in 0..{N_FOLDS - 1}, got {args.fold}")
    train_folds = [f for f in range(N_FOLDS) if f != args.fold]
    ckpt = train(cfg, data, train_folds)
    path = save(ckpt, args.out)
    print(f"{cfg.model_kind} trained on folds {train_folds} "
          f"({len(ckpt.log)} epochs) -> {path}", file=sys.stderr)
    return 0


def cmd_predict(args) -> int:
    model = restore_model(load(args.ckpt))
    v, mask = parse_query(_read_text(args.query), model.labels, TEMPERATURES)
    cfg = InferenceConfig(n_latent=args.n, seed=_resolve_seed(args.seed))
    pset = predict_designs(model, v, mask if mask.ratio > 0 else None, cfg)
    text = designs_to_json(pset)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"{len(pset.candidates)} candidates -> {args.out}", file=sys.stderr)
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args) -> int:
    ckpt = load(args.ckpt)
    data = load_dataset(args.data)
    trained_on = set(ckpt.meta.get("train_folds", []))
    test_folds = [f for f in range(N_FOLDS) if f not in trained_on] or [N_FOLDS - 1]
    cfg = InferenceConfig(n_latent=args.n, seed=_resolve_seed(args.seed))
    evals = [evaluate_model(ckpt, data, f, args.mask_ratio, cfg)
             for f in test_folds]
    summary = {"model_kind": ckpt.config.model_kind,
               "mask_ratio": args.mask_ratio,
               "test_folds": test_folds,
               "variants": {}}
    for variant in ("min", "mean", "max"):
        rep = crossfold_report(evals, variant)
        summary["variants"][variant] = {
            "relative_mean": repr(rep.relative_mean),
            "relative_std": repr(rep.relative_std),
            "absolute_mean": repr(rep.absolute_mean),
            "absolute_std": repr(rep.absolute_std),
        }
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"evaluation -> {args.out}", file=sys.stderr)
    else:
        sys.stdout.write(text)
    return 0


def cmd_search(args) -> int:
    spec = _load_sim(args.sim)
    doc = _read_json(args.target)
    if set(doc) != {"observed"}:
        raise ConfigError("target file must hold exactly one key 'observed'")
    n_temps = len(TEMPERATURES)
    flat = np.zeros(spec.n_phases * n_temps)
    from .inference import parse_query as _pq
    v, mask = _pq(json.dumps(doc), spec.labels, TEMPERATURES)
    ind = mask.indicator(spec.n_phases, n_temps).astype(bool)
    flat[~ind] = v
    trace = search_baseline(args.method, spec, flat,
                            mask if mask.ratio > 0 else None,
                            args.budget, seed=_resolve_seed(args.seed))
    lines = ["method,simulator_calls,best_error"]
    for calls, best in trace.steps:
        lines.append(f"{trace.method},{calls},{repr(best)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"{args.method} trace ({len(trace.steps)} calls) -> {args.out}",
              file=sys.stderr)
    else:
        sys.stdout.write(text)
    return 0


def cmd_report(args) -> int:
    results = _read_json(args.inp)
    written = emit_report(results, args.out)
    print(f"{len(written)} report files -> {args.out}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _build_parser() -> _Parser:
    parser = _Parser(prog="inverse-forge",
                     description="Inverse alloy design from partial phase diagrams")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-sim", help="write a seeded simulator spec")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_sim)

    p = sub.add_parser("gen-data", help="build a simulated dataset")
    p.add_argument("--kind", choices=("neighborhood", "bo_driven"),
                   required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--sim", required=True, help="simulator spec JSON path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--symmetrize", action="store_true",
                   help="append pair-swapped twins of every row")
    p.add_argument("--base", default=None,
                   help="restrict neighborhood sampling to one base alloy")
    p.add_argument("--bo-budget", type=int, default=200)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model on four folds")
    p.add_argument("--config", required=True, help="TrainConfig JSON path")
    p.add_argument("--data", required=True)
    p.add_argument("--fold", type=int, required=True, help="held-out test fold")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="candidate compositions for a query")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--query", required=True, help="JSON query path")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="error report on the held-out fold")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mask-ratio", type=float, default=0.0)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("search", help="simulator-driven search baseline")
    p.add_argument("--method", choices=("random", "ga", "bo"), required=True)
    p.add_argument("--sim", required=True)
    p.add_argument("--target", required=True, help="JSON target path")
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("report", help="render result tables and figures")
    p.add_argument("--in", dest="inp", required=True,
                   help="results JSON path")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InverseForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
