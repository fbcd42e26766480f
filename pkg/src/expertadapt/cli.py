"""``expertadapt`` command line.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments as exps
from .data import load_manifest, restrict, sample_indices, save_dataset
from .errors import ConfigError, DataError, ExpertAdaptError
from .model import build_model
from .synth import generate_dataset, load_styles
from .training import evaluate_model, finetune, load_checkpoint, save_checkpoint, train

log = logging.getLogger("expertadapt")

EXPERIMENTS = {"expert-matrix": "expert_matrix", "ann-count": "ann_count", "expert-count": "expert_count"}


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None


def _spec(args, **overrides) -> exps.ExperimentSpec:
    """Experiment spec from --config/--profile plus command-line overrides."""
    raw = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {args.config} does not exist") from None
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    raw = dict(raw)
    for key, value in overrides.items():
        if value is not None:
            raw[key] = value
    return exps.spec_from_dict(raw, getattr(args, "profile", None))


def _train_cfg(spec, args):
    cfg = spec.train
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "steps", None) is not None:
        field = "finetune_steps" if args.command == "finetune" else "train_steps"
        cfg = replace(cfg, **{field: args.steps})
    return cfg


def _jsonl_writer(path):
    if path is None:
        return None, None
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    handle = open(path, "w")

    def write(entry):
        handle.write(json.dumps(entry, sort_keys=True) + "\n")

    return write, handle


# ---------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    spec = _spec(args)
    synth = spec.synth
    updates = {}
    if args.cases is not None:
        updates["n_cases"] = args.cases
    if args.size is not None:
        updates["height"], updates["width"] = args.size
    if args.seed is not None:
        updates["base_seed"] = args.seed
    if args.test_cases is not None:
        updates["n_test"] = args.test_cases
    if args.styles is not None:
        updates["styles"] = tuple(load_styles(args.styles))
    synth = replace(synth, **updates) if updates else synth
    ds = generate_dataset(synth)
    save_dataset(ds, args.out)
    print(f"wrote {ds.n_cases} cases annotated by experts {sorted(ds.roster)} to {args.out}")
    return 0


def cmd_train(args) -> int:
    spec = _spec(args)
    cfg = _train_cfg(spec, args)
    ds = load_manifest(args.data)
    if "train" in ds.splits:
        ds = ds.split("train")
    combo = args.experts
    ds = restrict(ds, combo, ds.case_indices)
    model = build_model(replace(spec.model, experts=tuple(combo)), cfg.seed)
    write, handle = _jsonl_writer(args.log)
    try:
        ckpt = train(model, ds, combo, cfg, spec.augment, write)
    finally:
        if handle:
            handle.close()
    save_checkpoint(ckpt, args.out)
    print(f"trained experts {combo} for {cfg.train_steps} steps; final loss {ckpt.loss_log[-1]['loss_norm']:.4f}; saved {args.out}")
    return 0


def cmd_finetune(args) -> int:
    spec = _spec(args)
    cfg = _train_cfg(spec, args)
    if args.scope:
        cfg = replace(cfg, finetune_scope=args.scope)
    if args.init:
        cfg = replace(cfg, finetune_init=args.init)
    base = load_checkpoint(args.checkpoint)
    ds = load_manifest(args.data)
    if "train" in ds.splits:
        ds = ds.split("train")
    if args.expert not in ds.roster:
        raise DataError(f"dataset has no masks from expert {args.expert}")
    count = args.count if args.count is not None else ds.n_cases
    subset = ds.at_positions(sample_indices(args.start, count, ds.n_cases))
    pairs = [(c.image, c.masks[args.expert]) for c in subset]
    write, handle = _jsonl_writer(args.log)
    try:
        ckpt = finetune(base, pairs, args.expert, cfg, spec.augment, write)
    finally:
        if handle:
            handle.close()
    save_checkpoint(ckpt, args.out)
    print(f"fine-tuned expert {args.expert} on cases {list(subset.case_indices)}; saved {args.out}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    ds = load_manifest(args.data)
    if args.split:
        ds = ds.split(args.split)
    ref = args.ref if args.ref is not None else args.branch
    res = evaluate_model(ckpt, ds, args.branch, ref)
    doc = {"branch": args.branch, "ref_expert": ref, "n_cases": ds.n_cases, "n_undefined": res.n_undefined,
           "metrics": res.mean.as_dict()}
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_experiment(args) -> int:
    kind = EXPERIMENTS[args.kind]
    overrides = {"kind": kind, "output_dir": args.out, "seed": args.seed, "dataset_root": args.data}
    if args.new_experts:
        overrides["new_experts"] = args.new_experts
    spec = _spec(args, **overrides)
    runner = exps.Runner(spec, resume=args.resume, progress=lambda msg: log.info(msg))
    runner.run()
    text = exps.render(exps.tables_from_ledger(spec.output_dir, kind, spec), args.format)
    _emit(text, args.output)
    return 0


def cmd_report(args) -> int:
    kind = EXPERIMENTS[args.kind]
    spec = None
    if args.config or args.profile:
        spec = _spec(args, kind=kind, output_dir=args.out)
    text = exps.render(exps.tables_from_ledger(args.out, kind, spec), args.format)
    _emit(text, args.output)
    return 0


def _emit(text: str, path) -> None:
    if path:
        Path(path).write_text(text)
    sys.stdout.write(text)


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="expertadapt", description="Expert-adaptive segmentation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="experiment config (JSON)")
        p.add_argument("--profile", choices=exps.PROFILES, help="default sizes: desk (CPU) or paper")
        p.add_argument("--out", required=True, help=out_help)
        p.add_argument("--seed", type=int)

    p = sub.add_parser("gen-data", help="write a synthetic multi-expert dataset")
    common(p, "dataset directory")
    p.add_argument("--cases", type=int)
    p.add_argument("--size", type=_size, help="HxW, e.g. 64x64")
    p.add_argument("--test-cases", type=int, help="size of the held-out test split")
    p.add_argument("--styles", help="JSON list of expert styles")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="multi-expert training from random initialisation")
    common(p, "checkpoint file")
    p.add_argument("--data", required=True)
    p.add_argument("--experts", type=_ints, required=True, help="comma-separated expert ids")
    p.add_argument("--steps", type=int)
    p.add_argument("--log", help="write the loss log as JSON lines")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="adapt a checkpoint to a new expert")
    common(p, "checkpoint file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--expert", type=int, required=True)
    p.add_argument("--start", type=int, default=1, help="first training position of the sample (1-based)")
    p.add_argument("--count", type=int, help="number of consecutive samples (wrapping around)")
    p.add_argument("--scope", choices=("all", "expert_only"))
    p.add_argument("--init", choices=("identity", "average"))
    p.add_argument("--steps", type=int)
    p.add_argument("--log", help="write the loss log as JSON lines")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate one branch against one expert's masks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--branch", type=int, required=True)
    p.add_argument("--ref", type=int, help="reference expert (default: the branch)")
    p.add_argument("--split", default="test", help="dataset split; empty string for all cases")
    p.add_argument("--output", help="also write the JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run or resume an experiment grid")
    p.add_argument("kind", choices=sorted(EXPERIMENTS))
    common(p, "results directory (ledger root)")
    p.add_argument("--data", help="dataset directory (default: generate synthetic data)")
    p.add_argument("--new-experts", type=_ints)
    p.add_argument("--resume", action="store_true", help="skip cells already in the ledger")
    p.add_argument("--format", choices=("markdown", "csv", "json"), default="markdown")
    p.add_argument("--output", help="also write the tables here")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="render tables from an existing ledger")
    p.add_argument("kind", choices=sorted(EXPERIMENTS))
    p.add_argument("--out", required=True, help="results directory (ledger root)")
    p.add_argument("--config", help="restrict to the grid of this config and check completeness")
    p.add_argument("--profile", choices=exps.PROFILES)
    p.add_argument("--format", choices=("markdown", "csv", "json"), default="markdown")
    p.add_argument("--output", help="also write the tables here")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ExpertAdaptError as exc:
        print(f"expertadapt: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        # invalid values that slipped past the config schema
        print(f"expertadapt: error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
