"""Command-line entry point: ``simkgcl {synth,train,eval,ablate,check}``.

Training options come from three layers, highest priority first: ``--key
value`` flags, a flat ``key=value`` file given with ``--config``, and the
:class:`~simkgcl.trainer.TrainConfig` defaults. Unknown keys exit with
status 2; runtime failures exit with status 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import __version__
from .evaluator import evaluate, format_reports, write_reports
from .graph import DataFormatError, load_bundle, save_id_maps
from .params import CheckpointError, load_checkpoint
from .synthetic import SyntheticSpec, generate_synthetic_dataset
from .trainer import (
    ABLATIONS,
    TrainConfig,
    TrainingDiverged,
    format_ablation,
    run_ablation_suite,
    train,
    write_ablation_csv,
)

log = logging.getLogger("simkgcl")

TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


class UsageError(Exception):
    """Bad configuration keys or values (exit status 2)."""


def _parse_bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _coerce(name, text, default):
    kind = type(default)
    try:
        if kind is bool:
            return _parse_bool(text)
        return kind(text)
    except ValueError as exc:
        raise UsageError(f"bad value for {name}: {exc}") from None


def read_config_file(path):
    """Parse a flat ``key=value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def resolve_config(file_values, overrides):
    """Merge defaults, file values and CLI overrides into a validated TrainConfig."""
    defaults = TrainConfig()
    values = {}
    for source in (file_values, overrides):
        for key, text in source.items():
            if key not in TRAIN_FIELDS:
                raise UsageError(f"unknown config key {key!r}")
            values[key] = _coerce(key, text, getattr(defaults, key))
    config = defaults.replace(**values)
    try:
        config.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return config


def config_manifest(config, extra=None):
    items = {"version": __version__, **dataclasses.asdict(config)}
    items.update(extra or {})
    return items


def _write_manifest(path, items):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in items.items():
            fh.write(f"{k}={v}\n")


def _add_train_options(parser):
    parser.add_argument("--config", help="flat key=value file with training options")
    group = parser.add_argument_group("training options (override --config)")
    for name, f in TRAIN_FIELDS.items():
        group.add_argument(f"--{name}", dest=f"opt_{name}", metavar=type(f.default).__name__.upper(),
                           help=f"default {f.default!r}")


def _overrides(args):
    return {k[4:]: v for k, v in vars(args).items() if k.startswith("opt_") and v is not None}


def _config_from_args(args):
    file_values = read_config_file(args.config) if args.config else {}
    return resolve_config(file_values, _overrides(args))


def build_parser():
    parser = argparse.ArgumentParser(prog="simkgcl", description="KG-enhanced contrastive recommendation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    for f in dataclasses.fields(SyntheticSpec):
        if f.name != "ratios":
            p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=type(f.default), default=f.default)

    p = sub.add_parser("train", help="train a model and write checkpoint/history")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_train_options(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("valid", "test"))
    p.add_argument("--K", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="write metrics.csv here")

    p = sub.add_parser("ablate", help="run the ablation suite")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--variants", default=",".join(ABLATIONS), help="comma-separated variant names")
    _add_train_options(p)

    sub.add_parser("check", help="run the numerical self-tests")
    return parser


def cmd_synth(args):
    spec = SyntheticSpec(**{f.name: getattr(args, f.name) for f in dataclasses.fields(SyntheticSpec)
                            if f.name != "ratios"})
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    bundle = generate_synthetic_dataset(spec, out_dir=args.out)
    n = sum(bundle.split(s).num_edges for s in ("train", "valid", "test"))
    print(f"wrote {args.out}: {bundle.num_users} users, {bundle.num_items} items, {n} interactions, "
          f"{len(bundle.kg.triples)} triples")
    return 0


def cmd_train(args):
    config = _config_from_args(args)
    bundle = load_bundle(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = config_manifest(config, {"data": args.data})
    _write_manifest(out / "manifest.txt", manifest)
    save_id_maps(bundle, out)

    def report(rec):
        if rec.valid is not None:
            log.info("epoch %d loss %.5f val recall@%d %.4f", rec.epoch, rec.losses.total, config.K,
                     rec.valid.recall)

    # the manifest rides along in the checkpoint so that eval can rebuild the model config
    params, history = train(config, bundle, checkpoint_path=out / "checkpoint.bin", callback=report,
                            manifest=manifest)
    history.to_csv(out / "history.csv")
    mcfg = config.model_config()
    reports = [evaluate(params, bundle, s, config.K, mcfg, config.workers) for s in ("valid", "test")]
    write_reports(out / "metrics.csv", reports)
    print(f"best epoch {history.best_epoch} of {len(history)}")
    print(format_reports(reports))
    return 0


def cmd_eval(args):
    params, _, manifest = load_checkpoint(args.checkpoint)
    known = {k: v for k, v in manifest.items() if k in TRAIN_FIELDS}
    config = resolve_config(known, {})
    K = args.K or config.K
    bundle = load_bundle(args.data)
    report = evaluate(params, bundle, args.split, K, config.model_config(), args.workers)
    print(format_reports([report]))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_reports(Path(args.out) / "metrics.csv", [report])
    return 0


def cmd_ablate(args):
    config = _config_from_args(args)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"bad --seeds {args.seeds!r}") from None
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = [v for v in variants if v not in ABLATIONS]
    if unknown:
        raise UsageError(f"unknown variants {unknown}; choose from {list(ABLATIONS)}")
    bundle = load_bundle(args.data)
    rows = run_ablation_suite(config, bundle, seeds, variants)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_ablation_csv(out / "ablation.csv", rows, config.K)
    _write_manifest(out / "manifest.txt", config_manifest(config, {"data": args.data, "seeds": args.seeds}))
    print(format_ablation(rows, config.K))
    return 0


def cmd_check(args):
    from .selftest import run_all

    results = run_all()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return 0 if all(ok for _, ok, _ in results) else 1


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "check": cmd_check}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"simkgcl: error: {exc}", file=sys.stderr)
        return 2
    except (DataFormatError, CheckpointError, TrainingDiverged, OSError, ValueError) as exc:
        print(f"simkgcl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
