"""Command-line entry point: ``python -m sasl <command> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import MISSING, fields, replace
from pathlib import Path

from . import pipeline
from .data import write_csv
from .errors import SaslError
from .pipeline import RunConfig
from .synthetic import (
    SyntheticSpec,
    chronological_holdout,
    fig1_spec,
    generate,
    lifelog_spec,
    minute_records,
)

_LISTS = {"targets": str, "seeds": int, "secondary_seeds": int, "routine_features": str}
_JSON = {"threshold_overrides", "gating", "gbdt", "rfe_gbdt"}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run configuration JSON")
    for f in fields(RunConfig):
        if f.name in _LISTS:
            p.add_argument(_flag(f.name), help="comma-separated list")
        elif f.name in _JSON:
            p.add_argument(_flag(f.name), help="JSON object")
        elif f.name == "protect_intercept":
            p.add_argument(_flag(f.name), type=lambda s: s.lower() in ("1", "true", "yes"))
        else:
            default = f.default if f.default is not MISSING else None
            kind = type(default) if default is not None else str
            if f.name == "grid_resolution":
                kind = int
            p.add_argument(_flag(f.name), type=kind)


def config_from_args(args) -> RunConfig:
    """``--config`` file, then explicit flags, then the output-dir env var."""
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    updates = {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is None:
            continue
        if f.name in _LISTS:
            v = tuple(_LISTS[f.name](x) for x in v.split(",") if x.strip())
        elif f.name in _JSON:
            v = json.loads(v)
        updates[f.name] = v
    return replace(cfg, **updates).with_env()


def _targets(args, cfg):
    return [args.target] if getattr(args, "target", None) else list(cfg.targets)


def _per_target(fn):
    def run(args):
        cfg = config_from_args(args)
        for t in _targets(args, cfg):
            fn(cfg, t)
    return run


def cmd_run(args):
    summary = pipeline.run_pipeline(config_from_args(args))
    for target, m in summary.items():
        f1 = m.get("macro_f1_final")
        print(f"{target}: seed {m['seed']}, {m['n_columns']} columns, "
              f"{m['overrides']} overrides" + ("" if f1 is None else f", macro-F1 {f1:.4f}"))


def cmd_prepare(args):
    cfg = config_from_args(args)
    cfg.out.mkdir(parents=True, exist_ok=True)
    pipeline.stage_prepare(cfg)


def cmd_eliminate(args):
    cfg = config_from_args(args)
    target = args.target or cfg.targets[0]
    trace = pipeline.stage_eliminate(cfg, target, args.seed, args.output)
    print(f"{target}: removed {len(trace)} columns")


def cmd_synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.spec:
        spec = SyntheticSpec.load(args.spec)
    elif args.bundle == "fig1":
        spec = fig1_spec(args.seed)
    else:
        spec = lifelog_spec(args.seed, subjects=args.subjects, days=args.days)
    table, truth = generate(spec)
    (out / "truth.json").write_text(json.dumps(truth.to_dict(), indent=2, sort_keys=True) + "\n",
                                    encoding="utf-8")
    (out / "schema.json").write_text(json.dumps(table.schema.to_dict(), indent=2) + "\n",
                                     encoding="utf-8")
    if args.holdout > 0:
        train, test, _ = chronological_holdout(table, args.holdout)
        write_csv(train, out / "train.csv")
        write_csv(test, out / "test.csv")
    else:
        write_csv(table, out / "train.csv")
    config = {"train_path": "train.csv", "schema_path": "schema.json",
              "targets": [t.name for t in spec.targets], "output_dir": "out"}
    if args.holdout > 0:
        config["test_path"] = "test.csv"
    minute_target = args.minutes_target or ("S2" if "S2" in table.targets else None)
    if args.minutes and minute_target:
        minute_records(table, truth, minute_target, rng_seed=args.seed).to_csv(
            out / "minutes.csv", index=False, lineterminator="\n")
        config["minutes_path"] = "minutes.csv"
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {table.n_rows} rows to {out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sasl", description="Subject-adaptive sparse linear "
                                     "models with plateau thresholds and confidence gating.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_, target=True):
        p = sub.add_parser(name, help=help_)
        _add_config_flags(p)
        if target:
            p.add_argument("--target", help="single target (default: all configured)")
        p.set_defaults(func=func)
        return p

    add("run", cmd_run, "run every stage for every target", target=False)
    add("prepare", cmd_prepare, "validate inputs and write prepared tables", target=False)
    p = add("eliminate", cmd_eliminate, "one backward-elimination run")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", help="trace path (default <out>/<target>/trace_seed<seed>.jsonl)")
    add("tune-seed", _per_target(pipeline.stage_tune_seed), "seed tuning and final OLS fit")
    add("thresholds", _per_target(pipeline.stage_thresholds), "plateau threshold search")
    add("s2", _per_target(pipeline.stage_secondary), "boosted-tree predictions")
    add("gate", _per_target(pipeline.stage_gate), "primary labels and confidence gating")
    add("report", _per_target(pipeline.stage_report), "coefficient and disagreement reports")

    p = sub.add_parser("synth", help="write a synthetic bundle")
    p.add_argument("--spec", help="SyntheticSpec JSON")
    p.add_argument("--bundle", choices=("fig1", "lifelog"), default="lifelog")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--subjects", type=int, default=10)
    p.add_argument("--days", type=int, default=60)
    p.add_argument("--holdout", type=float, default=0.25,
                   help="fraction of each subject's last days written to test.csv")
    p.add_argument("--minutes", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--minutes-target")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except SaslError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0
