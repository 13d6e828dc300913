"""End-to-end run as a chain of file-based stages.

Every stage reads its inputs from and writes its outputs to the run
directory, so running the stages one by one (e.g. from the command line)
reproduces a one-shot :func:`run_pipeline` byte for byte.

Layout of a run directory::

    config.json              resolved configuration
    prepared/                train.csv, test.csv, schema.json,
                             daily_aggregates.csv, archetypes.json (with minutes)
    <target>/                trace.jsonl, seed_scores.json, model.json,
                             thresholds.json, plateau.csv, secondary.csv,
                             predictions.csv, decisions.jsonl, coefficients.csv,
                             coefficients.svg, zprofile_*.csv, metrics.json
    metrics.json             per-target summary
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .data import (
    ColumnProvenance,
    ObservationTable,
    Schema,
    StandardizationStats,
    expand_design,
    ingest_csv,
    standardize,
    write_csv,
)
from .elimination import EliminationConfig, EliminationTrace, FoldDesigns, backward_eliminate, tune_seed
from .errors import DataNotFound, SaslError, StageError
from .gating import GatingConfig, disagreement_report, gate_predictions
from .gbdt import GbdtConfig
from .linalg import fit_ols
from .metrics import macro_f1
from .report import write_profile
from .s2 import (
    AggregateSpec,
    S2Config,
    aggregate_daily,
    apply_archetypes,
    build_archetype_features,
    default_aggregate_spec,
    join_daily,
    read_minutes,
    reindex_analysis_days,
    run_s2,
)
from .thresholds import ThresholdSet, discretize, search_thresholds, write_plateau_curve

OUTPUT_ENV = "SASL_OUTPUT_DIR"
TARGETS = ("Q1", "Q2", "Q3", "S1", "S2", "S3")


@dataclass(frozen=True)
class RunConfig:
    train_path: str = "train.csv"
    schema_path: str = "schema.json"
    test_path: str | None = None
    minutes_path: str | None = None
    aggregate_spec_path: str | None = None
    output_dir: str = "out"
    targets: tuple[str, ...] = TARGETS
    alpha: float = 0.05
    seeds: tuple[int, ...] = tuple(range(16))
    protect_intercept: bool = True
    stability_delta: float = 0.005
    grid_resolution: int | None = None
    threshold_overrides: dict = field(default_factory=dict)
    gating: dict = field(default_factory=lambda: GatingConfig().to_dict())
    gbdt: dict = field(default_factory=lambda: GbdtConfig().to_dict())
    rfe_gbdt: dict = field(default_factory=lambda: GbdtConfig(n_trees_max=100).to_dict())
    rfe_target_count: int = 30
    secondary_folds: int = 5
    secondary_seeds: tuple[int, ...] = (0, 1, 2, 3)
    s2_target: str = "S2"
    routine_features: tuple[str, ...] = ()
    archetypes: int = 10
    imputation: str = "ffill"
    boundary_hour: float = 16
    timezone: str = "Asia/Seoul"

    def __post_init__(self):
        if not self.targets:
            raise ValueError("targets must be nonempty")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not self.seeds:
            raise ValueError("need at least one seed")
        for name in ("targets", "seeds", "secondary_seeds", "routine_features"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        GatingConfig.from_dict(self.gating)

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        d = dict(d)
        if base_dir is not None:
            # relative paths, defaults included, are relative to the config file
            for key in ("train_path", "schema_path", "output_dir"):
                d.setdefault(key, next(f.default for f in fields(cls) if f.name == key))
            for key in ("train_path", "schema_path", "test_path", "minutes_path",
                        "aggregate_spec_path", "output_dir"):
                if d.get(key) is not None and not Path(d[key]).is_absolute():
                    d[key] = str(Path(base_dir) / d[key])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise DataNotFound(f"config file not found: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")), path.parent)

    def with_env(self) -> "RunConfig":
        """Apply the output-directory environment override."""
        out = os.environ.get(OUTPUT_ENV)
        return replace(self, output_dir=out) if out else self

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("targets", "seeds", "secondary_seeds", "routine_features"):
            d[key] = list(d[key])
        return d

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def target_dir(self, target: str) -> Path:
        return self.out / target


def _dump(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load(path):
    path = Path(path)
    if not path.exists():
        raise DataNotFound(f"missing intermediate file: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_prepare(cfg: RunConfig) -> None:
    """Validate inputs and write normalized copies (plus minute aggregates)."""
    prep = cfg.out / "prepared"
    prep.mkdir(parents=True, exist_ok=True)
    schema = Schema.load(cfg.schema_path)
    train = ingest_csv(cfg.train_path, schema)
    test = ingest_csv(cfg.test_path, schema) if cfg.test_path else None
    for t in cfg.targets:
        train.labels(t)
    _dump(prep / "schema.json", train.schema.to_dict())
    write_csv(train, prep / "train.csv")
    if test is not None:
        write_csv(test, prep / "test.csv")
    if cfg.minutes_path:
        spec = AggregateSpec.load(cfg.aggregate_spec_path) if cfg.aggregate_spec_path \
            else default_aggregate_spec()
        grouped = reindex_analysis_days(read_minutes(cfg.minutes_path), cfg.boundary_hour,
                                        cfg.timezone)
        daily = aggregate_daily(grouped, spec, cfg.imputation, cfg.boundary_hour)
        write_csv(daily, prep / "daily_aggregates.csv")
        _dump(prep / "aggregate_spec.json", spec.to_dict())


def load_prepared(cfg: RunConfig):
    prep = cfg.out / "prepared"
    schema = Schema.from_dict(_load(prep / "schema.json"))
    train = ingest_csv(prep / "train.csv", schema)
    test = ingest_csv(prep / "test.csv", schema) if (prep / "test.csv").exists() else None
    return train, test


def _design_for(cfg: RunConfig, train: ObservationTable, target: str) -> FoldDesigns:
    return FoldDesigns.build(train, target, cfg.protect_intercept)


def stage_eliminate(cfg: RunConfig, target: str, seed: int, path=None) -> EliminationTrace:
    """One elimination run on the full training design."""
    train, _ = load_prepared(cfg)
    designs = _design_for(cfg, train, target)
    ecfg = EliminationConfig(alpha=cfg.alpha, seed=seed, protect_intercept=cfg.protect_intercept)
    _, trace = backward_eliminate(designs.full, designs.y, ecfg)
    path = Path(path) if path else cfg.target_dir(target) / f"trace_seed{seed}.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    trace.write(path)
    return trace


def stage_tune_seed(cfg: RunConfig, target: str) -> None:
    """Seed tuning, then the final OLS fit on the chosen reduced design."""
    tdir = cfg.target_dir(target)
    tdir.mkdir(parents=True, exist_ok=True)
    train, _ = load_prepared(cfg)
    designs = _design_for(cfg, train, target)
    best, scores = tune_seed(cfg.seeds, train, target, cfg.alpha, cfg.protect_intercept, designs)
    ecfg = EliminationConfig(alpha=cfg.alpha, seed=best, protect_intercept=cfg.protect_intercept)
    reduced, trace = backward_eliminate(designs.full, designs.y, ecfg)
    trace.write(tdir / "trace.jsonl")
    _dump(tdir / "seed_scores.json", {"best_seed": best, "scores": [s.to_dict() for s in scores]})
    fit = fit_ols(reduced.values, designs.y)
    _, stats = standardize(designs.table)
    _dump(tdir / "model.json", {
        "target": target, "seed": best,
        "columns": [c.to_dict() for c in reduced.columns],
        "coefficients": [float(b) for b in fit.coefficients],
        "sse": fit.sse, "rank": fit.rank, "n": fit.n,
        "subjects": designs.table.subject_ids,
        "standardization": stats.to_dict(),
    })


def _model(cfg, target):
    return _load(cfg.target_dir(target) / "model.json")


def stage_thresholds(cfg: RunConfig, target: str) -> ThresholdSet:
    """Plateau search on the out-of-fold latent scores of the reduced design
    (or a configured override)."""
    tdir = cfg.target_dir(target)
    train, _ = load_prepared(cfg)
    designs = _design_for(cfg, train, target)
    cols = [c["name"] for c in _model(cfg, target)["columns"]]
    (y1, z1), (y2, z2) = (designs.fold_scores(cols, f) for f in (0, 1))
    levels = train.schema.levels(target)
    if target in cfg.threshold_overrides:
        thr = ThresholdSet.fixed(target, cfg.threshold_overrides[target])
    else:
        thr = search_thresholds(z1, y1.astype(int), z2, y2.astype(int), levels,
                                cfg.grid_resolution, cfg.stability_delta, target)
    thr.write(tdir / "thresholds.json")
    write_plateau_curve(tdir / "plateau.csv", z1, y1.astype(int), z2, y2.astype(int), thr,
                        cfg.grid_resolution)
    return thr


def _secondary_tables(cfg: RunConfig, target: str, train, test):
    """Feature tables for the boosted-tree route; the S2 target gets the
    minute aggregates and archetypes when they were prepared."""
    prep = cfg.out / "prepared"
    agg = prep / "daily_aggregates.csv"
    if target != cfg.s2_target or not agg.exists():
        return train, test
    spec = AggregateSpec.from_dict(_load(prep / "aggregate_spec.json"))
    cols = [("subject_id", "subject"), ("date", "timestamp")]
    cols += [(r.name, "indicator" if r.kind == "event_flag" else "feature") for r in spec.rules]
    daily = ingest_csv(agg, Schema(tuple(cols)))
    train = join_daily(train, daily)
    test = join_daily(test, daily) if test is not None else None
    routine = list(cfg.routine_features) or [r.name for r in spec.rules if r.kind == "plain"]
    k = min(cfg.archetypes, len(train.subject_ids))
    train, assignment = build_archetype_features(train, routine, k)
    _dump(prep / "archetypes.json", {"k": k, "routine_features": routine,
                                     "assignment": assignment})
    if test is not None:
        test = apply_archetypes(test, assignment, k)
    return train, test


def stage_secondary(cfg: RunConfig, target: str) -> None:
    """Boosted-tree predictions and confidences for the evaluation rows."""
    tdir = cfg.target_dir(target)
    tdir.mkdir(parents=True, exist_ok=True)
    train, test = load_prepared(cfg)
    train, test = _secondary_tables(cfg, target, train, test)
    scfg = S2Config(target, cfg.rfe_target_count, GbdtConfig.from_dict(cfg.rfe_gbdt),
                    GbdtConfig.from_dict(cfg.gbdt), cfg.secondary_folds, cfg.secondary_seeds)
    res = run_s2(train, scfg, test)
    with open(tdir / "secondary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "timestamp", "label", "confidence"]
                   + [f"p{c}" for c in range(res.proba.shape[1])])
        for (s, ts), lab, conf, pr in zip(res.row_keys, res.labels, res.confidence, res.proba):
            w.writerow([s, ts, int(lab), repr(float(conf))] + [repr(float(v)) for v in pr])
    _dump(tdir / "secondary.json", {
        "selected_features": res.selected_features,
        "threshold": res.threshold, "fold_thresholds": res.fold_thresholds,
    })


def _read_secondary(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    keys = [(r["subject_id"], int(r["timestamp"])) for r in rows]
    return keys, np.array([int(r["label"]) for r in rows]), \
        np.array([float(r["confidence"]) for r in rows])


def latent_scores(cfg: RunConfig, target: str, table: ObservationTable) -> np.ndarray:
    model = _model(cfg, target)
    stats = StandardizationStats.from_dict(model["standardization"])
    X = expand_design(stats.apply(table), cfg.protect_intercept, subjects=model["subjects"])
    X = X.select([c["name"] for c in model["columns"]])
    return X.values @ np.array(model["coefficients"], dtype=float)


def _eval_table(cfg):
    train, test = load_prepared(cfg)
    return test if test is not None else train


def stage_gate(cfg: RunConfig, target: str) -> None:
    """Primary labels from the thresholded latent score, gated against the
    boosted-tree labels."""
    tdir = cfg.target_dir(target)
    table = _eval_table(cfg)
    z = latent_scores(cfg, target, table)
    thr = ThresholdSet.read(tdir / "thresholds.json")
    primary = discretize(z, thr)
    keys, secondary, conf = _read_secondary(tdir / "secondary.csv")
    if keys != table.row_keys:
        raise ValueError("secondary predictions are not aligned with the evaluation rows")
    gating = GatingConfig.from_dict(cfg.gating)
    res = gate_predictions(primary, secondary, conf, gating, target, table.row_keys)
    res.write_log(tdir / "decisions.jsonl")
    labels = table.labels(target) if target in table.targets else None
    with open(tdir / "predictions.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "timestamp", "z", "primary", "secondary", "confidence",
                    "final", "label"])
        for i, (s, ts) in enumerate(table.row_keys):
            lab = "" if labels is None or labels[i] < 0 else str(int(labels[i]))
            w.writerow([s, ts, repr(float(z[i])), int(primary[i]), int(secondary[i]),
                        repr(float(conf[i])), int(res.final[i]), lab])


def _read_predictions(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    col = {k: [r[k] for r in rows] for k in ("primary", "secondary", "final", "label")}
    return {k: np.array([int(v) if v != "" else -1 for v in vals]) for k, vals in col.items()}


def stage_report(cfg: RunConfig, target: str) -> dict:
    """Coefficient profile, disagreement Z-profiles, and metrics."""
    tdir = cfg.target_dir(target)
    model = _model(cfg, target)
    write_profile(model["columns"], model["coefficients"], tdir / "coefficients.csv",
                  tdir / "coefficients.svg", title=f"{target} coefficient profile")
    pred = _read_predictions(tdir / "predictions.csv")
    table = _eval_table(cfg)
    rep = disagreement_report(pred["primary"], pred["secondary"], table.features,
                              table.feature_names)
    for key, prof in rep.profiles.items():
        prof.write_csv(tdir / f"zprofile_{key}.csv")
    thr = ThresholdSet.read(tdir / "thresholds.json")
    metrics = {"target": target, "seed": model["seed"], "n_columns": len(model["columns"]),
               "thresholds": list(thr.taus), "rows": int(pred["final"].size),
               "disagreements": rep.counts,
               "overrides": int((pred["final"] != pred["primary"]).sum())}
    have = pred["label"] >= 0
    if have.any():
        classes = list(range(table.schema.levels(target)))
        for key in ("primary", "secondary", "final"):
            metrics[f"macro_f1_{key}"] = macro_f1(pred[key][have], pred["label"][have], classes)
    _dump(tdir / "metrics.json", metrics)
    return metrics


TARGET_STAGES = (("tune-seed", stage_tune_seed), ("thresholds", stage_thresholds),
                 ("s2", stage_secondary), ("gate", stage_gate), ("report", stage_report))


def _run_stage(name, fn, *args):
    try:
        return fn(*args)
    except StageError:
        raise
    except (SaslError, ValueError, KeyError, OSError, ArithmeticError) as exc:
        raise StageError(name, exc) from exc


def run_pipeline(cfg: RunConfig) -> dict:
    """Run every stage for every target; returns the metrics summary."""
    cfg.out.mkdir(parents=True, exist_ok=True)
    _dump(cfg.out / "config.json", {k: v for k, v in cfg.to_dict().items() if k != "output_dir"})
    _run_stage("prepare", stage_prepare, cfg)
    summary = {}
    for target in cfg.targets:
        for name, fn in TARGET_STAGES:
            result = _run_stage(name, fn, cfg, target)
        summary[target] = result
    _dump(cfg.out / "metrics.json", summary)
    return summary
