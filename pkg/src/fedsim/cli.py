"""Experiment front door: JSON config parsing, multi-seed sweep execution,
CSV/figure outputs, and a run manifest sufficient to reproduce every row.

Config file format: a single JSON object. Unknown keys are errors. Flags
override file keys, which override the defaults below. Example:

    {
      "n": 100, "m": 10, "beta": 1.0, "rounds": 200, "eta": 0.00925,
      "attack": {"variant": "mpaf", "lambda": 1e6},
      "rule": {"variant": "trimmed_mean"},
      "model": {"hidden": [64], "activation": "tanh"},
      "data": {"source": "synthetic", "q": 0.5},
      "repeats": 20, "seed_base": 0,
      "sweep": {"axis": "fake_fraction", "values": [0.01, 0.1, 0.25]}
    }
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

from . import engine, report
from .aggregation import AggregationRule
from .attacks import AttackSpec
from .engine import DataConfig, SimConfig
from .model import MlpSpec

SWEEP_AXES = ("fake_fraction", "lambda", "beta", "clip")

# Offset added to the per-run master seed to derive the attacker's seed when
# the config leaves it unset; keeps the two stream families disjoint.
ATTACKER_SEED_OFFSET = 1_000_003

RAW_HEADER = "sweep_value,seed,round,test_acc,update_norm,fake_selected"
SUMMARY_HEADER = "sweep_value,round,mean_acc,std_acc"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    sim: SimConfig  # master_seed field is a placeholder; cells override it
    attacker_seed: int | None  # None: derived per seed
    repeats: int = 20
    seed_base: int = 0
    sweep_axis: str | None = None
    sweep_values: tuple[float, ...] = ()
    out_dir: str = "out"

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.sweep_axis is not None and not self.sweep_values:
            raise ConfigError("sweep values must be non-empty when a sweep axis is set")
        if self.sweep_axis is not None and self.sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")


def _section(raw: dict, key: str) -> dict:
    val = raw.pop(key, {})
    if not isinstance(val, dict):
        raise ConfigError(f"key {key!r} must be an object")
    return dict(val)


def _take(section: dict, key: str, default, kind, name: str):
    if key not in section:
        return default
    val = section.pop(key)
    if val is None:
        return None
    if kind is float and isinstance(val, (int, float)) and not isinstance(val, bool):
        return float(val)
    if kind is int and isinstance(val, int) and not isinstance(val, bool):
        return val
    if kind is str and isinstance(val, str):
        return val
    if kind is list and isinstance(val, list):
        return val
    raise ConfigError(f"key {name!r} has the wrong type")


def _reject_unknown(section: dict, where: str):
    if section:
        raise ConfigError(f"unknown key {next(iter(section))!r} in {where}")


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate the JSON experiment config; defaults documented above."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)

    att = _section(raw, "attack")
    variant = _take(att, "variant", "none", str, "attack.variant")
    lam = _take(att, "lambda", 1e6, float, "attack.lambda")
    attacker_seed = _take(att, "attacker_seed", None, int, "attack.attacker_seed")
    _reject_unknown(att, "attack")
    if lam is None or lam <= 0:
        raise ConfigError("key 'attack.lambda' must be > 0")
    try:
        # Placeholder seed when unset; each run cell derives its own later.
        attack = AttackSpec(
            variant, lam, ATTACKER_SEED_OFFSET if attacker_seed is None else attacker_seed
        )
    except ValueError as exc:
        raise ConfigError(f"attack: {exc}") from None

    rl = _section(raw, "rule")
    clip = _take(rl, "clip_bound", None, float, "rule.clip_bound")
    if clip is not None and math.isinf(clip):
        clip = None
    try:
        weighted = rl.pop("weighted", False)
        if not isinstance(weighted, bool):
            raise ConfigError("key 'rule.weighted' has the wrong type")
        rule = AggregationRule(
            _take(rl, "variant", "fedavg", str, "rule.variant"),
            _take(rl, "trim_k", None, int, "rule.trim_k"),
            clip,
            weighted,
        )
    except ValueError as exc:
        raise ConfigError(f"rule: {exc}") from None
    _reject_unknown(rl, "rule")

    md = _section(raw, "model")
    hidden = _take(md, "hidden", [64], list, "model.hidden")
    activation = _take(md, "activation", "tanh", str, "model.activation")
    _reject_unknown(md, "model")

    dt = _section(raw, "data")
    try:
        data_cfg = DataConfig(
            source=_take(dt, "source", "synthetic", str, "data.source"),
            classes=_take(dt, "classes", 10, int, "data.classes"),
            features=_take(dt, "features", 20, int, "data.features"),
            per_class=_take(dt, "per_class", 120, int, "data.per_class"),
            spread=_take(dt, "spread", 0.1, float, "data.spread"),
            train_images=_take(dt, "train_images", None, str, "data.train_images"),
            train_labels=_take(dt, "train_labels", None, str, "data.train_labels"),
            test_images=_take(dt, "test_images", None, str, "data.test_images"),
            test_labels=_take(dt, "test_labels", None, str, "data.test_labels"),
            train_csv=_take(dt, "train_csv", None, str, "data.train_csv"),
            test_csv=_take(dt, "test_csv", None, str, "data.test_csv"),
            label_column=_take(dt, "label_column", 0, int, "data.label_column"),
            partition=_take(dt, "partition", "noniid", str, "data.partition"),
            q=_take(dt, "q", 0.5, float, "data.q"),
        )
    except ValueError as exc:
        raise ConfigError(f"data: {exc}") from None
    _reject_unknown(dt, "data")

    sweep = raw.pop("sweep", None)
    sweep_axis, sweep_values = None, ()
    if sweep is not None:
        if not isinstance(sweep, dict):
            raise ConfigError("key 'sweep' must be an object")
        sweep = dict(sweep)
        sweep_axis = _take(sweep, "axis", None, str, "sweep.axis")
        vals = _take(sweep, "values", [], list, "sweep.values")
        _reject_unknown(sweep, "sweep")
        sweep_values = tuple(float(v) for v in vals)

    n = _take(raw, "n", 100, int, "n")
    mlp = MlpSpec((data_cfg.features, *hidden, data_cfg.classes), activation)
    try:
        sim = SimConfig(
            n_genuine=n,
            n_fake=_take(raw, "m", 0, int, "m"),
            beta=_take(raw, "beta", 1.0, float, "beta"),
            rounds=_take(raw, "rounds", 200, int, "rounds"),
            eta=_take(raw, "eta", 0.00925, float, "eta"),
            attack=attack,
            rule=rule,
            model=mlp,
            data=data_cfg,
            local_lr=_take(raw, "local_lr", 9.0, float, "local_lr"),
            batch_size=_take(raw, "batch_size", 10, int, "batch_size"),
            local_epochs=_take(raw, "local_epochs", 5, int, "local_epochs"),
            eval_every=_take(raw, "eval_every", None, int, "eval_every"),
            master_seed=0,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    cfg = ExperimentConfig(
        sim=sim,
        attacker_seed=attacker_seed,
        repeats=_take(raw, "repeats", 20, int, "repeats"),
        seed_base=_take(raw, "seed_base", 0, int, "seed_base"),
        sweep_axis=sweep_axis,
        sweep_values=sweep_values,
        out_dir=_take(raw, "out_dir", "out", str, "out_dir"),
    )
    _reject_unknown(raw, "the top level")
    return cfg


def resolved_config_json(cfg: ExperimentConfig) -> str:
    """Serialize back to the accepted schema; parse_config round-trips it."""
    sim = cfg.sim
    doc = {
        "n": sim.n_genuine,
        "m": sim.n_fake,
        "beta": sim.beta,
        "rounds": sim.rounds,
        "eta": sim.eta,
        "local_lr": sim.local_lr,
        "batch_size": sim.batch_size,
        "local_epochs": sim.local_epochs,
        "eval_every": sim.eval_every,
        "attack": {
            "variant": sim.attack.variant,
            "lambda": sim.attack.lam,
            "attacker_seed": cfg.attacker_seed,
        },
        "rule": {
            "variant": sim.rule.variant,
            "trim_k": sim.rule.trim_k,
            "clip_bound": sim.rule.clip_bound,
            "weighted": sim.rule.weighted,
        },
        "model": {
            "hidden": list(sim.model.layer_widths[1:-1]),
            "activation": sim.model.activation,
        },
        "data": {k: v for k, v in dataclasses.asdict(sim.data).items()},
        "repeats": cfg.repeats,
        "seed_base": cfg.seed_base,
        "sweep": (
            {"axis": cfg.sweep_axis, "values": list(cfg.sweep_values)}
            if cfg.sweep_axis
            else None
        ),
        "out_dir": cfg.out_dir,
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def apply_sweep(sim: SimConfig, axis: str | None, value: float) -> SimConfig:
    """One sweep cell's SimConfig. A beta sweep treats the configured round
    count as the full-participation budget, scaling it to rounds/beta."""
    if axis is None:
        return sim
    if axis == "fake_fraction":
        return replace(sim, n_fake=int(round(value * sim.n_genuine)))
    if axis == "lambda":
        return replace(sim, attack=replace(sim.attack, lam=value))
    if axis == "beta":
        return replace(sim, beta=value, rounds=int(round(sim.rounds / value)))
    if axis == "clip":
        bound = None if math.isinf(value) else value
        return replace(sim, rule=replace(sim.rule, clip_bound=bound))
    raise ConfigError(f"unknown sweep axis {axis!r}")


def _fmt(x) -> str:
    if x is None:
        return ""
    return f"{x:.10g}"


def _run_cell(cfg: ExperimentConfig, value, seed: int) -> list[engine.RoundRecord]:
    sim = apply_sweep(cfg.sim, cfg.sweep_axis, value) if value is not None else cfg.sim
    attacker_seed = (
        cfg.attacker_seed if cfg.attacker_seed is not None else seed + ATTACKER_SEED_OFFSET
    )
    sim = replace(
        sim, master_seed=seed, attack=replace(sim.attack, attacker_seed=attacker_seed)
    )
    return engine.run_simulation(sim)


def write_outputs(rows, summaries, cfg: ExperimentConfig, out_dir: str, plots: bool = True) -> dict:
    """Write raw.csv, summary.csv, manifest.json, and figures; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    raw_path = os.path.join(out_dir, "raw.csv")
    with open(raw_path, "w", newline="") as fh:
        fh.write(RAW_HEADER + "\n")
        for value, seed, rec in rows:
            fh.write(
                f"{_fmt(value)},{seed},{rec.round},{_fmt(rec.accuracy)},"
                f"{_fmt(rec.update_norm)},{rec.fake_selected}\n"
            )
    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w", newline="") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for value, per_round in summaries.items():
            for rnd, mean, std in per_round:
                fh.write(f"{_fmt(value)},{rnd},{_fmt(mean)},{_fmt(std)}\n")
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w") as fh:
        fh.write(resolved_config_json(replace(cfg, out_dir=out_dir)) + "\n")
    figures = report.render_figures(summaries, cfg.sweep_axis, out_dir) if plots else []
    return {
        "raw": raw_path,
        "summary": summary_path,
        "manifest": manifest_path,
        "figures": figures,
    }


def run_experiment(cfg: ExperimentConfig, threads: int = 1, plots: bool = True, out=None) -> int:
    """Run every (sweep value, seed) cell, write outputs, print a final table.

    Returns 0, or 1 when any cell's simulation aborted on a numeric blow-up
    (partial results are still flushed).
    """
    if out is None:
        out = sys.stdout
    values = list(cfg.sweep_values) if cfg.sweep_axis else [None]
    seeds = [cfg.seed_base + i for i in range(cfg.repeats)]
    cells = [(v, s) for v in values for s in seeds]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: _run_cell(cfg, *c), cells))
    else:
        results = [_run_cell(cfg, v, s) for v, s in cells]
    by_cell = dict(zip(cells, results))

    rows = []
    aborted = False
    for (value, seed) in cells:
        for rec in by_cell[(value, seed)]:
            if rec.accuracy is not None:
                rows.append((value, seed, rec))
            aborted = aborted or any(w.startswith("aborted") for w in rec.warnings)
    summaries = {}
    for value in values:
        summaries[value] = engine.summarize([by_cell[(value, s)] for s in seeds])

    paths = write_outputs(rows, summaries, cfg, cfg.out_dir, plots=plots)

    print(f"wrote {paths['raw']}, {paths['summary']}, {paths['manifest']}", file=out)
    axis = cfg.sweep_axis or "-"
    print(f"{'sweep(' + axis + ')':>16}  {'final mean acc':>14}  {'std':>10}", file=out)
    for value in values:
        rnd, mean, std = summaries[value][-1]
        label = _fmt(value) if value is not None else "-"
        print(f"{label:>16}  {mean:>14.4f}  {std:>10.4f}", file=out)
    if aborted:
        print("warning: at least one run aborted on a non-finite global model", file=out)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsim", description="Federated-learning poisoning simulator"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("config", help="path to the JSON config file")
    run.add_argument("--out", help="output directory (overrides config)")
    run.add_argument("--repeats", type=int, help="number of seeds (overrides config)")
    run.add_argument(
        "--sweep",
        metavar="AXIS=v1,v2,...",
        help=f"sweep axis and values; axes: {', '.join(SWEEP_AXES)}",
    )
    run.add_argument("--seed-base", type=int, help="first master seed (overrides config)")
    run.add_argument("--threads", type=int, default=1, help="parallel (value, seed) cells")
    run.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    return parser


def _parse_sweep_flag(text: str):
    if "=" not in text:
        raise ConfigError("--sweep expects AXIS=v1,v2,...")
    axis, _, vals = text.partition("=")
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
    try:
        values = tuple(float(v) for v in vals.split(",") if v)
    except ValueError:
        raise ConfigError("sweep values must be numbers (inf allowed)") from None
    if not values:
        raise ConfigError("sweep values must be non-empty")
    return axis, values


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            cfg = parse_config(fh.read())
        if args.out is not None:
            cfg = replace(cfg, out_dir=args.out)
        if args.repeats is not None:
            cfg = replace(cfg, repeats=args.repeats)
        if args.seed_base is not None:
            cfg = replace(cfg, seed_base=args.seed_base)
        if args.sweep is not None:
            axis, values = _parse_sweep_flag(args.sweep)
            cfg = replace(cfg, sweep_axis=axis, sweep_values=values)
        return run_experiment(cfg, threads=args.threads, plots=not args.no_plots)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
