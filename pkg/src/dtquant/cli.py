"""Command-line pipeline: synthetic data, ingestion, expert generation,
training, evaluation, reporting, and the pretrained-vs-random comparison.

Exit codes: 0 on success, 1 on a domain error (bad data, bad config, missing
files), 2 on usage errors. All randomness is routed through --seed flags, so
reruns with identical inputs produce byte-identical outputs; only the run
manifest's timestamps differ.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import schemas
from .dataset import fit_normalizer, load_trajectories, save_trajectories
from .dt import DTConfig
from .env import EnvConfig, rollout, scripted_expert
from .errors import ConfigError, DtqError
from .evaluation import checkpoint_digest, evaluate_checkpoint, policy_from_checkpoint
from .gpt2 import GPTConfig
from .lora import LoRAConfig
from .market import compute_indicators, load_ohlcv, split_by_date, write_ohlcv
from .metrics import EquityCurve, MetricsReport, aggregate_rows, cumulative_return, metrics_for_curve
from .synth import generate_panel
from .training import Checkpoint, TrainConfig, build_dt_model, train_bc, train_dt, write_loss_log

log = logging.getLogger("dtquant")

DEFAULT_SEEDS = (20742, 55230, 85125, 96921, 67851)
MANIFEST_NAME = "manifest.json"

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    name = os.environ.get("DTQ_LOG_LEVEL", "warn").lower()
    if name not in _LOG_LEVELS:
        raise ConfigError(f"DTQ_LOG_LEVEL must be one of {sorted(_LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=_LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s")


def _sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(directory: str | Path, command: str, config: dict,
                   inputs: list[str | Path], outputs: list[str | Path],
                   seed: int | None, started_at: str) -> Path:
    """One manifest per artifact-producing command, beside its outputs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": config,
        "input_hashes": {str(p): _sha256(p) for p in inputs},
        "outputs": sorted(str(p) for p in outputs),
        "seed": seed,
        "started_at": started_at,
        "finished_at": _now(),
    }
    path = directory / MANIFEST_NAME
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _parse_seeds(text: str) -> list[int]:
    """A comma list is taken literally; a single integer n means the first n
    of the default seed set (extended by increment past five)."""
    if "," in text:
        return [int(x) for x in text.split(",") if x.strip()]
    n = int(text)
    if n <= 0:
        raise ConfigError("--seeds must name at least one seed")
    if n > 64:
        raise ConfigError(
            f"--seeds {n} would mean {n} separate seeds; pass a comma list "
            f"(e.g. --seeds {n},) to use it as a literal seed value")
    seeds = list(DEFAULT_SEEDS[:n])
    while len(seeds) < n:
        seeds.append(seeds[-1] + 1)
    return seeds


def _env_config(config: dict) -> EnvConfig:
    return EnvConfig(**config.get("env", {}))


def _train_config(config: dict, seed: int | None) -> TrainConfig:
    section = dict(config.get("train", {}))
    if seed is not None:
        section["seed"] = seed
    return TrainConfig(**section)


def _load_feature_panel(path: str | Path):
    return compute_indicators(load_ohlcv(path))


# -- subcommands -------------------------------------------------------------


def cmd_synth_data(args) -> int:
    started = _now()
    panel = generate_panel(args.kind, args.assets, args.days, args.seed,
                           start_date=args.start_date)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_ohlcv(panel, out)
    write_manifest(out.parent, "synth-data", vars(args) | {"func": None},
                   [], [out], args.seed, started)
    log.info("wrote %d days x %d assets to %s", panel.n_days, panel.n_assets, out)
    return 0


def cmd_ingest(args) -> int:
    started = _now()
    panel = load_ohlcv(args.input)
    if args.train_end and args.test_end:
        feature = compute_indicators(panel)
        split_by_date(feature, args.train_end, args.test_end)  # boundary check only
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_ohlcv(panel, out)
    write_manifest(out.parent, "ingest", vars(args) | {"func": None},
                   [args.input], [out], None, started)
    print(f"aligned panel: {panel.n_days} days, {panel.n_assets} assets "
          f"({panel.dates[0]} .. {panel.dates[-1]})")
    return 0


def cmd_gen_expert(args) -> int:
    started = _now()
    config = schemas.load_config(args.config, "env") if args.config else {}
    env_config = _env_config(config)
    panel = _load_feature_panel(args.data)
    traj, equity = scripted_expert(args.expert, panel, env_config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_trajectories([traj], out)
    equity_path = out.with_suffix(".equity.csv")
    EquityCurve(traj.dates, equity).write_csv(equity_path)
    inputs = [args.data] + ([args.config] if args.config else [])
    write_manifest(out.parent, "gen-expert", config, inputs,
                   [out, equity_path], None, started)
    print(f"expert {args.expert}: {len(traj.actions)} steps, "
          f"return-to-go at start {traj.rtg[0]:.6f}")
    return 0


def cmd_train_dt(args) -> int:
    started = _now()
    config = schemas.load_config(args.config, "dt") if args.config else {"schema_version": 1}
    trajectories = load_trajectories(args.data)
    stats = fit_normalizer(trajectories)
    d_s = trajectories[0].states.shape[1]
    d_a = trajectories[0].actions.shape[1]
    gpt_config = GPTConfig(**config.get("gpt", {}))
    dt_config = DTConfig(state_dim=d_s, action_dim=d_a, **config.get("dt", {}))
    lora_section = config.get("lora", {})
    lora_config = LoRAConfig(**lora_section) if lora_section is not None else None
    train_config = _train_config(config, args.seed)
    weights = args.weights or config.get("weights")
    model = build_dt_model(gpt_config, dt_config, lora_config, train_config.seed,
                           weights_path=weights)
    log.info("training dt: %d trainable parameters",
             sum(t.data.size for t in model.trainable_tensors().values()))
    ckpt, losses = train_dt(trajectories, model, train_config, stats,
                            log_fn=lambda it, l: log.debug("iter %d loss %.6f", it, l))
    out = Path(args.out)
    ckpt.save(out)
    loss_path = out / "loss.csv"
    write_loss_log(losses, loss_path)
    inputs = [args.data] + ([args.config] if args.config else []) \
        + ([weights] if weights else [])
    write_manifest(out, "train-dt", config, inputs,
                   [out / "model.bin", out / "config.json", loss_path],
                   train_config.seed, started)
    print(f"trained {train_config.iterations} iterations, final loss {losses[-1]:.6f}")
    return 0


def cmd_train_bc(args) -> int:
    started = _now()
    config = schemas.load_config(args.config, "bc")
    trajectories = load_trajectories(args.data)
    stats = fit_normalizer(trajectories)
    train_config = _train_config(config, args.seed)
    ckpt, losses = train_bc(trajectories, train_config, stats,
                            target_param_count=config["target_param_count"],
                            log_fn=lambda it, l: log.debug("iter %d loss %.6f", it, l))
    out = Path(args.out)
    ckpt.save(out)
    loss_path = out / "loss.csv"
    write_loss_log(losses, loss_path)
    write_manifest(out, "train-bc", config, [args.data, args.config],
                   [out / "model.bin", out / "config.json", loss_path],
                   train_config.seed, started)
    print(f"trained bc ({ckpt.sidecar['param_count']} parameters), "
          f"final loss {losses[-1]:.6f}")
    return 0


def cmd_evaluate(args) -> int:
    started = _now()
    config = schemas.load_config(args.config, "env") if args.config else {}
    env_config = _env_config(config)
    ckpt = Checkpoint.load(args.ckpt)
    panel = _load_feature_panel(args.data)
    seeds = _parse_seeds(args.seeds)
    report, curves = evaluate_checkpoint(
        ckpt, panel, env_config, seeds, target_return=args.target_return,
        metadata={"checkpoint": checkpoint_digest(args.ckpt)})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.json"
    report.save(report_path)
    outputs = [report_path]
    for seed, curve in curves.items():
        p = out / f"equity_{seed}.csv"
        curve.write_csv(p)
        outputs.append(p)
    inputs = [args.data, Path(args.ckpt) / "model.bin", Path(args.ckpt) / "config.json"] \
        + ([args.config] if args.config else [])
    write_manifest(out, "evaluate", config, inputs, outputs, None, started)
    _print_report(report)
    return 0


def cmd_report(args) -> int:
    for path in args.inputs:
        if not Path(path).exists():
            raise ConfigError(f"report file not found: {path}")
        print(f"== {path}")
        _print_report(MetricsReport.load(path))
    return 0


def _print_report(report: MetricsReport) -> None:
    print(f"{'seed':>8}  {'cum_return_%':>12}  {'mdd_%':>8}  {'sharpe':>7}")
    for row in report.per_seed:
        print(f"{row['seed']:>8}  {row['cumulative_return_pct']:>12.4f}  "
              f"{row['mdd_pct']:>8.4f}  {row['sharpe']:>7.4f}")
    agg = report.aggregate
    print(f"{'mean±std':>8}  "
          f"{agg['cumulative_return_pct']['mean']:>6.2f} ± {agg['cumulative_return_pct']['std']:<4.2f}  "
          f"{agg['mdd_pct']['mean']:>4.2f} ± {agg['mdd_pct']['std']:<4.2f}  "
          f"{agg['sharpe']['mean']:>4.2f} ± {agg['sharpe']['std']:<4.2f}")


def cmd_compare_init(args) -> int:
    started = _now()
    config = schemas.load_config(args.config, "compare") if args.config else {"schema_version": 1}
    if not args.weights:
        raise ConfigError(
            "compare-init needs --weights with a backbone container for the "
            "imported-weights arm")
    env_config = _env_config(config)
    panel = _load_feature_panel(args.data)
    seeds = _parse_seeds(args.seeds)
    experts = [x.strip() for x in args.experts.split(",") if x.strip()]
    gpt_config = GPTConfig(**config.get("gpt", {}))
    lora_section = config.get("lora", {})
    lora_config = LoRAConfig(**lora_section) if lora_section is not None else None

    arms = {"pretrained": args.weights, "random": None}
    results: dict[str, dict[str, list[dict]]] = {}
    for expert in experts:
        traj, expert_equity = scripted_expert(expert, panel, env_config)
        stats = fit_normalizer([traj])
        target = float(traj.rtg[0])
        d_s, d_a = traj.states.shape[1], traj.actions.shape[1]
        dt_config = DTConfig(state_dim=d_s, action_dim=d_a, **config.get("dt", {}))
        expert_return = cumulative_return(EquityCurve(traj.dates, expert_equity))
        results[expert] = {"_expert_return_pct": expert_return}
        for arm, weights in arms.items():
            rows = []
            for seed in seeds:
                train_config = _train_config(config, seed)
                model = build_dt_model(gpt_config, dt_config, lora_config, seed,
                                       weights_path=weights)
                ckpt, losses = train_dt([traj], model, train_config, stats)
                policy = policy_from_checkpoint(ckpt)
                _, equity = rollout(policy, panel, env_config,
                                    target_return=target, seed=seed)
                row = {"seed": seed, "final_loss": losses[-1],
                       **metrics_for_curve(EquityCurve(list(panel.dates), equity))}
                rows.append(row)
                log.info("%s/%s seed %d: return %.2f%%", expert, arm, seed,
                         row["cumulative_return_pct"])
            results[expert][arm] = {"per_seed": rows,
                                    "aggregate": aggregate_rows(rows)}

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "comparison.json"
    with open(report_path, "w") as fh:
        json.dump({"seeds": seeds, "experts": results,
                   "env": dataclasses.asdict(env_config)}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(out, "compare-init", config,
                   [args.data, args.weights] + ([args.config] if args.config else []),
                   [report_path], None, started)
    _print_comparison(results, seeds)
    return 0


def _print_comparison(results: dict, seeds: list[int]) -> None:
    print(f"grouped comparison, mean ± std over {len(seeds)} seeds")
    header = f"{'expert':<18} {'metric':<22} {'pretrained':>18} {'random':>18}"
    print(header)
    print("-" * len(header))
    for expert, arms in results.items():
        for key in ("cumulative_return_pct", "mdd_pct", "sharpe"):
            cells = []
            for arm in ("pretrained", "random"):
                agg = arms[arm]["aggregate"][key]
                cells.append(f"{agg['mean']:>9.3f} ± {agg['std']:<6.3f}")
            print(f"{expert:<18} {key:<22} {cells[0]:>18} {cells[1]:>18}")
        print(f"{'':<18} {'expert_return_pct':<22} "
              f"{arms['_expert_return_pct']:>18.3f}")


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dtquant",
        description="Offline-RL trading pipeline: transformer policy with "
                    "low-rank adapters vs behavior cloning.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic OHLCV panel CSV")
    p.add_argument("--kind", choices=["gbm", "mean_revert"], default="gbm")
    p.add_argument("--assets", type=int, default=3)
    p.add_argument("--days", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start-date", default="2009-01-01")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("ingest", help="validate and align an OHLCV CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train-end")
    p.add_argument("--test-end")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("gen-expert", help="run a scripted expert, save its trajectory")
    p.add_argument("--data", required=True, help="panel CSV")
    p.add_argument("--expert", required=True,
                   choices=["buy_and_hold", "momentum", "oracle_lookahead"])
    p.add_argument("--config", help="env config JSON")
    p.add_argument("--out", required=True, help="trajectory JSONL path")
    p.set_defaults(func=cmd_gen_expert)

    p = sub.add_parser("train-dt", help="train the transformer policy offline")
    p.add_argument("--data", required=True, help="trajectory JSONL")
    p.add_argument("--config", help="model/training config JSON")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--weights", help="backbone container (omit for random init)")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.set_defaults(func=cmd_train_dt)

    p = sub.add_parser("train-bc", help="train the behavior-cloning baseline")
    p.add_argument("--data", required=True, help="trajectory JSONL")
    p.add_argument("--config", required=True, help="bc config JSON")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.set_defaults(func=cmd_train_bc)

    p = sub.add_parser("evaluate", help="deploy a checkpoint and score it")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--data", required=True, help="panel CSV")
    p.add_argument("--config", help="env config JSON")
    p.add_argument("--seeds", default="1", help="comma list, or a count n")
    p.add_argument("--target-return", type=float, default=0.0,
                   help="conditioning target in scaled-reward units")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="print saved metric reports")
    p.add_argument("inputs", nargs="+", help="report JSON files")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("compare-init",
                       help="imported vs random backbone over experts and seeds")
    p.add_argument("--data", required=True, help="panel CSV")
    p.add_argument("--experts", required=True, help="comma list of expert kinds")
    p.add_argument("--seeds", default="5", help="comma list, or a count n")
    p.add_argument("--config", help="compare config JSON")
    p.add_argument("--weights", help="backbone container for the imported arm")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_compare_init)

    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        return args.func(args)
    except DtqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
