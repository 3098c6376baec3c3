"""Command-line entry point for reproducible experiments.

Every subcommand resolves its configuration (defaults, then an optional
JSON ``--config`` file, then flags), derives all randomness from the single
manifest seed via named sub-seeds, writes its artifacts under ``--out-dir``,
and records a ``manifest.json`` tying the outputs to the resolved config.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import csv
import dataclasses
import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .jac import (
    ArConfig,
    ArModel,
    CrConfig,
    CrModel,
    JacModel,
    QuantizerConfig,
    TwoTowerConfig,
    TwoTowerModel,
    historical_ctr_from_log,
    load_model,
    save_model,
    train_on_log,
)
from .jac.two_tower import save_two_tower
from .metrics import DegenerateInputError, replay_report
from .pipeline import (
    ArchitecturePlan,
    ExperimentArm,
    ServingModels,
    balanced_eval_log,
    correlate_offline_online,
    production_eval_log,
    make_ranker_family,
    plan_latency,
    run_experiment,
)
from .nnet.hashing import stable_hash
from .presets import TABLE1_SHAPE, table1_plans, world_preset
from .rankers import OracleRanker, RandomRanker, noisy_oracle_ranker
from .records import read_log_columns, write_log_columns
from .simworld import CreativePolicy, World, WorldConfig, generate_log_columns, \
    generate_world, load_world, save_world

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class ConfigError(Exception):
    pass


def sub_seed(seed: int, name: str) -> int:
    """Named sub-seed derived from the manifest seed."""
    return stable_hash(name, seed) & 0x7FFFFFFF


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    return cfg


def _write_manifest(out_dir: Path, subcommand: str, config: dict, seed: int,
                    artifacts: dict) -> Path:
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "seed": seed,
        "artifacts": {k: str(v) for k, v in artifacts.items()},
        "tool_version": __version__,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def _guarded(fn):
    """Map config errors and runtime failures to distinct exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            fn(*args, **kwargs)
        except (ConfigError, ValueError, KeyError, TypeError, FileNotFoundError) as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except (FloatingPointError, DegenerateInputError, OSError) as exc:
            click.echo(f"runtime error: {exc}", err=True)
            sys.exit(EXIT_RUNTIME)

    return wrapper


def common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(), default=None,
                      help="JSON file of config overrides.")(fn)
    fn = click.option("--seed", type=int, default=0, show_default=True,
                      help="Manifest seed; all randomness derives from it.")(fn)
    fn = click.option("--out-dir", type=click.Path(), default=None,
                      help="Artifact directory (default runs/<subcommand>).")(fn)
    fn = click.option("--preset", default=None,
                      help="Named preset for the subcommand.")(fn)
    return fn


def _out_dir(out_dir: str | None, subcommand: str) -> Path:
    path = Path(out_dir) if out_dir else Path("runs") / subcommand
    path.mkdir(parents=True, exist_ok=True)
    return path


def _resolve_world(cfg: dict, preset: str | None, seed: int) -> World:
    """World from (in priority order) an explicit path, a preset, or config."""
    if cfg.get("world_path"):
        return load_world(cfg["world_path"])
    wseed = sub_seed(seed, "world")
    if preset:
        return generate_world(world_preset(preset, wseed))
    overrides = dict(cfg.get("world", {}))
    overrides["forced_ad_ctrs"] = tuple(
        tuple(x) for x in overrides.get("forced_ad_ctrs", ()))
    overrides.setdefault("seed", wseed)
    return generate_world(WorldConfig(**overrides))


def _policy_from(cfg: dict, seed: int) -> CreativePolicy:
    return CreativePolicy(tag=cfg.get("policy", "uniform-random"),
                          tau=float(cfg.get("tau", 0.0)),
                          seed=sub_seed(seed, "policy"))


@click.group()
@click.version_option(__version__)
def main():
    """Ad/creative ranking simulator: worlds, models, metrics, experiments."""


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

@main.command()
@common_options
@click.option("--impressions", type=int, default=100_000, show_default=True)
@_guarded
def gen(config_path, seed, out_dir, preset, impressions):
    """Generate a world and a simulated impression log."""
    cfg = _load_config(config_path)
    impressions = int(cfg.get("impressions", impressions))
    if impressions <= 0:
        raise ConfigError("impressions must be positive")
    out = _out_dir(out_dir, "gen")
    world = _resolve_world(cfg, preset, seed)
    policy = _policy_from(cfg, seed)
    log = generate_log_columns(world, policy, impressions, sub_seed(seed, "log"),
                               ad_sampling=cfg.get("ad_sampling", "uniform"))
    world_path = out / "world.npz"
    log_path = out / "log.jsonl"
    save_world(world, world_path)
    write_log_columns(log_path, log)
    resolved = dict(cfg, impressions=impressions, preset=preset,
                    world=dataclasses.asdict(world.config))
    manifest = _write_manifest(out, "gen", resolved, seed,
                               {"world": world_path, "log": log_path})
    click.echo(manifest.read_text(), nl=False)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

_MODEL_KINDS = ("jac", "ar", "cr", "two-tower")


def _build_model(kind: str, cfg: dict, seed: int):
    if kind == "jac":
        qcfg = QuantizerConfig(**cfg.get("qcfg", {}))
        ar_cfg = ArConfig(seed=sub_seed(seed, "ar"),
                          **_hidden_tupled(cfg.get("ar_cfg", {})))
        cr_cfg = CrConfig(seed=sub_seed(seed, "cr"), bridge_dim=qcfg.dim,
                          **_hidden_tupled(cfg.get("cr_cfg", {})))
        return JacModel(ar_cfg, cr_cfg, qcfg,
                        loss_weight=float(cfg.get("loss_weight", 1.0)),
                        pctr_gradient=bool(cfg.get("pctr_gradient", True)),
                        seed=sub_seed(seed, "jac"))
    if kind == "ar":
        return ArModel(ArConfig(seed=sub_seed(seed, "ar"),
                                **_hidden_tupled(cfg.get("ar_cfg", {}))))
    if kind == "cr":
        return CrModel(CrConfig(seed=sub_seed(seed, "cr"), use_bridge=False,
                                **_hidden_tupled(cfg.get("cr_cfg", {}))))
    if kind == "two-tower":
        return TwoTowerModel(TwoTowerConfig(seed=sub_seed(seed, "two-tower"),
                                            **cfg.get("two_tower_cfg", {})))
    raise ConfigError(f"unknown model kind {kind!r} (known: {', '.join(_MODEL_KINDS)})")


def _hidden_tupled(cfg: dict) -> dict:
    cfg = dict(cfg)
    if "hidden" in cfg:
        cfg["hidden"] = tuple(cfg["hidden"])
    if "seed" in cfg:
        cfg.pop("seed")  # model seeds derive from the manifest seed
    return cfg


@main.command()
@common_options
@click.option("--model", "kind", type=click.Choice(_MODEL_KINDS), default="jac",
              show_default=True)
@click.option("--world", "world_path", type=click.Path(exists=True), required=True)
@click.option("--log", "log_path", type=click.Path(exists=True), required=True)
@click.option("--epochs", type=int, default=1, show_default=True)
@click.option("--batch-size", type=int, default=512, show_default=True)
@click.option("--learning-rate", type=float, default=0.05, show_default=True)
@_guarded
def train(config_path, seed, out_dir, preset, kind, world_path, log_path,
          epochs, batch_size, learning_rate):
    """Train a model on a log; JAC also emits its split serving halves."""
    cfg = _load_config(config_path)
    out = _out_dir(out_dir, "train")
    world = load_world(world_path)
    log = read_log_columns(log_path)
    model = _build_model(kind, cfg, seed)
    curve = train_on_log(model, world, log, batch_size=batch_size,
                         learning_rate=learning_rate, epochs=epochs)
    artifacts = {"world": world_path, "log": log_path}
    model_path = out / "model.npz"
    if kind == "two-tower":
        save_two_tower(model, model_path)
    else:
        save_model(model, model_path)
    artifacts["model"] = model_path
    if kind == "jac":
        hist = historical_ctr_from_log(log, world.num_ads)
        ar_plus, cr_plus = model.split_for_serving(hist)
        save_model(ar_plus, out / "ar_plus.npz")
        save_model(cr_plus, out / "cr_plus.npz")
        artifacts["ar_plus"] = out / "ar_plus.npz"
        artifacts["cr_plus"] = out / "cr_plus.npz"
    curve_path = out / "curve.csv"
    _write_csv(curve_path, curve)
    artifacts["curve"] = curve_path
    resolved = dict(cfg, model=kind, epochs=epochs, batch_size=batch_size,
                    learning_rate=learning_rate)
    manifest = _write_manifest(out, "train", resolved, seed, artifacts)
    click.echo(manifest.read_text(), nl=False)


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _creative_ranker(spec: str, world: World, seed: int):
    """Ranker from a checkpoint path or a named reference ranker.

    Named forms: ``random``, ``oracle``, ``noisy-oracle:<tau>``."""
    if spec == "random":
        return RandomRanker(sub_seed(seed, "random-ranker"))
    if spec == "oracle":
        return OracleRanker(world)
    if spec.startswith("noisy-oracle"):
        tau = float(spec.split(":", 1)[1]) if ":" in spec else 1.0
        return noisy_oracle_ranker(world, tau, sub_seed(seed, "noisy-oracle"))
    model = load_model(spec)
    if model.model_type == "jac":
        return model.joint_scorer(world)
    if model.model_type in ("cr", "cr_plus", "two_tower"):
        return model.scorer(world)
    raise ConfigError(f"model type {model.model_type!r} cannot rank creatives")


@main.command(name="eval")
@common_options
@click.option("--world", "world_path", type=click.Path(exists=True), required=True)
@click.option("--log", "log_path", type=click.Path(exists=True), required=True)
@click.option("--ranker", default="random", show_default=True,
              help="Checkpoint path, or random / oracle / noisy-oracle:<tau>.")
@_guarded
def eval_cmd(config_path, seed, out_dir, preset, world_path, log_path, ranker):
    """Replay-evaluate a creative ranker on a log (AUC, GAUC, sCTR, NSCTR)."""
    cfg = _load_config(config_path)
    out = _out_dir(out_dir, "eval")
    world = load_world(world_path)
    log = read_log_columns(log_path)
    scorer = _creative_ranker(cfg.get("ranker", ranker), world, seed)
    report = replay_report(log, scorer,
                           unmatched_ads=cfg.get("unmatched_ads", "skip"))
    report_path = out / "report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _write_csv(out / "report.csv", [report])
    manifest = _write_manifest(
        out, "eval", dict(cfg, ranker=cfg.get("ranker", ranker)), seed,
        {"world": world_path, "log": log_path, "report": report_path,
         "report_csv": out / "report.csv"})
    click.echo(manifest.read_text(), nl=False)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _arm_models(spec: dict, world: World, seed: int) -> ServingModels:
    ad = spec.get("ad", "random")
    creative = spec.get("creative", "random")
    models = ServingModels()
    if ad == "random":
        models.ad_policy = "random"
    elif ad == "oracle":
        # expected CTR of the ad under uniform creative choice
        models.ad_table = np.nanmean(world.ctr_tensor(), axis=2)
    else:
        model = load_model(ad)
        if not hasattr(model, "scorer") or model.model_type not in ("ar", "ar_plus"):
            raise ConfigError(f"arm ad model {ad!r} is not an AR checkpoint")
        models.ad_table = model.scorer(world).table(world)
    if creative == "random":
        models.creative_policy = "random"
    else:
        models.creative_table = _creative_ranker(creative, world, seed).table(world)
    return models


@main.command()
@common_options
@click.option("--requests", type=int, default=100_000, show_default=True)
@_guarded
def simulate(config_path, seed, out_dir, preset, requests):
    """Run the latency table or a simulated online A/B experiment.

    ``--preset table1-latency`` emits the analytic RT of all four plans at
    the nominal request shape. Otherwise arms come from the config file."""
    cfg = _load_config(config_path)
    out = _out_dir(out_dir, "simulate")
    if preset == "table1-latency":
        plans = table1_plans()
        rows = [{"arch": tag, "rt_ms": plan_latency(plan, **TABLE1_SHAPE)}
                for tag, plan in plans.items()]
        report_path = out / "latency.json"
        report_path.write_text(json.dumps(rows, indent=2) + "\n")
        _write_csv(out / "latency.csv", rows)
        manifest = _write_manifest(out, "simulate",
                                   dict(cfg, preset=preset, **TABLE1_SHAPE), seed,
                                   {"report": report_path,
                                    "report_csv": out / "latency.csv"})
        click.echo(manifest.read_text(), nl=False)
        return

    world = _resolve_world(cfg, preset, seed)
    arm_specs = cfg.get("arms") or [
        {"name": "NoCR", "plan": "NoCR", "ad": "random", "creative": "random"},
        {"name": "PeriCR-oracle", "plan": "PeriCR", "ad": "random",
         "creative": "oracle"},
    ]
    plans = table1_plans()
    arms = []
    for spec in arm_specs:
        plan_spec = spec.get("plan", "PeriCR")
        plan = (plans[plan_spec] if isinstance(plan_spec, str)
                else ArchitecturePlan(**plan_spec))
        arms.append(ExperimentArm(spec["name"], plan,
                                  _arm_models(spec, world, seed)))
    reports = run_experiment(arms, world, int(cfg.get("requests", requests)),
                             sub_seed(seed, "experiment"),
                             baseline=cfg.get("baseline"))
    rows = [r.as_dict() for r in reports]
    report_path = out / "experiment.json"
    report_path.write_text(json.dumps(rows, indent=2) + "\n")
    _write_csv(out / "experiment.csv", rows)
    manifest = _write_manifest(
        out, "simulate", dict(cfg, requests=requests, arms=arm_specs), seed,
        {"report": report_path, "report_csv": out / "experiment.csv"})
    click.echo(manifest.read_text(), nl=False)


# ---------------------------------------------------------------------------
# correlate
# ---------------------------------------------------------------------------

@main.command()
@common_options
@click.option("--impressions", type=int, default=200_000, show_default=True,
              help="Size of the balanced offline eval log.")
@click.option("--requests", type=int, default=200_000, show_default=True,
              help="Requests per online arm.")
@_guarded
def correlate(config_path, seed, out_dir, preset, impressions, requests):
    """Offline-metric vs online-CTR-lift correlation across ranker quality."""
    cfg = _load_config(config_path)
    out = _out_dir(out_dir, "correlate")
    world = _resolve_world(cfg, preset or "default-world", seed)
    taus = tuple(float(t) for t in cfg.get("taus", ("inf", 2, 1, 0.5, 0.25, 0)))
    rankers = make_ranker_family(world, taus, sub_seed(seed, "rankers"))
    logger = cfg.get("logger", "balanced")
    n_imp = int(cfg.get("impressions", impressions))
    if logger == "balanced":
        eval_log = balanced_eval_log(world, n_imp, sub_seed(seed, "eval-log"))
    elif logger == "production":
        eval_log = production_eval_log(world, n_imp, sub_seed(seed, "eval-log"))
    else:
        raise ConfigError(f"unknown logger {logger!r} (balanced or production)")
    study = correlate_offline_online(rankers, world, eval_log,
                                     sub_seed(seed, "experiment"),
                                     num_requests=int(cfg.get("requests", requests)))
    rows_path = out / "rankers.csv"
    _write_csv(rows_path, study.rows)
    corr_path = out / "correlations.json"
    corr_path.write_text(json.dumps(
        {"correlations": study.correlations, "flags": study.flags},
        indent=2, sort_keys=True) + "\n")
    manifest = _write_manifest(
        out, "correlate",
        dict(cfg, taus=list(taus), impressions=impressions, requests=requests),
        seed, {"rankers": rows_path, "correlations": corr_path})
    click.echo(manifest.read_text(), nl=False)


if __name__ == "__main__":
    main()
