"""Build a federation from a resolved config and run it end to end."""

from __future__ import annotations

import logging
import statistics
from dataclasses import dataclass, field

import numpy as np

from . import data as data_mod
from . import models
from .config import ExperimentConfig
from .engine import ClientSpec, Federation, RoundRecord, Schedule, client_seed, run_round
from .masks import MaskStrategy, gen_mask, kept_fraction, optimize_assignment

log = logging.getLogger(__name__)


@dataclass
class ExperimentResult:
    seed: int
    records: list[RoundRecord]
    summary: dict
    theta: np.ndarray = field(repr=False)
    client_ids: list[int] = field(default_factory=list)


def build_datasets(cfg: ExperimentConfig, seed: int):
    d = cfg["dataset"]
    dseed = seed if d["seed"] is None else d["seed"]
    src = d["source"]
    if src == "synthetic-quadratic":
        return data_mod.make_quadratic(d["dim"], d["condition"], dseed, d["samples"], d["noise"]), None
    if src == "synthetic-blobs":
        ds = data_mod.make_blobs(d["samples"], d["features"], d["classes"], dseed,
                                 d["spread"], d["separation"])
        if d["test_fraction"] > 0:
            return data_mod.train_test_split(ds, d["test_fraction"], dseed)
        return ds, None
    if src == "idx":
        train = data_mod.load_idx(d["train_images"], d["train_labels"])
        test = None
        if d["test_images"]:
            test = data_mod.load_idx(d["test_images"], d["test_labels"])
        return train, test
    train = data_mod.load_csv(d["train_csv"], scale=d["scale"])
    test = None
    if d["test_csv"]:
        test = data_mod.load_csv(d["test_csv"], class_count=train.class_count, scale=d["scale"])
    return train, test


def build_model(cfg: ExperimentConfig, train: data_mod.DatasetHandle) -> models.ModelSpec:
    m = cfg["model"]
    return models.ModelSpec(kind=m["kind"], input_dim=train.samples.inputs.shape[1],
                            class_count=train.class_count,
                            hidden_dim=m["hidden"] if m["kind"] == "mlp" else 0,
                            activation=m["activation"], init_seed=m["init_seed"])


def build_partition(cfg: ExperimentConfig, train, seed: int) -> data_mod.Partition:
    d, n = cfg["dataset"], cfg["clients"]["count"]
    if d["partition"] == "label-skew":
        return data_mod.partition_label_skew(train, n, d["max_labels"], seed)
    return data_mod.partition_iid(train, n, seed)


def build_strategy(cfg: ExperimentConfig, spec: models.ModelSpec) -> MaskStrategy:
    c = cfg["clients"]
    betas = dict(enumerate(c["capacities"]))
    kinds = dict(enumerate(c["strategy"]))
    exempt = models.output_layers(spec) if c["keep_output"] else frozenset()
    layout = models.model_layout(spec)
    offsets, degenerate = {}, False
    optimized = {i: b for i, b in betas.items() if kinds[i] == "coverage-optimized"}
    if optimized:
        lengths = [s.length for s in layout if s.name not in exempt]
        opt = optimize_assignment(optimized, lengths)
        offsets, degenerate = dict(opt.group_offsets), opt.degenerate
    kind = c["strategy"][0]
    return MaskStrategy(kind, betas, offsets, kinds, frozenset(exempt), degenerate)


def build_federation(cfg: ExperimentConfig, seed: int, workers: int | None = None) -> Federation:
    train, test = build_datasets(cfg, seed)
    spec = build_model(cfg, train)
    part = build_partition(cfg, train, seed)
    weights = part.weights()
    clients = [ClientSpec(i, part.shards[i], cfg["clients"]["batch_size"], client_seed(seed, i),
                          weights[i]) for i in sorted(part.shards)]
    s = cfg["schedule"]
    schedule = Schedule(s["rounds"], s["local_epochs"], s["gamma"], s["participation"],
                        s["momentum"], s["sampling"])
    return Federation(spec, train, clients, build_strategy(cfg, spec), schedule, seed,
                      test=test, workers=workers or s["workers"])


def round_zero_masks(fed: Federation) -> dict:
    return {c.id: gen_mask(fed.strategy, fed.theta, c.id, 0, fed.seed) for c in fed.clients}


def outside_theory(cfg: ExperimentConfig) -> list[str]:
    flags = []
    s = cfg["schedule"]
    if s["participation"] < 1:
        flags.append("partial-participation")
    if s["momentum"] > 0:
        flags.append("momentum")
    if cfg["model"]["kind"] == "mlp" and cfg["model"]["activation"] == "relu":
        flags.append("non-smooth-activation")
    return flags


def run_experiment(cfg: ExperimentConfig, seed: int | None = None, workers: int | None = None,
                   on_round=None) -> ExperimentResult:
    """Run all rounds for one seed and summarize."""
    seed = cfg["seed"] if seed is None else seed
    fed = build_federation(cfg, seed, workers)
    initial = fed.evaluate()
    start_masks = round_zero_masks(fed)
    diagnostics = {}
    if cfg["diagnostics"]:
        from .diagnostics import assumption_report
        diagnostics["start"] = assumption_report(fed, seed=seed)
    log.info("run %s seed %d: gamma=%.6g over %d clients", cfg.name, seed, fed.gamma,
             len(fed.clients))
    for q in range(fed.schedule.rounds):
        rec = run_round(fed, q)
        if on_round is not None:
            on_round(rec)
    records = fed.records
    last = records[-1]
    summary = {
        "name": cfg.name,
        "seed": seed,
        "rounds": len(records),
        "gamma": fed.gamma,
        "lipschitz": fed.lipschitz,
        "initial_loss": initial["loss"],
        "final_loss": last.loss,
        "final_accuracy": last.accuracy,
        "final_local_accuracy": last.local_accuracy,
        "avg_grad_sqnorm": float(np.mean([r.grad_sqnorm for r in records])),
        "gamma_min_running": fed.tracker.running,
        "effective_gamma_min": fed.tracker.effective,
        "delta_sq_max": max(r.delta_sq_max for r in records),
        "param_fraction": kept_fraction(start_masks),
        "degenerate_coverage": fed.strategy.degenerate or fed.tracker.running == 0,
        "outside_theory": outside_theory(cfg),
        "optimality_gap": None,
    }
    if fed.train.quad is not None:
        star = fed.theta.with_values(fed.train.quad.theta_star)
        summary["optimality_gap"] = last.loss - models.loss(fed.model, star, fed.train.samples)
    if diagnostics:
        from .diagnostics import assumption_report
        diagnostics["end"] = assumption_report(fed, seed=seed)
        summary["diagnostics"] = diagnostics
    return ExperimentResult(seed, list(records), summary, fed.theta.values.copy(),
                            [c.id for c in fed.clients])


def _mean_std(values):
    values = [v for v in values if v is not None]
    if not values:
        return None, None
    if len(values) == 1:
        return float(values[0]), 0.0
    return float(statistics.fmean(values)), float(statistics.stdev(values))


def aggregate_summaries(name: str, summaries: list[dict]) -> dict:
    out = {"name": name, "seeds": [s["seed"] for s in summaries], "per_seed": summaries}
    for key in ("final_accuracy", "final_loss", "avg_grad_sqnorm", "optimality_gap"):
        mean, std = _mean_std([s[key] for s in summaries])
        out[f"{key}_mean"] = mean
        out[f"{key}_std"] = std
    out["gamma_min_running"] = min(s["gamma_min_running"] for s in summaries)
    out["delta_sq_max"] = max(s["delta_sq_max"] for s in summaries)
    out["param_fraction"] = summaries[0]["param_fraction"]
    return out
