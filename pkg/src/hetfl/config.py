"""Experiment configuration: schema, defaults and exhaustive validation.

Configs are YAML (JSON is accepted too, being a subset). Every key below is
optional unless marked required; ``resolve`` fills defaults so a dry run
shows the complete configuration.

    name: str                      # default: config file stem
    seed: int = 0                  # repeat r runs with seed + r
    repeats: int = 1
    output: str = "runs/<name>"
    diagnostics: bool = false      # estimate L, G, sigma^2 at start and end
    model:
      kind: quadratic | logistic | mlp        (required)
      hidden: int = 64                        # mlp only
      activation: tanh | relu = tanh          # relu breaks the smoothness assumption
      init_seed: int = 0                      # same starting model for every repeat
    dataset:
      source: synthetic-quadratic | synthetic-blobs | idx | csv   (required)
      seed: int | null = null                 # null: follow the run seed
      dim: 20, condition: 10.0, samples: 400, noise: 0.1          # synthetic-quadratic
      features: 20, classes: 10, samples: 400, spread: 1.0, separation: 3.0  # synthetic-blobs
      test_fraction: 0.2                      # held-out split for synthetic-blobs
      train_images, train_labels, test_images, test_labels: path   # idx
      train_csv, test_csv: path; scale: 255.0                     # csv
      partition: iid | label-skew = iid
      max_labels: int = 2                     # label-skew only
    clients:
      count: int = 10
      capacities: float | list[float] | codename string = 1.0
      levels: list[float] = [1.0, 0.75, 0.5, 0.25]   # codename digit d -> levels[d-1]
      strategy: kind | list[kind] = magnitude
      keep_output: bool | null = null         # null: true for mlp, false otherwise
      batch_size: int = 10
    schedule:
      rounds: int = 100
      local_epochs: int = 5
      gamma: float | theorem-iid | theorem-noniid = 0.05
      participation: float = 1.0
      momentum: float = 0.0
      sampling: epoch | with-replacement = epoch
      workers: int = 1                        # concurrent clients per round
"""

from __future__ import annotations

import copy
import difflib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ConfigError
from .masks import STRATEGY_KINDS
from .models import ACTIVATIONS, KINDS

SOURCES = ("synthetic-quadratic", "synthetic-blobs", "idx", "csv")
PARTITIONS = ("iid", "label-skew")
DEFAULT_LEVELS = [1.0, 0.75, 0.5, 0.25]

DEFAULTS = {
    "name": None,
    "seed": 0,
    "repeats": 1,
    "output": None,
    "diagnostics": False,
    "model": {"kind": None, "hidden": 64, "activation": "tanh", "init_seed": 0},
    "dataset": {
        "source": None, "seed": None,
        "dim": 20, "condition": 10.0, "samples": 400, "noise": 0.1,
        "features": 20, "classes": 10, "spread": 1.0, "separation": 3.0, "test_fraction": 0.2,
        "train_images": None, "train_labels": None, "test_images": None, "test_labels": None,
        "train_csv": None, "test_csv": None, "scale": 255.0,
        "partition": "iid", "max_labels": 2,
    },
    "clients": {"count": 10, "capacities": 1.0, "levels": DEFAULT_LEVELS, "strategy": "magnitude",
                "keep_output": None, "batch_size": 10},
    "schedule": {"rounds": 100, "local_epochs": 5, "gamma": 0.05, "participation": 1.0,
                 "momentum": 0.0, "sampling": "epoch", "workers": 1},
}
SECTIONS = ("model", "dataset", "clients", "schedule")
SHARED_SECTIONS = ("model", "dataset", "schedule")


class ConfigValidationError(ConfigError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully resolved, validated configuration."""

    data: dict
    path: Path | None = None

    def __getitem__(self, key):
        return self.data[key]

    @property
    def name(self) -> str:
        return self.data["name"]

    def section(self, name: str) -> dict:
        return self.data[name]

    def betas(self) -> list[float]:
        return list(self.data["clients"]["capacities"])

    def strategies(self) -> list[str]:
        return list(self.data["clients"]["strategy"])

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def dump(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=False, default_flow_style=None)


def _suggest(key: str, allowed) -> str:
    close = difflib.get_close_matches(key, list(allowed), n=1, cutoff=0.6)
    return f" (did you mean {close[0]!r}?)" if close else ""


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def expand_capacities(spec, count: int, levels, errors: list[str]) -> list[float]:
    """Turn a scalar, list or codename digit string into one keep fraction per client."""
    if isinstance(spec, str):
        if len(spec) != count:
            errors.append(f"clients.capacities: codename {spec!r} has {len(spec)} digits "
                          f"but clients.count is {count}")
            return []
        out = []
        for ch in spec:
            if not ch.isdigit() or not 1 <= int(ch) <= len(levels):
                errors.append(f"clients.capacities: codename digit {ch!r} must be in 1..{len(levels)}")
                return []
            out.append(float(levels[int(ch) - 1]))
        return out
    if _is_num(spec):
        return [float(spec)] * count
    if isinstance(spec, list):
        if len(spec) != count:
            errors.append(f"clients.capacities: {len(spec)} entries but clients.count is {count}")
            return []
        if not all(_is_num(b) for b in spec):
            errors.append("clients.capacities: entries must be numbers")
            return []
        return [float(b) for b in spec]
    errors.append("clients.capacities: expected a number, list or codename string")
    return []


def _check_unknown(raw: dict, allowed: dict, prefix: str, errors: list[str]) -> None:
    for key in raw:
        if key not in allowed:
            errors.append(f"unknown key {prefix}{key!r}{_suggest(str(key), allowed)}")


def resolve(raw: dict, path: Path | None = None) -> ExperimentConfig:
    """Validate ``raw`` against the schema and fill every default.

    Raises ConfigValidationError listing every problem found.
    """
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigValidationError(["config root must be a mapping"])
    _check_unknown(raw, DEFAULTS, "", errors)
    data = copy.deepcopy(DEFAULTS)
    for key, value in raw.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                errors.append(f"{key}: must be a mapping")
                continue
            _check_unknown(value, DEFAULTS[key], f"{key}.", errors)
            data[key].update({k: v for k, v in value.items() if k in DEFAULTS[key]})
        elif key in DEFAULTS:
            data[key] = value

    def need(cond, msg):
        if not cond:
            errors.append(msg)

    if data["name"] is None:
        data["name"] = path.stem if path is not None else "experiment"
    need(isinstance(data["name"], str) and data["name"], "name: must be a non-empty string")
    need(_is_int(data["seed"]) and data["seed"] >= 0, "seed: must be an integer >= 0")
    need(_is_int(data["repeats"]) and data["repeats"] >= 1, "repeats: must be an integer >= 1")
    if data["output"] is None:
        data["output"] = f"runs/{data['name']}"
    need(isinstance(data["output"], str), "output: must be a path string")
    need(isinstance(data["diagnostics"], bool), "diagnostics: must be true or false")

    m = data["model"]
    need(m["kind"] in KINDS, f"model.kind: required, one of {list(KINDS)}")
    need(_is_int(m["hidden"]) and m["hidden"] >= 1, "model.hidden: must be an integer >= 1")
    need(m["activation"] in ACTIVATIONS, f"model.activation: one of {list(ACTIVATIONS)}")
    need(_is_int(m["init_seed"]) and m["init_seed"] >= 0, "model.init_seed: must be an integer >= 0")

    d = data["dataset"]
    need(d["source"] in SOURCES, f"dataset.source: required, one of {list(SOURCES)}")
    need(d["seed"] is None or (_is_int(d["seed"]) and d["seed"] >= 0),
         "dataset.seed: must be null or an integer >= 0")
    need(_is_int(d["dim"]) and d["dim"] >= 1, "dataset.dim: must be an integer >= 1")
    need(_is_num(d["condition"]) and d["condition"] >= 1, "dataset.condition: must be >= 1")
    need(_is_int(d["samples"]) and d["samples"] >= 1, "dataset.samples: must be an integer >= 1")
    need(_is_num(d["noise"]) and d["noise"] >= 0, "dataset.noise: must be >= 0")
    need(_is_int(d["features"]) and d["features"] >= 1, "dataset.features: must be an integer >= 1")
    need(_is_int(d["classes"]) and d["classes"] >= 2, "dataset.classes: must be an integer >= 2")
    need(_is_num(d["spread"]) and d["spread"] > 0, "dataset.spread: must be > 0")
    need(_is_num(d["separation"]) and d["separation"] >= 0, "dataset.separation: must be >= 0")
    need(_is_num(d["test_fraction"]) and 0 <= d["test_fraction"] < 1,
         "dataset.test_fraction: must be in [0, 1)")
    need(_is_num(d["scale"]) and d["scale"] > 0, "dataset.scale: must be > 0")
    need(d["partition"] in PARTITIONS, f"dataset.partition: one of {list(PARTITIONS)}")
    need(_is_int(d["max_labels"]) and d["max_labels"] >= 1, "dataset.max_labels: must be an integer >= 1")
    base = path.parent if path is not None else Path(".")
    file_keys = {"idx": ("train_images", "train_labels", "test_images", "test_labels"),
                 "csv": ("train_csv", "test_csv")}.get(d["source"], ())
    for key in file_keys:
        if d[key] is None:
            if key.startswith("train"):
                errors.append(f"dataset.{key}: required for source {d['source']!r}")
            continue
        p = Path(d[key])
        if not p.is_absolute():
            p = base / p
        d[key] = str(p)
        need(p.is_file(), f"dataset.{key}: file not found: {p}")
    if d["source"] == "idx":
        need((d["test_images"] is None) == (d["test_labels"] is None),
             "dataset.test_images and dataset.test_labels must be given together")
    if m["kind"] == "quadratic":
        need(d["source"] == "synthetic-quadratic",
             "model.kind: quadratic requires dataset.source synthetic-quadratic")
        need(d["partition"] == "iid", "dataset.partition: label-skew needs a classification dataset")
    elif m["kind"] in KINDS:
        need(d["source"] != "synthetic-quadratic",
             f"model.kind: {m['kind']} cannot train on synthetic-quadratic data")
    if d["partition"] == "label-skew" and d["source"] == "synthetic-blobs" and _is_int(d["max_labels"]):
        need(d["max_labels"] <= d["classes"], "dataset.max_labels: must be <= dataset.classes")

    c = data["clients"]
    need(_is_int(c["count"]) and c["count"] >= 1, "clients.count: must be an integer >= 1")
    need(_is_int(c["batch_size"]) and c["batch_size"] >= 1, "clients.batch_size: must be an integer >= 1")
    need(c["keep_output"] is None or isinstance(c["keep_output"], bool),
         "clients.keep_output: must be true, false or null")
    levels = c["levels"]
    if not (isinstance(levels, list) and levels and all(_is_num(v) and 0 < v <= 1 for v in levels)):
        errors.append("clients.levels: must be a non-empty list of fractions in (0, 1]")
        levels = DEFAULT_LEVELS
    count = c["count"] if _is_int(c["count"]) and c["count"] >= 1 else 0
    if count:
        betas = expand_capacities(c["capacities"], count, levels, errors)
        for i, b in enumerate(betas):
            if not 0 < b <= 1:
                errors.append(f"clients.capacities[{i}]: keep fraction must be in (0, 1], got {b}")
        if betas:
            c["capacities"] = betas
        strat = c["strategy"]
        if isinstance(strat, str):
            strat = [strat] * count
        if not isinstance(strat, list) or len(strat) != count:
            errors.append(f"clients.strategy: must be a kind or a list of {count} kinds")
        else:
            for i, k in enumerate(strat):
                need(k in STRATEGY_KINDS,
                     f"clients.strategy[{i}]: unknown kind {k!r}, one of {list(STRATEGY_KINDS)}")
            c["strategy"] = list(strat)
    if c["keep_output"] is None and m["kind"] in KINDS:
        c["keep_output"] = m["kind"] == "mlp"

    s = data["schedule"]
    need(_is_int(s["rounds"]) and s["rounds"] >= 1, "schedule.rounds: must be an integer >= 1")
    need(_is_int(s["local_epochs"]) and s["local_epochs"] >= 1,
         "schedule.local_epochs: must be an integer >= 1")
    g = s["gamma"]
    need((_is_num(g) and g > 0) or g in ("theorem-iid", "theorem-noniid"),
         "schedule.gamma: must be > 0 or one of 'theorem-iid', 'theorem-noniid'")
    need(_is_num(s["participation"]) and 0 < s["participation"] <= 1,
         "schedule.participation: must be in (0, 1]")
    need(_is_num(s["momentum"]) and 0 <= s["momentum"] < 1, "schedule.momentum: must be in [0, 1)")
    need(s["sampling"] in ("epoch", "with-replacement"),
         "schedule.sampling: one of ['epoch', 'with-replacement']")
    need(_is_int(s["workers"]) and s["workers"] >= 1, "schedule.workers: must be an integer >= 1")

    if errors:
        raise ConfigValidationError(errors)
    return ExperimentConfig(data, path)


def load_raw(path) -> dict:
    path = Path(path)
    with open(path) as f:
        text = f.read()
    if path.suffix == ".json":
        return json.loads(text)
    try:
        return yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigValidationError([f"{path}: not valid YAML ({exc})"]) from None


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    return resolve(load_raw(path), path)


def output_dir(cfg: ExperimentConfig, override: str | None = None) -> Path:
    """Where a run writes; ``HETFL_OUTPUT_ROOT`` relocates the default location."""
    if override:
        return Path(override)
    root = os.environ.get("HETFL_OUTPUT_ROOT")
    if root:
        return Path(root) / cfg.name
    return Path(cfg["output"])


def shared_mismatch(a: ExperimentConfig, b: ExperimentConfig) -> list[str]:
    return [s for s in SHARED_SECTIONS if a[s] != b[s]]
