"""Mask-generation strategies and per-parameter coverage bookkeeping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError
from .params import Mask, ParamVector, ReductionNoiseReport, make_layout, noise_report

STRATEGY_KINDS = ("full", "magnitude", "static-subnet", "rolling-subnet", "random",
                  "coverage-optimized")
_RANDOM_STREAM = 3
_EPS = 1e-9


@dataclass(frozen=True)
class MaskStrategy:
    """How each client's mask is derived from the global model.

    ``kinds`` overrides ``kind`` per client; ``exempt_layers`` are never
    reduced (e.g. the output layer of a classifier).
    """

    kind: str
    betas: Mapping[int, float] = field(default_factory=dict)
    group_offsets: Mapping[int, int] = field(default_factory=dict)
    kinds: Mapping[int, str] = field(default_factory=dict)
    exempt_layers: frozenset = frozenset()
    degenerate: bool = False

    def __post_init__(self):
        for k in {self.kind, *self.kinds.values()}:
            if k not in STRATEGY_KINDS:
                raise ConfigError(f"unknown mask strategy {k!r}")
        for c, b in self.betas.items():
            if not 0.0 < b <= 1.0:
                raise ConfigError(f"client {c}: keep fraction must be in (0, 1], got {b}")

    def kind_for(self, client: int) -> str:
        return self.kinds.get(client, self.kind)

    def beta_for(self, client: int) -> float:
        if self.kind_for(client) == "full":
            return 1.0
        return float(self.betas.get(client, 1.0))


@dataclass(frozen=True, eq=False)
class CoverageReport:
    per_param_counts: np.ndarray
    gamma_min_round: int
    gamma_min_running: int

    @property
    def argmin(self) -> int:
        return int(np.argmin(self.per_param_counts))

    @property
    def effective_gamma_min(self) -> int:
        """Minimum count over the union of client supports (the largest common model)."""
        covered = self.per_param_counts[self.per_param_counts > 0]
        return int(covered.min()) if covered.size else 0

    @property
    def uncovered(self) -> int:
        return int(np.count_nonzero(self.per_param_counts == 0))


def keep_count(beta: float, length: int) -> int:
    if beta * length < 1.0 - _EPS:
        raise ConfigError(f"keep fraction {beta} leaves a layer of length {length} empty")
    return min(length, math.ceil(beta * length - _EPS))


def _block(start: int, k: int, length: int) -> np.ndarray:
    return (start + np.arange(k)) % length


def gen_mask(strategy: MaskStrategy, theta: ParamVector, client: int, round: int,
             seed: int = 0) -> Mask:
    kind = strategy.kind_for(client)
    beta = strategy.beta_for(client)
    bits = np.zeros(len(theta), dtype=np.uint8)
    for li, s in enumerate(theta.layout):
        if s.length == 0:
            raise ConfigError(f"layer {s.name!r} is empty")
        view = bits[s.as_slice()]
        if kind == "full" or s.name in strategy.exempt_layers:
            view[:] = 1
            continue
        k = keep_count(beta, s.length)
        if kind == "magnitude":
            mag = np.abs(theta.values[s.as_slice()])
            # stable sort on -|theta|: equal magnitudes keep the lower index first
            keep = np.argsort(-mag, kind="stable")[:k]
        elif kind == "static-subnet":
            keep = np.arange(k)
        elif kind == "rolling-subnet":
            keep = _block((round * k) % s.length, k, s.length)
        elif kind == "random":
            rng = np.random.default_rng(
                np.random.SeedSequence([seed, _RANDOM_STREAM, client, round, li]))
            keep = rng.choice(s.length, size=k, replace=False)
        else:
            offset = int(strategy.group_offsets.get(client, 0))
            keep = _block((offset * k) % s.length, k, s.length)
        view[keep] = 1
    return Mask(bits, theta.layout)


def _as_mapping(masks) -> dict:
    if isinstance(masks, Mapping):
        return dict(masks)
    return dict(enumerate(masks))


def coverage(masks, running: int | None = None) -> CoverageReport:
    """Count, per parameter, how many masks include it."""
    masks = _as_mapping(masks)
    if not masks:
        raise ConfigError("coverage needs at least one mask")
    lengths = {len(m) for m in masks.values()}
    if len(lengths) != 1:
        raise ConfigError(f"masks have different lengths: {sorted(lengths)}")
    counts = np.zeros(lengths.pop(), dtype=np.int64)
    for c in sorted(masks):
        counts += masks[c].bits
    gmin = int(counts.min()) if counts.size else 0
    return CoverageReport(counts, gmin, gmin if running is None else min(running, gmin))


class CoverageTracker:
    """Running minimum coverage over all rounds seen so far."""

    def __init__(self):
        self.running: int | None = None
        self.effective: int | None = None
        self.rounds = 0

    def update(self, masks) -> CoverageReport:
        report = coverage(masks, self.running)
        self.running = report.gamma_min_running
        eff = report.effective_gamma_min
        self.effective = eff if self.effective is None else min(self.effective, eff)
        self.rounds += 1
        return report


def regions_for(beta: float) -> int:
    return max(1, math.ceil(1.0 / beta - _EPS))


def optimize_assignment(capacities: Mapping[int, float], layer_lengths: Sequence[int],
                        exempt_layers=frozenset()) -> MaskStrategy:
    """Spread same-capacity clients over disjoint regions of every layer.

    Clients sharing a keep fraction ``beta < 1`` are dealt round-robin (by
    ascending id) over ``ceil(1/beta)`` contiguous blocks, so together they
    tile each layer instead of all covering its leading entries.
    """
    offsets = {}
    groups: dict[float, list[int]] = {}
    for c in sorted(capacities):
        groups.setdefault(float(capacities[c]), []).append(c)
    for beta, members in groups.items():
        for rank, c in enumerate(members):
            offsets[c] = rank % regions_for(beta) if beta < 1.0 else 0
    strategy = MaskStrategy("coverage-optimized", dict(capacities), offsets,
                            exempt_layers=frozenset(exempt_layers))
    layout = make_layout((f"layer{i}", n) for i, n in enumerate(layer_lengths))
    probe = ParamVector.zeros(layout)
    report = coverage({c: gen_mask(strategy, probe, c, 0) for c in capacities})
    if report.gamma_min_round == 0:
        strategy = MaskStrategy(strategy.kind, strategy.betas, strategy.group_offsets,
                                exempt_layers=strategy.exempt_layers, degenerate=True)
    return strategy


def identical_assignment(capacities: Mapping[int, float], exempt_layers=frozenset()) -> MaskStrategy:
    """Baseline: every reduced client keeps the same leading block."""
    return MaskStrategy("static-subnet", dict(capacities), exempt_layers=frozenset(exempt_layers))


def check_noise_bound(theta: ParamVector, masks, bound: float) -> ReductionNoiseReport:
    if not 0.0 <= bound < 1.0:
        raise ConfigError(f"noise bound must be in [0, 1), got {bound}")
    return noise_report(theta, _as_mapping(masks), bound)


def kept_fraction(masks) -> float:
    """Total kept parameters over all clients divided by N times the model size."""
    masks = _as_mapping(masks)
    total = sum(len(m) for m in masks.values())
    return sum(m.kept() for m in masks.values()) / total if total else 0.0
