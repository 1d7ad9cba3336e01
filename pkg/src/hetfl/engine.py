"""Round loop for federated training with client-dependent reduced models.

One round: every active client receives ``theta * mask`` for its own mask,
runs T epochs of masked SGD on its shard, and the server averages each
parameter over exactly the clients whose mask contains it. Parameters that
no client covers keep their previous global value.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import models
from .data import DatasetHandle
from .errors import ConfigError, DivergenceError, NumericError
from .masks import CoverageReport, CoverageTracker, MaskStrategy, gen_mask
from .params import Mask, ParamVector, apply_mask, masked_axpy, noise_report

SAMPLING_MODES = ("epoch", "with-replacement")
LR_POLICIES = ("theorem-iid", "theorem-noniid")

# stream tags keep the per-purpose RNG streams independent of each other
CLIENT_STREAM = 1
PARTICIPATION_STREAM = 2


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


def client_seed(run_seed: int, client: int) -> int:
    return derive_seed(run_seed, CLIENT_STREAM, client)


def round_stream(seed: int, round: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(round)]))


@dataclass(frozen=True, eq=False)
class ClientSpec:
    id: int
    shard: np.ndarray
    batch_size: int
    seed: int
    weight: float = 1.0

    def __post_init__(self):
        shard = np.asarray(self.shard, dtype=np.intp)
        if shard.size == 0:
            raise ConfigError(f"client {self.id} has an empty shard")
        if self.batch_size < 1:
            raise ConfigError(f"client {self.id}: batch_size must be >= 1")
        object.__setattr__(self, "shard", shard)


@dataclass(frozen=True)
class Schedule:
    rounds: int = 100
    local_epochs: int = 5
    lr: float | str = 0.05
    participation: float = 1.0
    momentum: float = 0.0
    sampling: str = "epoch"

    def __post_init__(self):
        if self.rounds < 1 or self.local_epochs < 1:
            raise ConfigError("rounds and local_epochs must be >= 1")
        if isinstance(self.lr, str):
            if self.lr not in LR_POLICIES:
                raise ConfigError(f"unknown learning-rate policy {self.lr!r}")
        elif not self.lr > 0:
            raise ConfigError("a fixed learning rate must be > 0")
        if not 0.0 < self.participation <= 1.0:
            raise ConfigError("participation must be in (0, 1]")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.sampling not in SAMPLING_MODES:
            raise ConfigError(f"unknown sampling mode {self.sampling!r}")


@dataclass(frozen=True, eq=False)
class RoundRecord:
    """Metrics of the global model produced by one round.

    ``gamma_min`` and ``delta_sq_max`` describe the masks used in the round;
    loss, gradient norm and accuracy are measured on the aggregated model.
    """

    round: int
    loss: float
    grad_sqnorm: float
    accuracy: float | None
    gamma_min: int
    delta_sq_max: float
    theta_sqnorm: float
    active_clients: tuple
    local_accuracy: float | None = None
    coverage: CoverageReport | None = field(default=None, repr=False)
    delta_sq: Mapping[int, float] = field(default_factory=dict, repr=False)


def theorem_lr(policy: str, L: float, T: int, Q: int) -> float:
    """Largest step size allowed by the IID or non-IID convergence condition."""
    if not L > 0:
        raise ConfigError("smoothness constant must be > 0")
    if policy == "theorem-iid":
        return min(1.0 / (6 * L * T), 1.0 / (T * math.sqrt(Q)))
    if policy == "theorem-noniid":
        return min(1.0 / (6 * L * T), 1.0 / math.sqrt(T * Q))
    raise ConfigError(f"unknown learning-rate policy {policy!r}")


def epoch_batches(rng: np.random.Generator, n: int, batch_size: int, sampling: str):
    """Index batches for one local epoch; the last short batch is kept."""
    steps = math.ceil(n / batch_size)
    if sampling == "with-replacement":
        for _ in range(steps):
            yield rng.integers(0, n, size=min(batch_size, n))
        return
    order = rng.permutation(n)
    for i in range(steps):
        yield order[i * batch_size:(i + 1) * batch_size]


def local_train(spec: ClientSpec, theta0: ParamVector, m: Mask, T: int, gamma: float, *,
                model: models.ModelSpec, dataset: DatasetHandle, round: int = 0,
                sampling: str = "epoch", momentum: float = 0.0,
                on_epoch: Callable[[int, ParamVector], None] | None = None) -> ParamVector:
    """Run ``T`` epochs of masked minibatch SGD on one client's shard."""
    if T < 1:
        raise ConfigError("local epochs must be >= 1")
    # overflow is reported as a DivergenceError below rather than as a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        return _local_epochs(spec, theta0, m, T, gamma, model, dataset, round, sampling,
                             momentum, on_epoch)


def _local_epochs(spec, theta0, m, T, gamma, model, dataset, round, sampling, momentum, on_epoch):
    rng = round_stream(spec.seed, round)
    theta = theta0
    velocity = None
    for epoch in range(T):
        last = None
        for idx in epoch_batches(rng, spec.shard.size, spec.batch_size, sampling):
            last = dataset.samples.take(spec.shard[idx])
            try:
                g = models.gradient(model, theta, last)
                if momentum:
                    v = g.values * m.weights
                    velocity = v if velocity is None else momentum * velocity + v
                    g = ParamVector._trusted(velocity.copy(), g.layout)
                theta = masked_axpy(theta, g, m, gamma)
            except NumericError as exc:
                raise DivergenceError(
                    f"round {round}, client {spec.id}, epoch {epoch}: {exc}",
                    round=round, client=spec.id, epoch=epoch) from None
        if not np.isfinite(models.loss(model, theta, last)):
            raise DivergenceError(f"round {round}, client {spec.id}, epoch {epoch}: non-finite loss",
                                  round=round, client=spec.id, epoch=epoch)
        if on_epoch is not None:
            on_epoch(epoch, theta)
    return theta


def aggregate(locals: Mapping[int, ParamVector], masks: Mapping[int, Mask],
              prev_global: ParamVector) -> ParamVector:
    """Average every coordinate over the clients whose mask covers it."""
    total = np.zeros(len(prev_global))
    counts = np.zeros(len(prev_global))
    for c in sorted(locals):
        w = masks[c].weights
        if len(locals[c]) != len(prev_global) or len(w) != len(prev_global):
            raise ConfigError(f"client {c}: vector length does not match the global model")
        total += locals[c].values * w
        counts += w
    covered = counts > 0
    out = prev_global.values.copy()
    out[covered] = total[covered] / counts[covered]
    return ParamVector._trusted(out, prev_global.layout)


class Federation:
    """Mutable run state: the global model plus everything a round needs."""

    def __init__(self, model: models.ModelSpec, train: DatasetHandle, clients: list[ClientSpec],
                 strategy: MaskStrategy, schedule: Schedule, seed: int, *,
                 theta0: ParamVector | None = None, test: DatasetHandle | None = None,
                 workers: int = 1, lipschitz: float | None = None):
        self.model = model
        self.train = train
        self.test = test
        self.clients = sorted(clients, key=lambda c: c.id)
        self.strategy = strategy
        self.schedule = schedule
        self.seed = seed
        self.workers = max(1, int(workers))
        self.theta = theta0 if theta0 is not None else models.init_params(model)
        self.tracker = CoverageTracker()
        self.lipschitz = lipschitz
        if isinstance(schedule.lr, str):
            if self.lipschitz is None:
                self.lipschitz = models.smoothness_estimate(model, train.samples, seed=seed)
            self.gamma = theorem_lr(schedule.lr, self.lipschitz, schedule.local_epochs,
                                    schedule.rounds)
        else:
            self.gamma = float(schedule.lr)
        self.records: list[RoundRecord] = []

    @property
    def eval_set(self) -> DatasetHandle:
        return self.test if self.test is not None else self.train

    def active_clients(self, q: int) -> list[int]:
        ids = [c.id for c in self.clients]
        c = self.schedule.participation
        if c >= 1.0:
            return ids
        k = max(1, int(round(c * len(ids))))
        rng = round_stream(derive_seed(self.seed, PARTICIPATION_STREAM), q)
        return sorted(int(i) for i in rng.choice(ids, size=k, replace=False))

    def _train_client(self, client: ClientSpec, mask: Mask, q: int) -> ParamVector:
        return local_train(client, apply_mask(self.theta, mask), mask,
                           self.schedule.local_epochs, self.gamma, model=self.model,
                           dataset=self.train, round=q, sampling=self.schedule.sampling,
                           momentum=self.schedule.momentum)

    def evaluate(self, theta: ParamVector | None = None) -> dict:
        theta = self.theta if theta is None else theta
        full = self.train.samples
        g = models.gradient(self.model, theta, full)
        out = {"loss": models.loss(self.model, theta, full),
               "grad_sqnorm": g.sqnorm(),
               "theta_sqnorm": theta.sqnorm(),
               "accuracy": None}
        if self.model.is_classifier:
            out["accuracy"] = models.accuracy(self.model, theta, self.eval_set.samples)
        return out

    def local_accuracy(self, masks: Mapping[int, Mask]) -> float | None:
        """Weighted accuracy of each active client's reduced copy of the global model."""
        if not self.model.is_classifier:
            return None
        by_id = {c.id: c for c in self.clients}
        weights = {c: by_id[c].weight for c in masks}
        total = sum(weights.values())
        acc = 0.0
        for c in sorted(masks):
            reduced = apply_mask(self.theta, masks[c])
            acc += weights[c] * models.accuracy(self.model, reduced, self.eval_set.samples)
        return acc / total


def run_round(state: Federation, q: int) -> RoundRecord:
    """Execute round ``q`` (0-based): masks, reduce, local training, aggregation, metrics."""
    active = state.active_clients(q)
    by_id = {c.id: c for c in state.clients}
    theta = state.theta
    masks = {c: gen_mask(state.strategy, theta, c, q, state.seed) for c in active}
    report = state.tracker.update(masks)
    noise = noise_report(theta, masks)

    if state.workers > 1 and len(active) > 1:
        with ThreadPoolExecutor(max_workers=state.workers) as pool:
            futures = {c: pool.submit(state._train_client, by_id[c], masks[c], q) for c in active}
            locals_ = {c: f.result() for c, f in futures.items()}
    else:
        locals_ = {c: state._train_client(by_id[c], masks[c], q) for c in active}

    state.theta = aggregate(locals_, masks, theta)
    metrics = state.evaluate()
    if not np.isfinite(metrics["loss"]):
        raise DivergenceError(f"round {q}: global loss is not finite", round=q)
    record = RoundRecord(
        round=q, loss=metrics["loss"], grad_sqnorm=metrics["grad_sqnorm"],
        accuracy=metrics["accuracy"], gamma_min=report.gamma_min_round,
        delta_sq_max=noise.max_ratio, theta_sqnorm=metrics["theta_sqnorm"],
        active_clients=tuple(active), local_accuracy=state.local_accuracy(masks),
        coverage=report, delta_sq=dict(noise.per_client))
    state.records.append(record)
    return record
