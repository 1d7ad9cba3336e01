"""Empirical estimates of the constants in the convergence assumptions.

These are measurements on a concrete run, not certified bounds: the
smoothness constant is a probe (or exact, for the quadratic), the gradient
bound and noise variance are sample maxima/means at a given model.
"""

from __future__ import annotations

import numpy as np

from . import models
from .engine import Federation, epoch_batches


def gradient_bound(fed: Federation, theta=None, max_batches: int = 16, seed: int = 0) -> float:
    """Largest squared norm of a client minibatch gradient seen at ``theta``."""
    theta = fed.theta if theta is None else theta
    rng = np.random.default_rng(seed)
    worst = 0.0
    for client in fed.clients:
        for i, idx in enumerate(epoch_batches(rng, client.shard.size, client.batch_size, "epoch")):
            if i >= max_batches:
                break
            batch = fed.train.samples.take(client.shard[idx])
            worst = max(worst, models.gradient(fed.model, theta, batch).sqnorm())
    return worst


def gradient_variance(fed: Federation, theta=None, max_batches: int = 16, seed: int = 0) -> float:
    """Mean ``||g_batch - grad F||^2`` over client minibatches at ``theta``."""
    theta = fed.theta if theta is None else theta
    full = models.gradient(fed.model, theta, fed.train.samples).values
    rng = np.random.default_rng(seed)
    devs = []
    for client in fed.clients:
        for i, idx in enumerate(epoch_batches(rng, client.shard.size, client.batch_size, "epoch")):
            if i >= max_batches:
                break
            batch = fed.train.samples.take(client.shard[idx])
            d = models.gradient(fed.model, theta, batch).values - full
            devs.append(float(d @ d))
    return float(np.mean(devs)) if devs else 0.0


def assumption_report(fed: Federation, theta=None, seed: int = 0) -> dict:
    theta = fed.theta if theta is None else theta
    L = fed.lipschitz
    if L is None:
        L = models.smoothness_estimate(fed.model, fed.train.samples, seed=seed)
    return {"L": float(L), "G": gradient_bound(fed, theta, seed=seed),
            "sigma_sq": gradient_variance(fed, theta, seed=seed)}
