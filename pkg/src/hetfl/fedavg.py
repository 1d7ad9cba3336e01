"""Plain FedAvg on raw arrays, written independently of the masked engine.

Serves as the full-model baseline: with all-ones masks the heterogeneous
engine must reproduce it bit for bit. Seeds follow the documented scheme
(client stream ``SeedSequence([run_seed, 1, client])``, local batches from
``SeedSequence([client_seed, round])``, participation from
``SeedSequence([SeedSequence([run_seed, 2]), round])``), and the server takes
the unweighted mean of the active clients in ascending id order.
"""

from __future__ import annotations

import math

import numpy as np

from . import models
from .params import ParamVector


def _seed(keys) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1, np.uint64)[0])


def fedavg(model: models.ModelSpec, samples: models.Batch, shards: dict, *, rounds: int,
           local_epochs: int, lr: float, batch_size: int, seed: int,
           participation: float = 1.0, theta0: np.ndarray | None = None) -> np.ndarray:
    """Return the final global parameter vector after ``rounds`` FedAvg rounds."""
    start = models.init_params(model)
    layout = start.layout
    theta = start.values.copy() if theta0 is None else np.array(theta0, dtype=np.float64)
    ids = sorted(shards)
    for q in range(rounds):
        if participation >= 1.0:
            active = ids
        else:
            k = max(1, int(round(participation * len(ids))))
            rng = np.random.default_rng(np.random.SeedSequence([_seed([seed, 2]), q]))
            active = sorted(int(i) for i in rng.choice(ids, size=k, replace=False))
        total = np.zeros_like(theta)
        for c in active:
            shard = np.asarray(shards[c], dtype=np.intp)
            rng = np.random.default_rng(np.random.SeedSequence([_seed([seed, 1, c]), q]))
            local = theta.copy()
            steps = math.ceil(shard.size / batch_size)
            for _ in range(local_epochs):
                order = rng.permutation(shard.size)
                for i in range(steps):
                    batch = samples.take(shard[order[i * batch_size:(i + 1) * batch_size]])
                    g = models.gradient(model, ParamVector(local, layout), batch).values
                    local = local - lr * g
            total += local
        theta = total / len(active)
    return theta
