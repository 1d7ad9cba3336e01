"""CSV and JSON writers with byte-stable output.

Round log columns:

    round          0-based round index
    loss           full-data loss of the aggregated global model
    grad_sqnorm    squared norm of its full-data gradient
    accuracy       argmax accuracy on the evaluation set (blank for the quadratic)
    gamma_min      minimum per-parameter coverage of the round's masks
    delta_sq_max   largest reduction-noise ratio among the round's masks
    theta_sqnorm   squared norm of the global model
    active_clients client ids that trained this round, ';'-separated
    local_accuracy weighted accuracy of the clients' reduced models (blank for the quadratic)

Coverage log columns: round, param_index_min, gamma_min_round,
gamma_min_running, then ``delta_sq_<id>`` per client (blank when inactive).
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

ROUND_COLUMNS = ("round", "loss", "grad_sqnorm", "accuracy", "gamma_min", "delta_sq_max",
                 "theta_sqnorm", "active_clients", "local_accuracy")


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else str(value)
    return str(value)


def write_rounds_csv(path, records) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(ROUND_COLUMNS)
        for r in records:
            w.writerow([r.round, fmt(r.loss), fmt(r.grad_sqnorm), fmt(r.accuracy), r.gamma_min,
                        fmt(r.delta_sq_max), fmt(r.theta_sqnorm),
                        ";".join(str(c) for c in r.active_clients), fmt(r.local_accuracy)])


def write_coverage_csv(path, records, client_ids) -> None:
    client_ids = sorted(client_ids)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["round", "param_index_min", "gamma_min_round", "gamma_min_running"]
                   + [f"delta_sq_{c}" for c in client_ids])
        for r in records:
            cov = r.coverage
            w.writerow([r.round, cov.argmin, cov.gamma_min_round, cov.gamma_min_running]
                       + [fmt(r.delta_sq.get(c)) for c in client_ids])


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def write_table_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
