"""Acceptance suite: each test checks one numbered criterion at its stated tolerance.

Every test prints a single PASS/FAIL line and also records it for the
end-of-session summary, so ``pytest -v`` lists the verdicts together.
"""

import itertools
import os
import time
from pathlib import Path

import numpy as np
import pytest
import yaml

from conftest import ACCEPTANCE
from gradcheck import max_relative_error
from hetfl import cli, models
from hetfl.config import resolve
from hetfl.data import (distinct_labels, make_blobs, make_quadratic, partition_label_skew)
from hetfl.experiment import build_datasets, build_model, build_partition, run_experiment
from hetfl.fedavg import fedavg
from hetfl.masks import (MaskStrategy, coverage, gen_mask, identical_assignment, optimize_assignment)
from hetfl.models import Batch, ModelSpec
from hetfl.params import Mask, ParamVector, make_layout, reduction_noise

SEEDS5 = range(5)


def verdict(number, title, passed, detail):
    ACCEPTANCE.append((number, title, bool(passed), detail))
    print(f"criterion {number} {'PASS' if passed else 'FAIL'}: {title}: {detail}")
    assert passed, f"criterion {number} ({title}) failed: {detail}"


def quadratic_cfg(seed, capacity=1.0, strategy="full", rounds=400):
    return resolve({"seed": seed, "model": {"kind": "quadratic"},
                    "dataset": {"source": "synthetic-quadratic", "dim": 20, "condition": 10},
                    "clients": {"count": 4, "capacities": capacity, "strategy": strategy},
                    "schedule": {"rounds": rounds, "local_epochs": 5, "gamma": "theorem-iid"}})


def test_criterion_01_gradient_correctness():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    problems = {
        "quadratic": (ModelSpec("quadratic", 50), make_quadratic(50, 10.0, 0, samples=20).samples),
        "logistic": (ModelSpec("logistic", 10, 4),
                     Batch(rng.standard_normal((16, 10)), rng.integers(0, 4, 16))),
        "mlp": (ModelSpec("mlp", 8, 3, hidden_dim=5),
                Batch(rng.standard_normal((16, 8)), rng.integers(0, 3, 16))),
    }
    worst = {}
    for kind, (spec, batch) in problems.items():
        layout = models.model_layout(spec)
        worst[kind] = max(
            max_relative_error(spec, ParamVector(rng.standard_normal(len(
                models.init_params(spec))), layout), batch)
            for _ in range(10))
    elapsed = time.perf_counter() - start
    ok = all(e <= 1e-5 for e in worst.values()) and elapsed < 10
    detail = ", ".join(f"{k} max rel err {v:.2e}" for k, v in worst.items())
    verdict(1, "gradient correctness", ok, f"{detail}; {elapsed:.1f} s")


def test_criterion_02_fedavg_reduction():
    mismatches = []
    for seed in (0, 1, 2):
        cfg = resolve({"seed": seed, "model": {"kind": "mlp", "hidden": 12},
                       "dataset": {"source": "synthetic-blobs", "samples": 300, "features": 6,
                                   "classes": 4},
                       "clients": {"count": 5, "capacities": 1.0, "strategy": "full"},
                       "schedule": {"rounds": 20, "local_epochs": 2, "gamma": 0.05}})
        result = run_experiment(cfg)
        train, _ = build_datasets(cfg, seed)
        spec = build_model(cfg, train)
        part = build_partition(cfg, train, seed)
        ref = fedavg(spec, train.samples, part.shards, rounds=20, local_epochs=2, lr=0.05,
                     batch_size=10, seed=seed)
        if not np.array_equal(result.theta, ref):
            mismatches.append(seed)
    verdict(2, "FedAvg reduction", not mismatches,
            "bit-identical on seeds 0, 1, 2" if not mismatches else f"differs on seeds {mismatches}")


def test_criterion_03_coverage_oracle():
    rng = np.random.default_rng(3)
    bad = 0
    for _ in range(200):
        length, n = int(rng.integers(1, 65)), int(rng.integers(1, 17))
        layout = make_layout([("w", length)])
        sets = [rng.integers(0, 2, length) for _ in range(n)]
        rep = coverage([Mask(b, layout) for b in sets])
        brute = [sum(int(s[i]) for s in sets) for i in range(length)]
        if rep.per_param_counts.tolist() != brute or rep.gamma_min_round != min(brute):
            bad += 1
    verdict(3, "coverage oracle", bad == 0, f"{200 - bad}/200 random mask sets match exactly")


def test_criterion_04_magnitude_optimality():
    rng = np.random.default_rng(4)
    checked, violations = 0, 0
    for n in range(1, 13):
        values = rng.standard_normal(n)
        if n > 2:
            values[1] = -values[0]  # a magnitude tie
        layout = make_layout([("w", n)])
        theta = ParamVector(values, layout)
        for k in range(1, n + 1):
            strategy = MaskStrategy("magnitude", {0: k / n})
            best = reduction_noise(theta, gen_mask(strategy, theta, 0, 0))
            for keep in itertools.combinations(range(n), k):
                b = np.zeros(n, dtype=np.uint8)
                b[list(keep)] = 1
                checked += 1
                if reduction_noise(theta, Mask(b, layout)) < best:
                    violations += 1
    verdict(4, "magnitude-mask noise optimality", violations == 0,
            f"{checked} equal-density masks enumerated, {violations} beat the magnitude mask")


def test_criterion_05_capacity_profile():
    caps = {c: (1.0 if c < 4 else 0.5) for c in range(10)}
    lengths = [160, 32, 320, 10]
    layout = make_layout((f"l{i}", n) for i, n in enumerate(lengths))
    theta = ParamVector(np.random.default_rng(5).standard_normal(sum(lengths)), layout)

    def gamma(strategy):
        return coverage({c: gen_mask(strategy, theta, c, 0) for c in caps}).gamma_min_round

    g_ident, g_opt = gamma(identical_assignment(caps)), gamma(optimize_assignment(caps, lengths))
    verdict(5, "capacity-profile reproduction", (g_ident, g_opt) == (4, 7),
            f"identical static subnets {g_ident}, optimized {g_opt} (expected 4 and 7)")


def test_criterion_06_strongly_convex_convergence():
    start = time.perf_counter()
    s = run_experiment(quadratic_cfg(0)).summary
    elapsed = time.perf_counter() - start
    ratio = s["optimality_gap"] / s["initial_loss"]
    verdict(6, "strongly convex convergence", ratio <= 1e-6 and elapsed < 30,
            f"gap / F(theta_0) = {ratio:.3e} (<= 1e-6), {elapsed:.1f} s")


def test_criterion_07_neighborhood_convergence():
    rows, ok = [], True
    for seed in (0, 1, 2):
        result = run_experiment(quadratic_cfg(seed, 0.5, "coverage-optimized"))
        g = np.array([r.grad_sqnorm for r in result.records])
        running = np.cumsum(g) / np.arange(1, g.size + 1)
        ratio = running[399] / running[24]
        gap = result.summary["optimality_gap"]
        gmin = result.summary["gamma_min_running"]
        good = ratio <= 0.10 and np.isfinite(gap) and gap > 0 and gmin >= 1
        ok &= good
        rows.append(f"seed {seed}: avg ratio {ratio:.3f}, gap {gap:.3g}, gamma_min {gmin}")
    verdict(7, "neighborhood convergence with gamma_min >= 1", ok, "; ".join(rows))


def test_criterion_08_coverage_monotonicity():
    start = time.perf_counter()
    opt, ident = [], []
    for seed in SEEDS5:
        opt.append(run_experiment(quadratic_cfg(seed, 0.5, "coverage-optimized")).summary["final_loss"])
        ident.append(run_experiment(quadratic_cfg(seed, 0.5, "static-subnet")).summary["final_loss"])
    wins = sum(o <= i for o, i in zip(opt, ident))
    elapsed = time.perf_counter() - start
    ok = np.mean(opt) <= np.mean(ident) and wins >= 4 and elapsed < 120
    verdict(8, "coverage monotonicity", ok,
            f"mean final loss {np.mean(opt):.4g} optimized vs {np.mean(ident):.4g} identical, "
            f"better in {wins}/5 seeds, {elapsed:.1f} s")


def test_criterion_09_noise_monotonicity():
    means = {}
    for beta in (1.0, 0.75, 0.5):
        gaps = [run_experiment(quadratic_cfg(seed, beta, "coverage-optimized")).summary["optimality_gap"]
                for seed in SEEDS5]
        means[beta] = float(np.mean(gaps))
    ok = means[1.0] <= means[0.75] <= means[0.5]
    verdict(9, "noise monotonicity", ok,
            ", ".join(f"beta {b}: mean gap {g:.4g}" for b, g in means.items()))


def _mnist_dir():
    root = os.environ.get("HETFL_MNIST_DIR")
    if not root:
        return None
    names = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
             "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
    found = []
    for name in names:
        hits = [p for p in (Path(root) / name, Path(root) / f"{name}.gz") if p.is_file()]
        if not hits:
            return None
        found.append(str(hits[0]))
    return found


def test_criterion_10_desk_run():
    start = time.perf_counter()
    mnist = _mnist_dir()
    if mnist:
        dataset = dict(zip(("train_images", "train_labels", "test_images", "test_labels"), mnist),
                       source="idx")
        model, floor, spread, label = {"kind": "mlp", "hidden": 200}, 0.95, 0.03, "MNIST"
    else:
        dataset = {"source": "synthetic-blobs", "samples": 3000, "features": 20, "classes": 10,
                   "separation": 1.0, "seed": 0}
        model, floor, spread, label = {"kind": "mlp", "hidden": 32}, 0.90, 0.05, "synthetic blobs"

    def accuracy(capacities, strategy):
        cfg = resolve({"model": model, "dataset": dataset,
                       "clients": {"count": 10, "capacities": capacities, "strategy": strategy,
                                   "batch_size": 10},
                       "schedule": {"rounds": 100, "local_epochs": 5, "gamma": 0.05}})
        return run_experiment(cfg).summary["final_accuracy"]

    full = accuracy(1.0, "full")
    variants = {k: accuracy("1111222222", k)
                for k in ("magnitude", "static-subnet", "rolling-subnet", "coverage-optimized")}
    elapsed = time.perf_counter() - start
    worst = max(full - a for a in variants.values())
    ok = full >= floor and worst <= spread and elapsed < 15 * 60
    verdict(10, f"desk run on {label}", ok,
            f"full-mask accuracy {full:.4f} (>= {floor}), largest beta=3/4 drop {worst:.4f} "
            f"(<= {spread}), {elapsed:.0f} s")


def test_criterion_11_determinism(tmp_path):
    cfg = {"model": {"kind": "mlp", "hidden": 8},
           "dataset": {"source": "synthetic-blobs", "samples": 300, "features": 5, "classes": 4},
           "clients": {"count": 6, "capacities": "112233", "strategy": "random"},
           "schedule": {"rounds": 8, "local_epochs": 2, "participation": 0.5}}
    path = tmp_path / "det.yaml"
    path.write_text(yaml.safe_dump(cfg))
    runs = [[], ["--workers", "1"], ["--workers", "4", "--jobs", "2"]]
    outs = []
    for i, flags in enumerate(runs):
        out = tmp_path / f"run{i}"
        assert cli.main(["run", str(path), "--output", str(out), "--repeats", "2", *flags]) == 0
        outs.append(out)
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*.csv"))
    same = all((outs[0] / f).read_bytes() == (o / f).read_bytes() for o in outs[1:] for f in files)
    verdict(11, "determinism", same and len(files) == 4,
            f"{len(files)} CSV logs byte-identical across sequential and 4-worker reruns")


def test_criterion_12_non_iid_sanity():
    ds = make_blobs(3000, 20, 10, 0)
    labels_ok = all(v <= 2 for seed in range(3)
                    for v in distinct_labels(ds, partition_label_skew(ds, 10, 2, seed)).values())

    def accuracy(partition, seed):
        cfg = resolve({"seed": seed, "model": {"kind": "mlp", "hidden": 32},
                       "dataset": {"source": "synthetic-blobs", "samples": 3000, "features": 20,
                                   "classes": 10, "separation": 1.0, "seed": 0,
                                   "partition": partition, "max_labels": 2},
                       "clients": {"count": 10, "capacities": 1.0, "strategy": "full"},
                       "schedule": {"rounds": 50, "local_epochs": 5, "gamma": 0.05}})
        return run_experiment(cfg).summary["final_accuracy"]

    pairs = [(accuracy("iid", s), accuracy("label-skew", s)) for s in range(3)]
    ok = labels_ok and all(n <= i for i, n in pairs)
    verdict(12, "non-IID sanity", ok,
            "every shard <= 2 labels; " + ", ".join(
                f"seed {s}: IID {i:.4f} vs label-skew {n:.4f}" for s, (i, n) in enumerate(pairs)))
