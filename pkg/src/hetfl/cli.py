"""Command-line runner.

    hetfl run CONFIG [--dry-run] [--output DIR] [--repeats N] [--jobs N] [--workers N]
    hetfl validate CONFIG
    hetfl compare CONFIG [CONFIG ...] [--output DIR]
    hetfl coverage CONFIG [--rounds K]

Exit codes: 0 ok, 2 validation, 3 divergence, 4 IO.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import logs
from .config import ConfigValidationError, output_dir, parse_config, shared_mismatch
from .errors import ComparabilityError, ConfigError, ConsistencyError, DivergenceError, FormatError
from .experiment import aggregate_summaries, build_federation, run_experiment
from .masks import coverage, gen_mask, kept_fraction
from .params import noise_report

EXIT_OK, EXIT_VALIDATION, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("hetfl")


def _seeds(cfg, repeats=None):
    n = repeats or cfg["repeats"]
    return [cfg["seed"] + r for r in range(n)]


def _run_one(cfg, seed, out: Path, workers):
    result = run_experiment(cfg, seed=seed, workers=workers)
    logs.write_rounds_csv(out / f"rounds_seed{seed}.csv", result.records)
    (out / "coverage").mkdir(exist_ok=True)
    logs.write_coverage_csv(out / "coverage" / f"seed{seed}.csv", result.records, result.client_ids)
    return result.summary


def execute(cfg, out: Path, repeats=None, jobs=1, workers=None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    seeds = _seeds(cfg, repeats)
    if jobs > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(lambda s: _run_one(cfg, s, out, workers), seeds))
    else:
        summaries = [_run_one(cfg, s, out, workers) for s in seeds]
    summary = aggregate_summaries(cfg.name, summaries)
    logs.write_json(out / "summary.json", summary)
    return summary


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    if args.dry_run:
        print(cfg.dump(), end="")
        return EXIT_OK
    out = output_dir(cfg, args.output)
    summary = execute(cfg, out, args.repeats, args.jobs, args.workers)
    acc = summary["final_accuracy_mean"]
    print(f"{cfg.name}: final loss {summary['final_loss_mean']:.6g}"
          + (f", accuracy {acc:.4f}" if acc is not None else "")
          + f", gamma_min {summary['gamma_min_running']} -> {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = parse_config(args.config)
    print(cfg.dump(), end="")
    return EXIT_OK


COMPARE_COLUMNS = ("name", "gamma_min", "delta_sq_max", "param_fraction", "accuracy_mean",
                   "accuracy_std", "loss_mean", "loss_std", "delta_accuracy", "delta_loss")


def comparison_rows(summaries: list[dict]) -> list[list]:
    base = summaries[0]
    rows = []
    for s in summaries:
        d_acc = None
        if s["final_accuracy_mean"] is not None and base["final_accuracy_mean"] is not None:
            d_acc = s["final_accuracy_mean"] - base["final_accuracy_mean"]
        rows.append([s["name"], s["gamma_min_running"], s["delta_sq_max"], s["param_fraction"],
                     s["final_accuracy_mean"], s["final_accuracy_std"], s["final_loss_mean"],
                     s["final_loss_std"], d_acc, s["final_loss_mean"] - base["final_loss_mean"]])
    return rows


def _human(rows) -> str:
    def cell(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)
    table = [list(COMPARE_COLUMNS)] + [[cell(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(COMPARE_COLUMNS))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in table)


def cmd_compare(args) -> int:
    cfgs = [parse_config(p) for p in args.configs]
    first = cfgs[0]
    for other in cfgs[1:]:
        bad = shared_mismatch(first, other)
        if bad:
            raise ComparabilityError(
                f"{other.name} differs from {first.name} in section(s): {', '.join(bad)}")
    names = [c.name for c in cfgs]
    if len(set(names)) != len(names):
        raise ComparabilityError(f"config names must be distinct, got {names}")
    out = output_dir(first, args.output) if args.output else output_dir(first).parent / "compare"
    out.mkdir(parents=True, exist_ok=True)
    summaries = []
    for cfg in cfgs:
        # every member runs on the first config's seeds
        summaries.append(execute(cfg.__class__({**cfg.data, "seed": first["seed"],
                                                "repeats": first["repeats"]}, cfg.path),
                                 out / cfg.name, jobs=args.jobs))
    rows = comparison_rows(summaries)
    logs.write_table_csv(out / "compare.csv", COMPARE_COLUMNS, rows)
    text = _human(rows)
    (out / "compare.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_coverage(args) -> int:
    cfg = parse_config(args.config)
    fed = build_federation(cfg, cfg["seed"])
    running = None
    print("round  gamma_min  gamma_min_running  uncovered  param_fraction  delta_sq_max")
    for q in range(args.rounds):
        masks = {c.id: gen_mask(fed.strategy, fed.theta, c.id, q, fed.seed)
                 for c in fed.clients}
        rep = coverage(masks, running)
        running = rep.gamma_min_running
        noise = noise_report(fed.theta, masks)
        print(f"{q:<5}  {rep.gamma_min_round:<9}  {rep.gamma_min_running:<17}  "
              f"{rep.uncovered:<9}  {kept_fraction(masks):<14.6g}  {noise.max_ratio:.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hetfl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--dry-run", action="store_true", help="validate and print the resolved config")
    r.add_argument("--output", help="output directory (overrides config and HETFL_OUTPUT_ROOT)")
    r.add_argument("--repeats", type=int, help="override the number of seed repeats")
    r.add_argument("--jobs", type=int, default=1, help="seed repeats to run concurrently")
    r.add_argument("--workers", type=int, help="clients to train concurrently per round")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="validate a config and print it resolved")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)

    c = sub.add_parser("compare", help="run configs on the same seeds and tabulate")
    c.add_argument("configs", nargs="+")
    c.add_argument("--output")
    c.add_argument("--jobs", type=int, default=1)
    c.set_defaults(func=cmd_compare)

    g = sub.add_parser("coverage", help="print the coverage report without training")
    g.add_argument("config")
    g.add_argument("--rounds", type=int, default=1)
    g.set_defaults(func=cmd_coverage)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigValidationError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConfigError, ComparabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, FormatError, ConsistencyError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
