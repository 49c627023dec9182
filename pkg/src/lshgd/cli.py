"""Command-line front end: benchmark races, diagnostics, sampling stats.

Subcommands:

  bench         run each configured sampler on the same data and seed,
                write one trace per run (CSV and JSON), print a summary
  diagnose      run the estimator checks and probes, write JSON reports,
                exit 1 if any enabled assertion fails
  sample-stats  build tables, issue queries, report the probe-depth
                histogram, fallback rate, and per-draw cost

Configuration is a JSON file (--config); any field can be overridden on
the command line with a flag named after its dotted path, for example
``--hash.k 7`` or ``--schedule.eta0 0.02``.  Exit codes: 0 success,
1 assertion failure, 2 usage or configuration error.  The environment
variable LGD_THREADS caps diagnostic parallelism.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import diagnostics as diag
from . import models as _models
from .data import Dataset, PreprocessConfig, load_csv, normalize, split
from .hashing import HashFamilyParams, build_tables
from .models import ModelSpec
from .optim import (
    ConvergenceTrace,
    LearningRateSchedule,
    RunConfig,
    run,
    sgd_step,
    OptimizerState,
)
from .rng import generator, spawn_seeds
from .sampling import SamplerConfig, draw
from .synthetic import equal_gradient_dataset, logistic_synthetic, power_law_least_squares

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_USAGE = 2


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG: dict = {
    "dataset": {
        "synthetic": "power_law",
        "path": None,
        "label_column": 0,
        "n": 4096,
        "d": 32,
        "exponent": 1.5,
        "normalize": True,
        "split_fraction": 0.9,
        "ordered_split": False,
    },
    "model": {"kind": "least_squares", "quadratic_transform": True},
    "samplers": ["lgd", "sgd"],
    "hash": {"k": 5, "l": 100, "density": 1.0 / 30.0},
    "schedule": {"kind": "constant", "eta0": 0.01, "factor": 0.5, "interval": 1000},
    "adagrad": False,
    "epochs": 1.0,
    "eval_every": 0.25,
    "seed": 0,
    "out": "runs",
    "diagnose": {
        "draws": 20000,
        "lemma_trials": 500,
        "probe_draws": 500,
        "checks": ["unbiasedness", "sgd_trace", "lemma1", "probes"],
        "unbiasedness_rel_tol": 0.05,
        "sgd_trace_rel_tol": 0.05,
    },
    "sample_stats": {"queries": 1000, "n": 1000, "d": 512},
}


def _coerce_like(old, raw: str):
    if isinstance(old, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(old, int) and not isinstance(old, bool):
        return int(raw)
    if isinstance(old, float):
        return float(raw)
    if isinstance(old, list):
        return [part.strip() for part in raw.split(",") if part.strip()]
    return raw


def _apply_override(config: dict, dotted: str, raw: str) -> None:
    node = config
    parts = dotted.split(".")
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown config field {dotted!r}")
        node = node[part]
    leaf = parts[-1]
    if not isinstance(node, dict) or leaf not in node:
        raise ConfigError(f"unknown config field {dotted!r}")
    node[leaf] = _coerce_like(node[leaf], raw)


def load_config(path: str | None, overrides: list[str]) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file {path!r} does not exist")
        with open(path, encoding="utf-8") as fh:
            user = json.load(fh)
        _merge(config, user)
    i = 0
    while i < len(overrides):
        item = overrides[i]
        if not item.startswith("--"):
            raise ConfigError(f"unexpected argument {item!r}")
        key = item[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
        else:
            i += 1
            if i >= len(overrides):
                raise ConfigError(f"flag --{key} needs a value")
            raw = overrides[i]
        _apply_override(config, key, raw)
        i += 1
    return config


def _merge(base: dict, user: dict, prefix: str = "") -> None:
    for key, value in user.items():
        if key not in base:
            raise ConfigError(f"unknown config field {prefix + key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            _merge(base[key], value, prefix + key + ".")
        else:
            base[key] = value


def _build_dataset(config: dict) -> tuple[Dataset, Dataset, np.ndarray | None]:
    ds_cfg = config["dataset"]
    theta_star = None
    if ds_cfg.get("path"):
        ds = load_csv(ds_cfg["path"], ds_cfg["label_column"])
        if ds_cfg.get("normalize", True):
            ds = normalize(ds)
    else:
        kind = ds_cfg.get("synthetic", "power_law")
        if kind == "power_law":
            ds, theta_star = power_law_least_squares(
                ds_cfg["n"], ds_cfg["d"], ds_cfg["exponent"], seed=config["seed"]
            )
        elif kind == "logistic":
            ds = logistic_synthetic(ds_cfg["n"], ds_cfg["d"], seed=config["seed"])
        elif kind == "equal_gradient":
            ds, _ = equal_gradient_dataset(ds_cfg["n"], ds_cfg["d"], seed=config["seed"])
        else:
            raise ConfigError(f"unknown synthetic dataset {kind!r}")
    cfg = PreprocessConfig(
        split_fraction=ds_cfg.get("split_fraction", 0.9),
        split_seed=config["seed"],
        ordered=ds_cfg.get("ordered_split", False),
    )
    train, test = split(ds, cfg)
    return train, test, theta_star


def _model_spec(config: dict, d: int) -> ModelSpec:
    m = config["model"]
    return ModelSpec(
        kind=m["kind"], d=d, use_quadratic_transform=m.get("quadratic_transform", True)
    )


def _run_config(config: dict, sampler: str) -> RunConfig:
    sched = config["schedule"]
    return RunConfig(
        sampler=sampler,
        schedule=LearningRateSchedule(
            kind=sched["kind"],
            eta0=sched["eta0"],
            factor=sched.get("factor", 0.5),
            interval=sched.get("interval", 1000),
        ),
        adagrad=config["adagrad"],
        epochs=config["epochs"],
        eval_every=config["eval_every"],
        seed=config["seed"],
        k=config["hash"]["k"],
        l=config["hash"]["l"],
        density=config["hash"]["density"],
    )


def _write_trace(trace: ConvergenceTrace, out_dir: str, stem: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, stem + ".csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["epoch", "wall_ns", "train_loss", "test_loss", "fallbacks", "l_p50", "l_p99"]
        )
        for r in trace.records:
            writer.writerow(
                [r.epoch, r.wall_ns, r.train_loss, r.test_loss, r.fallbacks, r.l_p50, r.l_p99]
            )
    json_path = os.path.join(out_dir, stem + ".json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(
            {"deterministic": trace.deterministic_dict(), "timing": trace.timing_dict()},
            fh,
            indent=2,
            sort_keys=True,
        )


def _time_to_threshold(trace: ConvergenceTrace, threshold: float) -> tuple[float, float]:
    for r in trace.records:
        if r.train_loss <= threshold:
            return r.epoch, r.wall_ns
    return float("inf"), float("inf")


def cmd_bench(config: dict) -> int:
    train, test, _ = _build_dataset(config)
    model = _model_spec(config, train.d)
    traces: dict[str, ConvergenceTrace] = {}
    for sampler in config["samplers"]:
        cfg = _run_config(config, sampler)
        traces[sampler] = run(model, train, cfg, test)
        _write_trace(traces[sampler], config["out"], f"trace_{sampler}_seed{config['seed']}")
    print(f"{'sampler':<8} {'final train':>14} {'final test':>14} {'steps':>9} "
          f"{'mean ns/step':>13}")
    for sampler, trace in traces.items():
        last = trace.records[-1]
        per_step = last.wall_ns / max(trace.steps, 1)
        print(f"{sampler:<8} {last.train_loss:>14.6g} {last.test_loss:>14.6g} "
              f"{trace.steps:>9} {per_step:>13.0f}")
    if {"lgd", "sgd"} <= traces.keys():
        threshold = traces["sgd"].final_train_loss()
        epoch, ns = _time_to_threshold(traces["lgd"], threshold)
        print(f"lgd reached sgd's final train loss ({threshold:.6g}) at "
              f"epoch {epoch:.3g}, wall {ns:.4g} ns")
        lgd_ns = traces["lgd"].records[-1].wall_ns / max(traces["lgd"].steps, 1)
        sgd_ns = traces["sgd"].records[-1].wall_ns / max(traces["sgd"].steps, 1)
        if sgd_ns > 0:
            print(f"per-iteration cost ratio lgd/sgd: {lgd_ns / sgd_ns:.2f}")
    return EXIT_OK


def cmd_diagnose(config: dict) -> int:
    train, _, _ = _build_dataset(config)
    model = _model_spec(config, train.d)
    d_cfg = config["diagnose"]
    hash_cfg = config["hash"]
    seed = config["seed"]
    theta = diag.warm_start(model, train, 0.25, config["schedule"]["eta0"], seed)
    checks = list(d_cfg["checks"])
    failures: list[str] = []
    reports: dict[str, dict] = {}

    def run_check(name: str):
        if name == "unbiasedness":
            stats = diag.estimator_stats(
                model, train, theta, "lgd", d_cfg["draws"], seed,
                k=hash_cfg["k"], l=hash_cfg["l"], density=hash_cfg["density"],
                rebuild_every=max(1, d_cfg["draws"] // 2000),
            )
            full = _models.full_gradient(model, theta, train.x, train.y)
            rel = float(
                np.linalg.norm(stats.mean_estimate - full) / np.linalg.norm(full)
            )
            ok = rel < d_cfg["unbiasedness_rel_tol"]
            return name, ok, {**stats.to_dict(), "relative_error": rel}
        if name == "sgd_trace":
            stats = diag.estimator_stats(model, train, theta, "sgd", d_cfg["draws"], seed)
            exact = diag.sgd_trace_exact(model, train, theta)
            rel = abs(stats.trace_covariance - exact) / exact if exact else 0.0
            ok = rel < d_cfg["sgd_trace_rel_tol"]
            return name, ok, {**stats.to_dict(), "exact_trace": exact, "relative_error": rel}
        if name == "lemma1":
            sub = train if train.n <= 256 else train.subset(np.arange(256), "/lemma")
            report = diag.lemma1_check(
                model, sub, theta, d_cfg["lemma_trials"], seed,
                k=hash_cfg["k"], l=min(hash_cfg["l"], 10), density=hash_cfg["density"],
            )
            return name, report.holds or report.degenerate, report.to_dict()
        if name == "probes":
            norm_rep = diag.gradient_norm_probe(
                model, train, theta, d_cfg["probe_draws"], seed,
                k=hash_cfg["k"], l=hash_cfg["l"], density=hash_cfg["density"],
            )
            cos_rep = diag.cosine_probe(
                model, train, theta, d_cfg["probe_draws"], seed,
                k=hash_cfg["k"], l=hash_cfg["l"], density=hash_cfg["density"],
            )
            ok = (
                norm_rep.degenerate or norm_rep.lgd_mean > norm_rep.sgd_mean
            ) and (cos_rep.degenerate or cos_rep.lgd_mean > cos_rep.sgd_mean)
            return name, ok, {"gradient_norm": norm_rep.to_dict(),
                              "angular_similarity": cos_rep.to_dict()}
        raise ConfigError(f"unknown diagnostic check {name!r}")

    workers = diag.max_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_check, checks))
    else:
        results = [run_check(name) for name in checks]
    for name, ok, payload in results:
        reports[name] = {"passed": bool(ok), **payload}
        print(f"check {name}: {'PASS' if ok else 'FAIL'}")
        if not ok:
            failures.append(name)
    os.makedirs(config["out"], exist_ok=True)
    out_path = os.path.join(config["out"], f"diagnose_seed{seed}.json")
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(reports, fh, indent=2, sort_keys=True)
    if failures:
        print(f"failed checks: {', '.join(failures)}", file=sys.stderr)
        return EXIT_ASSERTION
    return EXIT_OK


def cmd_sample_stats(config: dict) -> int:
    s_cfg = config["sample_stats"]
    hash_cfg = config["hash"]
    seed = config["seed"]
    n, d = s_cfg["n"], s_cfg["d"]
    n_queries = s_cfg["queries"]
    ds, _ = power_law_least_squares(n, d, seed=seed)
    model = ModelSpec(kind="least_squares", d=d, use_quadratic_transform=False)
    base, quadratic = _models.hash_inputs(model, ds.x, ds.y)
    params = HashFamilyParams(
        k=hash_cfg["k"], l=hash_cfg["l"], dim=base.shape[1],
        density=hash_cfg["density"], seed=seed,
    )
    tables = build_tables(base, params, quadratic=quadratic)
    cfg = SamplerConfig()
    theta_rng, draw_seed = (int(s) for s in spawn_seeds(seed, 2))
    rng = generator(draw_seed)
    trng = generator(theta_rng)
    l_values = []
    fallbacks = 0
    t_draw = 0
    for _ in range(n_queries):
        theta = trng.standard_normal(d)
        query = _models.hash_query(model, theta)
        tic = time.perf_counter_ns()
        s = draw(tables, query, cfg, rng)
        t_draw += time.perf_counter_ns() - tic
        l_values.append(s.tables_probed)
        fallbacks += int(s.fallback)
    t_uniform = 0
    for _ in range(n_queries):
        tic = time.perf_counter_ns()
        rng.integers(n)
        t_uniform += time.perf_counter_ns() - tic
    if l_values:
        arr = np.array(l_values)
        hist = np.bincount(arr)
        print("l histogram (tables probed -> count):")
        for l_val in range(1, len(hist)):
            if hist[l_val]:
                print(f"  {l_val:>3}: {hist[l_val]}")
        print(f"median l: {np.median(arr):.0f}   p99 l: {np.percentile(arr, 99):.0f}")
        print(f"fallback rate: {fallbacks / n_queries:.2e}")
        print(f"hash computations per draw: {params.k * arr.mean():.2f}")
        print(f"ns/draw: {t_draw / n_queries:.0f}   ns/uniform-draw: "
              f"{t_uniform / n_queries:.0f}")
    else:
        print("l histogram: (no queries)")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="lshgd",
        description="adaptive-sampling gradient descent: benchmarks and diagnostics",
    )
    sub = parser.add_subparsers(dest="command")
    for name in ("bench", "diagnose", "sample-stats"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override output directory")
    args, unknown = parser.parse_known_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        config = load_config(args.config, unknown)
        if args.seed is not None:
            config["seed"] = args.seed
        if args.out is not None:
            config["out"] = args.out
        if args.command == "bench":
            return cmd_bench(config)
        if args.command == "diagnose":
            return cmd_diagnose(config)
        return cmd_sample_stats(config)
    except (ConfigError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
