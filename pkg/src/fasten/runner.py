"""Run experiments from a config: one run per (sweep value, seed), then aggregate.

Layout of a result directory::

    <out>/<timestamp>/
        config.json                 resolved experiment config
        aggregate.csv, aggregate.json
        <method>[-<param><value>]-seed<s>/
            history.csv
            summary.json
            t_hat/epoch_000.csv ...  epoch-mean transition estimates
            t_glc.csv                GLC only

Everything except the ``timing`` block of ``summary.json`` and the
``epoch_seconds`` column of ``history.csv`` is a deterministic function of the
config, the seed and the build.
"""
from __future__ import annotations

import concurrent.futures
import contextlib
import csv
import datetime
import io
import json
import math
import os
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, data, nn
from .baselines import run_method
from .config import ExperimentConfig
from .metrics import CI_FORMULA, confidence_interval, detection_report, recovery_report
from .training import RunHistory
from .transition import oracle, write_matrix_csv

SUMMARY_SCHEMA = "fasten.run-summary/1"
HISTORY_COLUMNS = ["epoch", "train_acc", "valid_acc", "test_acc", "noise_level", "chi2",
                   "mean_diag_hat", "mean_diag_true", "corrections", "epoch_seconds"]
TIMING_COLUMNS = {"epoch_seconds"}
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


@dataclass
class RunSpec:
    index: int
    seed: int
    sweep_value: object  # None without a sweep
    config: ExperimentConfig  # fully resolved for this run: one seed, sweep applied
    name: str


def build_id() -> str:
    """``git describe`` of the source tree, or the package version outside a checkout."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _fmt(v) -> str:
    return f"{v:g}" if isinstance(v, float) else str(v)


def plan(config: ExperimentConfig, seeds=None) -> list[RunSpec]:
    seeds = list(config.seeds if seeds is None else seeds)
    values = [None] if config.sweep is None else list(config.sweep.values)
    specs = []
    for value in values:
        for seed in seeds:
            cfg = _resolve(config, value, seed)
            tag = "" if value is None else f"-{config.sweep.param}{_fmt(value)}"
            specs.append(RunSpec(len(specs), seed, value, cfg, f"{config.method}{tag}-seed{seed}"))
    return specs


def _resolve(config: ExperimentConfig, value, seed) -> ExperimentConfig:
    noise = data.NoiseSpec(config.noise.kind, config.noise.gamma, config.noise.pairing, seed)
    train = config.train.replace(seed=seed)
    if value is not None:
        if config.sweep.param == "gamma":
            noise = data.NoiseSpec(noise.kind, value, noise.pairing, seed)
        else:
            train = train.replace(**{config.sweep.param: value})
    return ExperimentConfig(config.dataset, noise, config.method, train, config.sweep, [seed], config.out)


def make_splits(config: ExperimentConfig, seed: int) -> data.DatasetSplits:
    ds = config.dataset
    samples = data.generate_blobs(ds.n_classes, ds.per_class, ds.dim, ds.spread, seed=seed)
    splits = data.split(samples, ds.fractions, seed=seed, n_classes=ds.n_classes)
    data.inject_noise(splits.noisy_train, config.noise, ds.n_classes)
    return splits


def history_csv(history: RunHistory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for e in history.epochs:
        w.writerow(["" if getattr(e, c) is None else
                    repr(float(getattr(e, c))) if isinstance(getattr(e, c), float) else getattr(e, c)
                    for c in HISTORY_COLUMNS])
    return buf.getvalue()


def read_history_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def execute(spec: RunSpec, run_dir: Path, build: str) -> dict:
    """One training run; writes its artifacts and returns the summary dict."""
    cfg = spec.config
    run_dir.mkdir(parents=True)
    splits = make_splits(cfg, spec.seed)
    n_cls = cfg.dataset.n_classes
    T_oracle = oracle(cfg.noise.kind, n_cls, cfg.noise.gamma, cfg.noise.pairing)
    summary = {
        "schema": SUMMARY_SCHEMA,
        "status": "ok",
        "method": cfg.method,
        "seed": spec.seed,
        "sweep": None if cfg.sweep is None else {"param": cfg.sweep.param, "value": spec.sweep_value},
        "build": build,
        "config": cfg.to_dict(),
        "dataset": {
            "n_noisy": len(splits.noisy_train), "n_clean": len(splits.clean_train),
            "n_valid": len(splits.valid), "n_test": len(splits.test),
            "bayes_test_accuracy": data.bayes_accuracy(
                splits.test, data.blob_means(n_cls, cfg.dataset.dim, spec.seed)),
        },
        "noise": {"kind": cfg.noise.kind, "gamma": cfg.noise.gamma,
                  "initial_noise_level": data.noise_level(splits.noisy_train), "oracle_T": T_oracle},
    }
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            result = run_method(cfg.method, cfg.train, splits, T_oracle=T_oracle)
    except nn.NumericError as exc:
        history = getattr(exc, "history", RunHistory())
        summary["status"] = "numeric_abort"
        summary["abort"] = {"message": str(exc), **getattr(exc, "location", {})}
        _write_history(run_dir, history)
        summary["result"] = _result_block(history) if history.epochs else None
        summary["timing"] = _timing_block(history)
        _write_json(run_dir / "summary.json", summary)
        return summary

    history = result.history
    _write_history(run_dir, history)
    summary["result"] = _result_block(history)
    noisy = result.splits.noisy_train
    summary["recovery"] = recovery_report(result.params, noisy).to_dict()
    try:
        summary["detection"] = detection_report(result.params, noisy).to_dict()
    except ValueError:  # no mislabeled samples (gamma = 0): nothing to detect
        summary["detection"] = None
    if hasattr(result, "T_glc"):
        summary["t_glc"] = result.T_glc
        write_matrix_csv(result.T_glc, run_dir / "t_glc.csv")
    summary["timing"] = _timing_block(history)
    _write_json(run_dir / "summary.json", summary)
    return summary


def _write_history(run_dir: Path, history: RunHistory):
    (run_dir / "history.csv").write_text(history_csv(history))
    snaps = [e for e in history.epochs if e.T_hat_mean is not None]
    if snaps:
        (run_dir / "t_hat").mkdir(exist_ok=True)
        for e in snaps:
            write_matrix_csv(e.T_hat_mean, run_dir / "t_hat" / f"epoch_{e.epoch:03d}.csv")


def _result_block(history: RunHistory) -> dict:
    best, last, first = history.best, history.epochs[-1], history.epochs[0]
    return {
        "best_epoch": history.best_epoch,
        "test_acc": best.test_acc,
        "valid_acc": best.valid_acc,
        "final_test_acc": last.test_acc,
        "final_valid_acc": last.valid_acc,
        "final_train_acc": last.train_acc,
        "initial_noise_level": history.initial_noise_level,
        "final_noise_level": last.noise_level,
        "noise_reduction": history.initial_noise_level - last.noise_level,
        "first_chi2": first.chi2,
        "final_chi2": last.chi2,
        "final_mean_diag_hat": last.mean_diag_hat,
        "final_mean_diag_true": last.mean_diag_true,
        "total_corrections": sum(e.corrections for e in history.epochs),
        "epochs_completed": len(history.epochs),
        "iterations": len(history.iterations),
    }


def _timing_block(history: RunHistory) -> dict:
    it = history.iteration_seconds()
    return {
        "total_seconds": history.total_seconds,
        "loop_seconds": history.wall_seconds,
        "epoch_seconds_sum": math.fsum(e.epoch_seconds for e in history.epochs),
        "extra_seconds": history.extra_seconds,
        "median_iteration_seconds": float(np.median(it)) if it.size else None,
    }


def _write_json(path: Path, obj):
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _fresh_dir(root: Path) -> Path:
    stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S")
    for k in range(1000):
        cand = root / (stamp if k == 0 else f"{stamp}-{k}")
        try:
            cand.mkdir(parents=True)
            return cand
        except FileExistsError:
            continue
    raise RuntimeError(f"could not create a fresh directory under {root}")


def worker_count(strict: bool, n_runs: int) -> int:
    if strict:
        return 1
    raw = os.environ.get("FASTEN_THREADS")
    if raw is None:
        n = os.cpu_count() or 1
    else:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"FASTEN_THREADS must be a positive integer, got {raw!r}") from None
        if n < 1:
            raise ValueError(f"FASTEN_THREADS must be a positive integer, got {raw!r}")
    return max(1, min(n, n_runs))


def single_thread():
    """BLAS pinned to one thread: timing comparisons and bitwise reruns need it."""
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=1)


def _execute_job(args):
    spec, run_dir, build, strict = args
    with single_thread() if strict else contextlib.nullcontext():
        return execute(spec, Path(run_dir), build)


def run(config: ExperimentConfig, out: str | os.PathLike | None = None, strict: bool = False,
        seeds=None, dry_run: bool = False, log=print) -> tuple[int, Path | None]:
    """Execute every planned run; returns ``(exit_code, result_dir)``."""
    specs = plan(config, seeds)
    workers = worker_count(strict, len(specs))
    if dry_run:
        log(format_plan(config, specs, workers, strict))
        return EXIT_OK, None
    root = Path(out if out is not None else config.out)
    result_dir = _fresh_dir(root)
    build = build_id()
    resolved = config.to_dict() | {"seeds": list(config.seeds if seeds is None else seeds)}
    _write_json(result_dir / "config.json", {"config": resolved, "build": build})
    jobs = [(s, str(result_dir / s.name), build, strict) for s in specs]
    if workers == 1:
        summaries = []
        for job in jobs:
            summaries.append(_execute_job(job))
            _log_run(log, job[0], summaries[-1])
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_execute_job, jobs))  # join barrier, plan order
        for spec, s in zip(specs, summaries):
            _log_run(log, spec, s)
    rows = aggregate(summaries)
    (result_dir / "aggregate.csv").write_text(aggregate_csv(rows))
    _write_json(result_dir / "aggregate.json", {"ci_formula": CI_FORMULA, "rows": rows})
    log(format_table(rows))
    log(f"results in {result_dir}")
    aborted = [s for s in summaries if s["status"] != "ok"]
    if aborted:
        for s in aborted:
            log(f"numeric abort: seed {s['seed']} {s.get('abort', {})}")
        return EXIT_NUMERIC, result_dir
    return EXIT_OK, result_dir


def _log_run(log, spec: RunSpec, s: dict):
    if s["status"] == "ok":
        log(f"[{spec.index + 1}] {spec.name}: test_acc {s['result']['test_acc']:.4f} "
            f"noise {s['result']['initial_noise_level']:.3f} -> {s['result']['final_noise_level']:.3f}")
    else:
        log(f"[{spec.index + 1}] {spec.name}: {s['status']}")


def format_plan(config: ExperimentConfig, specs, workers, strict) -> str:
    lines = [f"method: {config.method}",
             f"dataset: {config.dataset}",
             f"noise: {config.noise.kind} gamma={config.noise.gamma}",
             f"train: {config.train}",
             f"sweep: {config.sweep}",
             f"runs: {len(specs)} ({'strict, sequential' if strict else f'{workers} worker(s)'})"]
    lines += [f"  {s.name}" for s in specs]
    return "\n".join(lines)


# ---- aggregation and reporting ----

REPORT_COLUMNS = ["method", "noise_kind", "gamma", "sweep_param", "sweep_value", "n_seeds",
                  "test_acc_mean", "test_acc_ci", "noise_reduction_mean", "final_chi2_mean",
                  "total_seconds_mean", "total_seconds_sum"]


def _group_key(s: dict):
    sweep = s.get("sweep") or {}
    return (s["method"], s["noise"]["kind"], float(s["noise"]["gamma"]),
            sweep.get("param", ""), sweep.get("value", ""))


def _sort_key(row):
    v = row["sweep_value"]
    return (row["method"], row["gamma"], row["noise_kind"], row["sweep_param"],
            (0, v) if isinstance(v, (int, float)) else (1, str(v)))


def aggregate(summaries) -> list[dict]:
    groups: dict = {}
    for s in summaries:
        if s.get("status") == "ok":
            groups.setdefault(_group_key(s), []).append(s)
    rows = []
    for (method, kind, gamma, param, value), ss in groups.items():
        acc = [s["result"]["test_acc"] for s in ss]
        chi = [s["result"]["final_chi2"] for s in ss if s["result"]["final_chi2"] is not None]
        secs = [s["timing"]["total_seconds"] for s in ss]
        mean, half = confidence_interval(acc) if len(acc) >= 2 else (acc[0], None)
        rows.append({
            "method": method, "noise_kind": kind, "gamma": gamma, "sweep_param": param,
            "sweep_value": value, "n_seeds": len(ss), "test_acc_mean": mean, "test_acc_ci": half,
            "noise_reduction_mean": float(np.mean([s["result"]["noise_reduction"] for s in ss])),
            "final_chi2_mean": float(np.mean(chi)) if chi else None,
            "total_seconds_mean": float(np.mean(secs)), "total_seconds_sum": math.fsum(secs),
        })
    return sorted(rows, key=_sort_key)


def aggregate_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow(["" if r[c] is None else repr(r[c]) if isinstance(r[c], float) else r[c]
                    for c in REPORT_COLUMNS])
    return buf.getvalue()


def format_table(rows) -> str:
    head = f"{'method':<14}{'noise':<12}{'sweep':<14}{'n':>3}  {'test acc':>16}  {'noise drop':>10}" \
           f"  {'chi2':>8}  {'time (s)':>9}"
    lines = [head, "-" * len(head)]
    for r in rows:
        acc = f"{100 * r['test_acc_mean']:.2f}" + (f" ± {100 * r['test_acc_ci']:.2f}"
                                                   if r["test_acc_ci"] is not None else "")
        sweep = f"{r['sweep_param']}={_fmt(r['sweep_value'])}" if r["sweep_param"] else "-"
        chi = "-" if r["final_chi2_mean"] is None else f"{r['final_chi2_mean']:.4f}"
        lines.append(f"{r['method']:<14}{r['noise_kind'][:3] + ' ' + _fmt(r['gamma']):<12}{sweep:<14}"
                     f"{r['n_seeds']:>3}  {acc:>16}  {r['noise_reduction_mean']:>10.3f}  {chi:>8}"
                     f"  {r['total_seconds_mean']:>9.2f}")
    return "\n".join(lines)


REQUIRED_SUMMARY_KEYS = ("schema", "status", "method", "seed", "noise", "result", "timing", "config")


def report(result_dir, log=print) -> tuple[int, list[dict], list[str]]:
    """Consolidate every ``summary.json`` under ``result_dir``.

    Corrupt or incomplete summaries are listed and skipped; the table is
    written from whatever remains. Returns ``(exit_code, rows, problems)``.
    """
    root = Path(result_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"no such result directory: {root}")
    summaries, problems = [], []
    for path in sorted(root.rglob("summary.json")):
        try:
            s = json.loads(path.read_text())
            missing = [k for k in REQUIRED_SUMMARY_KEYS if k not in s]
            if missing:
                raise ValueError(f"missing keys {missing}")
            if s["status"] != "ok":
                problems.append(f"{path}: run ended with status {s['status']}")
                continue
            if s["result"] is None:
                raise ValueError("no result block")
        except (OSError, ValueError, TypeError) as exc:
            problems.append(f"{path}: corrupt summary ({exc})")
            continue
        problems += _check_wall_time(path, s)
        summaries.append(s)
    rows = aggregate(summaries)
    (root / "report.csv").write_text(aggregate_csv(rows))
    text = format_table(rows)
    (root / "report.txt").write_text(text + "\n")
    log(text)
    for p in problems:
        log(f"warning: {p}")
    if not summaries:
        log("no completed runs found")
        return 1, rows, problems
    return EXIT_OK, rows, problems


def _check_wall_time(summary_path: Path, s: dict) -> list[str]:
    """Total wall time must match the per-epoch durations in history.csv within 1%."""
    hist = summary_path.with_name("history.csv")
    try:
        rows = read_history_csv(hist)
        epoch_sum = math.fsum(float(r["epoch_seconds"]) for r in rows)
    except (OSError, KeyError, ValueError) as exc:
        return [f"{hist}: unreadable history ({exc})"]
    expected = epoch_sum + float(s["timing"].get("extra_seconds") or 0.0)
    total = float(s["timing"]["total_seconds"])
    if abs(total - expected) > 0.01 * max(abs(expected), 1e-9):
        return [f"{summary_path}: total_seconds {total:.4f} differs from history sum {expected:.4f} by >1%"]
    return []
