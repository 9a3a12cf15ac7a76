"""Multi-seed execution, aggregation and result directories.

A batch directory holds ``manifest.json`` (the runs and seeds), one
``<label>-seed<k>.jsonl`` metrics file per run, optional CSV copies and
``summary.json``. ``analyze`` rebuilds the summary from the first two.
"""

from __future__ import annotations

import json
import logging
import os
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np
from scipy import stats

from fspda.async_runtime import AsyncRuntimeError, RandomSchedule, run_async
from fspda.config import ConfigError, ExperimentConfig, parse_config, serialize_config, warn_if_gamma_unstable
from fspda.engine import EngineError, Seeds, run
from fspda.metrics import FIELD_NAMES, MetricsError, MetricsRecord, read_jsonl, series, write_csv, write_jsonl

logger = logging.getLogger(__name__)

SEED_STRIDE = 1000
THREADS_ENV = "FSPDA_THREADS"
SUMMARY_METRICS = ("grad_norm_sq_avg", "worst_grad_norm_sq", "worst_loss", "consensus_err", "suboptimality")


class BatchError(Exception):
    """Raised when a batch cannot run or one of its seeds aborts."""

    def __init__(self, message: str, seed: int | None = None, label: str | None = None) -> None:
        super().__init__(message)
        self.seed = seed
        self.label = label


@dataclass(frozen=True)
class LabeledRun:
    label: str
    config: ExperimentConfig


@dataclass
class Aggregate:
    """Per-iteration mean and standard error of every metric over seeds."""

    label: str
    t: np.ndarray
    mean: dict[str, np.ndarray]
    stderr: dict[str, np.ndarray]
    bits_total: float
    n_seeds: int


Summarizer = Callable[[dict[str, Aggregate]], dict[str, Any]]


def thread_count() -> int:
    """Worker cap from FSPDA_THREADS, defaulting to the CPU count."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        raise BatchError(f"{THREADS_ENV} must be a positive integer, got '{raw}'") from None
    if value < 1:
        raise BatchError(f"{THREADS_ENV} must be a positive integer, got '{raw}'")
    return value


def replicate(config: ExperimentConfig, k: int) -> ExperimentConfig:
    """The k-th seed replicate: all streams shifted by k·SEED_STRIDE."""
    if k == 0:
        return config
    s = config.run.seeds
    shift = k * SEED_STRIDE
    seeds = Seeds(graph=s.graph + shift, noise=s.noise + shift, init=s.init + shift)
    runtime = replace(config.runtime, schedule_seed=config.runtime.schedule_seed + shift)
    return replace(config, run=replace(config.run, seeds=seeds), runtime=runtime)


def execute(config: ExperimentConfig) -> tuple[list[MetricsRecord], int]:
    """Run one configuration and return its metrics and transmitted bits."""
    topology = config.topology.build()
    suite = config.problem.build(topology.n)
    warn_if_gamma_unstable(config, topology, suite.d)
    if config.runtime.kind == "async":
        result = run_async(
            config.async_config(), suite, topology, RandomSchedule(config.runtime.schedule_seed)
        )
        return result.records, result.bits_total
    result = run(config.run, suite, topology)
    return result.records, result.bits_total


def aggregate(label: str, runs: list[tuple[list[MetricsRecord], int]]) -> Aggregate:
    """Mean and standard error over seeds at the iterations every seed recorded."""
    if not runs:
        raise BatchError(f"no runs to aggregate for '{label}'", label=label)
    common = set.intersection(*({r.t for r in records} for records, _ in runs))
    t = np.array(sorted(common), dtype=int)
    mean, stderr = {}, {}
    for name in FIELD_NAMES:
        if name == "t":
            continue
        stacked = np.stack(
            [series([r for r in records if r.t in common], name) for records, _ in runs]
        )
        mean[name] = stacked.mean(axis=0)
        if len(runs) > 1:
            stderr[name] = stacked.std(axis=0, ddof=1) / np.sqrt(len(runs))
        else:
            stderr[name] = np.zeros(len(t))
    bits = float(np.mean([b for _, b in runs]))
    return Aggregate(label=label, t=t, mean=mean, stderr=stderr, bits_total=bits, n_seeds=len(runs))


# --- Fits -----------------------------------------------------------------------


def loglog_slope(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-squares slope and R² of log y against log x."""
    fit = stats.linregress(np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float)))
    return float(fit.slope), float(fit.rvalue**2)


def geometric_fit(t: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Slope and R² of log y against t; a negative slope is linear convergence."""
    y = np.asarray(y, dtype=float)
    keep = y > 0
    fit = stats.linregress(np.asarray(t, dtype=float)[keep], np.log(y[keep]))
    return float(fit.slope), float(fit.rvalue**2)


def time_average(agg: Aggregate, name: str) -> float:
    """Mean over recorded iterations t >= 1."""
    values = agg.mean[name][agg.t >= 1]
    return float(np.nanmean(values)) if values.size else float(agg.mean[name][0])


def plateau(agg: Aggregate, name: str, fraction: float = 0.1) -> float:
    """Mean over the final ``fraction`` of recorded iterations."""
    cutoff = agg.t[-1] * (1.0 - fraction)
    return float(np.nanmean(agg.mean[name][agg.t >= cutoff]))


def default_summary(aggregates: dict[str, Aggregate]) -> dict[str, Any]:
    runs = {}
    for label, agg in aggregates.items():
        runs[label] = {
            "final": {m: _finite(agg.mean[m][-1]) for m in SUMMARY_METRICS},
            "time_average": {m: _finite(time_average(agg, m)) for m in SUMMARY_METRICS},
            "plateau": {m: _finite(plateau(agg, m)) for m in SUMMARY_METRICS},
            "bits_total": agg.bits_total,
            "n_seeds": agg.n_seeds,
        }
    return {"runs": runs}


def _finite(value: float) -> float | None:
    return None if np.isnan(value) else float(value)


def summarize(aggregates: dict[str, Aggregate], summarizer: Summarizer | None = None) -> dict[str, Any]:
    summary = default_summary(aggregates)
    if summarizer is not None:
        summary["fits"] = summarizer(aggregates)
    return summary


# --- Batch runner -----------------------------------------------------------------


@dataclass
class BatchResult:
    aggregates: dict[str, Aggregate]
    summary: dict[str, Any]
    out_dir: Path | None = None


def _run_file(label: str, k: int) -> str:
    return f"{label}-seed{k}.jsonl"


def run_batch(
    runs: list[LabeledRun],
    n_seeds: int = 1,
    out_dir: Path | str | None = None,
    summarizer: Summarizer | None = None,
    preset: str | None = None,
    preset_seed: int = 0,
    csv: bool = False,
    threads: int | None = None,
) -> BatchResult:
    """Run every labeled configuration for ``n_seeds`` replicates.

    Seeds run in a thread pool capped by FSPDA_THREADS; aggregation is a
    sequential reduce in label and seed order, so results do not depend on
    completion order.

    Raises:
        BatchError: If ``n_seeds`` < 1, labels repeat, or any seed aborts
            (with the seed and label attached).
    """
    if n_seeds < 1:
        raise BatchError(f"n_seeds must be at least 1, got {n_seeds}")
    labels = [r.label for r in runs]
    if len(set(labels)) != len(labels):
        raise BatchError(f"duplicate run labels: {labels}")

    workers = threads or thread_count()
    results: dict[tuple[str, int], tuple[list[MetricsRecord], int]] = {}
    jobs = [(r, k) for r in runs for k in range(n_seeds)]
    logger.info("running %d jobs on %d threads", len(jobs), workers)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(execute, replicate(r.config, k)): (r.label, k) for r, k in jobs}
        for future in as_completed(futures):
            label, k = futures[future]
            try:
                results[(label, k)] = future.result()
            except (EngineError, AsyncRuntimeError, ConfigError, MetricsError) as e:
                for other in futures:
                    other.cancel()
                raise BatchError(f"run '{label}' seed {k} aborted: {e}", seed=k, label=label) from e
            logger.info("finished %s seed %d", label, k)

    aggregates = {
        label: aggregate(label, [results[(label, k)] for k in range(n_seeds)]) for label in labels
    }
    summary = summarize(aggregates, summarizer)

    directory = None
    if out_dir is not None:
        directory = Path(out_dir)
        _write_directory(directory, runs, n_seeds, results, summary, preset, preset_seed, csv)
    return BatchResult(aggregates=aggregates, summary=summary, out_dir=directory)


def _write_directory(
    directory: Path,
    runs: list[LabeledRun],
    n_seeds: int,
    results: dict[tuple[str, int], tuple[list[MetricsRecord], int]],
    summary: dict[str, Any],
    preset: str | None,
    preset_seed: int,
    csv: bool,
) -> None:
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise BatchError(f"cannot create output directory {directory}: {e}") from e

    manifest = {
        "preset": preset,
        "seed": preset_seed,
        "n_seeds": n_seeds,
        "runs": [
            {
                "label": r.label,
                "config": serialize_config(r.config),
                "files": [_run_file(r.label, k) for k in range(n_seeds)],
                "bits_total": [results[(r.label, k)][1] for k in range(n_seeds)],
            }
            for r in runs
        ],
    }
    try:
        for (label, k), (records, _) in sorted(results.items()):
            write_jsonl(records, directory / _run_file(label, k))
            if csv:
                write_csv(records, directory / _run_file(label, k).replace(".jsonl", ".csv"))
        _write_json(directory / "manifest.json", manifest)
        _write_json(directory / "summary.json", summary)
    except MetricsError as e:
        raise BatchError(str(e)) from e


def _write_json(path: Path, data: dict[str, Any]) -> None:
    try:
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise BatchError(f"cannot write {path}: {e}") from e


def read_manifest(directory: Path | str) -> dict[str, Any]:
    path = Path(directory) / "manifest.json"
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise BatchError(f"no manifest.json in {directory}") from None
    except (OSError, json.JSONDecodeError) as e:
        raise BatchError(f"cannot read {path}: {e}") from e


def analyze(directory: Path | str, summarizer: Summarizer | None = None) -> dict[str, Any]:
    """Recompute and rewrite summary.json from the manifest and JSONL files."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    aggregates = {}
    for entry in manifest["runs"]:
        label = entry["label"]
        try:
            parse_config(entry["config"])
            runs = [
                (read_jsonl(directory / name), bits)
                for name, bits in zip(entry["files"], entry["bits_total"])
            ]
        except (ConfigError, MetricsError) as e:
            raise BatchError(f"cannot analyze run '{label}': {e}", label=label) from e
        aggregates[label] = aggregate(label, runs)
    summary = summarize(aggregates, summarizer)
    _write_json(directory / "summary.json", summary)
    return summary
