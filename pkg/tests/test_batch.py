"""Tests for fspda.batch module."""

import json
import os

import numpy as np
import pytest

from fspda.batch import (
    SEED_STRIDE,
    Aggregate,
    BatchError,
    LabeledRun,
    aggregate,
    analyze,
    execute,
    geometric_fit,
    loglog_slope,
    plateau,
    replicate,
    run_batch,
    thread_count,
    time_average,
)
from fspda.config import parse_config
from fspda.metrics import MetricsRecord


def _tiny(**changes):
    doc = {
        "T": 20,
        "hyperparams": {"alpha": 0.02, "eta": 0.02, "gamma": 0.4, "beta": 1.0},
        "sampler": {"edge_law": "one_edge", "sparsity": 0.5},
        "topology": {"kind": "ring", "n": 3},
        "problem": {"kind": "quadratic", "params": {"d": 2, "seed": 1}},
        "noise": {"kind": "gaussian", "sigma": 1.0},
        "metric_period": 5,
    }
    doc.update(changes)
    return parse_config(doc)


def _record(t, value, bits=0):
    return MetricsRecord(
        t=t,
        grad_norm_sq_avg=value,
        worst_grad_norm_sq=value,
        worst_loss=value,
        consensus_err=value,
        v_norm_sq=None,
        potential=None,
        bits_cum=bits,
        suboptimality=value,
    )


def _aggregate(t, values):
    t = np.asarray(t)
    values = np.asarray(values, dtype=float)
    return Aggregate(label="a", t=t, mean={"grad_norm_sq_avg": values}, stderr={}, bits_total=0.0, n_seeds=1)


class TestReplicate:
    """Tests for replicate."""

    def test_first_replicate_unchanged(self):
        """k=0 keeps the configured seeds."""
        config = _tiny()
        assert replicate(config, 0) is config

    def test_shifts_every_stream(self):
        """k shifts graph, noise, init and schedule seeds by k·SEED_STRIDE."""
        config = _tiny()
        shifted = replicate(config, 2)
        seeds = shifted.run.seeds
        assert seeds.graph == config.run.seeds.graph + 2 * SEED_STRIDE
        assert seeds.noise == config.run.seeds.noise + 2 * SEED_STRIDE
        assert seeds.init == config.run.seeds.init + 2 * SEED_STRIDE
        assert shifted.runtime.schedule_seed == 2 * SEED_STRIDE
        assert shifted.run.hp == config.run.hp


class TestThreadCount:
    """Tests for thread_count."""

    def test_from_environment(self, monkeypatch):
        """FSPDA_THREADS caps the worker count."""
        monkeypatch.setenv("FSPDA_THREADS", "3")
        assert thread_count() == 3

    def test_default(self, monkeypatch):
        """Without the variable the CPU count is used."""
        monkeypatch.delenv("FSPDA_THREADS", raising=False)
        assert thread_count() == (os.cpu_count() or 1)

    @pytest.mark.parametrize("raw", ["0", "-2", "many"])
    def test_invalid(self, monkeypatch, raw):
        """Non-positive or non-integer values are rejected."""
        monkeypatch.setenv("FSPDA_THREADS", raw)
        with pytest.raises(BatchError, match="FSPDA_THREADS"):
            thread_count()


class TestAggregate:
    """Tests for aggregate."""

    def test_mean_and_stderr(self):
        """Two seeds at 1 and 3 give mean 2 and standard error 1."""
        runs = [
            ([_record(0, 1.0), _record(5, 1.0)], 100),
            ([_record(0, 3.0), _record(5, 3.0)], 300),
        ]
        agg = aggregate("a", runs)
        np.testing.assert_array_equal(agg.t, [0, 5])
        np.testing.assert_allclose(agg.mean["grad_norm_sq_avg"], [2.0, 2.0])
        np.testing.assert_allclose(agg.stderr["grad_norm_sq_avg"], [1.0, 1.0])
        assert agg.bits_total == 200.0
        assert agg.n_seeds == 2
        assert np.isnan(agg.mean["potential"]).all()

    def test_common_iterations_only(self):
        """Only iterations every seed recorded are kept."""
        runs = [
            ([_record(0, 1.0), _record(3, 1.0), _record(5, 1.0)], 0),
            ([_record(0, 1.0), _record(5, 1.0)], 0),
        ]
        np.testing.assert_array_equal(aggregate("a", runs).t, [0, 5])

    def test_single_seed_has_zero_stderr(self):
        """One seed reports zero standard error."""
        agg = aggregate("a", [([_record(0, 4.0)], 0)])
        assert agg.stderr["consensus_err"][0] == 0.0

    def test_empty(self):
        """No runs cannot be aggregated."""
        with pytest.raises(BatchError, match="no runs"):
            aggregate("a", [])


class TestFits:
    """Tests for the fitting and averaging helpers."""

    def test_loglog_slope(self):
        """A power law y = 3x^-0.5 has slope -0.5 and R² 1."""
        x = np.array([1e3, 4e3, 1.6e4])
        slope, r2 = loglog_slope(x, 3.0 * x**-0.5)
        assert slope == pytest.approx(-0.5)
        assert r2 == pytest.approx(1.0)

    def test_geometric_fit_skips_zeros(self):
        """Zero values are dropped before taking logs."""
        t = np.arange(0, 100, 10)
        y = np.exp(-0.1 * t)
        y[-1] = 0.0
        slope, r2 = geometric_fit(t, y)
        assert slope == pytest.approx(-0.1)
        assert r2 == pytest.approx(1.0)

    def test_time_average_excludes_start(self):
        """The t=0 record is not averaged."""
        agg = _aggregate([0, 10, 20], [100.0, 2.0, 4.0])
        assert time_average(agg, "grad_norm_sq_avg") == pytest.approx(3.0)

    def test_time_average_of_start_only(self):
        """With only t=0 recorded, its value is returned."""
        assert time_average(_aggregate([0], [7.0]), "grad_norm_sq_avg") == 7.0

    def test_plateau(self):
        """The plateau averages the final fraction of iterations."""
        agg = _aggregate([0, 25, 50, 75, 100], [9.0, 9.0, 9.0, 1.0, 3.0])
        assert plateau(agg, "grad_norm_sq_avg", fraction=0.25) == pytest.approx(2.0)


class TestExecute:
    """Tests for execute."""

    def test_sync(self):
        """The synchronous engine records the configured schedule."""
        records, bits = execute(_tiny())
        assert [r.t for r in records] == [0, 5, 10, 15, 20]
        # one edge, 1 of 2 coordinates, two directions, 64 bits
        assert bits == 20 * 2 * 64

    def test_async(self):
        """The asynchronous runtime starts recording at clock 0."""
        records, _ = execute(_tiny(runtime={"kind": "async", "schedule_seed": 4}))
        assert records[0].t == 0
        assert records[-1].t >= 20


class TestRunBatch:
    """Tests for run_batch and analyze."""

    def test_writes_directory(self, tmp_path):
        """Manifest, per-seed metrics, CSV copies and summary are written."""
        out = tmp_path / "out"
        result = run_batch([LabeledRun("tiny", _tiny())], n_seeds=2, out_dir=out, csv=True, threads=2)
        assert result.out_dir == out
        names = {p.name for p in out.iterdir()}
        assert {
            "manifest.json",
            "summary.json",
            "tiny-seed0.jsonl",
            "tiny-seed1.jsonl",
            "tiny-seed0.csv",
            "tiny-seed1.csv",
        } <= names
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["n_seeds"] == 2
        assert manifest["runs"][0]["files"] == ["tiny-seed0.jsonl", "tiny-seed1.jsonl"]
        assert parse_config(manifest["runs"][0]["config"]) == _tiny()
        assert result.summary["runs"]["tiny"]["n_seeds"] == 2

    def test_analyze_reproduces_summary(self, tmp_path):
        """analyze rebuilds the summary from the files alone."""
        result = run_batch([LabeledRun("tiny", _tiny())], n_seeds=2, out_dir=tmp_path, threads=1)
        assert analyze(tmp_path) == result.summary

    def test_independent_of_thread_count(self):
        """Aggregation order does not depend on completion order."""
        runs = [LabeledRun("a", _tiny()), LabeledRun("b", _tiny(T=10))]
        one = run_batch(runs, n_seeds=3, threads=1)
        many = run_batch(runs, n_seeds=3, threads=4)
        assert one.summary == many.summary

    def test_summarizer(self):
        """A summarizer's output lands under 'fits'."""
        result = run_batch([LabeledRun("tiny", _tiny())], summarizer=lambda aggs: {"labels": sorted(aggs)})
        assert result.summary["fits"] == {"labels": ["tiny"]}
        assert result.out_dir is None

    def test_duplicate_labels(self):
        """Labels must be unique."""
        with pytest.raises(BatchError, match="duplicate"):
            run_batch([LabeledRun("a", _tiny()), LabeledRun("a", _tiny())])

    def test_no_seeds(self):
        """n_seeds below 1 is rejected."""
        with pytest.raises(BatchError, match="n_seeds"):
            run_batch([LabeledRun("a", _tiny())], n_seeds=0)

    def test_aborted_seed(self):
        """A diverging seed aborts the batch with its label and seed."""
        config = _tiny(T=500, hyperparams={"alpha": 50.0, "eta": 0.02, "gamma": 0.4, "beta": 1.0})
        with pytest.raises(BatchError, match="aborted") as info:
            run_batch([LabeledRun("bad", config)], threads=1)
        assert info.value.label == "bad"
        assert info.value.seed == 0

    def test_analyze_without_manifest(self, tmp_path):
        """A directory without manifest.json cannot be analyzed."""
        with pytest.raises(BatchError, match="no manifest.json"):
            analyze(tmp_path)
