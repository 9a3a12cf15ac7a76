"""Tests for fspda.metrics module."""

import csv
import json

import numpy as np
import pytest

from fspda.algorithms import NetworkState, fixed_point_dual
from fspda.metrics import (
    FIELD_NAMES,
    MetricsError,
    MetricsRecord,
    measure,
    read_jsonl,
    series,
    write_csv,
    write_jsonl,
)


def _record(t=0, potential=None):
    return MetricsRecord(
        t=t,
        grad_norm_sq_avg=1.5,
        worst_grad_norm_sq=2.5,
        worst_loss=3.0,
        consensus_err=0.25,
        v_norm_sq=None,
        potential=potential,
        bits_cum=128 * t,
        suboptimality=0.5,
    )


class TestMeasure:
    """Tests for measure."""

    def test_at_optimum(self, quadratic5, hp):
        """At (x⋆, λ̂⋆) the gradient, consensus and v terms vanish."""
        state = NetworkState(
            x=np.tile(quadratic5.x_star, (5, 1)),
            lambda_hat=fixed_point_dual(quadratic5, quadratic5.x_star, hp),
        )
        record = measure(state, quadratic5, 7, 640, hp)
        assert record.t == 7
        assert record.bits_cum == 640
        assert record.grad_norm_sq_avg < 1e-20
        assert record.consensus_err < 1e-20
        assert record.v_norm_sq < 1e-18
        assert record.worst_loss == pytest.approx(quadratic5.f_star)
        assert record.potential is None

    def test_worst_agent(self, quadratic3):
        """worst_* take the maximum over agents' iterates."""
        x_star = quadratic3.x_star
        far = x_star + np.array([3.0, 0.0])
        state = NetworkState.per_agent(np.stack([x_star, x_star, far]))
        record = measure(state, quadratic3, 0, 0)
        assert record.worst_loss == pytest.approx(quadratic3.global_value(far))
        grad = quadratic3.global_gradient(far)
        assert record.worst_grad_norm_sq == pytest.approx(float(grad @ grad))
        assert record.consensus_err == pytest.approx(9.0 * 2 / 3)

    def test_no_hyperparams(self, quadratic3):
        """Without hyperparameters v is not reported."""
        state = NetworkState.consensus(np.zeros(2), 3)
        assert measure(state, quadratic3, 0, 0).v_norm_sq is None


class TestSerialization:
    """Tests for JSON Lines and CSV output."""

    def test_jsonl_round_trip(self, tmp_path):
        """Records survive a write and read."""
        records = [_record(0), _record(10, potential=4.0)]
        path = tmp_path / "run.jsonl"
        write_jsonl(records, path)
        assert read_jsonl(path) == records

    def test_jsonl_field_order(self, tmp_path):
        """Each line carries every field in record order."""
        path = tmp_path / "run.jsonl"
        write_jsonl([_record(1)], path)
        line = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
        assert tuple(line) == FIELD_NAMES
        assert line["v_norm_sq"] is None

    def test_csv_blanks_none(self, tmp_path):
        """CSV columns match JSON Lines and None becomes empty."""
        path = tmp_path / "run.csv"
        write_csv([_record(2)], path)
        with open(path, encoding="utf-8", newline="") as f:
            rows = list(csv.DictReader(f))
        assert tuple(rows[0]) == FIELD_NAMES
        assert rows[0]["potential"] == ""
        assert rows[0]["bits_cum"] == "256"

    def test_malformed_line(self, tmp_path):
        """A broken line names the file and line number."""
        path = tmp_path / "bad.jsonl"
        path.write_text(_record().to_json() + "\n{not json\n", encoding="utf-8")
        with pytest.raises(MetricsError, match="bad.jsonl:2"):
            read_jsonl(path)

    def test_missing_fields(self):
        """from_dict lists missing fields."""
        with pytest.raises(MetricsError, match="bits_cum"):
            MetricsRecord.from_dict({"t": 0})

    def test_missing_file(self, tmp_path):
        """Unreadable files raise MetricsError."""
        with pytest.raises(MetricsError, match="cannot read"):
            read_jsonl(tmp_path / "absent.jsonl")


class TestSeries:
    """Tests for series."""

    def test_none_becomes_nan(self):
        """Missing values are NaN."""
        values = series([_record(0), _record(1, potential=2.0)], "potential")
        assert np.isnan(values[0])
        assert values[1] == 2.0

    def test_unknown_metric(self):
        """Unknown names are rejected."""
        with pytest.raises(MetricsError, match="unknown metric"):
            series([_record()], "loss")
