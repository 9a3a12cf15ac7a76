"""Per-iteration telemetry and its JSON Lines / CSV serialization."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from fspda.algorithms import compute_v
from fspda.graph import k_seminorm_sq

if TYPE_CHECKING:
    from collections.abc import Iterable

    from fspda.algorithms import HyperParams, NetworkState, Potential
    from fspda.objectives import ObjectiveSuite


class MetricsError(Exception):
    """Raised when a metrics file cannot be read or written."""


@dataclass(frozen=True)
class MetricsRecord:
    """One iteration's telemetry."""

    t: int
    grad_norm_sq_avg: float
    worst_grad_norm_sq: float
    worst_loss: float
    consensus_err: float
    v_norm_sq: float | None
    potential: float | None
    bits_cum: int
    suboptimality: float | None

    def to_json(self) -> str:
        return json.dumps(asdict(self), allow_nan=True)

    @classmethod
    def from_dict(cls, data: dict) -> MetricsRecord:
        names = [f.name for f in fields(cls)]
        missing = [name for name in names if name not in data]
        if missing:
            raise MetricsError(f"metrics record missing fields: {', '.join(missing)}")
        return cls(**{name: data[name] for name in names})


FIELD_NAMES = tuple(f.name for f in fields(MetricsRecord))


def measure(
    state: NetworkState,
    suite: ObjectiveSuite,
    t: int,
    bits_cum: int,
    hp: HyperParams | None = None,
    potential: Potential | None = None,
) -> MetricsRecord:
    """Evaluate every metric at ``state`` with the deterministic oracle."""
    x_bar = state.mean()
    grad = suite.global_gradient(x_bar)
    worst_grad = max(float(np.sum(suite.global_gradient(x) ** 2)) for x in state.x)
    worst_loss = max(suite.global_value(x) for x in state.x)

    v_norm_sq = None
    if hp is not None and hp.eta > 0:
        _, v_norm_sq = compute_v(state, suite, hp, x_bar)
    value = None
    if potential is not None and hp is not None:
        value = potential(state, suite, hp).total

    return MetricsRecord(
        t=t,
        grad_norm_sq_avg=float(grad @ grad),
        worst_grad_norm_sq=worst_grad,
        worst_loss=worst_loss,
        consensus_err=k_seminorm_sq(state.x),
        v_norm_sq=v_norm_sq,
        potential=value,
        bits_cum=int(bits_cum),
        suboptimality=suite.suboptimality(x_bar),
    )


def write_jsonl(records: Iterable[MetricsRecord], path: Path | str) -> None:
    """Write one JSON object per line, fields in record order."""
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8") as f:
            for record in records:
                f.write(record.to_json())
                f.write("\n")
    except OSError as e:
        raise MetricsError(f"cannot write metrics to {path}: {e}") from e


def read_jsonl(path: Path | str) -> list[MetricsRecord]:
    path = Path(path)
    records = []
    try:
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    records.append(MetricsRecord.from_dict(json.loads(line)))
                except (json.JSONDecodeError, TypeError) as e:
                    raise MetricsError(f"{path}:{lineno}: invalid metrics record: {e}") from e
    except OSError as e:
        raise MetricsError(f"cannot read metrics from {path}: {e}") from e
    return records


def write_csv(records: Iterable[MetricsRecord], path: Path | str) -> None:
    """Write records as CSV with the JSON Lines columns; None becomes empty."""
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=FIELD_NAMES)
            writer.writeheader()
            for record in records:
                writer.writerow({k: ("" if v is None else v) for k, v in asdict(record).items()})
    except OSError as e:
        raise MetricsError(f"cannot write metrics to {path}: {e}") from e


def series(records: Iterable[MetricsRecord], name: str) -> np.ndarray:
    """Extract one field as a float array (None becomes NaN)."""
    if name not in FIELD_NAMES:
        raise MetricsError(f"unknown metric '{name}'")
    return np.array(
        [np.nan if getattr(r, name) is None else getattr(r, name) for r in records], dtype=float
    )
