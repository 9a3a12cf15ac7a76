"""Named experiment presets.

Each preset expands a master seed into a list of labeled run documents and
knows which fitted quantities its summary needs. The MNIST and ImageNet
studies are replaced by the synthetic quadratic suite at desk scale; the
full-scale hyperparameter tables stay reachable through
``--override hyperparams=<table>``.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass
from typing import Any

import numpy as np

from fspda.batch import Aggregate, LabeledRun, Summarizer, geometric_fit, loglog_slope, plateau, time_average
from fspda.config import ExperimentConfig, PresetInvocation, apply_overrides, parse_config

logger = logging.getLogger(__name__)

# Below this the combined optimality gap is dominated by cancellation in F(x̄) - f⋆.
FIT_FLOOR = 1e-10
DETERMINISTIC_TOL = 1e-6

Document = dict[str, Any]


class PresetError(Exception):
    """Raised when a preset is unknown or expands to an invalid run."""


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    description: str
    build: Callable[[int], list[tuple[str, Document]]]
    summarize: Summarizer | None = None
    default_seeds: int = 1


def _base(seed: int) -> Document:
    """n=5 ring, d=10 quadratic with heterogeneity 10, one-edge sampling."""
    return {
        "algorithm": "fspda_sa",
        "T": 5000,
        "hyperparams": {"alpha": 0.01, "eta": 0.01, "gamma": 0.5, "beta": 1.0},
        "sampler": {"edge_law": "one_edge", "sparsity": 1.0},
        "topology": {"kind": "ring", "n": 5},
        "problem": {"kind": "quadratic", "params": {"d": 10, "heterogeneity": 10.0, "seed": seed}},
        "noise": {"kind": "gaussian", "sigma": 1.0},
        "seeds": {"graph": seed, "noise": seed + 1, "init": seed + 2},
        "metric_period": 10,
    }


def _variant(seed: int, changes: dict[str, Any]) -> Document:
    return apply_overrides(_base(seed), changes)


def _final(agg: Aggregate, name: str = "grad_norm_sq_avg") -> float:
    return float(agg.mean[name][-1])


def bits_to_tolerance(agg: Aggregate, tol: float, name: str = "grad_norm_sq_avg") -> float | None:
    """Cumulative bits at the first record where ``name`` is at most ``tol``."""
    hits = np.flatnonzero(agg.mean[name] <= tol)
    return float(agg.mean["bits_cum"][hits[0]]) if hits.size else None


# --- rate_sweep -------------------------------------------------------------------

RATE_HORIZONS = (1000, 4000, 16000)


def _rate_sweep(seed: int) -> list[tuple[str, Document]]:
    runs = []
    for T in RATE_HORIZONS:
        step = 0.5 / math.sqrt(T)
        runs.append((
            f"T{T}",
            _variant(seed, {
                "T": T,
                "hyperparams": {"alpha": step, "eta": step, "gamma": 0.5, "beta": 1.0},
                "sampler.sparsity": 0.5,
                "metric_period": T // 500,
            }),
        ))
    return runs


def _rate_summary(aggregates: dict[str, Aggregate]) -> dict[str, Any]:
    ordered = sorted(aggregates.values(), key=lambda a: a.t[-1])
    horizons = np.array([a.t[-1] for a in ordered], dtype=float)
    grads = np.array([time_average(a, "grad_norm_sq_avg") for a in ordered])
    slope, r2 = loglog_slope(horizons, grads)
    return {
        "grad_slope": slope,
        "grad_r2": r2,
        "consensus_ratio": time_average(ordered[-1], "consensus_err") / time_average(ordered[0], "consensus_err"),
        "time_average_grad": {a.label: float(g) for a, g in zip(ordered, grads)},
    }


# --- pl_linear --------------------------------------------------------------------


def _pl_linear(seed: int) -> list[tuple[str, Document]]:
    # alpha = 8 / (0.25 T): 0.25 lower-bounds the quadratic suite's strong convexity.
    T = 20000
    return [(
        "fspda_sa",
        _variant(seed, {
            "T": T,
            "hyperparams": {"alpha": 8 / (0.25 * T), "eta": 0.05, "gamma": 0.1, "beta": 1.0},
            "sampler": {"edge_law": "full", "sparsity": 1.0},
            "noise.sigma": 0.0,
            "metric_period": 20,
        }),
    )]


def _pl_summary(aggregates: dict[str, Aggregate]) -> dict[str, Any]:
    agg = aggregates["fspda_sa"]
    gap = agg.mean["suboptimality"] + agg.mean["consensus_err"]
    keep = gap > FIT_FLOOR
    slope, r2 = geometric_fit(agg.t[keep], gap[keep])
    return {"slope": slope, "r2": r2, "points": int(keep.sum())}


# --- storm_vs_sa ------------------------------------------------------------------


def _storm_vs_sa(seed: int) -> list[tuple[str, Document]]:
    common = {
        "T": 100000,
        "sampler.sparsity": 0.5,
        "noise.sigma": 10.0,
        "metric_period": 1000,
    }
    sa = {"alpha": 2e-3, "eta": 2e-3, "gamma": 0.5, "beta": 1.0}
    storm = {**sa, "a_x": 0.1, "a_lambda": 0.1}
    return [
        ("fspda_sa", _variant(seed, {**common, "hyperparams": sa})),
        (
            "fspda_storm",
            _variant(seed, {**common, "algorithm": "fspda_storm", "hyperparams": storm, "storm_init": "stochastic"}),
        ),
    ]


def _storm_summary(aggregates: dict[str, Aggregate]) -> dict[str, Any]:
    sa = time_average(aggregates["fspda_sa"], "grad_norm_sq_avg")
    storm = time_average(aggregates["fspda_storm"], "grad_norm_sq_avg")
    return {"fspda_sa": sa, "fspda_storm": storm, "storm_over_sa": storm / sa}


# --- heterogeneity ----------------------------------------------------------------


def _heterogeneity(seed: int) -> list[tuple[str, Document]]:
    runs = []
    for h in (0.0, 1.0, 10.0):
        for algorithm in ("fspda_sa", "dsgd"):
            changes: dict[str, Any] = {"problem.params.heterogeneity": h, "algorithm": algorithm}
            if algorithm == "dsgd":
                changes["dsgd_step"] = 0.01
            runs.append((f"{algorithm}-h{h:g}", _variant(seed, changes)))
    return runs


def _plateaus(aggregates: dict[str, Aggregate]) -> dict[str, Any]:
    return {
        label: {"grad": plateau(agg, "grad_norm_sq_avg"), "consensus": plateau(agg, "consensus_err")}
        for label, agg in aggregates.items()
    }


# --- sparsity_sweep and deterministic ---------------------------------------------


def _sparsity_sweep(seed: int) -> list[tuple[str, Document]]:
    return [(f"s{s:g}", _variant(seed, {"sampler.sparsity": s})) for s in (0.1, 0.5, 1.0)]


def _communication(aggregates: dict[str, Aggregate]) -> dict[str, Any]:
    return {
        label: {
            "final_grad": _final(agg),
            "bits_total": agg.bits_total,
            "bits_to_tolerance": bits_to_tolerance(agg, DETERMINISTIC_TOL),
        }
        for label, agg in aggregates.items()
    }


def _deterministic(seed: int) -> list[tuple[str, Document]]:
    common = {"noise.sigma": 0.0, "T": 10000}
    return [
        ("dense", _variant(seed, {**common, "sampler": {"edge_law": "full", "sparsity": 1.0}, "hyperparams.gamma": 0.1})),
        ("sparse", _variant(seed, {**common, "sampler.sparsity": 0.1})),
    ]


# --- topology_sweep ---------------------------------------------------------------


def _topology_sweep(seed: int) -> list[tuple[str, Document]]:
    topologies = {
        "ring": {"kind": "ring", "n": 8},
        "complete": {"kind": "complete", "n": 8},
        "star": {"kind": "star", "n": 8},
        "er": {"kind": "er", "n": 8, "p": 0.5, "seed": seed},
    }
    return [(label, _variant(seed, {"topology": topo})) for label, topo in topologies.items()]


# --- dual_momentum ----------------------------------------------------------------


def _dual_momentum(seed: int) -> list[tuple[str, Document]]:
    runs = []
    for label, a_lambda in (("dual_mom_off", 1.0), ("dual_mom_on", 0.01)):
        hp = {"alpha": 2e-3, "eta": 2e-3, "gamma": 0.5, "beta": 1.0, "a_x": 0.1, "a_lambda": a_lambda}
        runs.append((
            label,
            _variant(seed, {
                "algorithm": "fspda_storm",
                "T": 20000,
                "hyperparams": hp,
                "storm_init": "stochastic",
                "metric_period": 100,
            }),
        ))
    return runs


def _dual_momentum_summary(aggregates: dict[str, Aggregate]) -> dict[str, Any]:
    off = time_average(aggregates["dual_mom_off"], "grad_norm_sq_avg")
    on = time_average(aggregates["dual_mom_on"], "grad_norm_sq_avg")
    return {"dual_mom_off": off, "dual_mom_on": on, "on_over_off": on / off}


# --- dsgd_bias --------------------------------------------------------------------


def _dsgd_bias(seed: int) -> list[tuple[str, Document]]:
    common = {
        "T": 20000,
        "noise.sigma": 0.0,
        "hyperparams": {"alpha": 0.02, "eta": 0.02, "gamma": 0.5, "beta": 1.0},
        "metric_period": 20,
    }
    return [
        ("fspda_sa", _variant(seed, common)),
        ("dsgd", _variant(seed, {**common, "algorithm": "dsgd", "dsgd_step": 0.02})),
    ]


def _dsgd_bias_summary(aggregates: dict[str, Aggregate]) -> dict[str, Any]:
    fspda = _final(aggregates["fspda_sa"])
    dsgd = plateau(aggregates["dsgd"], "grad_norm_sq_avg")
    return {
        "fspda_final": fspda,
        "dsgd_plateau": dsgd,
        "fspda_exact": bool(fspda <= 1e-8),
        "dsgd_biased": bool(dsgd > 1e-4),
    }


# --- async_vs_sync ----------------------------------------------------------------


def _async_vs_sync(seed: int) -> list[tuple[str, Document]]:
    common = {"T": 2000, "topology": {"kind": "ring", "n": 4}, "metric_period": 20}
    return [
        ("sync", _variant(seed, common)),
        ("async", _variant(seed, {**common, "runtime": {"kind": "async", "schedule_seed": seed}})),
    ]


def _async_summary(aggregates: dict[str, Aggregate]) -> dict[str, Any]:
    sync = _final(aggregates["sync"])
    asynchronous = _final(aggregates["async"])
    return {"sync": sync, "async": asynchronous, "async_over_sync": asynchronous / sync}


PRESETS: dict[str, ExperimentPreset] = {
    p.name: p
    for p in (
        ExperimentPreset("rate_sweep", "grad norm vs T at alpha = c/sqrt(T), sigma=1", _rate_sweep, _rate_summary, 20),
        ExperimentPreset("pl_linear", "linear rate on a static graph with exact gradients", _pl_linear, _pl_summary),
        ExperimentPreset("storm_vs_sa", "STORM vs SA under heavy noise (sigma=10)", _storm_vs_sa, _storm_summary, 10),
        ExperimentPreset("heterogeneity", "FSPDA-SA and DSGD across data heterogeneity", _heterogeneity, _plateaus, 3),
        ExperimentPreset("sparsity_sweep", "coordinate sparsity 0.1, 0.5, 1", _sparsity_sweep, _communication, 3),
        ExperimentPreset("topology_sweep", "ring, complete, star and er(0.5) graphs", _topology_sweep, _plateaus, 3),
        ExperimentPreset("deterministic", "exact gradients on dense vs sparse graphs", _deterministic, _communication),
        ExperimentPreset("dual_momentum", "STORM with and without dual momentum", _dual_momentum, _dual_momentum_summary, 3),
        ExperimentPreset("dsgd_bias", "exact FSPDA-SA vs biased DSGD without noise", _dsgd_bias, _dsgd_bias_summary),
        ExperimentPreset("async_vs_sync", "event-driven runtime vs synchronous rounds", _async_vs_sync, _async_summary, 3),
    )
}


def get_preset(name: str) -> ExperimentPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise PresetError(f"unknown preset '{name}' (available: {', '.join(PRESETS)})") from None


def expand_preset(
    name: str,
    seed: int = 0,
    overrides: dict[str, Any] | list[str] | None = None,
) -> list[LabeledRun]:
    """Build the validated runs of a preset; ``overrides`` apply to every run.

    Raises:
        PresetError: If the preset is unknown or seed is negative.
        ConfigError: If an override produces an invalid document.
    """
    if seed < 0:
        raise PresetError(f"preset seed must be non-negative, got {seed}")
    preset = get_preset(name)
    runs = []
    for label, document in preset.build(seed):
        if overrides:
            document = apply_overrides(document, overrides)
        config = parse_config(document)
        if not isinstance(config, ExperimentConfig):
            raise PresetError(f"preset '{name}' run '{label}' names another preset")
        runs.append(LabeledRun(label=label, config=config))
    logger.info("expanded preset %s (seed %d) into %d runs", name, seed, len(runs))
    return runs


def expand_invocation(invocation: PresetInvocation) -> list[LabeledRun]:
    return expand_preset(invocation.name, invocation.seed, invocation.overrides)
