"""Experiment configuration documents (JSON or TOML)."""

from __future__ import annotations

import json
import math
import tomllib
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any


from fspda.algorithms import AlgorithmError, Constant, CosineWithWarmup, HyperParams, Schedule
from fspda.async_runtime import AsyncConfig
from fspda.engine import (
    ALGORITHMS,
    BitsSpec,
    ConsensusInit,
    InitSpec,
    PerAgentInit,
    RunConfig,
    Seeds,
)
from fspda.graph import (
    TOPOLOGY_KINDS,
    FullGraph,
    GraphError,
    IndependentBernoulli,
    OneEdgeUniform,
    PeriodicLocalUpdate,
    SamplerSpec,
    SpectralError,
    Topology,
    build_incidence,
    make_topology,
    spectral_constants,
)
from fspda.objectives import (
    PARTITIONS,
    AdditiveGaussian,
    AsyncGradientMask,
    Minibatch,
    NoiseModel,
    ObjectiveError,
    ObjectiveSuite,
    make_heterogeneous_quadratic,
    make_logistic_suite,
)

if TYPE_CHECKING:
    from collections.abc import Iterable

EDGE_LAWS = ("one_edge", "bernoulli", "full", "periodic")
PROBLEM_KINDS = ("quadratic", "logistic")
RUNTIME_KINDS = ("sync", "async")
GAMMA_CHECK_CAP = 2**12
GAMMA_CHECK_SAMPLES = 100

HYPERPARAMETER_TABLES: dict[str, HyperParams] = {
    "mnist_sa_defaults": HyperParams(alpha=1e-4, eta=1e-5, gamma=0.5, beta=1.0),
    "mnist_storm_defaults": HyperParams(alpha=1e-3, eta=1e-2, gamma=0.5, beta=0.1, a_x=1e-2, a_lambda=1e-2),
    "hetero_sa": HyperParams(alpha=1e-4, eta=1e-4, gamma=0.5, beta=1.0),
    "homo_sa": HyperParams(alpha=1e-4, eta=1e-5, gamma=0.5, beta=1.0),
    "hetero_storm": HyperParams(alpha=1e-3, eta=1e-3, gamma=0.5, beta=0.1, a_x=0.1, a_lambda=0.1),
    "homo_storm": HyperParams(alpha=1e-3, eta=1e-4, gamma=0.5, beta=0.1, a_x=0.1, a_lambda=0.1),
    "sparsity_sa": HyperParams(alpha=1e-4, eta=1e-6, gamma=0.5, beta=1.0),
    "exact_grad_sa_dense": HyperParams(alpha=1e-3, eta=5e-6, gamma=0.5, beta=1.0),
    "exact_grad_sa_sparse": HyperParams(alpha=1e-4, eta=5e-4, gamma=0.5, beta=1.0),
    "dual_mom_off": HyperParams(alpha=1e-3, eta=5e-6, gamma=0.5, beta=1.0, a_x=1e-3, a_lambda=1.0),
    "dual_mom_on": HyperParams(alpha=1e-3, eta=5e-6, gamma=0.5, beta=1.0, a_x=1e-3, a_lambda=1e-2),
    # Peak values; runs pair this table with a cosine schedule.
    "imagenet_sa_10pct": HyperParams(alpha=0.1, eta=5e-9, gamma=0.5, beta=1.0),
}


class ConfigError(Exception):
    """Raised when a configuration document is invalid or cannot be loaded."""


@dataclass(frozen=True)
class TopologySpec:
    kind: str = "ring"
    n: int | None = 4
    p: float | None = None
    seed: int | None = None
    path: str | None = None

    def build(self) -> Topology:
        try:
            return make_topology(self.kind, self.n, p=self.p, seed=self.seed, path=self.path)
        except GraphError as e:
            raise ConfigError(f"topology: {e}") from e


@dataclass(frozen=True)
class ProblemSpec:
    kind: str = "quadratic"
    params: dict[str, Any] = field(default_factory=dict)

    def build(self, n: int) -> ObjectiveSuite:
        try:
            if self.kind == "quadratic":
                return make_heterogeneous_quadratic(n, **self.params)
            return make_logistic_suite(n, **self.params)
        except TypeError as e:
            raise ConfigError(f"problem.params: {e}") from e
        except ObjectiveError as e:
            raise ConfigError(f"problem: {e}") from e


@dataclass(frozen=True)
class RuntimeSpec:
    """Synchronous engine or asynchronous runtime with its event model."""

    kind: str = "sync"
    mean_sg_duration: float = 1.0
    mean_gossip_duration: float = 0.05
    gossip_rate: float = 2.0
    timeout: float | None = None
    interrupt_on_gossip: bool = False
    max_events: int | None = None
    schedule_seed: int = 0


@dataclass(frozen=True)
class OutputSpec:
    dir: str | None = None
    csv: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated run document."""

    run: RunConfig = field(default_factory=RunConfig)
    topology: TopologySpec = field(default_factory=TopologySpec)
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    runtime: RuntimeSpec = field(default_factory=RuntimeSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    def async_config(self) -> AsyncConfig:
        r, rt = self.run, self.runtime
        return AsyncConfig(
            T=r.T,
            hp=r.hp,
            sampler=r.sampler,
            noise=r.noise,
            init=r.init,
            seeds=r.seeds,
            bits=r.bits,
            mean_sg_duration=rt.mean_sg_duration,
            mean_gossip_duration=rt.mean_gossip_duration,
            gossip_rate=rt.gossip_rate,
            timeout=math.inf if rt.timeout is None else rt.timeout,
            interrupt_on_gossip=rt.interrupt_on_gossip,
            max_events=rt.max_events,
            metric_period=r.metric_period,
        )


@dataclass(frozen=True)
class PresetInvocation:
    """A document that names a preset instead of describing one run."""

    name: str
    overrides: dict[str, Any] = field(default_factory=dict)
    seed: int = 0


# --- Field helpers --------------------------------------------------------------


def _mapping(value: Any, path: str) -> dict[str, Any]:
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected a table, got {type(value).__name__}")
    return value


def _check_keys(data: dict[str, Any], allowed: Iterable[str], path: str) -> None:
    allowed = set(allowed)
    for key in data:
        if key not in allowed:
            prefix = f"{path}." if path else ""
            raise ConfigError(f"{prefix}{key}: unknown key (allowed: {', '.join(sorted(allowed))})")


def _number(value: Any, path: str, minimum: float | None = None, strict: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{path}: must be finite, got {value}")
    if minimum is not None and (value <= minimum if strict else value < minimum):
        relation = ">" if strict else ">="
        raise ConfigError(f"{path}: must be {relation} {minimum:g}, got {value:g}")
    return value


def _integer(value: Any, path: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}, got {value}")
    return value


def _choice(value: Any, choices: Iterable[str], path: str) -> str:
    choices = tuple(choices)
    if value not in choices:
        raise ConfigError(f"{path}: expected one of {', '.join(choices)}, got {value!r}")
    return value


def _optional(data: dict[str, Any], key: str, parse, path: str, default=None):
    value = data.get(key)
    return default if value is None else parse(value, f"{path}.{key}" if path else key)


# --- Section parsers ------------------------------------------------------------


_HP_KEYS = ("alpha", "eta", "gamma", "beta", "a_x", "a_lambda")


def _parse_hyperparams(value: Any, path: str = "hyperparams") -> HyperParams:
    if isinstance(value, str):
        try:
            return HYPERPARAMETER_TABLES[value]
        except KeyError:
            raise ConfigError(
                f"{path}: unknown hyperparameter table '{value}' "
                f"(available: {', '.join(HYPERPARAMETER_TABLES)})"
            ) from None
    data = _mapping(value, path)
    _check_keys(data, _HP_KEYS, path)
    defaults = HyperParams()
    values = {key: _number(data.get(key, getattr(defaults, key)), f"{path}.{key}") for key in _HP_KEYS}
    try:
        return HyperParams(**values)
    except AlgorithmError as e:
        raise ConfigError("; ".join(f"{path}.{msg}" for msg in str(e).split("; "))) from e


def _parse_schedule(value: Any, T: int, path: str = "schedule") -> Schedule:
    if isinstance(value, str):
        value = {"kind": value}
    data = _mapping(value, path)
    _check_keys(data, ("kind", "warmup"), path)
    kind = _choice(data.get("kind", "constant"), ("constant", "cosine"), f"{path}.kind")
    if kind == "constant":
        if "warmup" in data:
            raise ConfigError(f"{path}.warmup: only valid for the cosine schedule")
        return Constant()
    warmup = _number(data.get("warmup", 0.0), f"{path}.warmup", minimum=0.0)
    try:
        return CosineWithWarmup(warmup=warmup, total=max(T, 1))
    except AlgorithmError as e:
        raise ConfigError(f"{path}: {e}") from e


def _parse_sampler(value: Any, path: str = "sampler") -> SamplerSpec:
    data = _mapping(value, path)
    _check_keys(data, ("edge_law", "params", "sparsity"), path)
    law_name = _choice(data.get("edge_law", "one_edge"), EDGE_LAWS, f"{path}.edge_law")
    params = _mapping(data.get("params", {}), f"{path}.params")
    sparsity = _number(data.get("sparsity", 1.0), f"{path}.sparsity", minimum=0.0, strict=True)
    if sparsity > 1.0:
        raise ConfigError(f"{path}.sparsity: must be <= 1, got {sparsity:g}")

    ppath = f"{path}.params"
    if law_name == "bernoulli":
        _check_keys(params, ("p",), ppath)
        if "p" not in params:
            raise ConfigError(f"{ppath}.p: required for the bernoulli law")
        p = params["p"]
        probabilities = (
            tuple(_number(v, f"{ppath}.p[{k}]") for k, v in enumerate(p))
            if isinstance(p, list)
            else _number(p, f"{ppath}.p")
        )
        try:
            law = IndependentBernoulli(probabilities)
        except GraphError as e:
            raise ConfigError(f"{ppath}.p: {e}") from e
    elif law_name == "periodic":
        _check_keys(params, ("period",), ppath)
        law = PeriodicLocalUpdate(_integer(params.get("period", 1), f"{ppath}.period", minimum=1))
    else:
        _check_keys(params, (), ppath)
        law = OneEdgeUniform() if law_name == "one_edge" else FullGraph()
    return SamplerSpec(edge_law=law, sparsity=sparsity)


def _parse_topology(value: Any, path: str = "topology") -> TopologySpec:
    data = _mapping(value, path)
    _check_keys(data, ("kind", "n", "p", "seed", "path"), path)
    kind = _choice(data.get("kind", "ring"), TOPOLOGY_KINDS, f"{path}.kind")
    n = _optional(data, "n", lambda v, p: _integer(v, p, minimum=1), path)
    if kind != "file" and n is None:
        raise ConfigError(f"{path}.n: required for topology kind '{kind}'")
    p = _optional(data, "p", lambda v, q: _number(v, q, minimum=0.0, strict=True), path)
    if kind == "er" and p is None:
        raise ConfigError(f"{path}.p: required for topology kind 'er'")
    file_path = data.get("path")
    if kind == "file" and not isinstance(file_path, str):
        raise ConfigError(f"{path}.path: required for topology kind 'file'")
    seed = _optional(data, "seed", lambda v, q: _integer(v, q, minimum=0), path)
    return TopologySpec(kind=kind, n=n, p=p, seed=seed, path=file_path)


_PROBLEM_PARAMS = {
    "quadratic": {"d": int, "heterogeneity": float, "seed": int, "rows": int},
    "logistic": {"samples_per_agent": int, "d": int, "partition": str, "l2": float, "seed": int, "separation": float},
}


def _parse_problem(value: Any, path: str = "problem") -> ProblemSpec:
    data = _mapping(value, path)
    _check_keys(data, ("kind", "params"), path)
    kind = _choice(data.get("kind", "quadratic"), PROBLEM_KINDS, f"{path}.kind")
    params = dict(_mapping(data.get("params", {}), f"{path}.params"))
    schema = _PROBLEM_PARAMS[kind]
    _check_keys(params, schema, f"{path}.params")
    for key, kind_of in schema.items():
        if key not in params:
            continue
        ppath = f"{path}.params.{key}"
        if kind_of is int:
            params[key] = _integer(params[key], ppath, minimum=0)
        elif kind_of is float:
            params[key] = _number(params[key], ppath)
        else:
            params[key] = _choice(params[key], PARTITIONS, ppath)
    if kind == "logistic":
        for key in ("samples_per_agent", "d"):
            if key not in params:
                raise ConfigError(f"{path}.params.{key}: required for logistic problems")
    elif "d" not in params:
        raise ConfigError(f"{path}.params.d: required for quadratic problems")
    return ProblemSpec(kind=kind, params=params)


def _parse_noise(value: Any, path: str = "noise") -> NoiseModel:
    data = _mapping(value, path)
    kind = _choice(data.get("kind", "gaussian"), ("gaussian", "minibatch"), f"{path}.kind")
    if kind == "gaussian":
        _check_keys(data, ("kind", "sigma"), path)
        return AdditiveGaussian(_number(data.get("sigma", 0.0), f"{path}.sigma", minimum=0.0))
    _check_keys(data, ("kind", "batch_size"), path)
    return Minibatch(_integer(data.get("batch_size", 1), f"{path}.batch_size", minimum=1))


def _parse_async_mask(value: Any, path: str = "async_mask") -> AsyncGradientMask:
    data = _mapping(value, path)
    _check_keys(data, ("participation",), path)
    values = data.get("participation")
    if not isinstance(values, list) or not values:
        raise ConfigError(f"{path}.participation: expected a non-empty list")
    probabilities = tuple(_number(v, f"{path}.participation[{k}]") for k, v in enumerate(values))
    try:
        return AsyncGradientMask(probabilities)
    except ObjectiveError as e:
        raise ConfigError(f"{path}.participation: {e}") from e


def _vector(value: Any, path: str) -> tuple[float, ...]:
    if not isinstance(value, list):
        raise ConfigError(f"{path}: expected a list of numbers")
    return tuple(_number(v, f"{path}[{k}]") for k, v in enumerate(value))


def _parse_init(value: Any, path: str = "init") -> InitSpec:
    data = _mapping(value, path)
    kind = _choice(data.get("kind", "consensus"), ("consensus", "per_agent"), f"{path}.kind")
    if kind == "consensus":
        _check_keys(data, ("kind", "x_bar", "spread"), path)
        x_bar = _optional(data, "x_bar", _vector, path)
        spread = _number(data.get("spread", 0.0), f"{path}.spread", minimum=0.0)
        return ConsensusInit(x_bar=x_bar, spread=spread)
    _check_keys(data, ("kind", "rows"), path)
    rows = data.get("rows")
    if not isinstance(rows, list) or not rows:
        raise ConfigError(f"{path}.rows: expected a list of per-agent vectors")
    return PerAgentInit(tuple(_vector(r, f"{path}.rows[{k}]") for k, r in enumerate(rows)))


def _parse_seeds(value: Any, path: str = "seeds") -> Seeds:
    data = _mapping(value, path)
    _check_keys(data, ("graph", "noise", "init"), path)
    defaults = Seeds()
    return Seeds(
        **{
            key: _integer(data.get(key, getattr(defaults, key)), f"{path}.{key}", minimum=0)
            for key in ("graph", "noise", "init")
        }
    )


def _parse_bits(value: Any, path: str = "bits") -> BitsSpec:
    data = _mapping(value, path)
    _check_keys(data, ("value_bits", "index_bits"), path)
    return BitsSpec(
        value_bits=_integer(data.get("value_bits", 32), f"{path}.value_bits", minimum=1),
        index_bits=_integer(data.get("index_bits", 32), f"{path}.index_bits", minimum=0),
    )


def _parse_runtime(value: Any, path: str = "runtime") -> RuntimeSpec:
    if isinstance(value, str):
        value = {"kind": value}
    data = _mapping(value, path)
    allowed = ("kind", "mean_sg_duration", "mean_gossip_duration", "gossip_rate", "timeout",
               "interrupt_on_gossip", "max_events", "schedule_seed")
    _check_keys(data, allowed, path)
    defaults = RuntimeSpec()
    positive = {
        key: _number(data.get(key, getattr(defaults, key)), f"{path}.{key}", minimum=0.0, strict=True)
        for key in ("mean_sg_duration", "mean_gossip_duration", "gossip_rate")
    }
    interrupt = data.get("interrupt_on_gossip", False)
    if not isinstance(interrupt, bool):
        raise ConfigError(f"{path}.interrupt_on_gossip: expected a boolean")
    return RuntimeSpec(
        kind=_choice(data.get("kind", "sync"), RUNTIME_KINDS, f"{path}.kind"),
        timeout=_optional(data, "timeout", lambda v, p: _number(v, p, minimum=0.0), path),
        interrupt_on_gossip=interrupt,
        max_events=_optional(data, "max_events", lambda v, p: _integer(v, p, minimum=1), path),
        schedule_seed=_integer(data.get("schedule_seed", 0), f"{path}.schedule_seed", minimum=0),
        **positive,
    )


def _parse_output(value: Any, path: str = "output") -> OutputSpec:
    data = _mapping(value, path)
    _check_keys(data, ("dir", "csv"), path)
    directory = data.get("dir")
    if directory is not None and not isinstance(directory, str):
        raise ConfigError(f"{path}.dir: expected a string")
    csv = data.get("csv", False)
    if not isinstance(csv, bool):
        raise ConfigError(f"{path}.csv: expected a boolean")
    return OutputSpec(dir=directory, csv=csv)


_TOP_KEYS = (
    "algorithm", "T", "hyperparams", "schedule", "sampler", "topology", "problem", "noise",
    "async_mask", "init", "storm_init", "seeds", "metric_period", "bits", "dsgd_step",
    "record_potential", "runtime", "output",
)


def parse_config(data: dict[str, Any]) -> ExperimentConfig | PresetInvocation:
    """Validate a parsed document.

    A document with a ``preset`` key names a preset (with optional
    ``overrides`` and ``seed``); any other document describes one run.

    Raises:
        ConfigError: Naming the dotted path of the first offending field.
    """
    data = _mapping(data, "document")
    if "preset" in data:
        _check_keys(data, ("preset", "overrides", "seed"), "")
        name = data["preset"]
        if not isinstance(name, str):
            raise ConfigError("preset: expected a preset name")
        overrides = _mapping(data.get("overrides", {}), "overrides")
        return PresetInvocation(name=name, overrides=dict(overrides), seed=_integer(data.get("seed", 0), "seed", minimum=0))

    _check_keys(data, _TOP_KEYS, "")
    algorithm = _choice(data.get("algorithm", "fspda_sa"), ALGORITHMS, "algorithm")
    T = _integer(data.get("T", 1000), "T", minimum=0)
    hp = _parse_hyperparams(data.get("hyperparams", {}))
    storm_init = _choice(data.get("storm_init", "zero"), ("theoretical", "zero", "stochastic"), "storm_init")
    record_potential = data.get("record_potential", False)
    if not isinstance(record_potential, bool):
        raise ConfigError("record_potential: expected a boolean")

    run = RunConfig(
        algorithm=algorithm,
        T=T,
        hp=hp,
        schedule=_parse_schedule(data.get("schedule", "constant"), T),
        sampler=_parse_sampler(data.get("sampler", {})),
        noise=_parse_noise(data.get("noise", {})),
        async_mask=_optional(data, "async_mask", _parse_async_mask, ""),
        init=_parse_init(data.get("init", {})),
        storm_init_mode=storm_init,
        metric_period=_integer(data.get("metric_period", 1), "metric_period", minimum=1),
        seeds=_parse_seeds(data.get("seeds", {})),
        bits=_parse_bits(data.get("bits", {})),
        dsgd_step=_optional(data, "dsgd_step", lambda v, p: _number(v, p, minimum=0.0, strict=True), ""),
        record_potential=record_potential,
    )
    config = ExperimentConfig(
        run=run,
        topology=_parse_topology(data.get("topology", {"kind": "ring", "n": 4})),
        problem=_parse_problem(data.get("problem", {"kind": "quadratic", "params": {"d": 10}})),
        runtime=_parse_runtime(data.get("runtime", "sync")),
        output=_parse_output(data.get("output", {})),
    )
    if config.runtime.kind == "async" and algorithm != "fspda_sa":
        raise ConfigError("runtime.kind: the asynchronous runtime only runs fspda_sa")
    if metric_period_exceeds(run):
        warnings.warn(
            f"metric_period {run.metric_period} exceeds T={run.T}; only t=0 and t=T are recorded",
            UserWarning,
            stacklevel=2,
        )
    return config


def metric_period_exceeds(run: RunConfig) -> bool:
    return run.metric_period > max(run.T, 1)


def load_config(path: Path | str) -> ExperimentConfig | PresetInvocation:
    """Load a JSON document (or TOML when the suffix is .toml).

    Raises:
        ConfigError: If the file cannot be read or is invalid.
    """
    path = Path(path).expanduser()
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        if path.suffix == ".toml":
            with open(path, "rb") as f:
                data = tomllib.load(f)
        else:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Invalid TOML in config file: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON in config file: {e}") from e
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e
    return parse_config(data)


# --- Serialization --------------------------------------------------------------


def _serialize_sampler(spec: SamplerSpec) -> dict[str, Any]:
    law = spec.edge_law
    params: dict[str, Any] = {}
    if isinstance(law, IndependentBernoulli):
        p = law.probabilities
        params["p"] = list(p) if isinstance(p, tuple) else p
    elif isinstance(law, PeriodicLocalUpdate):
        params["period"] = law.period
    return {"edge_law": law.name, "params": params, "sparsity": spec.sparsity}


def _serialize_init(init: InitSpec) -> dict[str, Any]:
    if isinstance(init, PerAgentInit):
        return {"kind": "per_agent", "rows": [list(r) for r in init.rows]}
    doc: dict[str, Any] = {"kind": "consensus", "spread": init.spread}
    if init.x_bar is not None:
        doc["x_bar"] = list(init.x_bar)
    return doc


def serialize_config(config: ExperimentConfig) -> dict[str, Any]:
    """Return a document that ``parse_config`` maps back to an equal config."""
    run = config.run
    hp = run.hp
    schedule: dict[str, Any] = {"kind": "constant"}
    if isinstance(run.schedule, CosineWithWarmup):
        schedule = {"kind": "cosine", "warmup": run.schedule.warmup}
    noise: dict[str, Any] = (
        {"kind": "gaussian", "sigma": run.noise.sigma}
        if isinstance(run.noise, AdditiveGaussian)
        else {"kind": "minibatch", "batch_size": run.noise.batch_size}
    )
    topo = config.topology
    rt = config.runtime
    doc: dict[str, Any] = {
        "algorithm": run.algorithm,
        "T": run.T,
        "hyperparams": {key: getattr(hp, key) for key in _HP_KEYS},
        "schedule": schedule,
        "sampler": _serialize_sampler(run.sampler),
        "topology": {k: v for k, v in vars(topo).items() if v is not None},
        "problem": {"kind": config.problem.kind, "params": dict(config.problem.params)},
        "noise": noise,
        "init": _serialize_init(run.init),
        "storm_init": run.storm_init_mode,
        "seeds": {"graph": run.seeds.graph, "noise": run.seeds.noise, "init": run.seeds.init},
        "metric_period": run.metric_period,
        "bits": {"value_bits": run.bits.value_bits, "index_bits": run.bits.index_bits},
        "record_potential": run.record_potential,
        "runtime": {k: v for k, v in vars(rt).items() if v is not None},
        "output": {k: v for k, v in vars(config.output).items() if v is not None},
    }
    if run.async_mask is not None:
        doc["async_mask"] = {"participation": list(run.async_mask.participation)}
    if run.dsgd_step is not None:
        doc["dsgd_step"] = run.dsgd_step
    return doc


# --- Overrides and spec strings -------------------------------------------------


def _coerce(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(document: dict[str, Any], overrides: dict[str, Any] | Iterable[str]) -> dict[str, Any]:
    """Return a copy of ``document`` with dotted-path overrides applied.

    ``overrides`` is either a mapping or ``key=value`` strings whose values
    are parsed as JSON when possible (``T=500``, ``hyperparams=homo_sa``).
    """
    if not isinstance(overrides, dict):
        parsed = {}
        for item in overrides:
            key, sep, value = item.partition("=")
            if not sep or not key:
                raise ConfigError(f"override '{item}': expected key=value")
            parsed[key.strip()] = _coerce(value.strip())
        overrides = parsed

    result = json.loads(json.dumps(document))
    for dotted, value in overrides.items():
        keys = dotted.split(".")
        target = result
        for depth, key in enumerate(keys[:-1]):
            node = target.get(key)
            if isinstance(node, str) and key == "hyperparams":
                node = {k: getattr(HYPERPARAMETER_TABLES.get(node, HyperParams()), k) for k in _HP_KEYS}
            if node is None:
                node = {}
            if not isinstance(node, dict):
                raise ConfigError(f"override '{dotted}': {'.'.join(keys[:depth + 1])} is not a table")
            target[key] = node
            target = node
        target[keys[-1]] = value
    return result


def parse_topology_spec(text: str) -> TopologySpec:
    """Parse ``kind:n[:p[:seed]]`` or ``file:path``, e.g. ``ring:4``, ``er:10:0.3``."""
    kind, _, rest = text.partition(":")
    if kind == "file":
        if not rest:
            raise ConfigError(f"topology '{text}': expected file:<path>")
        return TopologySpec(kind="file", n=None, path=rest)
    if kind not in TOPOLOGY_KINDS:
        raise ConfigError(f"topology '{text}': unknown kind '{kind}'")
    parts = rest.split(":") if rest else []
    try:
        n = int(parts[0])
        p = float(parts[1]) if len(parts) > 1 else None
        seed = int(parts[2]) if len(parts) > 2 else None
    except (IndexError, ValueError) as e:
        raise ConfigError(f"topology '{text}': expected {kind}:<n>[:<p>[:<seed>]]") from e
    return _parse_topology({k: v for k, v in {"kind": kind, "n": n, "p": p, "seed": seed}.items() if v is not None})


def parse_sampler_spec(text: str) -> SamplerSpec:
    """Parse ``law[:param]:sparsity``: ``one_edge:0.5``, ``full:1``,
    ``bernoulli:0.3:0.5``, ``periodic:4:1``. The sparsity defaults to 1."""
    law, _, rest = text.partition(":")
    parts = rest.split(":") if rest else []
    try:
        values = [float(p) for p in parts]
    except ValueError as e:
        raise ConfigError(f"sampler '{text}': parameters must be numbers") from e
    doc: dict[str, Any] = {"edge_law": law}
    if law in ("bernoulli", "periodic"):
        if not values:
            raise ConfigError(f"sampler '{text}': {law} needs a parameter")
        key = "p" if law == "bernoulli" else "period"
        doc["params"] = {key: values[0] if law == "bernoulli" else int(values[0])}
        values = values[1:]
    if len(values) > 1:
        raise ConfigError(f"sampler '{text}': too many parameters")
    if values:
        doc["sparsity"] = values[0]
    return _parse_sampler(doc)


def warn_if_gamma_unstable(config: ExperimentConfig, topology: Topology, d: int) -> None:
    """Warn when γ exceeds the contraction bound ρ_min/ρ_max² of the sampler."""
    if topology.n < 2 or not topology.num_edges:
        return
    incidence = build_incidence(topology)
    with warnings.catch_warnings():
        # the periodic-law caveat belongs to callers asking for the constants
        warnings.simplefilter("ignore", UserWarning)
        try:
            report = spectral_constants(config.run.sampler, incidence, d=d, cap=GAMMA_CHECK_CAP)
        except SpectralError:
            # ρ comes from the closed-form expected Laplacian; σ_A² is unused here
            report = spectral_constants(
                config.run.sampler, incidence, d=d, mode="monte_carlo", num_samples=GAMMA_CHECK_SAMPLES
            )
    bound = report.gamma_bound
    if config.run.hp.gamma > bound:
        warnings.warn(
            f"gamma={config.run.hp.gamma:g} exceeds the spectral bound {bound:.4g} of this sampler",
            UserWarning,
            stacklevel=2,
        )
