"""Synchronous iteration driver.

Each iteration samples a graph, lets every agent draw its stochastic
gradient, applies one algorithm step to all agents at once and records
metrics every ``metric_period`` iterations and at t = 0 and t = T.

Random streams are counter-based: the graph sample of iteration t depends
only on (seeds.graph, t) and agent i's gradient sample only on
(seeds.noise, t, i), so runs replay exactly and the sample indices of
FSPDA-STORM line up with those of FSPDA-SA.
"""

from __future__ import annotations

import logging
import warnings
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from fspda.algorithms import (
    STORM_INIT_MODES,
    AlgorithmError,
    Constant,
    HyperParams,
    NetworkState,
    Potential,
    Schedule,
    dsgd_step,
    fspda_sa_step,
    fspda_storm_step,
    initialize_momenta,
    potential_weights,
    schedule_at,
    storm_init,
)
from fspda.graph import (
    GraphError,
    GraphSample,
    GraphSampler,
    SamplerSpec,
    Topology,
    build_incidence,
    counter_rng,
    expected_laplacian,
)
from fspda.metrics import MetricsRecord, measure
from fspda.objectives import (
    AdditiveGaussian,
    AsyncGradientMask,
    GradientSample,
    NoiseModel,
    ObjectiveError,
    ObjectiveSuite,
    draw_gradient_sample,
    sample_async_mask,
)

logger = logging.getLogger(__name__)

ALGORITHMS = ("fspda_sa", "fspda_storm", "dsgd")

_GRADIENT_STREAM = 0
_PARTICIPATION_STREAM = 1


class EngineError(Exception):
    """Raised when a run is misconfigured or its iterates stop being finite."""

    def __init__(
        self,
        message: str,
        iteration: int | None = None,
        agent: int | None = None,
        field: str | None = None,
    ) -> None:
        super().__init__(message)
        self.iteration = iteration
        self.agent = agent
        self.field = field


@dataclass(frozen=True)
class BitsSpec:
    """Cost of one transmitted coordinate: its value plus its index."""

    value_bits: int = 32
    index_bits: int = 32

    @property
    def per_coordinate(self) -> int:
        return self.value_bits + self.index_bits


@dataclass(frozen=True)
class Seeds:
    graph: int = 0
    noise: int = 1
    init: int = 2


@dataclass(frozen=True)
class ConsensusInit:
    """Every agent starts at x̄⁰: ``x_bar`` if given, else N(0, spread²) from seeds.init."""

    x_bar: tuple[float, ...] | None = None
    spread: float = 0.0


@dataclass(frozen=True)
class PerAgentInit:
    rows: tuple[tuple[float, ...], ...]


InitSpec = Union[ConsensusInit, PerAgentInit]


@dataclass(frozen=True)
class RunConfig:
    """Everything one synchronous run needs besides the suite and topology."""

    algorithm: str = "fspda_sa"
    T: int = 1000
    hp: HyperParams = field(default_factory=HyperParams)
    schedule: Schedule = field(default_factory=Constant)
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    noise: NoiseModel = field(default_factory=AdditiveGaussian)
    async_mask: AsyncGradientMask | None = None
    init: InitSpec = field(default_factory=ConsensusInit)
    storm_init_mode: str = "zero"
    metric_period: int = 1
    seeds: Seeds = field(default_factory=Seeds)
    bits: BitsSpec = field(default_factory=BitsSpec)
    dsgd_step: float | None = None
    record_potential: bool = False
    potential_a: float = 1.0

    def validate(self) -> list[str]:
        errors = []
        if self.algorithm not in ALGORITHMS:
            errors.append(f"unknown algorithm '{self.algorithm}', expected one of {', '.join(ALGORITHMS)}")
        if self.T < 0:
            errors.append(f"T must be non-negative, got {self.T}")
        if self.metric_period < 1:
            errors.append(f"metric_period must be at least 1, got {self.metric_period}")
        if self.storm_init_mode not in STORM_INIT_MODES:
            errors.append(f"unknown storm init mode '{self.storm_init_mode}'")
        if self.dsgd_step is not None and self.dsgd_step <= 0:
            errors.append(f"dsgd_step must be positive, got {self.dsgd_step}")
        if self.bits.value_bits < 1 or self.bits.index_bits < 0:
            errors.append("bits need value_bits >= 1 and index_bits >= 0")
        return errors


@dataclass
class RunResult:
    """Outcome of one run."""

    records: list[MetricsRecord]
    final_state: NetworkState
    bits_total: int
    iterations: int


StateCallback = Callable[[int, NetworkState], None]


def account_bits(sample: GraphSample, algorithm: str, bits: BitsSpec | None = None) -> int:
    """Bits sent on this sample: both directions of every active edge's mask.

    FSPDA-STORM exchanges the current and the previous iterate under each
    fresh sample, doubling the cost.
    """
    bits = bits or BitsSpec()
    cost = 2 * sample.transmitted_coords * bits.per_coordinate
    return 2 * cost if algorithm == "fspda_storm" else cost


def initial_state(init: InitSpec, suite: ObjectiveSuite, seed: int = 0) -> NetworkState:
    """Primal iterates at t = 0 with zero dual (momenta are set separately)."""
    if isinstance(init, PerAgentInit):
        rows = np.asarray(init.rows, dtype=float)
        if rows.shape != (suite.n, suite.d):
            raise EngineError(f"per-agent init has shape {rows.shape}, expected ({suite.n}, {suite.d})")
        return NetworkState.per_agent(rows)
    if init.x_bar is not None:
        x_bar = np.asarray(init.x_bar, dtype=float)
        if x_bar.shape != (suite.d,):
            raise EngineError(f"init x_bar has dimension {x_bar.size}, expected {suite.d}")
    elif init.spread > 0:
        x_bar = np.random.default_rng(seed).normal(0.0, init.spread, size=suite.d)
    else:
        x_bar = np.zeros(suite.d)
    return NetworkState.consensus(x_bar, suite.n)


class GradientStream:
    """Per-iteration gradient samples with the async participation applied."""

    def __init__(
        self,
        suite: ObjectiveSuite,
        noise: NoiseModel,
        seed: int,
        mask: AsyncGradientMask | None = None,
    ) -> None:
        self._suite = suite
        self._noise = noise
        self._mask = mask
        self._seed = seed
        if self._mask is not None and len(self._mask.participation) != suite.n:
            raise EngineError(
                f"async mask has {len(self._mask.participation)} agents, suite has {suite.n}"
            )

    def agent_sample(self, t: int, i: int) -> tuple[GradientSample, float]:
        """Agent i's gradient sample of iteration t and its participation weight."""
        rng = counter_rng(self._seed, t, _GRADIENT_STREAM, i)
        sample = draw_gradient_sample(self._suite, i, self._noise, rng)
        weight = 1.0
        if self._mask is not None:
            weight = sample_async_mask(self._mask, i, counter_rng(self._seed, t, _PARTICIPATION_STREAM, i))
        return sample, weight

    def draw(self, t: int) -> tuple[list[GradientSample], list[float]]:
        pairs = [self.agent_sample(t, i) for i in range(self._suite.n)]
        return [p[0] for p in pairs], [p[1] for p in pairs]

    def oracle(self, t: int) -> Callable[[np.ndarray], np.ndarray]:
        samples, weights = self.draw(t)

        def evaluate(X: np.ndarray) -> np.ndarray:
            return np.stack([w * g(x) for g, w, x in zip(samples, weights, X)])

        return evaluate


def run(
    config: RunConfig,
    suite: ObjectiveSuite,
    topology: Topology,
    callback: StateCallback | None = None,
) -> RunResult:
    """Run one synchronous simulation.

    Args:
        config: Run configuration.
        suite: Local objectives; suite.n must equal topology.n.
        topology: Static graph the sampler draws from.
        callback: Called as callback(t, state) at t = 0 and after every iteration.

    Raises:
        EngineError: On an invalid configuration or a non-finite iterate.
    """
    errors = config.validate()
    if errors:
        raise EngineError("; ".join(errors))
    if suite.n != topology.n:
        raise EngineError(f"suite has {suite.n} agents but topology has {topology.n}")
    if config.metric_period > max(config.T, 1):
        warnings.warn(
            f"metric_period {config.metric_period} exceeds T={config.T}; only t=0 and t=T are recorded",
            UserWarning,
            stacklevel=2,
        )

    hp = config.hp
    spec = replace(config.sampler, seed=config.seeds.graph)
    try:
        sampler = GraphSampler(spec, topology, suite.d)
        potential = None
        if config.record_potential:
            block = expected_laplacian(spec, build_incidence(topology), suite.d)
            potential = Potential(potential_weights(hp, config.potential_a), block)
    except (GraphError, AlgorithmError) as e:
        raise EngineError(str(e)) from e

    gradients = GradientStream(suite, config.noise, config.seeds.noise, config.async_mask)
    state = initial_state(config.init, suite, config.seeds.init)
    storm = config.algorithm == "fspda_storm"

    try:
        if storm:
            state = _init_storm(config, suite, state, sampler, gradients)
    except (AlgorithmError, ObjectiveError) as e:
        raise EngineError(str(e), iteration=0) from e

    logger.info(
        "running %s for T=%d on %s (n=%d, d=%d)", config.algorithm, config.T, suite.name, suite.n, suite.d
    )
    bits_cum = 0
    records = [measure(state, suite, 0, bits_cum, hp, potential)]
    if callback is not None:
        callback(0, state)

    for t in range(config.T):
        scale = schedule_at(config.schedule, t)
        try:
            if storm:
                sample = sampler.sample(t + 1)
                state = fspda_storm_step(state, sample, gradients.oracle(t + 1), hp, scale)
            else:
                sample = sampler.sample(t)
                sgrads = gradients.oracle(t)(state.x)
                if config.algorithm == "fspda_sa":
                    state = fspda_sa_step(state, sample, sgrads, hp, scale)
                else:
                    step = config.dsgd_step if config.dsgd_step is not None else hp.alpha
                    state = dsgd_step(state, sample, sgrads, scale * step, hp.gamma)
        except (AlgorithmError, ObjectiveError) as e:
            raise EngineError(str(e), iteration=t) from e

        bits_cum += account_bits(sample, config.algorithm, config.bits)
        bad = state.first_non_finite()
        if bad is not None:
            agent, name = bad
            raise EngineError(
                f"non-finite {name} at agent {agent} after iteration {t + 1}; reduce the step sizes",
                iteration=t + 1,
                agent=agent,
                field=name,
            )
        if callback is not None:
            callback(t + 1, state)
        if (t + 1) % config.metric_period == 0 or t + 1 == config.T:
            records.append(measure(state, suite, t + 1, bits_cum, hp, potential))

    logger.info("finished %s after %d iterations, %d bits", config.algorithm, config.T, bits_cum)
    return RunResult(records=records, final_state=state, bits_total=bits_cum, iterations=config.T)


def _init_storm(
    config: RunConfig,
    suite: ObjectiveSuite,
    state: NetworkState,
    sampler: GraphSampler,
    gradients: GradientStream,
) -> NetworkState:
    mode = config.storm_init_mode
    if mode == "stochastic":
        sample = sampler.sample(0)
        return initialize_momenta(state, sample, gradients.oracle(0)(state.x), config.hp)
    if mode == "zero":
        zeros = np.zeros_like(state.x)
        return NetworkState(x=state.x, lambda_hat=zeros, m_x=zeros.copy(), m_lambda=zeros.copy())
    if isinstance(config.init, PerAgentInit):
        raise EngineError("theoretical storm init needs a consensus init")
    return storm_init(state.x[0], suite, config.hp, mode)

