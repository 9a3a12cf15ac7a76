"""Event-driven asynchronous FSPDA-SA.

Each agent runs a communication thread and a computation thread that share
its buffer B_i, gradient counter g_i and iteration clock t_i. Threads are
simulated by a single-threaded discrete-event loop: computation threads
finish stochastic gradients after random durations, communication threads
stream masked coordinates to one neighbour at a time.

Gossip is transactional. The handshake records both endpoints' state
versions; the catch-up of the lagging endpoint and the buffer fill are
committed only when the stream completes and neither endpoint changed in
the meantime. Otherwise the gossip fails without touching either agent.
"""

from __future__ import annotations

import heapq
import itertools
import json
import logging
import math
import warnings
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Union

import numpy as np

from fspda.algorithms import HyperParams, NetworkState
from fspda.engine import (
    BitsSpec,
    ConsensusInit,
    EngineError,
    GradientStream,
    InitSpec,
    Seeds,
    initial_state,
)
from fspda.graph import GraphError, GraphSampler, SamplerSpec, Topology
from fspda.metrics import MetricsRecord, measure
from fspda.objectives import AdditiveGaussian, NoiseModel, ObjectiveError

if TYPE_CHECKING:
    from fspda.objectives import ObjectiveSuite

logger = logging.getLogger(__name__)


class AsyncRuntimeError(Exception):
    """Raised when the asynchronous run cannot make progress or is misconfigured."""

    def __init__(self, message: str, blocked: frozenset[int] = frozenset()) -> None:
        super().__init__(message)
        self.blocked = blocked


@dataclass(frozen=True)
class AsyncConfig:
    """Configuration of one asynchronous run.

    Durations are exponential with the given means. ``gossip_rate`` is the
    rate of gossip rounds; each round draws a graph sample and starts one
    stream per active edge whose endpoints are idle.
    """

    T: int = 100
    hp: HyperParams = field(default_factory=HyperParams)
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    noise: NoiseModel = field(default_factory=AdditiveGaussian)
    init: InitSpec = field(default_factory=ConsensusInit)
    seeds: Seeds = field(default_factory=Seeds)
    bits: BitsSpec = field(default_factory=BitsSpec)
    mean_sg_duration: float = 1.0
    mean_gossip_duration: float = 0.05
    gossip_rate: float = 2.0
    timeout: float = math.inf
    interrupt_on_gossip: bool = False
    max_events: int | None = None
    metric_period: int = 1
    trace_path: Path | None = None

    def validate(self) -> list[str]:
        errors = []
        if self.T < 0:
            errors.append(f"T must be non-negative, got {self.T}")
        for name in ("mean_sg_duration", "mean_gossip_duration", "gossip_rate"):
            if not getattr(self, name) > 0:
                errors.append(f"{name} must be positive, got {getattr(self, name)}")
        if not self.timeout >= 0:
            errors.append(f"timeout must be non-negative, got {self.timeout}")
        if self.metric_period < 1:
            errors.append(f"metric_period must be at least 1, got {self.metric_period}")
        if self.max_events is not None and self.max_events < 1:
            errors.append(f"max_events must be positive, got {self.max_events}")
        return errors


@dataclass(frozen=True)
class GossipMessage:
    """Masked coordinates of the sender's iterate at the sender's clock."""

    sender: int
    clock: int
    indices: tuple[int, ...]
    values: np.ndarray
    complete: bool = True

    def __post_init__(self) -> None:
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise AsyncRuntimeError(f"gossip indices from agent {self.sender} are not strictly increasing")
        if self.complete and len(self.indices) != len(self.values):
            raise AsyncRuntimeError(
                f"complete gossip from agent {self.sender} carries {len(self.values)} values "
                f"for {len(self.indices)} indices"
            )


@dataclass
class AgentRuntime:
    """Mutable state owned by one agent."""

    i: int
    x: np.ndarray
    lambda_hat: np.ndarray
    t: int = 0
    g: int = 0
    buffer: dict[int, GossipMessage] = field(default_factory=dict)
    version: int = 0
    sg_token: int = 0
    comm_busy: bool = False

    def outgoing(self, indices: tuple[int, ...]) -> GossipMessage:
        return GossipMessage(
            sender=self.i, clock=self.t, indices=indices, values=self.x[list(indices)].copy()
        )

    def pending_difference(self) -> np.ndarray:
        """Σ_{j∈B_i} C_ij(x_j - x_i) over the buffered messages."""
        total = np.zeros_like(self.x)
        for message in self.buffer.values():
            idx = list(message.indices)
            total[idx] += message.values - self.x[idx]
        return total

    def catch_up(self, clock: int, hp: HyperParams) -> None:
        """Local non-SG steps up to ``clock``: x -= (clock - t)·η·λ̂."""
        if clock <= self.t:
            return
        self.x = self.x - (clock - self.t) * hp.eta * self.lambda_hat
        self.t = clock
        self.version += 1


@dataclass(frozen=True)
class GossipOutcome:
    status: str
    caught_up: tuple[int, ...] = ()


def comm_thread_step(
    runtime_i: AgentRuntime,
    runtime_j: AgentRuntime,
    indices: tuple[int, ...],
    hp: HyperParams,
    completed: bool = True,
) -> GossipOutcome:
    """Commit one gossip stream between i and j.

    The lagging endpoint first catches up to the leading clock, then both
    buffers receive the peer's masked coordinates.

    Returns:
        "skipped" if either buffer is non-empty, "failed" on timeout or
        interruption (no state change), else "success".
    """
    if runtime_i.buffer or runtime_j.buffer:
        return GossipOutcome("skipped")
    if not completed:
        return GossipOutcome("failed")

    clock = max(runtime_i.t, runtime_j.t)
    caught_up = tuple(r.i for r in (runtime_i, runtime_j) if r.t < clock)
    runtime_i.catch_up(clock, hp)
    runtime_j.catch_up(clock, hp)

    indices = tuple(sorted(indices))
    to_j, to_i = runtime_i.outgoing(indices), runtime_j.outgoing(indices)
    runtime_i.buffer[runtime_j.i] = to_i
    runtime_j.buffer[runtime_i.i] = to_j
    return GossipOutcome("success", caught_up)


def comp_thread_step(runtime: AgentRuntime, gradient: np.ndarray | None, hp: HyperParams) -> str:
    """Apply the computation thread's step once an SG finished (or was skipped).

    Args:
        runtime: The agent.
        gradient: The stochastic gradient just computed at runtime.x, or None
            when no gradient is ready.
        hp: Hyperparameters.

    Returns:
        "local_sg" or "gossip_sg".
    """
    if gradient is not None:
        runtime.g += 1
    if not runtime.buffer:
        weight = runtime.g / (runtime.t + 1) if gradient is not None else 0.0
        step = hp.eta * runtime.lambda_hat
        if gradient is not None:
            step = step + hp.alpha * weight * gradient
        runtime.x = runtime.x - step
        runtime.t += 1
        runtime.version += 1
        return "local_sg"

    target = max(runtime.t, max(m.clock for m in runtime.buffer.values()))
    lag = 1 + target - runtime.t
    diff = runtime.pending_difference()
    x = runtime.x + hp.gamma * diff - lag * hp.eta * runtime.lambda_hat
    if gradient is not None:
        x = x - hp.alpha * (runtime.g / (target + 1)) * gradient
    runtime.x = x
    runtime.lambda_hat = runtime.lambda_hat - hp.beta * diff
    runtime.t = target + 1
    runtime.buffer = {}
    runtime.version += 1
    return "gossip_sg"


def dual_ledger(runtimes: list[AgentRuntime], hp: HyperParams) -> np.ndarray:
    """Σ_i λ̂_i plus the dual increments still waiting in the buffers."""
    total = np.zeros_like(runtimes[0].lambda_hat)
    for r in runtimes:
        total += r.lambda_hat - hp.beta * r.pending_difference()
    return total


# --- Schedules ----------------------------------------------------------------


@dataclass(frozen=True)
class GossipAction:
    i: int
    j: int
    indices: tuple[int, ...] | None = None


@dataclass(frozen=True)
class ComputeAction:
    i: int


Action = Union[GossipAction, ComputeAction]


@dataclass(frozen=True)
class ScriptedSchedule:
    """A fixed interleaving; gossip always completes, gradients are always ready."""

    actions: tuple[Action, ...]

    @classmethod
    def from_tuples(cls, items: list[tuple]) -> ScriptedSchedule:
        actions: list[Action] = []
        for item in items:
            if item[0] == "gossip":
                actions.append(GossipAction(item[1], item[2], item[3] if len(item) > 3 else None))
            elif item[0] == "compute":
                actions.append(ComputeAction(item[1]))
            else:
                raise AsyncRuntimeError(f"unknown scripted action '{item[0]}'")
        return cls(tuple(actions))


@dataclass(frozen=True)
class RandomSchedule:
    """Seeded random event times drawn from the AsyncConfig distributions."""

    seed: int = 0


EventSchedule = Union[ScriptedSchedule, RandomSchedule]


def synchronous_rounds_script(sampler: GraphSampler, T: int) -> ScriptedSchedule:
    """Script that replays T synchronous FSPDA-SA iterations.

    Iteration t gossips over every active edge of sampler.sample(t) with its
    mask, then lets every agent compute. Active edges must form a matching.
    """
    actions: list[Action] = []
    n = sampler.topology.n
    for t in range(T):
        sample = sampler.sample(t)
        if not sample.is_matching():
            raise AsyncRuntimeError(f"sample of iteration {t} is not a matching")
        for (i, j), mask in zip(sample.endpoints, sample.masks):
            actions.append(GossipAction(int(i), int(j), tuple(int(k) for k in np.flatnonzero(mask))))
        actions.extend(ComputeAction(i) for i in range(n))
    return ScriptedSchedule(tuple(actions))


# --- Runner -------------------------------------------------------------------


@dataclass(frozen=True)
class TraceEvent:
    time: float
    agents: tuple[int, ...]
    kind: str
    clocks: tuple[int, ...]

    def to_json(self) -> str:
        return json.dumps(
            {"time": self.time, "agents": list(self.agents), "kind": self.kind, "clocks": list(self.clocks)}
        )


@dataclass
class AsyncResult:
    records: list[MetricsRecord]
    runtimes: list[AgentRuntime]
    events: int
    bits_total: int
    truncated: bool = False

    @property
    def final_state(self) -> NetworkState:
        return _network_state(self.runtimes)


EventCallback = Callable[[TraceEvent, list[AgentRuntime]], None]


def _network_state(runtimes: list[AgentRuntime]) -> NetworkState:
    return NetworkState(
        x=np.stack([r.x for r in runtimes]),
        lambda_hat=np.stack([r.lambda_hat for r in runtimes]),
    )


class _Runner:
    def __init__(
        self,
        config: AsyncConfig,
        suite: ObjectiveSuite,
        topology: Topology,
        on_event: EventCallback | None,
    ) -> None:
        errors = config.validate()
        if errors:
            raise AsyncRuntimeError("; ".join(errors))
        if suite.n != topology.n:
            raise AsyncRuntimeError(f"suite has {suite.n} agents but topology has {topology.n}")
        self.config = config
        self.suite = suite
        self.hp = config.hp
        try:
            state = initial_state(config.init, suite, config.seeds.init)
            self.sampler = GraphSampler(replace(config.sampler, seed=config.seeds.graph), topology, suite.d)
        except (EngineError, GraphError) as e:
            raise AsyncRuntimeError(str(e)) from e
        self.gradients = GradientStream(suite, config.noise, config.seeds.noise)
        self.runtimes = [AgentRuntime(i=i, x=state.x[i].copy(), lambda_hat=state.lambda_hat[i].copy()) for i in range(suite.n)]
        self.on_event = on_event
        self.trace: list[TraceEvent] = []
        self.events = 0
        self.truncated = False
        self.events = 0
        self.bits = 0
        self.next_record = 0
        self.time = 0.0

    @property
    def max_clock(self) -> int:
        return max(r.t for r in self.runtimes)

    def done(self) -> bool:
        return self.max_clock >= self.config.T

    def emit(self, agents: tuple[int, ...], kind: str) -> None:
        event = TraceEvent(self.time, agents, kind, tuple(r.t for r in self.runtimes))
        self.events += 1
        logger.debug("t=%.4f %s %s clocks=%s", event.time, kind, agents, event.clocks)
        if self.config.trace_path is not None:
            self.trace.append(event)
        if self.on_event is not None:
            self.on_event(event, self.runtimes)
        self.record()

    def record(self, final: bool = False) -> None:
        clock = self.max_clock
        if clock >= self.next_record or final:
            if self.records and self.records[-1].t == clock:
                if not final:
                    return
                self.records.pop()
            state = _network_state(self.runtimes)
            self.records.append(measure(state, self.suite, clock, self.bits, self.hp))
            self.next_record = (clock // self.config.metric_period + 1) * self.config.metric_period

    def gradient(self, runtime: AgentRuntime) -> np.ndarray:
        sample, weight = self.gradients.agent_sample(runtime.t, runtime.i)
        try:
            return weight * sample(runtime.x)
        except ObjectiveError as e:
            raise AsyncRuntimeError(f"gradient of agent {runtime.i} failed: {e}") from e

    def gossip(self, i: int, j: int, indices: tuple[int, ...], completed: bool) -> GossipOutcome:
        outcome = comm_thread_step(self.runtimes[i], self.runtimes[j], indices, self.hp, completed)
        if outcome.status == "success":
            self.bits += 2 * len(indices) * self.config.bits.per_coordinate
        return outcome

    def blocked(self) -> frozenset[int]:
        return frozenset(r.i for r in self.runtimes if r.t < self.config.T)

    # Scripted interleaving; a script always runs to its end.

    def run_script(self, schedule: ScriptedSchedule) -> None:
        full = tuple(range(self.suite.d))
        for step, action in enumerate(schedule.actions):
            self.time = float(step)
            if isinstance(action, GossipAction):
                outcome = self.gossip(action.i, action.j, action.indices or full, completed=True)
                self.emit((action.i, action.j), f"gossip_{outcome.status}")
            else:
                runtime = self.runtimes[action.i]
                kind = comp_thread_step(runtime, self.gradient(runtime), self.hp)
                self.emit((action.i,), kind)
        if not self.done():
            raise AsyncRuntimeError(
                f"script ended before any agent reached T={self.config.T}", self.blocked()
            )

    # Random event loop

    def run_random(self, schedule: RandomSchedule) -> None:
        cfg = self.config
        rng = np.random.default_rng(schedule.seed)
        queue: list[tuple[float, int, str, tuple]] = []
        counter = itertools.count()

        def push(delay: float, kind: str, payload: tuple) -> None:
            heapq.heappush(queue, (self.time + delay, next(counter), kind, payload))

        def start_sg(runtime: AgentRuntime) -> None:
            runtime.sg_token += 1
            push(rng.exponential(cfg.mean_sg_duration), "sg_done", (runtime.i, runtime.sg_token))

        for runtime in self.runtimes:
            start_sg(runtime)
        if self.sampler.topology.num_edges:
            push(rng.exponential(1.0 / cfg.gossip_rate), "gossip_round", (0,))

        while not self.done():
            if cfg.max_events is not None and self.events >= cfg.max_events:
                logger.info("event budget of %d reached at max clock %d", cfg.max_events, self.max_clock)
                warnings.warn(
                    f"event budget max_events={cfg.max_events} reached before T={cfg.T} "
                    f"(max clock {self.max_clock})",
                    UserWarning,
                    stacklevel=3,
                )
                self.truncated = True
                return
            if not queue:
                raise AsyncRuntimeError("no eligible event before T", self.blocked())
            self.time, _, kind, payload = heapq.heappop(queue)

            if kind == "sg_done":
                i, token = payload
                runtime = self.runtimes[i]
                if token != runtime.sg_token:
                    continue
                step = comp_thread_step(runtime, self.gradient(runtime), self.hp)
                start_sg(runtime)
                self.emit((i,), step)

            elif kind == "gossip_round":
                (k,) = payload
                sample = self.sampler.sample(k)
                for (i, j), mask in zip(sample.endpoints, sample.masks):
                    ri, rj = self.runtimes[int(i)], self.runtimes[int(j)]
                    if ri.comm_busy or rj.comm_busy or ri.buffer or rj.buffer:
                        self.emit((ri.i, rj.i), "gossip_skipped")
                        continue
                    ri.comm_busy = rj.comm_busy = True
                    duration = rng.exponential(cfg.mean_gossip_duration)
                    timed_out = duration > cfg.timeout
                    indices = tuple(int(c) for c in np.flatnonzero(mask))
                    push(
                        cfg.timeout if timed_out else duration,
                        "gossip_end",
                        (ri.i, rj.i, indices, ri.version, rj.version, timed_out),
                    )
                push(rng.exponential(1.0 / cfg.gossip_rate), "gossip_round", (k + 1,))

            else:
                i, j, indices, version_i, version_j, timed_out = payload
                ri, rj = self.runtimes[i], self.runtimes[j]
                ri.comm_busy = rj.comm_busy = False
                intact = ri.version == version_i and rj.version == version_j
                outcome = self.gossip(i, j, indices, completed=intact and not timed_out)
                for agent in outcome.caught_up:
                    start_sg(self.runtimes[agent])
                if outcome.status == "success" and cfg.interrupt_on_gossip:
                    for runtime in (ri, rj):
                        comp_thread_step(runtime, None, self.hp)
                        start_sg(runtime)
                status = "timeout" if timed_out else outcome.status
                self.emit((i, j), f"gossip_{status}")

    def write_trace(self) -> None:
        path = self.config.trace_path
        if path is None:
            return
        try:
            with open(path, "w", encoding="utf-8") as f:
                for event in self.trace:
                    f.write(event.to_json())
                    f.write("\n")
        except OSError as e:
            raise AsyncRuntimeError(f"cannot write event trace to {path}: {e}") from e


def run_async(
    config: AsyncConfig,
    suite: ObjectiveSuite,
    topology: Topology,
    schedule: EventSchedule,
    on_event: EventCallback | None = None,
) -> AsyncResult:
    """Run asynchronous FSPDA-SA until some agent's clock reaches T.

    Metrics are recorded whenever the largest clock crosses a multiple of
    ``metric_period``, and once at the end.

    Raises:
        AsyncRuntimeError: On deadlock (with the blocked agents) or bad input.
    """
    runner = _Runner(config, suite, topology, on_event)
    logger.info("running async FSPDA-SA to T=%d on %s (n=%d)", config.T, suite.name, suite.n)
    runner.record()
    if isinstance(schedule, ScriptedSchedule):
        runner.run_script(schedule)
    else:
        runner.run_random(schedule)
    runner.record(final=True)
    runner.write_trace()
    logger.info("async run finished after %d events, max clock %d", runner.events, runner.max_clock)
    return AsyncResult(
        records=runner.records,
        runtimes=runner.runtimes,
        events=runner.events,
        bits_total=runner.bits,
        truncated=runner.truncated,
    )
