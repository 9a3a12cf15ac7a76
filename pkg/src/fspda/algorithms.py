"""Update rules of FSPDA-SA, FSPDA-STORM and DSGD, plus their diagnostics.

Every function here is pure: it maps a NetworkState (stacked per-agent
arrays) and this iteration's inputs to a new NetworkState.

Sign convention: the aggregate g_i = Σ_j C_ij(ξ)(x_j - x_i) equals
-[A^T A(ξ) x]_i, the primal step adds γ·g_i and the dual ascent along
A^T A(ξ) x subtracts β·g_i from λ̂_i.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass
from typing import TYPE_CHECKING, Union

import numpy as np

from fspda.graph import (
    GraphError,
    GraphSample,
    apply_neighborhood_aggregate,
    consensus_pseudo_inverse,
    k_inner,
    k_seminorm_sq,
)

if TYPE_CHECKING:
    from fspda.graph import IncidenceMatrix, SpectralReport
    from fspda.objectives import ObjectiveSuite

logger = logging.getLogger(__name__)

DEFAULT_DELTA_1 = 8.0
STORM_INIT_MODES = ("theoretical", "zero", "stochastic")

GradientOracle = Callable[[np.ndarray], np.ndarray]


class AlgorithmError(Exception):
    """Raised on invalid hyperparameters, states or step inputs."""


@dataclass(frozen=True)
class HyperParams:
    """Step sizes (α, η, γ, β) and STORM momentum parameters (a_x, a_λ).

    η may be zero, which removes the dual coupling.
    """

    alpha: float = 1e-2
    eta: float = 5e-2
    gamma: float = 0.3
    beta: float = 1.0
    a_x: float = 1.0
    a_lambda: float = 1.0

    def __post_init__(self) -> None:
        errors = self.validate()
        if errors:
            raise AlgorithmError("; ".join(errors))

    def validate(self) -> list[str]:
        errors = []
        for name in ("alpha", "gamma", "beta"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                errors.append(f"{name} must be positive, got {value}")
        if not (self.eta >= 0 and math.isfinite(self.eta)):
            errors.append(f"eta must be non-negative, got {self.eta}")
        for name in ("a_x", "a_lambda"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                errors.append(f"{name} must lie in (0, 1], got {value}")
        return errors


# --- Schedules ----------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    """Unit multiplier at every iteration."""

    name = "constant"


@dataclass(frozen=True)
class CosineWithWarmup:
    """Linear warmup over a fraction of T, then cosine decay to zero at T."""

    warmup: float
    total: int
    name = "cosine"

    def __post_init__(self) -> None:
        if not 0.0 <= self.warmup < 1.0:
            raise AlgorithmError(f"warmup fraction must lie in [0, 1), got {self.warmup}")
        if self.total < 1:
            raise AlgorithmError(f"schedule total must be positive, got {self.total}")


Schedule = Union[Constant, CosineWithWarmup]


def schedule_at(schedule: Schedule, t: int) -> float:
    """Multiplier applied jointly to (α, η) at iteration t."""
    if isinstance(schedule, Constant):
        return 1.0
    peak = schedule.warmup * schedule.total
    if t < peak:
        return t / peak
    if t >= schedule.total:
        return 0.0
    progress = (t - peak) / (schedule.total - peak)
    return 0.5 * (1.0 + math.cos(math.pi * progress))


# --- States -------------------------------------------------------------------


@dataclass(frozen=True)
class AgentState:
    """One agent's primal, transformed dual and STORM momenta."""

    x: np.ndarray
    lambda_hat: np.ndarray
    m_x: np.ndarray | None = None
    m_lambda: np.ndarray | None = None


@dataclass(frozen=True)
class NetworkState:
    """All agents' states stacked as (n, d) arrays."""

    x: np.ndarray
    lambda_hat: np.ndarray
    m_x: np.ndarray | None = None
    m_lambda: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.x.ndim != 2:
            raise AlgorithmError(f"primal iterates must be (n, d), got shape {self.x.shape}")
        for name in ("lambda_hat", "m_x", "m_lambda"):
            value = getattr(self, name)
            if value is not None and value.shape != self.x.shape:
                raise AlgorithmError(
                    f"dimension mismatch: {name} has shape {value.shape}, x has {self.x.shape}"
                )

    @classmethod
    def consensus(cls, x_bar: np.ndarray, n: int) -> NetworkState:
        """Every agent at x̄ with zero dual."""
        x = np.tile(np.asarray(x_bar, dtype=float), (n, 1))
        return cls(x=x, lambda_hat=np.zeros_like(x))

    @classmethod
    def per_agent(cls, rows: np.ndarray) -> NetworkState:
        x = np.array(rows, dtype=float)
        return cls(x=x, lambda_hat=np.zeros_like(x))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def has_momenta(self) -> bool:
        return self.m_x is not None and self.m_lambda is not None

    def mean(self) -> np.ndarray:
        return self.x.mean(axis=0)

    def agent(self, i: int) -> AgentState:
        return AgentState(
            x=self.x[i],
            lambda_hat=self.lambda_hat[i],
            m_x=None if self.m_x is None else self.m_x[i],
            m_lambda=None if self.m_lambda is None else self.m_lambda[i],
        )

    def first_non_finite(self) -> tuple[int, str] | None:
        """Return (agent, field) of the first NaN/Inf entry, if any."""
        for name in ("x", "lambda_hat", "m_x", "m_lambda"):
            value = getattr(self, name)
            if value is None:
                continue
            bad = np.flatnonzero(~np.all(np.isfinite(value), axis=1))
            if bad.size:
                return int(bad[0]), name
        return None


def _check_inputs(state: NetworkState, sample: GraphSample | None, *arrays: np.ndarray) -> None:
    for array in arrays:
        if array.shape != state.x.shape:
            raise AlgorithmError(
                f"dimension mismatch: expected {state.x.shape}, got {array.shape}"
            )
    if sample is not None and sample.d != state.d:
        raise AlgorithmError(f"dimension mismatch: sample masks d={sample.d}, state d={state.d}")


def _aggregate(sample: GraphSample, x: np.ndarray) -> np.ndarray:
    try:
        return apply_neighborhood_aggregate(sample, x)
    except GraphError as e:
        raise AlgorithmError(str(e)) from e


# --- Steps --------------------------------------------------------------------


def fspda_sa_step(
    state: NetworkState,
    sample: GraphSample,
    sgrads: np.ndarray,
    hp: HyperParams,
    scale: float = 1.0,
) -> NetworkState:
    """One FSPDA-SA iteration.

    Args:
        state: Current iterates.
        sample: This iteration's graph sample.
        sgrads: (Possibly masked) stochastic gradients at x^t, shape (n, d).
        hp: Hyperparameters.
        scale: Schedule multiplier applied to α and η.
    """
    sgrads = np.asarray(sgrads, dtype=float)
    _check_inputs(state, sample, sgrads)
    agg = _aggregate(sample, state.x)
    x = state.x - scale * hp.alpha * sgrads - scale * hp.eta * state.lambda_hat + hp.gamma * agg
    lambda_hat = state.lambda_hat - hp.beta * agg
    return NetworkState(x=x, lambda_hat=lambda_hat, m_x=state.m_x, m_lambda=state.m_lambda)


def lagrangian_direction(
    x: np.ndarray,
    lambda_hat: np.ndarray,
    sample: GraphSample,
    grads: np.ndarray,
    hp: HyperParams,
) -> np.ndarray:
    """Primal gradient of the stochastic Lagrangian, normalized by α.

    α times this direction is exactly the FSPDA-SA primal increment.
    """
    agg = _aggregate(sample, x)
    return grads + (hp.eta / hp.alpha) * lambda_hat - (hp.gamma / hp.alpha) * agg


def fspda_storm_step(
    state: NetworkState,
    sample_next: GraphSample,
    grad_oracle: GradientOracle,
    hp: HyperParams,
    scale: float = 1.0,
) -> NetworkState:
    """One FSPDA-STORM iteration.

    Args:
        state: Current iterates with initialized momenta.
        sample_next: The fresh graph sample ξ^{t+1}, used for both the old
            and the new aggregates.
        grad_oracle: Maps stacked (n, d) points to stochastic gradients under
            the single fresh sample ξ^{t+1}; evaluated at x^t and x^{t+1}.
        hp: Hyperparameters.
        scale: Schedule multiplier applied to α and η. The consensus pull
            γ·agg stays unscaled: the share removed from ``scale·α·m_x`` is
            restored from the consensus momentum m_λ.

    Raises:
        AlgorithmError: If the momenta are not initialized or shapes mismatch.
    """
    if not state.has_momenta:
        raise AlgorithmError("FSPDA-STORM momenta are not initialized; call storm_init first")
    _check_inputs(state, sample_next)

    x_next = state.x - scale * hp.alpha * state.m_x
    if scale != 1.0:
        # m_λ estimates -agg, so this adds (1 - scale)·γ·agg back.
        x_next = x_next - (1.0 - scale) * hp.gamma * state.m_lambda
    lambda_next = state.lambda_hat + hp.beta * state.m_lambda

    grads_old = np.asarray(grad_oracle(state.x), dtype=float)
    grads_new = np.asarray(grad_oracle(x_next), dtype=float)
    _check_inputs(state, None, grads_old, grads_new)

    agg_old = _aggregate(sample_next, state.x)
    agg_new = _aggregate(sample_next, x_next)
    ratio_eta, ratio_gamma = hp.eta / hp.alpha, hp.gamma / hp.alpha
    direction_old = grads_old + ratio_eta * state.lambda_hat - ratio_gamma * agg_old
    direction_new = grads_new + ratio_eta * lambda_next - ratio_gamma * agg_new

    m_x = direction_new + (1.0 - hp.a_x) * (state.m_x - direction_old)
    m_lambda = -agg_new + (1.0 - hp.a_lambda) * (state.m_lambda + agg_old)
    return NetworkState(x=x_next, lambda_hat=lambda_next, m_x=m_x, m_lambda=m_lambda)


def initialize_momenta(
    state: NetworkState, sample: GraphSample, grads: np.ndarray, hp: HyperParams
) -> NetworkState:
    """Set the STORM momenta to the plain stochastic directions under ξ⁰."""
    grads = np.asarray(grads, dtype=float)
    _check_inputs(state, sample, grads)
    m_x = lagrangian_direction(state.x, state.lambda_hat, sample, grads, hp)
    m_lambda = -_aggregate(sample, state.x)
    return NetworkState(x=state.x, lambda_hat=state.lambda_hat, m_x=m_x, m_lambda=m_lambda)


def storm_init(
    x_bar0: np.ndarray,
    suite: ObjectiveSuite,
    hp: HyperParams,
    mode: str = "zero",
    initial_gradients: np.ndarray | None = None,
) -> NetworkState:
    """Initial FSPDA-STORM state at consensus x̄⁰.

    Modes:
        theoretical: λ̂_i = (α/η) n⁻¹ (∇F(x̄⁰) - ∇f_i(x̄⁰)), m_x = ∇F(x̄⁰), m_λ = 0.
        zero: λ̂ = m_x = m_λ = 0.
        stochastic: λ̂ = 0, m_x from ``initial_gradients`` (the sample ξ⁰
            at x̄⁰), m_λ = 0. With a_x = a_λ = 1 this makes FSPDA-STORM retrace
            FSPDA-SA driven by the same streams.
    """
    if mode not in STORM_INIT_MODES:
        raise AlgorithmError(f"unknown storm init mode '{mode}', expected one of {', '.join(STORM_INIT_MODES)}")
    state = NetworkState.consensus(x_bar0, suite.n)
    zeros = np.zeros_like(state.x)

    if mode == "zero":
        return NetworkState(x=state.x, lambda_hat=zeros, m_x=zeros.copy(), m_lambda=zeros.copy())

    if mode == "stochastic":
        if initial_gradients is None:
            raise AlgorithmError("stochastic storm init needs the gradients drawn at x̄⁰")
        grads = np.asarray(initial_gradients, dtype=float)
        _check_inputs(state, None, grads)
        return NetworkState(x=state.x, lambda_hat=zeros, m_x=grads.copy(), m_lambda=zeros.copy())

    if hp.eta == 0:
        raise AlgorithmError("theoretical storm init divides by eta; eta must be positive")
    local = suite.gradients_at(np.asarray(x_bar0, dtype=float))
    full = local.mean(axis=0)
    lambda_hat = (hp.alpha / hp.eta) * (full - local) / suite.n
    m_x = np.tile(full, (suite.n, 1))
    return NetworkState(x=state.x, lambda_hat=lambda_hat, m_x=m_x, m_lambda=zeros)


def dsgd_step(
    state: NetworkState,
    sample: GraphSample,
    sgrads: np.ndarray,
    step: float,
    gamma: float,
) -> NetworkState:
    """One DSGD iteration: local SGD step plus sparsified gossip, no dual."""
    sgrads = np.asarray(sgrads, dtype=float)
    _check_inputs(state, sample, sgrads)
    x = state.x - step * sgrads + gamma * _aggregate(sample, state.x)
    return NetworkState(x=x, lambda_hat=state.lambda_hat)


def primal_only_recursion(
    x_t: np.ndarray,
    x_tp1: np.ndarray,
    sample_t: GraphSample,
    sample_tp1: GraphSample,
    grads_t: np.ndarray,
    grads_tp1: np.ndarray,
    hp: HyperParams,
) -> np.ndarray:
    """x^{t+2} of FSPDA-SA written without the dual variable.

    2(I - (γ/2)A^T A(ξ^{t+1}))x^{t+1} - (I - (γ - ηβ)A^T A(ξ^t))x^t
    - α(∇f(x^{t+1}; ξ^{t+1}) - ∇f(x^t; ξ^t)).
    """
    shape = np.shape(x_t)
    for name, array in (("x_tp1", x_tp1), ("grads_t", grads_t), ("grads_tp1", grads_tp1)):
        if np.shape(array) != shape:
            raise AlgorithmError(f"dimension mismatch: {name} has shape {np.shape(array)}, expected {shape}")
    newer = x_tp1 + 0.5 * hp.gamma * _aggregate(sample_tp1, x_tp1)
    older = x_t + (hp.gamma - hp.eta * hp.beta) * _aggregate(sample_t, x_t)
    return 2.0 * newer - older - hp.alpha * (grads_tp1 - grads_t)


# --- Diagnostics --------------------------------------------------------------


def fixed_point_dual(suite: ObjectiveSuite, x_bar: np.ndarray, hp: HyperParams) -> np.ndarray:
    """λ̂ with ηλ̂_i = α(∇F(x̄) - ∇f_i(x̄)), the stationary dual at x̄."""
    if hp.eta == 0:
        raise AlgorithmError("the stationary dual is undefined for eta = 0")
    local = suite.gradients_at(np.asarray(x_bar, dtype=float))
    return (hp.alpha / hp.eta) * (local.mean(axis=0) - local)


def compute_v(
    state: NetworkState,
    suite: ObjectiveSuite,
    hp: HyperParams,
    x_bar: np.ndarray | None = None,
) -> tuple[np.ndarray, float]:
    """Dual-tracking residual v_i = λ̂_i + (α/η)∇f_i(x̄) and ‖v‖_K²."""
    if hp.eta == 0:
        raise AlgorithmError("v is undefined for eta = 0")
    center = state.mean() if x_bar is None else np.asarray(x_bar, dtype=float)
    v = state.lambda_hat + (hp.alpha / hp.eta) * suite.gradients_at(center)
    return v, k_seminorm_sq(v)


def fixed_point_residuals(
    state: NetworkState,
    suite: ObjectiveSuite,
    hp: HyperParams,
    incidence: IncidenceMatrix | None = None,
) -> tuple[float, float]:
    """Return (‖Ax‖², Σ_i ‖ηλ̂_i - α(∇F(x̄) - ∇f_i(x̄))‖²).

    Without an incidence matrix the complete graph is used, for which
    ‖Ax‖² = n‖x‖_K².
    """
    if incidence is None:
        consensus = state.n * k_seminorm_sq(state.x)
    else:
        consensus = float(np.sum((incidence.rows @ state.x) ** 2))
    local = suite.gradients_at(state.mean())
    target = hp.alpha * (local.mean(axis=0) - local)
    dual = float(np.sum((hp.eta * state.lambda_hat - target) ** 2))
    return consensus, dual


@dataclass(frozen=True)
class PotentialWeights:
    a: float
    b: float
    c: float
    d: float


def potential_weights(hp: HyperParams, a: float = 1.0, delta_1: float = DEFAULT_DELTA_1) -> PotentialWeights:
    """Weights b = aη/β, d = δ₁ηa, c = ((ηβ + γ)d - 2ηγa) / (2βb)."""
    if delta_1 < DEFAULT_DELTA_1:
        raise AlgorithmError(f"delta_1 must be at least {DEFAULT_DELTA_1}, got {delta_1}")
    if hp.eta == 0:
        return PotentialWeights(a=a, b=0.0, c=0.0, d=0.0)
    b = a * hp.eta / hp.beta
    d = delta_1 * hp.eta * a
    c = ((hp.eta * hp.beta + hp.gamma) * d - 2 * hp.eta * hp.gamma * a) / (2 * hp.beta * b)
    return PotentialWeights(a=a, b=b, c=c, d=d)


@dataclass(frozen=True)
class PotentialValue:
    total: float
    objective: float
    consensus: float
    dual: float
    cross: float


class Potential:
    """Evaluates F(x̄) + a‖x‖_K² + b‖v‖²_{Q+cK} + d⟨x, v⟩_K.

    Q is the pseudo-inverse of the expected Laplacian block on the range of K;
    it is computed once per instance.
    """

    def __init__(self, weights: PotentialWeights, expected_laplacian: np.ndarray) -> None:
        try:
            self._q = consensus_pseudo_inverse(np.asarray(expected_laplacian, dtype=float))
        except GraphError as e:
            raise AlgorithmError(f"cannot build the potential: {e}") from e
        n = self._q.shape[0]
        self._metric = self._q + weights.c * (np.eye(n) - np.full((n, n), 1.0 / n))
        self.weights = weights

    def __call__(self, state: NetworkState, suite: ObjectiveSuite, hp: HyperParams) -> PotentialValue:
        w = self.weights
        x_bar = state.mean()
        objective = suite.global_value(x_bar)
        consensus = w.a * k_seminorm_sq(state.x)
        if w.b == 0 and w.d == 0:
            dual = cross = 0.0
        else:
            v, _ = compute_v(state, suite, hp, x_bar)
            dual = w.b * float(np.sum(v * (self._metric @ v)))
            cross = w.d * k_inner(state.x, v)
        return PotentialValue(
            total=objective + consensus + dual + cross,
            objective=objective,
            consensus=consensus,
            dual=dual,
            cross=cross,
        )


def compute_potential(
    state: NetworkState,
    suite: ObjectiveSuite,
    hp: HyperParams,
    weights: PotentialWeights,
    expected_laplacian: np.ndarray,
) -> PotentialValue:
    """Evaluate the potential once; see Potential for repeated use."""
    return Potential(weights, expected_laplacian)(state, suite, hp)


@dataclass(frozen=True)
class StepSizeBounds:
    gamma: float
    eta: float
    alpha: float


def stability_bounds(
    report: SpectralReport,
    n: int,
    L: float,
    a: float = 1.0,
    delta_1: float = DEFAULT_DELTA_1,
) -> StepSizeBounds:
    """Step-size limits (γ∞, η∞, α∞) under which the potential descends (β = 1)."""
    gamma = report.rho_min / report.rho_max**2
    if report.sigma_A_sq > 0:
        gamma *= min(1.0, report.rho_max / (2 * report.sigma_A_sq))
    eta = report.rho_min**2 / (64 * delta_1**2 * report.rho_bar_max**2 * report.rho_max**2) * gamma
    alpha = gamma * report.rho_min / (80 * delta_1 * math.sqrt(n)) * min(
        a / L**2,
        eta * report.rho_min,
        math.sqrt(eta * report.rho_min / (L**2 * a)),
    )
    return StepSizeBounds(gamma=gamma, eta=eta, alpha=alpha)
