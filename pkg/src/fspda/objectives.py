"""Local objectives, stochastic gradient oracles and synthetic problem suites."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Protocol, Union

import numpy as np
from scipy import optimize, special

logger = logging.getLogger(__name__)

DEFAULT_HETEROGENEITY = 10.0
SINGULAR_TOL = 1e-12
ORACLE_GTOL = 1e-10


class ObjectiveError(Exception):
    """Raised when a problem suite or gradient oracle is misconfigured."""


class LocalObjective(Protocol):
    """One agent's loss f_i with full and row-subsampled gradients."""

    num_samples: int
    dim: int

    def value(self, x: np.ndarray) -> float: ...

    def gradient(self, x: np.ndarray) -> np.ndarray: ...

    def batch_gradient(self, x: np.ndarray, rows: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class QuadraticObjective:
    """f(x) = ½‖Bx - c‖², rows of B acting as data samples."""

    B: np.ndarray
    c: np.ndarray

    @property
    def num_samples(self) -> int:
        return self.B.shape[0]

    @property
    def dim(self) -> int:
        return self.B.shape[1]

    def value(self, x: np.ndarray) -> float:
        r = self.B @ x - self.c
        return 0.5 * float(r @ r)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.B.T @ (self.B @ x - self.c)

    def batch_gradient(self, x: np.ndarray, rows: np.ndarray) -> np.ndarray:
        B, c = self.B[rows], self.c[rows]
        return (self.num_samples / len(rows)) * (B.T @ (B @ x - c))

    def hessian(self) -> np.ndarray:
        return self.B.T @ self.B


@dataclass(frozen=True)
class LogisticObjective:
    """Mean logistic loss over a shard plus (l2/2)‖x‖², labels in {-1, +1}."""

    X: np.ndarray
    y: np.ndarray
    l2: float = 0.0

    @property
    def num_samples(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def value(self, x: np.ndarray) -> float:
        margins = self.y * (self.X @ x)
        return float(-np.mean(special.log_expit(margins))) + 0.5 * self.l2 * float(x @ x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self._gradient(x, self.X, self.y)

    def batch_gradient(self, x: np.ndarray, rows: np.ndarray) -> np.ndarray:
        return self._gradient(x, self.X[rows], self.y[rows])

    def hessian(self, x: np.ndarray) -> np.ndarray:
        p = special.expit(self.X @ x)
        weights = p * (1.0 - p)
        return (self.X.T * weights) @ self.X / self.num_samples + self.l2 * np.eye(self.dim)

    def _gradient(self, x: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        residual = -y * special.expit(-y * (X @ x))
        return X.T @ residual / len(y) + self.l2 * x


# --- Noise models -------------------------------------------------------------


@dataclass(frozen=True)
class AdditiveGaussian:
    """Adds N(0, σ²/d) per coordinate, so E‖noise‖² = σ² exactly."""

    sigma: float = 0.0

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ObjectiveError(f"noise sigma must be non-negative, got {self.sigma}")


@dataclass(frozen=True)
class Minibatch:
    """Gradient over a uniformly drawn subset of the agent's samples."""

    batch_size: int

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ObjectiveError(f"batch size must be positive, got {self.batch_size}")


NoiseModel = Union[AdditiveGaussian, Minibatch]


@dataclass(frozen=True)
class AsyncGradientMask:
    """Per-agent participation probabilities 1/b̄_i of the gradient step."""

    participation: tuple[float, ...]

    def __post_init__(self) -> None:
        for i, p in enumerate(self.participation):
            if not 0.0 < p <= 1.0:
                raise ObjectiveError(f"participation of agent {i} must lie in (0, 1], got {p}")

    def scale(self, i: int) -> float:
        """Debiasing scale b̄_i."""
        return 1.0 / self.participation[i]


def sample_async_mask(mask: AsyncGradientMask, i: int, rng: np.random.Generator) -> float:
    """Return the realized multiplier b_i(ξ)·b̄_i (zero or b̄_i)."""
    p = mask.participation[i]
    if p >= 1.0:
        return 1.0
    return mask.scale(i) if rng.random() < p else 0.0


def apply_async_mask(
    mask: AsyncGradientMask, i: int, g: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Return b̄_i·g with probability 1/b̄_i, else zeros."""
    return sample_async_mask(mask, i, rng) * np.asarray(g, dtype=float)


@dataclass(frozen=True)
class GradientSample:
    """A frozen realization ξ_i that can be evaluated at several points."""

    objective: LocalObjective
    rows: np.ndarray | None = None
    offset: np.ndarray | None = None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.rows is None:
            g = self.objective.gradient(x)
        else:
            g = self.objective.batch_gradient(x, self.rows)
        if self.offset is not None:
            g = g + self.offset
        return g


# --- Suites -------------------------------------------------------------------


@dataclass(frozen=True)
class ObjectiveSuite:
    """The n local objectives of one problem with their published constants.

    The global objective is F(x) = (1/n) Σ_i f_i(x).
    """

    name: str
    objectives: tuple[LocalObjective, ...]
    L: float
    L_s: float | None = None
    mu: float | None = None
    f_star: float | None = None
    x_star: np.ndarray | None = None
    hessian: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not self.objectives:
            raise ObjectiveError("suite needs at least one objective")
        dims = {obj.dim for obj in self.objectives}
        if len(dims) != 1:
            raise ObjectiveError(f"all objectives must share one dimension, got {sorted(dims)}")

    @property
    def n(self) -> int:
        return len(self.objectives)

    @property
    def d(self) -> int:
        return self.objectives[0].dim

    def value(self, i: int, x: np.ndarray) -> float:
        return self.objectives[i].value(x)

    def gradient(self, i: int, x: np.ndarray) -> np.ndarray:
        return self.objectives[i].gradient(x)

    def global_value(self, x: np.ndarray) -> float:
        return sum(obj.value(x) for obj in self.objectives) / self.n

    def global_gradient(self, x: np.ndarray) -> np.ndarray:
        return self.gradients_at(x).mean(axis=0)

    def gradients(self, X: np.ndarray) -> np.ndarray:
        """Deterministic ∇f_i(x_i) for stacked (n, d) iterates."""
        self.check_stack(X)
        return np.stack([obj.gradient(x) for obj, x in zip(self.objectives, X)])

    def gradients_at(self, x: np.ndarray) -> np.ndarray:
        """Deterministic ∇f_i(x) for every agent at one common point."""
        return np.stack([obj.gradient(x) for obj in self.objectives])

    def suboptimality(self, x: np.ndarray) -> float | None:
        """F(x) - f⋆, evaluated as a quadratic form when the Hessian is known."""
        if self.hessian is not None and self.x_star is not None:
            e = x - self.x_star
            return 0.5 * float(e @ self.hessian @ e)
        if self.f_star is not None:
            return self.global_value(x) - self.f_star
        return None

    def sigma(self, noise: NoiseModel) -> tuple[float, ...] | None:
        """Exact per-agent σ_i when the noise model determines it."""
        if isinstance(noise, AdditiveGaussian):
            return (noise.sigma,) * self.n
        return None

    def mean_square_smoothness(self, noise: NoiseModel) -> float | None:
        """L_s of the sample gradients under a noise model."""
        if isinstance(noise, AdditiveGaussian):
            return self.L
        return self.L_s

    def check_stack(self, X: np.ndarray) -> None:
        if X.shape != (self.n, self.d):
            raise ObjectiveError(f"expected iterates of shape ({self.n}, {self.d}), got {X.shape}")


def draw_gradient_sample(
    suite: ObjectiveSuite, i: int, noise: NoiseModel, rng: np.random.Generator
) -> GradientSample:
    """Draw agent i's sample ξ_i for one iteration."""
    objective = suite.objectives[i]
    if isinstance(noise, AdditiveGaussian):
        if noise.sigma == 0.0:
            return GradientSample(objective)
        offset = rng.normal(0.0, noise.sigma / math.sqrt(suite.d), size=suite.d)
        return GradientSample(objective, offset=offset)
    if noise.batch_size >= objective.num_samples:
        return GradientSample(objective)
    rows = np.sort(rng.choice(objective.num_samples, size=noise.batch_size, replace=False))
    return GradientSample(objective, rows=rows)


def stochastic_gradient(
    suite: ObjectiveSuite, i: int, x: np.ndarray, noise: NoiseModel, rng: np.random.Generator
) -> np.ndarray:
    """Unbiased stochastic gradient ∇f_i(x; ξ_i)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (suite.d,):
        raise ObjectiveError(f"expected a vector of dimension {suite.d}, got shape {x.shape}")
    return draw_gradient_sample(suite, i, noise, rng)(x)


def estimate_sigma(
    suite: ObjectiveSuite,
    i: int,
    x: np.ndarray,
    noise: NoiseModel,
    rng: np.random.Generator,
    draws: int = 1000,
) -> float:
    """Empirical σ_i at x: sqrt(mean ‖∇f_i(x; ξ) - ∇f_i(x)‖²)."""
    exact = suite.gradient(i, x)
    total = 0.0
    for _ in range(draws):
        diff = stochastic_gradient(suite, i, x, noise, rng) - exact
        total += float(diff @ diff)
    return math.sqrt(total / draws)


def _random_orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(rows, cols)))
    return q * np.sign(np.diag(r))


def make_heterogeneous_quadratic(
    n: int,
    d: int,
    heterogeneity: float = DEFAULT_HETEROGENEITY,
    seed: int = 0,
    rows: int | None = None,
    spectrum: tuple[float, float] = (0.5, 1.5),
) -> ObjectiveSuite:
    """Quadratics f_i(x) = ½‖B_i x - c_i‖² with local minimizers spread by h.

    B_i has singular values drawn from ``spectrum`` between two random
    orthogonal factors; c_i = B_i(center + h·u_i) with Σ_i u_i = 0.

    Raises:
        ObjectiveError: If the aggregate Hessian is singular or the
            published optimum fails the normal-equations self-check.
    """
    if n < 1 or d < 1:
        raise ObjectiveError(f"n and d must be positive, got n={n}, d={d}")
    if heterogeneity < 0:
        raise ObjectiveError(f"heterogeneity must be non-negative, got {heterogeneity}")
    m = d if rows is None else rows
    if m < 1:
        raise ObjectiveError(f"rows must be positive, got {m}")

    rng = np.random.default_rng(seed)
    center = rng.normal(size=d)
    spread = rng.normal(size=(n, d))
    spread -= spread.mean(axis=0)

    objectives = []
    for i in range(n):
        k = min(m, d)
        singular = rng.uniform(*spectrum, size=k)
        left = _random_orthogonal(rng, m, k)
        right = _random_orthogonal(rng, d, k)
        B = (left * singular) @ right.T
        c = B @ (center + heterogeneity * spread[i])
        objectives.append(QuadraticObjective(B=B, c=c))

    hessians = [obj.hessian() for obj in objectives]
    aggregate = sum(hessians) / n
    mu = float(np.linalg.eigvalsh(aggregate).min())
    if mu <= SINGULAR_TOL:
        raise ObjectiveError(f"aggregate Hessian is singular (smallest eigenvalue {mu:.3g})")

    x_star = np.linalg.solve(aggregate, sum(obj.B.T @ obj.c for obj in objectives) / n)
    L = max(float(np.linalg.eigvalsh(h).max()) for h in hessians)
    L_s = max(m * float(np.max(np.sum(obj.B**2, axis=1))) for obj in objectives)
    suite = ObjectiveSuite(
        name="quadratic",
        objectives=tuple(objectives),
        L=L,
        L_s=L_s,
        mu=mu,
        x_star=x_star,
        hessian=aggregate,
    )
    f_star = suite.global_value(x_star)

    stacked_B = np.vstack([obj.B for obj in objectives])
    stacked_c = np.concatenate([obj.c for obj in objectives])
    x_lsq = np.linalg.lstsq(stacked_B, stacked_c, rcond=None)[0]
    f_lsq = suite.global_value(x_lsq)
    if abs(f_star - f_lsq) > 1e-10 * max(1.0, abs(f_star)):
        raise ObjectiveError(f"optimum self-check failed: {f_star!r} vs least squares {f_lsq!r}")

    logger.debug("quadratic suite n=%d d=%d h=%g L=%.4g mu=%.4g", n, d, heterogeneity, L, mu)
    return replace(suite, f_star=f_star)


PARTITIONS = ("label_sorted", "shuffled")


def make_logistic_suite(
    n: int,
    samples_per_agent: int,
    d: int,
    partition: str = "shuffled",
    l2: float = 1e-4,
    seed: int = 0,
    separation: float = 1.0,
) -> ObjectiveSuite:
    """Logistic regression on a two-class Gaussian mixture split across agents.

    ``label_sorted`` hands each agent a contiguous block of the label-sorted
    data; ``shuffled`` deals each class round-robin so every shard has the
    same label mix.
    """
    if samples_per_agent < 1:
        raise ObjectiveError(f"samples_per_agent must be at least 1, got {samples_per_agent}")
    if partition not in PARTITIONS:
        raise ObjectiveError(f"unknown partition '{partition}', expected one of {', '.join(PARTITIONS)}")
    if l2 < 0:
        raise ObjectiveError(f"l2 must be non-negative, got {l2}")

    rng = np.random.default_rng(seed)
    total = n * samples_per_agent
    labels = np.repeat([-1.0, 1.0], [total // 2, total - total // 2])
    direction = rng.normal(size=d)
    direction *= separation / np.linalg.norm(direction)
    features = labels[:, None] * direction + rng.normal(size=(total, d))

    if partition == "label_sorted":
        order = np.arange(total)
    else:
        negatives = rng.permutation(np.flatnonzero(labels < 0))
        positives = rng.permutation(np.flatnonzero(labels > 0))
        order = _deal(negatives, positives, n, samples_per_agent)

    objectives = []
    for i in range(n):
        shard = order[i * samples_per_agent:(i + 1) * samples_per_agent]
        objectives.append(LogisticObjective(X=features[shard], y=labels[shard], l2=l2))

    L = 0.25 * max(
        float(np.linalg.eigvalsh(obj.X.T @ obj.X / obj.num_samples).max()) for obj in objectives
    ) + l2
    L_s = 0.25 * float(np.max(np.sum(features**2, axis=1))) + l2
    suite = ObjectiveSuite(
        name=f"logistic_{partition}",
        objectives=tuple(objectives),
        L=L,
        L_s=L_s,
        mu=l2 if l2 > 0 else None,
    )
    if l2 == 0:
        return suite

    x_star, f_star = _centralized_optimum(suite)
    return replace(suite, f_star=f_star, x_star=x_star)


def _deal(first: np.ndarray, second: np.ndarray, n: int, per_agent: int) -> np.ndarray:
    """Interleave two index pools into n equal shards with balanced mix."""
    shards: list[list[int]] = [[] for _ in range(n)]
    for k, idx in enumerate(np.concatenate([first, second])):
        shards[k % n].append(int(idx))
    return np.concatenate([np.asarray(s[:per_agent]) for s in shards])


def _centralized_optimum(suite: ObjectiveSuite) -> tuple[np.ndarray, float]:
    """Solve min F to gradient norm 1e-10 with a trust-region Newton oracle."""
    objectives = suite.objectives

    def fun(x: np.ndarray) -> tuple[float, np.ndarray]:
        return suite.global_value(x), suite.global_gradient(x)

    def hess(x: np.ndarray) -> np.ndarray:
        return sum(obj.hessian(x) for obj in objectives) / len(objectives)

    result = optimize.minimize(
        fun,
        np.zeros(suite.d),
        jac=True,
        hess=hess,
        method="trust-exact",
        options={"gtol": ORACLE_GTOL, "maxiter": 1000},
    )
    grad_norm = float(np.linalg.norm(suite.global_gradient(result.x)))
    if grad_norm > 1e-8:
        raise ObjectiveError(f"centralized oracle stalled at gradient norm {grad_norm:.3g}")
    return result.x, float(result.fun)
