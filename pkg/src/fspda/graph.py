"""Static topologies, random sparsified graph samples and spectral constants."""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Union

import networkx as nx
import numpy as np

if TYPE_CHECKING:
    from collections.abc import Iterable, Iterator

logger = logging.getLogger(__name__)

DEFAULT_ENUMERATION_CAP = 2**20
DEFAULT_MONTE_CARLO_SAMPLES = 100_000
MAX_ER_DRAWS = 1000

# Stream tags mixed into the seed sequence next to (seed, t).
_EDGE_STREAM = 0
_MASK_STREAM = 1

_EIG_TOL = 1e-10


class GraphError(Exception):
    """Raised when a topology, sample or spectral computation is invalid."""


class SpectralError(GraphError):
    """Raised when exact enumeration of graph outcomes exceeds the cap."""


@dataclass(frozen=True)
class Topology:
    """Static undirected connected graph over agents 0..n-1.

    Edge ids are positions in ``edges``; every pair is stored as (i, j) with i < j.
    """

    n: int
    edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "edges", tuple((int(i), int(j)) for i, j in self.edges))
        errors = self.validate()
        if errors:
            raise GraphError("Invalid topology: " + "; ".join(errors))

    @classmethod
    def from_pairs(cls, n: int, pairs: Iterable[tuple[int, int]]) -> Topology:
        """Build a topology from unordered pairs, normalized and sorted."""
        normalized = sorted({(min(i, j), max(i, j)) for i, j in pairs})
        return cls(n=n, edges=tuple(normalized))

    @classmethod
    def from_networkx(cls, graph: nx.Graph) -> Topology:
        """Build a topology from a networkx graph with nodes 0..n-1."""
        n = graph.number_of_nodes()
        if sorted(graph.nodes) != list(range(n)):
            raise GraphError("networkx graph nodes must be labelled 0..n-1")
        return cls.from_pairs(n, graph.edges)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def validate(self) -> list[str]:
        """Return a list of problems with this topology (empty if valid)."""
        errors: list[str] = []
        if self.n < 1:
            errors.append(f"n must be positive, got {self.n}")
            return errors

        seen: set[tuple[int, int]] = set()
        for e, (i, j) in enumerate(self.edges):
            if i == j:
                errors.append(f"edge {e} ({i}, {j}) is a self-loop")
            elif not 0 <= i < j < self.n:
                errors.append(f"edge {e} ({i}, {j}) must satisfy 0 <= i < j < {self.n}")
            elif (i, j) in seen:
                errors.append(f"edge {e} ({i}, {j}) is a duplicate")
            seen.add((i, j))

        if not errors:
            components = list(nx.connected_components(self.to_networkx()))
            if len(components) > 1:
                listed = ", ".join(str(sorted(c)) for c in components)
                errors.append(f"graph is disconnected, components: {listed}")
        return errors

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n))
        graph.add_edges_from(self.edges)
        return graph


@dataclass(frozen=True)
class IncidenceMatrix:
    """Signed edge-by-agent incidence matrix.

    Row e for edge (i, j) carries +1 at column i and -1 at column j. The
    per-agent dimension d is never expanded; every operator acts per coordinate.
    """

    topology: Topology
    rows: np.ndarray

    @property
    def num_edges(self) -> int:
        return self.rows.shape[0]

    @property
    def n(self) -> int:
        return self.rows.shape[1]

    def gram(self, weights: np.ndarray | None = None) -> np.ndarray:
        """Return Ã^T diag(weights) Ã (the Laplacian when weights are all one)."""
        if weights is None:
            return self.rows.T @ self.rows
        return self.rows.T @ (np.asarray(weights, dtype=float)[:, None] * self.rows)

    def edge_laplacians(self) -> np.ndarray:
        """Return the (|E|, n, n) stack of rank-one edge Laplacians a_e a_e^T."""
        return np.einsum("ea,eb->eab", self.rows, self.rows)


def build_incidence(topology: Topology, flipped: Iterable[int] = ()) -> IncidenceMatrix:
    """Build the incidence matrix of a topology.

    Args:
        topology: A validated topology.
        flipped: Edge ids whose orientation is reversed. Every downstream
            quantity is orientation independent, so this only exists to check that.

    Returns:
        The incidence matrix with +1 at the smaller agent index of each edge.
    """
    rows = np.zeros((topology.num_edges, topology.n))
    for e, (i, j) in enumerate(topology.edges):
        rows[e, i] = 1.0
        rows[e, j] = -1.0
    for e in flipped:
        if not 0 <= e < topology.num_edges:
            raise GraphError(f"cannot flip edge {e}: topology has {topology.num_edges} edges")
        rows[e] *= -1.0
    rows.setflags(write=False)
    return IncidenceMatrix(topology=topology, rows=rows)


def laplacian(topology: Topology) -> np.ndarray:
    """Return the graph Laplacian (degree minus adjacency)."""
    graph = topology.to_networkx()
    return nx.laplacian_matrix(graph, nodelist=range(topology.n)).toarray().astype(float)


# --- Samplers ---------------------------------------------------------------


@dataclass(frozen=True)
class OneEdgeUniform:
    """Exactly one edge, chosen uniformly, per iteration."""

    name = "one_edge"

    def edge_probabilities(self, num_edges: int) -> np.ndarray:
        return np.full(num_edges, 1.0 / num_edges) if num_edges else np.zeros(0)


@dataclass(frozen=True)
class IndependentBernoulli:
    """Each edge is active independently with its own probability."""

    probabilities: float | tuple[float, ...] = 0.5
    name = "bernoulli"

    def __post_init__(self) -> None:
        probs = np.atleast_1d(np.asarray(self.probabilities, dtype=float))
        if np.any(probs <= 0.0) or np.any(probs > 1.0):
            raise GraphError(f"edge probabilities must lie in (0, 1], got {self.probabilities}")

    def edge_probabilities(self, num_edges: int) -> np.ndarray:
        if isinstance(self.probabilities, tuple):
            if len(self.probabilities) != num_edges:
                raise GraphError(
                    f"bernoulli law has {len(self.probabilities)} probabilities "
                    f"but topology has {num_edges} edges"
                )
            return np.asarray(self.probabilities, dtype=float)
        return np.full(num_edges, float(self.probabilities))


@dataclass(frozen=True)
class FullGraph:
    """Every edge is active at every iteration."""

    name = "full"

    def edge_probabilities(self, num_edges: int) -> np.ndarray:
        return np.ones(num_edges)


@dataclass(frozen=True)
class PeriodicLocalUpdate:
    """Full graph on every period-th iteration, no communication otherwise.

    The communicating iterations are t = P-1, 2P-1, ... so each round of
    P-1 local steps is followed by one exchange.
    """

    period: int = 1
    name = "periodic"

    def __post_init__(self) -> None:
        if self.period < 1:
            raise GraphError(f"period must be a positive integer, got {self.period}")

    def is_active(self, t: int) -> bool:
        return (t + 1) % self.period == 0

    def edge_probabilities(self, num_edges: int) -> np.ndarray:
        return np.full(num_edges, 1.0 / self.period)


EdgeLaw = Union[OneEdgeUniform, IndependentBernoulli, FullGraph, PeriodicLocalUpdate]


@dataclass(frozen=True)
class SamplerSpec:
    """Law of the random subgraph and its coordinate masks."""

    edge_law: EdgeLaw = field(default_factory=OneEdgeUniform)
    sparsity: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.sparsity <= 1.0:
            raise GraphError(f"sparsity must lie in (0, 1], got {self.sparsity}")
        if not 0 <= self.seed < 2**64:
            raise GraphError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def mask_size(self, d: int) -> int:
        """Number of coordinates each active edge transmits."""
        # Rounding guards s*d products such as 0.3*10 = 3.0000000000000004.
        return max(1, min(d, math.ceil(round(self.sparsity * d, 9))))

    def selection_rates(self, num_edges: int, d: int) -> np.ndarray:
        """Per-edge diagonal of R = E[I(ξ)], identical for every coordinate."""
        return self.edge_law.edge_probabilities(num_edges) * (self.mask_size(d) / d)

    @property
    def period_averaged(self) -> bool:
        return isinstance(self.edge_law, PeriodicLocalUpdate) and self.edge_law.period > 1


def expected_edges_sampler(
    topology: Topology, k: float, sparsity: float = 1.0, seed: int = 0
) -> SamplerSpec:
    """Independent edge activation with k edges active in expectation."""
    if not 0 < k <= topology.num_edges:
        raise GraphError(f"expected edge count must lie in (0, {topology.num_edges}], got {k}")
    return SamplerSpec(
        edge_law=IndependentBernoulli(k / topology.num_edges), sparsity=sparsity, seed=seed
    )


@dataclass(frozen=True)
class GraphSample:
    """One realization of the random sparsified subgraph at iteration t.

    ``edges`` holds the sorted active edge ids, ``endpoints`` their (i, j)
    pairs and ``masks`` a boolean (len(edges), d) array of transmitted
    coordinates. All arrays are read-only.
    """

    t: int
    edges: np.ndarray
    endpoints: np.ndarray
    masks: np.ndarray

    @property
    def d(self) -> int:
        return self.masks.shape[1]

    @property
    def is_empty(self) -> bool:
        return self.edges.size == 0

    @property
    def active_edges(self) -> frozenset[int]:
        return frozenset(int(e) for e in self.edges)

    @property
    def coord_mask(self) -> dict[int, tuple[int, ...]]:
        return {
            int(e): tuple(int(k) for k in np.flatnonzero(mask))
            for e, mask in zip(self.edges, self.masks)
        }

    @property
    def transmitted_coords(self) -> int:
        """Total mask size over active edges, one direction."""
        return int(self.masks.sum())

    def selection_matrix(self, num_edges: int) -> np.ndarray:
        """Return the diagonal of I(ξ) as a 0/1 (num_edges, d) array."""
        selection = np.zeros((num_edges, self.d))
        selection[self.edges] = self.masks
        return selection

    def is_matching(self) -> bool:
        """Whether no agent is an endpoint of two active edges."""
        flat = self.endpoints.ravel()
        return np.unique(flat).size == flat.size


def counter_rng(seed: int, t: int, *tags: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, t, tags); replayable out of order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, t, *tags])))


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


class GraphSampler:
    """Draws graph samples for one (spec, topology, d) triple.

    Sampling is a pure function of (spec.seed, t): any thread may call
    ``sample`` for any t in any order.
    """

    def __init__(self, spec: SamplerSpec, topology: Topology, d: int) -> None:
        if d < 1:
            raise GraphError(f"dimension must be positive, got {d}")
        self.spec = spec
        self.topology = topology
        self.d = d
        self._k = spec.mask_size(d)
        self._pairs = np.asarray(topology.edges, dtype=np.int64).reshape(-1, 2)
        self._probs = spec.edge_law.edge_probabilities(topology.num_edges)

    def sample(self, t: int) -> GraphSample:
        edges = self._draw_edges(t)
        masks = np.ones((edges.size, self.d), dtype=bool)
        if self._k < self.d:
            masks[:] = False
            for row, e in enumerate(edges):
                rng = counter_rng(self.spec.seed, t, _MASK_STREAM, int(e))
                masks[row, rng.choice(self.d, size=self._k, replace=False)] = True
        return GraphSample(
            t=t,
            edges=_frozen(edges),
            endpoints=_frozen(self._pairs[edges]),
            masks=_frozen(masks),
        )

    def _draw_edges(self, t: int) -> np.ndarray:
        law = self.spec.edge_law
        num_edges = self.topology.num_edges
        if num_edges == 0:
            return np.zeros(0, dtype=np.int64)
        if isinstance(law, FullGraph):
            return np.arange(num_edges)
        if isinstance(law, PeriodicLocalUpdate):
            return np.arange(num_edges) if law.is_active(t) else np.zeros(0, dtype=np.int64)

        rng = counter_rng(self.spec.seed, t, _EDGE_STREAM)
        if isinstance(law, OneEdgeUniform):
            return np.array([rng.integers(num_edges)], dtype=np.int64)
        return np.flatnonzero(rng.random(num_edges) < self._probs)


def sample_graph(spec: SamplerSpec, topology: Topology, d: int, t: int) -> GraphSample:
    """Draw the graph sample of iteration t (deterministic in (spec.seed, t))."""
    return GraphSampler(spec, topology, d).sample(t)


def apply_neighborhood_aggregate(sample: GraphSample, x: np.ndarray) -> np.ndarray:
    """Return, per agent i, Σ_j C_ij(ξ)(x_j - x_i) over i's active edges.

    Args:
        sample: The graph sample.
        x: Stacked per-agent vectors, shape (n, d).

    Returns:
        Array of shape (n, d); zero rows for agents without an active edge.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise GraphError(f"expected stacked (n, d) vectors, got shape {x.shape}")
    if x.shape[1] != sample.d:
        raise GraphError(f"dimension mismatch: vectors have d={x.shape[1]}, masks d={sample.d}")

    out = np.zeros_like(x)
    if sample.is_empty:
        return out
    if sample.endpoints.max() >= x.shape[0]:
        raise GraphError(f"sample references agent {sample.endpoints.max()} but n={x.shape[0]}")

    heads, tails = sample.endpoints[:, 0], sample.endpoints[:, 1]
    diff = np.where(sample.masks, x[tails] - x[heads], 0.0)
    np.add.at(out, heads, diff)
    np.add.at(out, tails, -diff)
    return out


def expected_laplacian(spec: SamplerSpec, incidence: IncidenceMatrix, d: int) -> np.ndarray:
    """Return the per-coordinate n×n block of A^T R A.

    The full operator is this block Kronecker the d×d identity, since the
    coordinate law is exchangeable. Periodic laws use the period average.
    """
    return incidence.gram(spec.selection_rates(incidence.num_edges, d))


# --- Spectral constants -------------------------------------------------------


@dataclass(frozen=True)
class SpectralReport:
    """Spectral and variance constants of a sampler on a topology."""

    rho_min: float
    rho_max: float
    rho_bar_min: float
    rho_bar_max: float
    sigma_A_sq: float
    method: str
    num_samples: int | None = None
    sigma_A_sq_stderr: float | None = None
    period_averaged: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.rho_min <= self.rho_max * (1 + 1e-12):
            raise GraphError(
                f"expected Laplacian must have 0 < rho_min <= rho_max, "
                f"got rho_min={self.rho_min}, rho_max={self.rho_max}"
            )
        if not 0.0 < self.rho_bar_min <= self.rho_bar_max * (1 + 1e-12):
            raise GraphError(
                f"graph Laplacian must have 0 < rho_bar_min <= rho_bar_max, "
                f"got {self.rho_bar_min}, {self.rho_bar_max}"
            )

    @property
    def gamma_bound(self) -> float:
        """Largest γ for which I - γA^T R A contracts the K-seminorm."""
        return self.rho_min / self.rho_max**2

    def to_dict(self) -> dict[str, float | int | str | bool | None]:
        return {
            "rho_min": self.rho_min,
            "rho_max": self.rho_max,
            "rho_bar_min": self.rho_bar_min,
            "rho_bar_max": self.rho_bar_max,
            "sigma_A_sq": self.sigma_A_sq,
            "method": self.method,
            "num_samples": self.num_samples,
            "sigma_A_sq_stderr": self.sigma_A_sq_stderr,
            "period_averaged": self.period_averaged,
        }

    def format(self) -> str:
        """Format the report for terminal display."""
        method = self.method
        if self.num_samples is not None:
            method = f"{method}({self.num_samples})"
        lines = [
            f"method:       {method}",
            f"rho_min:      {self.rho_min:.6g}",
            f"rho_max:      {self.rho_max:.6g}",
            f"rho_bar_min:  {self.rho_bar_min:.6g}",
            f"rho_bar_max:  {self.rho_bar_max:.6g}",
            f"sigma_A_sq:   {self.sigma_A_sq:.6g}",
        ]
        if self.sigma_A_sq_stderr is not None:
            lines.append(f"  stderr:     {self.sigma_A_sq_stderr:.3g}")
        if self.period_averaged:
            lines.append("(period-averaged constants; empty iterations violate the per-step bound)")
        return "\n".join(lines)


def consensus_basis(n: int) -> np.ndarray:
    """Orthonormal basis (n, n-1) of the complement of the consensus direction."""
    centering = np.eye(n) - np.full((n, n), 1.0 / n)
    values, vectors = np.linalg.eigh(centering)
    return vectors[:, values > 0.5]


def _restricted_eigvals(matrix: np.ndarray) -> np.ndarray:
    basis = consensus_basis(matrix.shape[0])
    return np.linalg.eigvalsh(basis.T @ matrix @ basis)


def consensus_pseudo_inverse(block: np.ndarray) -> np.ndarray:
    """Pseudo-inverse of a Laplacian-like block on the range of K.

    Raises:
        GraphError: If the block is not symmetric PSD with the consensus
            direction in its kernel, or is singular on the range of K.
    """
    n = block.shape[0]
    if not np.allclose(block, block.T, atol=1e-12):
        raise GraphError("expected Laplacian is not symmetric")
    if not np.allclose(block @ np.ones(n), 0.0, atol=1e-10):
        raise GraphError("expected Laplacian does not annihilate the consensus direction")
    basis = consensus_basis(n)
    values, vectors = np.linalg.eigh(basis.T @ block @ basis)
    if values.size and values.min() <= _EIG_TOL:
        raise GraphError(
            f"expected Laplacian is singular on the range of K (eigenvalue {values.min():.3g})"
        )
    embedded = basis @ vectors
    return embedded @ np.diag(1.0 / values) @ embedded.T


def _inclusion_outcomes(
    probs: np.ndarray, chunk: int = 4096
) -> tuple[int, Iterator[tuple[np.ndarray, np.ndarray]]]:
    """Enumerate independent per-edge inclusion patterns with their weights.

    Edges included surely or never are fixed, so only the uncertain ones
    contribute to the outcome count.
    """
    uncertain = np.flatnonzero((probs > 0.0) & (probs < 1.0))
    base = (probs >= 1.0).astype(float)
    count = 2 ** uncertain.size

    def generate() -> Iterator[tuple[np.ndarray, np.ndarray]]:
        patterns = itertools.product((0.0, 1.0), repeat=uncertain.size)
        while True:
            block = list(itertools.islice(patterns, chunk))
            if not block:
                return
            bits = np.asarray(block).reshape(len(block), uncertain.size)
            z = np.tile(base, (len(block), 1))
            z[:, uncertain] = bits
            p = probs[uncertain]
            weights = np.prod(np.where(bits > 0, p, 1.0 - p), axis=1)
            yield z, weights

    return count, generate()


def _exact_second_moment(
    spec: SamplerSpec, incidence: IncidenceMatrix, d: int, cap: int
) -> tuple[np.ndarray, int]:
    """E[(A(ξ)^T A)^2] per coordinate by enumeration; returns (moment, outcomes)."""
    law = spec.edge_law
    num_edges = incidence.num_edges
    q = spec.mask_size(d) / d
    edge_laps = incidence.edge_laplacians()

    if isinstance(law, OneEdgeUniform):
        # L_e^2 for a single included edge; the empty outcome adds nothing.
        count = num_edges * (2 if q < 1.0 else 1)
        if count > cap:
            raise SpectralError(_cap_message(count, cap))
        moment = sum(edge_laps[e] @ edge_laps[e] for e in range(num_edges)) * (q / num_edges)
        return np.asarray(moment), count

    if isinstance(law, PeriodicLocalUpdate):
        weight, probs = 1.0 / law.period, np.full(num_edges, q)
        extra = 1 if law.period > 1 else 0
    else:
        weight, probs = 1.0, law.edge_probabilities(num_edges) * q
        extra = 0

    count, outcomes = _inclusion_outcomes(probs)
    count += extra
    if count > cap:
        raise SpectralError(_cap_message(count, cap))

    moment = np.zeros((incidence.n, incidence.n))
    for z, weights in outcomes:
        sampled = np.einsum("ke,eab->kab", z, edge_laps)
        moment += np.einsum("k,kab->ab", weights, sampled @ sampled)
    return weight * moment, count


def _cap_message(count: int, cap: int) -> str:
    return (
        f"exact enumeration needs {count} outcomes, above the cap of {cap}; "
        "use mode='monte_carlo'"
    )


def _monte_carlo_sigma(
    spec: SamplerSpec, incidence: IncidenceMatrix, d: int, num_samples: int, batches: int = 20
) -> tuple[float, float]:
    """Estimate σ_A² from sampled operators; returns (estimate, standard error)."""
    sampler = GraphSampler(spec, incidence.topology, d)
    edge_laps = incidence.edge_laplacians()
    n = incidence.n
    first = np.zeros((batches, n, n))
    second = np.zeros((batches, n, n))
    counts = np.zeros(batches)

    for t in range(num_samples):
        sample = sampler.sample(t)
        b = t % batches
        counts[b] += d
        if sample.is_empty:
            continue
        # One operator per coordinate; coordinates are exchangeable draws.
        per_coord = np.einsum("kc,kab->cab", sample.masks.astype(float), edge_laps[sample.edges])
        first[b] += per_coord.sum(axis=0)
        second[b] += np.einsum("cab,cbd->ad", per_coord, per_coord)

    def estimate(s1: np.ndarray, s2: np.ndarray, m: float) -> float:
        mean = s1 / m
        return max(0.0, float(_restricted_eigvals(s2 / m - mean @ mean).max()))

    total = estimate(first.sum(axis=0), second.sum(axis=0), counts.sum())
    per_batch = np.array([estimate(first[b], second[b], counts[b]) for b in range(batches)])
    stderr = float(per_batch.std(ddof=1) / math.sqrt(batches))
    return total, stderr


def spectral_constants(
    spec: SamplerSpec,
    incidence: IncidenceMatrix,
    d: int = 1,
    mode: str = "exact",
    num_samples: int = DEFAULT_MONTE_CARLO_SAMPLES,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> SpectralReport:
    """Compute ρ_min, ρ_max, ρ̄_min, ρ̄_max and σ_A² for a sampler.

    σ_A² is the largest eigenvalue on the range of K of
    E[(A(ξ)^T A)^2] - (A^T R A)^2. Coordinates are exchangeable, so the
    per-coordinate block determines the whole operator; exact mode enumerates
    the edge and coordinate-inclusion outcomes of that block.

    Args:
        spec: Sampler law.
        incidence: Incidence matrix of the sampler's topology.
        d: Per-agent dimension (sets the coordinate inclusion rate).
        mode: "exact" or "monte_carlo".
        num_samples: Sample count for Monte Carlo.
        cap: Maximum outcome count for exact enumeration.

    Raises:
        SpectralError: If exact enumeration would exceed ``cap``.
        GraphError: For fewer than two agents or an unknown mode.
    """
    if incidence.n < 2:
        raise GraphError("spectral constants need at least two agents")
    if mode not in ("exact", "monte_carlo"):
        raise GraphError(f"unknown spectral mode '{mode}', expected 'exact' or 'monte_carlo'")
    if spec.period_averaged:
        warnings.warn(
            "PeriodicLocalUpdate constants are period-averaged; "
            "empty-graph iterations do not satisfy the per-iteration bound",
            UserWarning,
            stacklevel=2,
        )

    expected = expected_laplacian(spec, incidence, d)
    rho = _restricted_eigvals(expected)
    rho_bar = _restricted_eigvals(incidence.gram())

    if mode == "exact":
        moment, count = _exact_second_moment(spec, incidence, d, cap)
        sigma = max(0.0, float(_restricted_eigvals(moment - expected @ expected).max()))
        logger.debug("exact sigma_A^2=%g over %d outcomes", sigma, count)
        samples, stderr = None, None
    else:
        sigma, stderr = _monte_carlo_sigma(spec, incidence, d, num_samples)
        logger.debug("monte carlo sigma_A^2=%g +- %g (N=%d)", sigma, stderr, num_samples)
        samples = num_samples

    return SpectralReport(
        rho_min=float(rho.min()),
        rho_max=float(rho.max()),
        rho_bar_min=float(rho_bar.min()),
        rho_bar_max=float(rho_bar.max()),
        sigma_A_sq=sigma,
        method=mode,
        num_samples=samples,
        sigma_A_sq_stderr=stderr,
        period_averaged=spec.period_averaged,
    )


def k_seminorm_sq(x: np.ndarray) -> float:
    """Return Σ_i ‖x_i - x̄‖² for stacked (n, d) vectors."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise GraphError(f"expected stacked (n, d) vectors, got shape {x.shape}")
    return float(np.sum((x - x.mean(axis=0)) ** 2))


def k_inner(x: np.ndarray, y: np.ndarray) -> float:
    """Return ⟨x, y⟩_K = Σ_i (x_i - x̄)·(y_i - ȳ)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 2:
        raise GraphError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float(np.sum((x - x.mean(axis=0)) * (y - y.mean(axis=0))))


# --- Topology construction ----------------------------------------------------


TOPOLOGY_KINDS = ("complete", "ring", "path", "star", "er", "file")


def make_topology(
    kind: str,
    n: int | None = None,
    p: float | None = None,
    seed: int | None = None,
    path: Path | str | None = None,
) -> Topology:
    """Build a named topology.

    Args:
        kind: One of complete, ring, path, star, er, file.
        n: Agent count (all kinds except file).
        p: Edge probability for er.
        seed: Seed for er; redrawn deterministically until connected.
        path: Edge-list file for kind file.
    """
    if kind == "file":
        if path is None:
            raise GraphError("topology kind 'file' needs a path")
        return load_topology(path)
    if kind not in TOPOLOGY_KINDS:
        raise GraphError(f"unknown topology kind '{kind}', expected one of {', '.join(TOPOLOGY_KINDS)}")
    if n is None or n < 1:
        raise GraphError(f"topology '{kind}' needs a positive agent count, got {n}")

    if kind == "complete":
        return Topology.from_networkx(nx.complete_graph(n))
    if kind == "ring":
        return Topology.from_networkx(nx.cycle_graph(n) if n >= 3 else nx.path_graph(n))
    if kind == "path":
        return Topology.from_networkx(nx.path_graph(n))
    if kind == "star":
        return Topology.from_networkx(nx.star_graph(n - 1))

    if p is None or not 0.0 < p <= 1.0:
        raise GraphError(f"topology 'er' needs an edge probability in (0, 1], got {p}")
    base = 0 if seed is None else seed
    for attempt in range(MAX_ER_DRAWS):
        graph = nx.erdos_renyi_graph(n, p, seed=base + attempt)
        if nx.is_connected(graph):
            logger.debug("er(%d, %g) connected after %d draws", n, p, attempt + 1)
            return Topology.from_networkx(graph)
    raise GraphError(f"no connected er({n}, {p}) graph in {MAX_ER_DRAWS} draws")


def load_topology(path: Path | str) -> Topology:
    """Load a topology from an edge-list file.

    The first non-comment line is n, then one ``i j`` pair per line.
    ``#`` starts a comment.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except (OSError, UnicodeDecodeError) as e:
        raise GraphError(f"cannot read topology file {path}: {e}") from e

    n: int | None = None
    pairs: list[tuple[int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        try:
            if n is None:
                if len(fields) != 1:
                    raise ValueError("expected the agent count")
                n = int(fields[0])
            else:
                if len(fields) != 2:
                    raise ValueError("expected 'i j'")
                pairs.append((int(fields[0]), int(fields[1])))
        except ValueError as e:
            raise GraphError(f"{path}:{lineno}: malformed line '{raw.strip()}': {e}") from e

    if n is None:
        raise GraphError(f"{path}: missing agent count")
    for i, j in pairs:
        if i == j or not (0 <= i < n and 0 <= j < n):
            raise GraphError(f"{path}: invalid edge ({i}, {j}) for n={n}")
    if len(set((min(i, j), max(i, j)) for i, j in pairs)) != len(pairs):
        raise GraphError(f"{path}: duplicate edges")
    return Topology.from_pairs(n, pairs)
