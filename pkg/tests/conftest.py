"""Shared fixtures for the fspda test suite."""

import numpy as np
import pytest

from fspda.algorithms import HyperParams
from fspda.graph import GraphSample, Topology, make_topology
from fspda.objectives import ObjectiveSuite, QuadraticObjective, make_heterogeneous_quadratic


@pytest.fixture
def ring4() -> Topology:
    return make_topology("ring", 4)


@pytest.fixture
def ring5() -> Topology:
    return make_topology("ring", 5)


@pytest.fixture
def path3() -> Topology:
    return make_topology("path", 3)


@pytest.fixture
def quadratic5():
    """n=5, d=10 quadratic with heterogeneity 10."""
    return make_heterogeneous_quadratic(5, 10, heterogeneity=10.0, seed=0)


@pytest.fixture
def quadratic3():
    """n=3, d=2 quadratic with heterogeneity 10."""
    return make_heterogeneous_quadratic(3, 2, heterogeneity=10.0, seed=1)


@pytest.fixture
def homogeneous3() -> ObjectiveSuite:
    """Three agents sharing one quadratic."""
    rng = np.random.default_rng(7)
    objective = QuadraticObjective(B=rng.normal(size=(3, 3)) + 2 * np.eye(3), c=rng.normal(size=3))
    return ObjectiveSuite(name="homogeneous", objectives=(objective,) * 3, L=10.0)


@pytest.fixture
def hp() -> HyperParams:
    return HyperParams(alpha=0.02, eta=0.02, gamma=0.4, beta=1.0)


def make_sample(pairs, d, masks=None, t=0) -> GraphSample:
    """Build a GraphSample by hand; edge ids are the pair positions."""
    endpoints = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if masks is None:
        masks = np.ones((len(endpoints), d), dtype=bool)
    return GraphSample(
        t=t,
        edges=np.arange(len(endpoints), dtype=np.int64),
        endpoints=endpoints,
        masks=np.asarray(masks, dtype=bool).reshape(len(endpoints), d),
    )


@pytest.fixture
def sample_factory():
    return make_sample
