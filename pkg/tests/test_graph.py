"""Tests for fspda.graph module."""

import warnings

import numpy as np
import pytest

from fspda.graph import (
    FullGraph,
    GraphError,
    GraphSampler,
    IndependentBernoulli,
    OneEdgeUniform,
    PeriodicLocalUpdate,
    SamplerSpec,
    SpectralError,
    Topology,
    apply_neighborhood_aggregate,
    build_incidence,
    consensus_pseudo_inverse,
    expected_edges_sampler,
    expected_laplacian,
    k_inner,
    k_seminorm_sq,
    laplacian,
    make_topology,
    sample_graph,
    spectral_constants,
)


class TestTopology:
    """Tests for Topology validation and construction."""

    def test_pairs_are_normalized(self):
        """from_pairs stores each edge as (min, max), sorted."""
        topo = Topology.from_pairs(3, [(2, 1), (1, 0)])
        assert topo.edges == ((0, 1), (1, 2))

    def test_disconnected_rejected(self):
        """A disconnected graph is rejected with its components."""
        with pytest.raises(GraphError, match="disconnected"):
            Topology(n=4, edges=((0, 1), (2, 3)))

    def test_self_loop_rejected(self):
        """Self-loops are rejected."""
        with pytest.raises(GraphError, match="self-loop"):
            Topology(n=2, edges=((1, 1),))

    def test_single_agent(self):
        """One agent without edges is a valid topology."""
        topo = make_topology("complete", 1)
        assert topo.n == 1
        assert topo.num_edges == 0


class TestBuildIncidence:
    """Tests for build_incidence."""

    def test_single_edge(self):
        """n=2 with one edge gives the row [+1, -1]."""
        incidence = build_incidence(Topology(n=2, edges=((0, 1),)))
        np.testing.assert_array_equal(incidence.rows, [[1.0, -1.0]])

    def test_ring4_spectrum(self, ring4):
        """Ring n=4 has Laplacian eigenvalues {0, 2, 2, 4}."""
        values = np.linalg.eigvalsh(build_incidence(ring4).gram())
        np.testing.assert_allclose(values, [0, 2, 2, 4], atol=1e-12)

    def test_complete5(self):
        """Complete n=5 gives 5I - 11^T."""
        gram = build_incidence(make_topology("complete", 5)).gram()
        np.testing.assert_allclose(gram, 5 * np.eye(5) - np.ones((5, 5)), atol=1e-12)

    def test_matches_networkx_laplacian(self, ring5):
        """The Gram matrix equals the networkx Laplacian."""
        np.testing.assert_allclose(build_incidence(ring5).gram(), laplacian(ring5))

    def test_orientation_independent(self, ring5):
        """Flipping edge orientations leaves the Gram matrix unchanged."""
        plain = build_incidence(ring5)
        flipped = build_incidence(ring5, flipped=[0, 3])
        assert not np.array_equal(plain.rows, flipped.rows)
        np.testing.assert_allclose(plain.gram(), flipped.gram())

    def test_flip_out_of_range(self, ring4):
        """Flipping a missing edge is an error."""
        with pytest.raises(GraphError, match="cannot flip"):
            build_incidence(ring4, flipped=[7])


class TestSampleGraph:
    """Tests for GraphSampler and sample_graph."""

    def test_one_edge_per_call(self):
        """OneEdgeUniform activates exactly one edge."""
        topo = make_topology("complete", 3)
        sampler = GraphSampler(SamplerSpec(OneEdgeUniform()), topo, 4)
        for t in range(50):
            assert sampler.sample(t).edges.size == 1

    def test_full_mask(self, ring4):
        """Sparsity 1 transmits every coordinate."""
        sample = sample_graph(SamplerSpec(FullGraph(), sparsity=1.0), ring4, 6, t=3)
        assert sample.masks.all()
        assert sample.transmitted_coords == 4 * 6

    def test_mask_size(self):
        """Each active edge carries ceil(s*d) coordinates."""
        assert SamplerSpec(sparsity=0.5).mask_size(4) == 2
        assert SamplerSpec(sparsity=0.3).mask_size(10) == 3
        assert SamplerSpec(sparsity=0.01).mask_size(10) == 1

    def test_replay(self, ring5):
        """The sample of iteration t does not depend on call order."""
        spec = SamplerSpec(IndependentBernoulli(0.5), sparsity=0.5, seed=11)
        sampler = GraphSampler(spec, ring5, 8)
        late = sampler.sample(40)
        for t in range(40):
            sampler.sample(t)
        again = GraphSampler(spec, ring5, 8).sample(40)
        np.testing.assert_array_equal(late.edges, again.edges)
        np.testing.assert_array_equal(late.masks, again.masks)

    def test_inclusion_rate(self):
        """E[I(ξ)] is (1/|E|)·s per (edge, coordinate) for one-edge sampling."""
        topo = make_topology("complete", 3)
        sampler = GraphSampler(SamplerSpec(OneEdgeUniform(), sparsity=0.5, seed=3), topo, 4)
        draws = 20_000
        counts = np.zeros((3, 4))
        for t in range(draws):
            counts += sampler.sample(t).selection_matrix(3)
        rate = counts / draws
        stderr = np.sqrt((1 / 6) * (5 / 6) / draws)
        assert np.all(np.abs(rate - 1 / 6) < 4 * stderr)

    def test_periodic_law(self, ring4):
        """PeriodicLocalUpdate communicates only on every period-th iteration."""
        sampler = GraphSampler(SamplerSpec(PeriodicLocalUpdate(3)), ring4, 2)
        active = [not sampler.sample(t).is_empty for t in range(6)]
        assert active == [False, False, True, False, False, True]

    def test_invalid_sparsity(self):
        """Sparsity outside (0, 1] is rejected."""
        with pytest.raises(GraphError, match="sparsity"):
            SamplerSpec(sparsity=0.0)


class TestApplyNeighborhoodAggregate:
    """Tests for apply_neighborhood_aggregate."""

    def test_empty_sample(self, sample_factory):
        """No active edges gives all zeros."""
        out = apply_neighborhood_aggregate(sample_factory([], 2), np.ones((3, 2)))
        np.testing.assert_array_equal(out, np.zeros((3, 2)))

    def test_two_agents(self, sample_factory):
        """x_0=(1,1), x_1=(3,3) gives (2,2) and (-2,-2)."""
        x = np.array([[1.0, 1.0], [3.0, 3.0]])
        out = apply_neighborhood_aggregate(sample_factory([(0, 1)], 2), x)
        np.testing.assert_array_equal(out, [[2.0, 2.0], [-2.0, -2.0]])

    def test_path_matches_dense(self, sample_factory, path3):
        """Path 0-1-2 with x=(0,1,5) gives (1, 3, -4) = -Ã^TÃx."""
        x = np.array([[0.0], [1.0], [5.0]])
        out = apply_neighborhood_aggregate(sample_factory([(0, 1), (1, 2)], 1), x)
        np.testing.assert_array_equal(out.ravel(), [1.0, 3.0, -4.0])
        dense = -build_incidence(path3).gram() @ x
        np.testing.assert_allclose(out, dense)

    def test_masked_coordinates(self, sample_factory):
        """Only masked coordinates move."""
        x = np.array([[0.0, 0.0], [2.0, 4.0]])
        out = apply_neighborhood_aggregate(sample_factory([(0, 1)], 2, masks=[[False, True]]), x)
        np.testing.assert_array_equal(out, [[0.0, 4.0], [0.0, -4.0]])

    def test_dimension_mismatch(self, sample_factory):
        """A dimension mismatch is an error."""
        with pytest.raises(GraphError, match="dimension mismatch"):
            apply_neighborhood_aggregate(sample_factory([(0, 1)], 3), np.zeros((2, 2)))


class TestExpectedLaplacian:
    """Tests for expected_laplacian."""

    def test_full_graph_is_laplacian(self, ring5):
        """FullGraph with s=1 gives the graph Laplacian."""
        block = expected_laplacian(SamplerSpec(FullGraph()), build_incidence(ring5), 3)
        np.testing.assert_allclose(block, laplacian(ring5))

    def test_one_edge_on_triangle(self):
        """One-edge sampling on K_3 gives Laplacian/3."""
        topo = make_topology("complete", 3)
        block = expected_laplacian(SamplerSpec(OneEdgeUniform()), build_incidence(topo), 1)
        np.testing.assert_allclose(block, laplacian(topo) / 3)

    def test_bernoulli_single_edge(self):
        """p=0.5 on one edge gives 0.5·[[1,-1],[-1,1]]."""
        topo = Topology(n=2, edges=((0, 1),))
        block = expected_laplacian(SamplerSpec(IndependentBernoulli(0.5)), build_incidence(topo), 1)
        np.testing.assert_allclose(block, 0.5 * np.array([[1.0, -1.0], [-1.0, 1.0]]))

    def test_sparsity_scales(self, ring4):
        """Coordinate sparsity scales the expectation by |mask|/d."""
        incidence = build_incidence(ring4)
        dense = expected_laplacian(SamplerSpec(FullGraph()), incidence, 4)
        sparse = expected_laplacian(SamplerSpec(FullGraph(), sparsity=0.5), incidence, 4)
        np.testing.assert_allclose(sparse, 0.5 * dense)


class TestSpectralConstants:
    """Tests for spectral_constants."""

    def test_ring4_full_graph(self, ring4):
        """Ring n=4 with FullGraph: ρ = ρ̄ = (2, 4) and σ_A² = 0."""
        report = spectral_constants(SamplerSpec(FullGraph()), build_incidence(ring4))
        assert report.rho_min == pytest.approx(2.0)
        assert report.rho_max == pytest.approx(4.0)
        assert report.rho_bar_min == pytest.approx(2.0)
        assert report.rho_bar_max == pytest.approx(4.0)
        assert report.sigma_A_sq == pytest.approx(0.0, abs=1e-12)

    def test_complete5_full_graph(self):
        """Complete n=5 with FullGraph: ρ_min = ρ_max = 5."""
        report = spectral_constants(SamplerSpec(FullGraph()), build_incidence(make_topology("complete", 5)))
        assert report.rho_min == pytest.approx(5.0)
        assert report.rho_max == pytest.approx(5.0)

    def test_one_edge_ring4_exact(self, ring4):
        """One-edge sampling on the 4-ring has σ_A² = max(λ/2 - λ²/16) = 1."""
        report = spectral_constants(SamplerSpec(OneEdgeUniform()), build_incidence(ring4))
        assert report.sigma_A_sq == pytest.approx(1.0)
        assert report.rho_min == pytest.approx(0.5)
        assert report.rho_max == pytest.approx(1.0)

    def test_exact_matches_monte_carlo(self, ring4):
        """Exact enumeration and Monte Carlo (N=10^5) agree within 1%."""
        spec = SamplerSpec(OneEdgeUniform(), seed=5)
        incidence = build_incidence(ring4)
        exact = spectral_constants(spec, incidence, mode="exact")
        estimate = spectral_constants(spec, incidence, mode="monte_carlo", num_samples=100_000)
        assert estimate.sigma_A_sq == pytest.approx(exact.sigma_A_sq, rel=0.01)
        assert estimate.num_samples == 100_000

    def test_gamma_bound_contracts_k_seminorm(self, ring5):
        """At γ = ρ_min/ρ_max², I - γA^T R A shrinks ‖x‖_K² by at least 1 - γρ_min."""
        d = 4
        spec = SamplerSpec(OneEdgeUniform(), sparsity=0.5)
        incidence = build_incidence(ring5)
        report = spectral_constants(spec, incidence, d=d)
        gamma = report.gamma_bound
        assert gamma == pytest.approx(report.rho_min / report.rho_max**2)
        block = expected_laplacian(spec, incidence, d)
        step = np.eye(ring5.n) - gamma * block
        factor = 1.0 - gamma * report.rho_min
        rng = np.random.default_rng(21)
        for _ in range(100):
            x = rng.normal(size=(ring5.n, d))
            assert k_seminorm_sq(step @ x) <= factor * k_seminorm_sq(x) * (1 + 1e-12)

    def test_bernoulli_with_sparsity(self, path3):
        """Independent edges with masks enumerate edge and coordinate outcomes."""
        spec = SamplerSpec(IndependentBernoulli(0.5), sparsity=0.5)
        report = spectral_constants(spec, build_incidence(path3), d=2)
        assert report.sigma_A_sq > 0
        assert report.rho_min == pytest.approx(0.25)

    def test_orientation_independent(self, ring4):
        """σ_A² does not depend on edge orientation."""
        spec = SamplerSpec(IndependentBernoulli(0.4))
        plain = spectral_constants(spec, build_incidence(ring4))
        flipped = spectral_constants(spec, build_incidence(ring4, flipped=[1, 2]))
        assert plain.sigma_A_sq == pytest.approx(flipped.sigma_A_sq)

    def test_cap_exceeded(self):
        """Exceeding the enumeration cap raises SpectralError."""
        incidence = build_incidence(make_topology("complete", 6))
        with pytest.raises(SpectralError, match="monte_carlo"):
            spectral_constants(SamplerSpec(IndependentBernoulli(0.5)), incidence, cap=1000)

    def test_periodic_warns(self, ring4):
        """Period-averaged constants emit a UserWarning."""
        with pytest.warns(UserWarning, match="period-averaged"):
            report = spectral_constants(SamplerSpec(PeriodicLocalUpdate(2)), build_incidence(ring4))
        assert report.period_averaged
        assert report.rho_max == pytest.approx(2.0)

    def test_single_agent_rejected(self):
        """Fewer than two agents is an error."""
        with pytest.raises(GraphError, match="two agents"):
            spectral_constants(SamplerSpec(FullGraph()), build_incidence(make_topology("complete", 1)))

    def test_format(self, ring4):
        """format() lists every constant."""
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            text = spectral_constants(SamplerSpec(FullGraph()), build_incidence(ring4)).format()
        assert "rho_min:      2" in text
        assert "sigma_A_sq" in text


class TestConsensusPseudoInverse:
    """Tests for consensus_pseudo_inverse."""

    def test_inverts_on_range_of_k(self, ring5):
        """Q·L = K for the graph Laplacian."""
        block = laplacian(ring5)
        q = consensus_pseudo_inverse(block)
        k = np.eye(5) - np.ones((5, 5)) / 5
        np.testing.assert_allclose(q @ block, k, atol=1e-12)
        np.testing.assert_allclose(block @ q, k, atol=1e-12)

    def test_rejects_non_laplacian(self):
        """A block that does not annihilate 1 is rejected."""
        with pytest.raises(GraphError, match="consensus direction"):
            consensus_pseudo_inverse(np.eye(3))


class TestKSeminorm:
    """Tests for k_seminorm_sq and k_inner."""

    def test_consensus_is_zero(self):
        """Identical rows give zero."""
        assert k_seminorm_sq(np.tile([1.0, -2.0], (4, 1))) == 0.0

    def test_two_agents(self):
        """x=(0, 2) gives 2."""
        assert k_seminorm_sq(np.array([[0.0], [2.0]])) == pytest.approx(2.0)

    def test_matches_dense_projector(self):
        """Equals x^T (K ⊗ I) x for random x with n=5, d=3."""
        x = np.random.default_rng(0).normal(size=(5, 3))
        k = np.kron(np.eye(5) - np.ones((5, 5)) / 5, np.eye(3))
        flat = x.ravel()
        assert k_seminorm_sq(x) == pytest.approx(flat @ k @ flat)

    def test_inner_is_symmetric(self):
        """k_inner(x, x) equals k_seminorm_sq(x)."""
        x = np.random.default_rng(1).normal(size=(4, 2))
        assert k_inner(x, x) == pytest.approx(k_seminorm_sq(x))


class TestMakeTopology:
    """Tests for make_topology and edge-list files."""

    def test_star(self):
        """A star on n agents has n-1 edges at agent 0."""
        topo = make_topology("star", 5)
        assert topo.num_edges == 4
        assert all(0 in edge for edge in topo.edges)

    def test_er_connected(self):
        """Erdős–Rényi graphs are redrawn until connected."""
        topo = make_topology("er", 10, p=0.3, seed=4)
        assert topo.validate() == []
        assert make_topology("er", 10, p=0.3, seed=4) == topo

    def test_er_needs_p(self):
        """er without p is an error."""
        with pytest.raises(GraphError, match="edge probability"):
            make_topology("er", 5)

    def test_unknown_kind(self):
        """Unknown kinds are rejected."""
        with pytest.raises(GraphError, match="unknown topology kind"):
            make_topology("torus", 4)

    def test_load_file(self, tmp_path):
        """Edge-list files give the listed topology."""
        path = tmp_path / "triangle.txt"
        path.write_text("# triangle\n3\n0 1\n1 2\n2 0\n", encoding="ascii")
        topo = make_topology("file", path=path)
        assert topo.edges == ((0, 1), (0, 2), (1, 2))

    def test_load_file_malformed(self, tmp_path):
        """Malformed lines name the file and line."""
        path = tmp_path / "bad.txt"
        path.write_text("3\n0 1 2\n", encoding="ascii")
        with pytest.raises(GraphError, match="bad.txt:2"):
            make_topology("file", path=path)


class TestExpectedEdgesSampler:
    """Tests for expected_edges_sampler."""

    def test_rate(self, ring5):
        """k expected edges on 5 edges gives p = k/5."""
        spec = expected_edges_sampler(ring5, 2.0, sparsity=0.5, seed=3)
        np.testing.assert_allclose(spec.edge_law.edge_probabilities(5), 0.4)
        assert spec.sparsity == 0.5

    def test_out_of_range(self, ring5):
        """k above |E| is rejected."""
        with pytest.raises(GraphError, match="expected edge count"):
            expected_edges_sampler(ring5, 6.0)
