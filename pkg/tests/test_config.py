"""Tests for fspda.config module."""

import json
import warnings
from pathlib import Path

import pytest

from fspda.algorithms import CosineWithWarmup, HyperParams
from fspda.config import (
    HYPERPARAMETER_TABLES,
    ConfigError,
    ExperimentConfig,
    PresetInvocation,
    apply_overrides,
    load_config,
    parse_config,
    parse_sampler_spec,
    parse_topology_spec,
    serialize_config,
    warn_if_gamma_unstable,
)
from fspda.engine import PerAgentInit
from fspda.graph import (
    FullGraph,
    IndependentBernoulli,
    OneEdgeUniform,
    PeriodicLocalUpdate,
    build_incidence,
    spectral_constants,
)
from fspda.objectives import Minibatch


def _document(**changes):
    doc = {
        "algorithm": "fspda_sa",
        "T": 100,
        "hyperparams": {"alpha": 0.01, "eta": 0.01, "gamma": 0.5, "beta": 1.0},
        "sampler": {"edge_law": "one_edge", "sparsity": 0.5},
        "topology": {"kind": "ring", "n": 5},
        "problem": {"kind": "quadratic", "params": {"d": 10, "heterogeneity": 10, "seed": 0}},
        "noise": {"kind": "gaussian", "sigma": 1.0},
        "seeds": {"graph": 0, "noise": 1, "init": 2},
        "metric_period": 10,
    }
    doc.update(changes)
    return doc


class TestParseConfig:
    """Tests for parse_config function."""

    def test_defaults(self):
        """An empty document gives the default run on a 4-ring."""
        config = parse_config({})
        assert isinstance(config, ExperimentConfig)
        assert config.run.algorithm == "fspda_sa"
        assert config.topology.kind == "ring"
        assert config.topology.n == 4
        assert config.problem.params == {"d": 10}
        assert config.runtime.kind == "sync"

    def test_full_document(self):
        """Every section is parsed into its spec."""
        config = parse_config(_document())
        assert config.run.T == 100
        assert config.run.hp == HyperParams(alpha=0.01, eta=0.01, gamma=0.5, beta=1.0)
        assert isinstance(config.run.sampler.edge_law, OneEdgeUniform)
        assert config.run.sampler.sparsity == 0.5
        assert config.run.noise.sigma == 1.0
        assert config.topology.build().n == 5

    def test_hyperparameter_table(self):
        """A string selects a named hyperparameter table."""
        config = parse_config(_document(hyperparams="mnist_sa_defaults"))
        assert config.run.hp == HyperParams(alpha=1e-4, eta=1e-5, gamma=0.5, beta=1.0)

    def test_all_tables_valid(self):
        """Every published table is accepted."""
        assert len(HYPERPARAMETER_TABLES) == 12
        for name in HYPERPARAMETER_TABLES:
            assert parse_config(_document(hyperparams=name)).run.hp == HYPERPARAMETER_TABLES[name]

    def test_unknown_table(self):
        """Unknown table names list the available ones."""
        with pytest.raises(ConfigError, match="unknown hyperparameter table"):
            parse_config(_document(hyperparams="fast"))

    def test_invalid_hyperparameter_path(self):
        """A bad step size names its dotted path."""
        doc = _document(hyperparams={"alpha": 0.0})
        with pytest.raises(ConfigError, match="hyperparams.alpha"):
            parse_config(doc)

    def test_unknown_key(self):
        """Unknown keys are rejected with the allowed ones."""
        with pytest.raises(ConfigError, match="sampler.rate: unknown key"):
            parse_config(_document(sampler={"rate": 2}))

    def test_sampler_laws(self):
        """bernoulli, periodic and full laws take their parameters."""
        bern = parse_config(_document(sampler={"edge_law": "bernoulli", "params": {"p": 0.3}}))
        assert bern.run.sampler.edge_law == IndependentBernoulli(0.3)
        per = parse_config(_document(sampler={"edge_law": "periodic", "params": {"period": 4}}))
        assert per.run.sampler.edge_law == PeriodicLocalUpdate(4)
        full = parse_config(_document(sampler={"edge_law": "full"}))
        assert isinstance(full.run.sampler.edge_law, FullGraph)

    def test_bernoulli_needs_p(self):
        """The bernoulli law requires p."""
        with pytest.raises(ConfigError, match="sampler.params.p: required"):
            parse_config(_document(sampler={"edge_law": "bernoulli"}))

    def test_sparsity_range(self):
        """Sparsity must lie in (0, 1]."""
        with pytest.raises(ConfigError, match="sampler.sparsity"):
            parse_config(_document(sampler={"sparsity": 1.5}))
        with pytest.raises(ConfigError, match="sampler.sparsity"):
            parse_config(_document(sampler={"sparsity": 0}))

    def test_cosine_schedule(self):
        """The cosine schedule spans T."""
        config = parse_config(_document(schedule={"kind": "cosine", "warmup": 0.05}))
        assert config.run.schedule == CosineWithWarmup(warmup=0.05, total=100)

    def test_minibatch_noise(self):
        """Minibatch noise takes a batch size."""
        config = parse_config(_document(noise={"kind": "minibatch", "batch_size": 4}))
        assert config.run.noise == Minibatch(4)

    def test_per_agent_init(self):
        """Per-agent rows are kept as tuples."""
        config = parse_config(_document(init={"kind": "per_agent", "rows": [[0, 1], [2, 3]]}))
        assert config.run.init == PerAgentInit(((0.0, 1.0), (2.0, 3.0)))

    def test_quadratic_needs_d(self):
        """Quadratic problems need d."""
        with pytest.raises(ConfigError, match="problem.params.d"):
            parse_config(_document(problem={"kind": "quadratic", "params": {}}))

    def test_er_needs_p(self):
        """er topologies need p."""
        with pytest.raises(ConfigError, match="topology.p"):
            parse_config(_document(topology={"kind": "er", "n": 5}))

    def test_async_only_for_sa(self):
        """The asynchronous runtime rejects other algorithms."""
        doc = _document(algorithm="fspda_storm", runtime={"kind": "async"})
        with pytest.raises(ConfigError, match="only runs fspda_sa"):
            parse_config(doc)

    def test_async_config(self):
        """Runtime options flow into AsyncConfig."""
        doc = _document(runtime={"kind": "async", "timeout": 0.5, "gossip_rate": 3})
        config = parse_config(doc).async_config()
        assert config.timeout == 0.5
        assert config.gossip_rate == 3.0
        assert config.T == 100

    def test_metric_period_warning(self):
        """metric_period above T warns."""
        with pytest.warns(UserWarning, match="metric_period"):
            parse_config(_document(T=5, metric_period=10))

    def test_preset_document(self):
        """A preset key yields a PresetInvocation."""
        config = parse_config({"preset": "rate_sweep", "overrides": {"T": 10}, "seed": 3})
        assert config == PresetInvocation(name="rate_sweep", overrides={"T": 10}, seed=3)

    def test_preset_document_rejects_run_keys(self):
        """Run keys next to a preset are rejected."""
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config({"preset": "rate_sweep", "T": 10})

    def test_booleans_are_not_numbers(self):
        """true is not accepted where a number is expected."""
        with pytest.raises(ConfigError, match="T: expected an integer"):
            parse_config(_document(T=True))


class TestSerializeConfig:
    """Tests for serialize_config."""

    def test_round_trip(self):
        """serialize_config output parses back to an equal config."""
        doc = _document(
            schedule={"kind": "cosine", "warmup": 0.1},
            async_mask={"participation": [1.0, 0.5, 0.5, 1.0, 1.0]},
            dsgd_step=0.01,
            runtime={"kind": "async", "timeout": 2.0},
        )
        config = parse_config(doc)
        again = parse_config(json.loads(json.dumps(serialize_config(config))))
        assert again == config

    def test_default_round_trip(self):
        """The default config survives serialization."""
        config = parse_config({})
        assert parse_config(serialize_config(config)) == config


class TestLoadConfig:
    """Tests for load_config function."""

    def test_load_json(self, tmp_path: Path):
        """load_config parses a JSON document."""
        config_file = tmp_path / "run.json"
        config_file.write_text(json.dumps(_document()))
        config = load_config(config_file)
        assert config.run.T == 100

    def test_load_toml(self, tmp_path: Path):
        """A .toml suffix selects the TOML parser."""
        config_content = """
algorithm = "dsgd"
T = 50
dsgd_step = 0.01

[topology]
kind = "complete"
n = 3

[problem]
kind = "quadratic"
params = { d = 2 }
"""
        config_file = tmp_path / "run.toml"
        config_file.write_text(config_content)
        config = load_config(config_file)
        assert config.run.algorithm == "dsgd"
        assert config.run.dsgd_step == 0.01
        assert config.topology.build().num_edges == 3

    def test_load_config_not_found(self, tmp_path: Path):
        """load_config raises ConfigError when file not found."""
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nonexistent.json")

    def test_load_config_invalid_json(self, tmp_path: Path):
        """load_config raises ConfigError for invalid JSON."""
        config_file = tmp_path / "run.json"
        config_file.write_text("{not json")
        with pytest.raises(ConfigError, match="Invalid JSON"):
            load_config(config_file)

    def test_load_config_invalid_toml(self, tmp_path: Path):
        """load_config raises ConfigError for invalid TOML."""
        config_file = tmp_path / "run.toml"
        config_file.write_text("this is not valid toml [[[")
        with pytest.raises(ConfigError, match="Invalid TOML"):
            load_config(config_file)


class TestApplyOverrides:
    """Tests for apply_overrides."""

    def test_dotted_strings(self):
        """key=value strings are parsed as JSON when possible."""
        doc = apply_overrides(_document(), ["T=500", "hyperparams.alpha=0.5", "noise.kind=minibatch"])
        assert doc["T"] == 500
        assert doc["hyperparams"]["alpha"] == 0.5
        assert doc["noise"]["kind"] == "minibatch"

    def test_does_not_mutate(self):
        """The input document is left untouched."""
        original = _document()
        apply_overrides(original, {"T": 1})
        assert original["T"] == 100

    def test_expands_table_name(self):
        """Overriding one field of a named table keeps the rest of the table."""
        doc = apply_overrides(_document(hyperparams="homo_sa"), {"hyperparams.gamma": 0.25})
        hp = parse_config(doc).run.hp
        assert hp.gamma == 0.25
        assert hp.eta == HYPERPARAMETER_TABLES["homo_sa"].eta

    def test_creates_tables(self):
        """Missing intermediate tables are created."""
        doc = apply_overrides({}, {"runtime.kind": "async"})
        assert doc == {"runtime": {"kind": "async"}}

    def test_malformed(self):
        """Strings without '=' are rejected."""
        with pytest.raises(ConfigError, match="expected key=value"):
            apply_overrides({}, ["T"])

    def test_scalar_in_path(self):
        """A scalar cannot be descended into."""
        with pytest.raises(ConfigError, match="T is not a table"):
            apply_overrides(_document(), {"T.x": 1})


class TestSpecStrings:
    """Tests for parse_topology_spec and parse_sampler_spec."""

    def test_topology(self):
        """kind:n[:p[:seed]] and file:path forms."""
        assert parse_topology_spec("ring:6").build().n == 6
        er = parse_topology_spec("er:10:0.5:3")
        assert (er.kind, er.n, er.p, er.seed) == ("er", 10, 0.5, 3)
        assert parse_topology_spec("file:/tmp/g.txt").path == "/tmp/g.txt"

    def test_topology_errors(self):
        """Unknown kinds and missing counts are rejected."""
        with pytest.raises(ConfigError, match="unknown kind"):
            parse_topology_spec("torus:4")
        with pytest.raises(ConfigError, match="expected ring"):
            parse_topology_spec("ring")

    def test_sampler(self):
        """law[:param][:sparsity] forms."""
        one = parse_sampler_spec("one_edge:0.5")
        assert isinstance(one.edge_law, OneEdgeUniform) and one.sparsity == 0.5
        bern = parse_sampler_spec("bernoulli:0.3:0.5")
        assert bern.edge_law == IndependentBernoulli(0.3) and bern.sparsity == 0.5
        assert parse_sampler_spec("periodic:4").edge_law == PeriodicLocalUpdate(4)
        assert parse_sampler_spec("full").sparsity == 1.0

    def test_sampler_errors(self):
        """Missing or extra parameters are rejected."""
        with pytest.raises(ConfigError, match="needs a parameter"):
            parse_sampler_spec("bernoulli")
        with pytest.raises(ConfigError, match="too many parameters"):
            parse_sampler_spec("one_edge:0.5:0.5")


class TestWarnIfGammaUnstable:
    """Tests for warn_if_gamma_unstable."""

    def test_warns_above_bound(self):
        """γ above ρ_min/ρ_max² warns."""
        config = parse_config(_document(sampler={"edge_law": "full"}, hyperparams={"gamma": 0.5}))
        topology = config.topology.build()
        with pytest.warns(UserWarning, match="exceeds the spectral bound"):
            warn_if_gamma_unstable(config, topology, 10)

    def test_silent_below_bound(self):
        """A small γ is accepted silently."""
        config = parse_config(_document(sampler={"edge_law": "full"}, hyperparams={"gamma": 0.05}))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            warn_if_gamma_unstable(config, config.topology.build(), 10)

    def test_bound_matches_spectral_report(self):
        """The threshold is spectral_constants(...).gamma_bound for the configured sampler."""
        config = parse_config(_document())
        topology = config.topology.build()
        bound = spectral_constants(config.run.sampler, build_incidence(topology), d=10).gamma_bound
        hp = {"alpha": 0.01, "eta": 0.01, "beta": 1.0}
        above = parse_config(_document(hyperparams={**hp, "gamma": bound * 1.01}))
        with pytest.warns(UserWarning, match="exceeds the spectral bound"):
            warn_if_gamma_unstable(above, topology, 10)
        below = parse_config(_document(hyperparams={**hp, "gamma": bound * 0.99}))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            warn_if_gamma_unstable(below, topology, 10)

    def test_large_bernoulli_falls_back(self):
        """Above the enumeration cap the check still runs, without raising."""
        doc = _document(
            sampler={"edge_law": "bernoulli", "params": {"p": 0.5}},
            topology={"kind": "ring", "n": 16},
            hyperparams={"gamma": 50.0},
        )
        config = parse_config(doc)
        with pytest.warns(UserWarning, match="exceeds the spectral bound"):
            warn_if_gamma_unstable(config, config.topology.build(), 10)

    def test_periodic_caveat_is_not_repeated(self):
        """The periodic-law caveat of spectral_constants stays internal."""
        doc = _document(sampler={"edge_law": "periodic", "params": {"period": 3}}, hyperparams={"gamma": 0.01})
        config = parse_config(doc)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            warn_if_gamma_unstable(config, config.topology.build(), 10)
