"""fspda-sim - Fully stochastic primal-dual decentralized optimization simulator."""

__version__ = "0.1.0"
