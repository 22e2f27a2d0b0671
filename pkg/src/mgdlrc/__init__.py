"""Self-play learning of coarse correlated equilibria in tabular Markov games."""

__version__ = "0.1.0"
