"""Gibbs point process simulation via Poisson-embedding thinning and
disagreement couplings, with geometric functionals and a Monte Carlo harness."""

__version__ = "0.1.0"
