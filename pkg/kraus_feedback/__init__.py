"""Markovian and Bayesian feedback on quantum channels."""
__version__ = "0.1.0"
