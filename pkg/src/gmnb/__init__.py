"""Gamma Markov negative binomial model for time-course count data."""

__version__ = "0.1.0"
