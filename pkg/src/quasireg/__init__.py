"""Bayesian learning experiments on quasi-regular statistical models."""
__version__ = "0.1.0"
