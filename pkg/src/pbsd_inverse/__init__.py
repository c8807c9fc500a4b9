"""Surrogate-based inverse seismic design: loss assessment, SVR surrogates,
explanations and genetic search for low-loss designs."""

__version__ = "0.1.0"
