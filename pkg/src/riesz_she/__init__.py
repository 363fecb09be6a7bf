"""Stochastic heat equation with Riesz-colored noise, coupled across alpha."""

__version__ = "0.1.0"
