"""Regularized stochastic Cahn-Hilliard-Navier-Stokes simulator."""

__version__ = "0.1.0"
