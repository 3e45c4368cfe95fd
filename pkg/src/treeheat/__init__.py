"""Heat kernels and eigenvalue bounds on symmetric metric trees."""

__version__ = "0.1.0"
