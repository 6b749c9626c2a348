"""Physics-informed neural networks for Boussinesq convection surrogates."""

__version__ = "0.1.0"
