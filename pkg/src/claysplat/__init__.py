"""Differentiable 2D Gaussian splatting with a GGX split-sum reflective branch and a
clay-guided geometry branch."""

__version__ = "0.1.0"
