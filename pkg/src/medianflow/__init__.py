"""medianflow: pseudo-spectral simulation and verification suite for scalar
transport driven by the 2D stochastic Navier-Stokes equations."""

__version__ = "0.1.0"
