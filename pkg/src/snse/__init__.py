"""P2/P0 finite elements for the stochastic Navier-Stokes equations on the unit square."""

__version__ = "0.1.0"
