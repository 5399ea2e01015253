"""Vanishing-viscosity study of the half-plane chemotaxis-Navier-Stokes system."""

__version__ = "0.1.0"
