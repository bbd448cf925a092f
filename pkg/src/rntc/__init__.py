"""Residual neural terminal constraint MPC."""
__version__ = "0.1.0"
