"""Granular-terrain hopping toolkit.

Resistive-force ground modeling with a Fourier stress-gradient surface,
a desk-scale DEM bed as the ground-truth oracle, and trajectory-optimized
feedforward plus PD-feedback control of a vertical monopod.
"""

from . import control, dem, gait, ground, hopper, intrusion

__version__ = "0.1.0"

__all__ = ["control", "dem", "gait", "ground", "hopper", "intrusion"]
