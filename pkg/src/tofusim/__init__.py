"""Exact MAS spin-dynamics simulation of triple-oscillating-field (TOFU)
homonuclear recoupling, RADAR main/reference experiments and Fresnel-chart
distance readout."""

__version__ = "0.1.0"
