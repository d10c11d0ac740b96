"""LPM-assisted UAV tracking, link identification and predictive beamforming."""

__version__ = "0.1.0"
