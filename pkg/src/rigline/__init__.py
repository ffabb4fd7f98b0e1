"""rigline: failure/normal classification pipeline for rig sensor data."""

__version__ = "0.1.0"
