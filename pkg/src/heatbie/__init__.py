"""Space-time boundary integral solver for the heat equation in perforated planar domains."""

__version__ = "0.1.0"
