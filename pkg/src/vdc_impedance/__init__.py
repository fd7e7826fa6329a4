"""Virtual decomposition control with second-order impedance allocation."""

__version__ = "0.1.0"
