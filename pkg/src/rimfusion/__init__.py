"""Riemannian localization and IMU fusion for a rigid three-receiver array."""

__version__ = "0.1.0"
