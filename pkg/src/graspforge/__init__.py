"""Grasp dataset tooling: point-cloud kinematics, distance-matrix grasp codec,
quality metrics, force-closure evaluation and dataset filtering."""

__version__ = "0.1.0"
