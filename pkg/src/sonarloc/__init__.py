"""Sonar-inertial underwater localization with degeneracy-aware keyframe windows."""

__version__ = "0.1.0"
