"""Desk-scale 2D-semantics-assisted training for 3D visual grounding."""

__version__ = "0.1.0"
