"""Schema networks that learn predictive/dual pairs from delayed cause-effect evidence.

Two behavioral scenarios ship with the package: a frog learning to detour
around a wide barrier, and a frog recovering its snap after a hypoglossal
lesion.
"""

__version__ = "0.1.0"
