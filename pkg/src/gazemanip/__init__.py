"""Gaze-driven tabletop manipulation pipeline over a deterministic simulated rig."""

__version__ = "0.1.0"

from .kernels import backend_name

__all__ = ["backend_name", "__version__"]
