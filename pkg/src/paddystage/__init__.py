"""Paddy growth stage classification from 7-band multispectral reflectance."""

from .stages import N_STAGES, STAGES

__version__ = "0.1.0"
__all__ = ["STAGES", "N_STAGES", "__version__"]
