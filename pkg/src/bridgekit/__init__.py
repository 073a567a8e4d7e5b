"""Diffusion bridge between degraded and clean images with uncertainty-dependent schedules."""

from __future__ import annotations

from .field import PixelField, RngState
from .schedules import DEFAULT_PARAMS, ScheduleParams

__all__ = ["PixelField", "RngState", "ScheduleParams", "DEFAULT_PARAMS"]
__version__ = "0.1.0"
