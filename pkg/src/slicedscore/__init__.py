"""Sliced score matching toolkit: objectives, models, training, validation."""

__version__ = "0.1.0"

from . import autodiff, models, objectives, score_estimation, training, validation  # noqa: F401
