"""Curie-Weiss model of a spin measured by two magnets at once."""
from ._accel import backend
from .core import (ApparatusParams, BlochState, FieldFrame, JointField, MagnetGrid,
                   field_frame, init_joint_field, make_grid)

__version__ = "0.1.0"
