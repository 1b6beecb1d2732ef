"""Closely-spaced-object cutout simulator and classifier benchtop."""

__version__ = "0.1.0"

SINGLE = 0
CSO = 1
LABEL_NAMES = ("SINGLE", "CSO")
