"""Differentiable fixed-depth power-flow solving and line-parameter recovery."""

from ._core import *  # noqa: F401,F403
from ._core import __doc__  # noqa: F401

__version__ = "0.1.0"
