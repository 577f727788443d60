"""Scribble-conditioned diffusion data augmentation lab."""

from scribblediff._core import *  # noqa: F401,F403
from scribblediff._core import __doc__  # noqa: F401
