"""tacsim: software twin of a dual-layer magnetic/piezoresistive fingertip.

Submodules map onto the processing chain: ``magnets`` and ``sensor`` model
the physics, ``pipeline`` handles streaming frames, ``estimation`` turns
relative frames into contact wrenches, ``disturbance`` deals with stray
fields, ``grasp`` closes the loop, and ``experiments``/``cli`` drive the
reproducible studies.
"""

from . import (  # noqa: F401
    config,
    disturbance,
    estimation,
    experiments,
    grasp,
    magnets,
    pipeline,
    rotations,
    sensor,
)
from .errors import *  # noqa: F401,F403

__version__ = "0.1.0"
