"""Monocular 3D crowd layout reconstruction with a ground-plane crowd
constraint."""

__version__ = "0.1.0"

from .body import SkeletonTemplate, default_template, load_template  # noqa
from .losses import LossWeights  # noqa
from .pipeline import FitConfig, reconstruct  # noqa
