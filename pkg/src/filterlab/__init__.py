"""Filter stability lab: filters, probability metrics and merging experiments."""
from .exceptions import FilterLabError
from .measures import DiscreteMeasure, GaussianMeasure, GaussianNoise
from .metrics import bl_distance_exact, bl_lower_random, bl_upper_partition, tv_convolved, tv_discrete
from .models import DiffusionModel, FiniteHMM, LinearGaussianModel, ObservationPath
from .rng import stream

__version__ = "0.1.0"
