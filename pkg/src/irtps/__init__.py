"""Photometric stereo with iterative removal of environment inter-reflections."""
import warnings

# numba probes for an old system TBB on import; the warning is irrelevant here
warnings.filterwarnings("ignore", message=".*TBB.*")

__version__ = "0.1.0"

from .core import (AlbedoMap, Dataset, HeightField, LightSet, LoadError, NormalMap,  # noqa: E402
                   Placement, ring_lights)
from .scene import EnvironmentBox, SamplerConfig, Scene  # noqa: E402

__all__ = ["AlbedoMap", "Dataset", "EnvironmentBox", "HeightField", "LightSet", "LoadError",
           "NormalMap", "Placement", "SamplerConfig", "Scene", "ring_lights", "__version__"]
