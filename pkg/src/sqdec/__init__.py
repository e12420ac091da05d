"""Superquadric decomposition of point clouds, evaluation, and planning on the result."""
from .decomposer import DecomposeConfig, Decomposition, decompose_object, hierarchical_decompose
from .geometry import PointCloud, Superquadric, implicit_value, radial_distance, sample_surface, surface_mesh
from .lm_refine import LMSettings, refine
from .losses import soft_assign, total_objective
from .metrics import chamfer

__all__ = [
    "DecomposeConfig", "Decomposition", "LMSettings", "PointCloud", "Superquadric",
    "chamfer", "decompose_object", "hierarchical_decompose", "implicit_value",
    "radial_distance", "refine", "sample_surface", "soft_assign", "surface_mesh",
    "total_objective",
]
__version__ = "0.1.0"
