"""Simulated tactile sensing and implicit shape completion on watertight meshes."""

__version__ = "0.1.0"

from .mesh import TriangleMesh, Pose, load_mesh, save_mesh, normalize_mesh, surface_area, sample_surface
from .spatial import closest_point, ray_intersect, signed_distance

__all__ = [
    "TriangleMesh",
    "Pose",
    "load_mesh",
    "save_mesh",
    "normalize_mesh",
    "surface_area",
    "sample_surface",
    "closest_point",
    "ray_intersect",
    "signed_distance",
    "__version__",
]
