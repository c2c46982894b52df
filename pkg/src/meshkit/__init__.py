"""Geometry processing for 3D asset pipelines."""

from .errors import MeshkitError
from .mesh import TriMesh, normalize_mesh, validate_mesh
from .meshio import load_mesh, write_mesh

__version__ = "0.1.0"

__all__ = ["MeshkitError", "TriMesh", "load_mesh", "normalize_mesh", "validate_mesh", "write_mesh", "__version__"]
