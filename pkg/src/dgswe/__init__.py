"""Modal DG solver for conservation laws on planar and lat-lon meshes."""

__version__ = "0.1.0"
