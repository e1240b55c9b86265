"""Structured rectangular meshes in planar and lat-lon coordinates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mesh",
    "NeighborRef",
    "PhysicalConstants",
    "EARTH",
    "build_planar_mesh",
    "build_latlon_mesh",
    "min_effective_diameter",
]

LEFT, RIGHT, BOTTOM, TOP = range(4)
EDGE_NAMES = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class PhysicalConstants:
    """Earth parameters (Williamson-suite standard radius)."""

    radius: float = 6.37122e6      # m
    omega: float = 7.292e-5        # s^-1
    gravity: float = 9.81          # m s^-2

    def coriolis(self, theta):
        return 2.0 * self.omega * np.sin(theta)


EARTH = PhysicalConstants()


@dataclass(frozen=True)
class NeighborRef:
    """Neighbor of an element across one edge."""

    kind: str                 # "interior" | "periodic_wrap" | "pole_closed"
    index: tuple | None = None


@dataclass
class Mesh:
    """Uniform rectangular mesh, planar [0,L]^2 or lat-lon sphere.

    Lat-lon meshes cover lambda in [0, 2*pi] and theta in [-pi/2, pi/2];
    x is the longitudinal axis, y the latitudinal one.  The element map
    to the reference square [-1,1]^2 is affine in the mesh coordinates;
    on the sphere the metric is carried by the mass matrices and flux
    definitions, not by this map.
    """

    kind: str                 # "planar" | "latlon"
    nx: int
    ny: int
    x_edges: np.ndarray       # (nx+1,)
    y_edges: np.ndarray       # (ny+1,)
    radius: float | None = None
    periodic_y: bool = field(default=True)

    @property
    def dx(self) -> float:
        return float(self.x_edges[1] - self.x_edges[0])

    @property
    def dy(self) -> float:
        return float(self.y_edges[1] - self.y_edges[0])

    @property
    def determ(self) -> float:
        return self.dx * self.dy / 4.0

    @property
    def bd_det_x(self) -> float:
        return self.dx / 2.0

    @property
    def bd_det_y(self) -> float:
        return self.dy / 2.0

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    def element_bounds(self, i: int, j: int):
        return (
            (float(self.x_edges[i]), float(self.x_edges[i + 1])),
            (float(self.y_edges[j]), float(self.y_edges[j + 1])),
        )

    def neighbor(self, i: int, j: int, edge: int) -> NeighborRef:
        if edge == LEFT:
            if i > 0:
                return NeighborRef("interior", (i - 1, j))
            return NeighborRef("periodic_wrap", (self.nx - 1, j))
        if edge == RIGHT:
            if i < self.nx - 1:
                return NeighborRef("interior", (i + 1, j))
            return NeighborRef("periodic_wrap", (0, j))
        if edge == BOTTOM:
            if j > 0:
                return NeighborRef("interior", (i, j - 1))
            if self.periodic_y:
                return NeighborRef("periodic_wrap", (i, self.ny - 1))
            return NeighborRef("pole_closed")
        if edge == TOP:
            if j < self.ny - 1:
                return NeighborRef("interior", (i, j + 1))
            if self.periodic_y:
                return NeighborRef("periodic_wrap", (i, 0))
            return NeighborRef("pole_closed")
        raise ValueError(f"edge must be one of 0..3, got {edge}")


def build_planar_mesh(nx: int, ny: int, length: float) -> Mesh:
    """Uniform periodic mesh of the square [0, length]^2."""
    if nx < 1 or ny < 1:
        raise ValueError("element counts must be at least 1")
    if length <= 0:
        raise ValueError("domain length must be positive")
    return Mesh(
        kind="planar",
        nx=nx,
        ny=ny,
        x_edges=np.linspace(0.0, length, nx + 1),
        y_edges=np.linspace(0.0, length, ny + 1),
        periodic_y=True,
    )


def build_latlon_mesh(nx: int, ny: int, radius: float = EARTH.radius) -> Mesh:
    """Uniform lat-lon mesh of the full sphere.

    Longitude edges wrap periodically; the latitudinal edges at the poles
    are closed (zero flux, skipped entirely by the solver).
    """
    if nx < 1 or ny < 1:
        raise ValueError("element counts must be at least 1")
    return Mesh(
        kind="latlon",
        nx=nx,
        ny=ny,
        x_edges=np.linspace(0.0, 2.0 * math.pi, nx + 1),
        y_edges=np.linspace(-math.pi / 2.0, math.pi / 2.0, ny + 1),
        radius=float(radius),
        periodic_y=False,
    )


def min_effective_diameter(mesh: Mesh) -> float:
    """Smallest element diameter, in meters for lat-lon meshes.

    On the sphere each element contributes min(R*dtheta, R*cos(theta)*dlambda)
    with cos taken at the theta edge farthest from the equator; for the
    pole rows, where that edge degenerates (cos = 0), the equator-nearest
    edge is used instead so the estimate stays positive.
    """
    if mesh.kind == "planar":
        return min(mesh.dx, mesh.dy)
    R = mesh.radius
    h = math.inf
    for j in range(mesh.ny):
        cb = math.cos(mesh.y_edges[j])
        ct = math.cos(mesh.y_edges[j + 1])
        far = min(cb, ct)
        if far <= 1e-14:
            far = max(cb, ct)
        h = min(h, R * mesh.dy, R * far * mesh.dx)
    return h
