"""Flux and source definitions for the supported conservation-law systems.

Models are stateless descriptions of the pointwise physics: given nodal
values of the conserved variables they emit the directional fluxes and
sources through element-wise field kernels, plus host-side wavespeed
estimates used for interface stabilization and step-size control.

Directional conventions on the lat-lon sphere (x = longitude lambda,
y = latitude theta), for conserved variables (h, hu, hv) with the
cos(theta) metric carried by the mass matrices:

    F = (1/R) (hu, hu^2 + g h^2/2, huv)
    G = (cos(theta)/R) (hv, huv, hv^2 + g h^2/2)
    S = (0, (f cos + u sin/R) hv, -g h^2 sin/(2R) - (f cos + u sin/R) hu)

with f = 2 Omega sin(theta).  The tan(theta) form of the momentum
sources is avoided entirely; the split above stays regular at the poles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import ExecutionRegion, Field, elementwise, region_values
from .mesh import PhysicalConstants

__all__ = [
    "PositivityError",
    "OpCtx",
    "SphereNodeCoords",
    "AdvectionParams",
    "FluxModel",
    "advection_model",
    "swe_planar_model",
    "swe_sphere_model",
]

X_DIR, Y_DIR = 0, 1


class PositivityError(RuntimeError):
    """Water height reached zero or below at a quadrature point."""


class OpCtx:
    """Execution region bound to a scratch-field pool.

    Lets the models compose element-wise kernels without owning storage;
    scratch fields are keyed by tag so repeated evaluations reuse them.
    """

    __slots__ = ("rgn", "_alloc")

    def __init__(self, rgn: ExecutionRegion, alloc):
        self.rgn = rgn
        self._alloc = alloc

    def scratch(self, tag: str) -> Field:
        """Reusable field with the node set's data_dims, keyed by tag."""
        return self._alloc(tag)

    def ew(self, op: str, a, b, out: Field) -> Field:
        elementwise(op, a, b, out, self.rgn)
        return out


@dataclass(frozen=True)
class SphereNodeCoords:
    """Precomputed metric factors at one set of quadrature nodes."""

    cos_over_r: Field     # cos(theta) / R
    sin_over_r: Field     # sin(theta) / R
    f_cos: Field          # 2 Omega sin(theta) cos(theta)
    theta: np.ndarray     # host copy, broadcastable against nodal arrays


@dataclass(frozen=True)
class AdvectionParams:
    beta: tuple


class FluxModel:
    """Behavioral contract shared by the three systems."""

    n_vars: int
    var_names: tuple
    has_source = False
    is_spherical = False

    def flux(self, ctx: OpCtx, U: dict, coords, outF: dict | None, outG: dict | None) -> None:
        raise NotImplementedError

    def source(self, ctx: OpCtx, U: dict, coords, outS: dict) -> None:
        raise NotImplementedError

    def max_wavespeed(self, U: dict, coords, direction: int) -> float:
        """Largest characteristic speed in grid-coordinate units."""
        return float(np.max(self.wavespeed_nodes(U, coords, direction)))

    def wavespeed_nodes(self, U: dict, coords, direction: int) -> np.ndarray:
        raise NotImplementedError

    def alpha_nodes(self, U: dict, coords, direction: int) -> np.ndarray:
        """Spectral radius of the directional flux Jacobian (Rusanov bound)."""
        return self.wavespeed_nodes(U, coords, direction)

    def max_physical_speed(self, U: dict, coords) -> float:
        """Fastest signal in meters/second (or domain units), for dt control."""
        raise NotImplementedError


class _AdvectionModel(FluxModel):
    n_vars = 1
    var_names = ("u",)

    def __init__(self, beta):
        self.params = AdvectionParams(tuple(float(b) for b in beta))
        if not all(np.isfinite(self.params.beta)):
            raise ValueError("advection velocity must be finite")

    def flux(self, ctx, U, coords, outF, outG):
        b1, b2 = self.params.beta
        if outF is not None:
            ctx.ew("*", U["u"], b1, outF["u"])
        if outG is not None:
            ctx.ew("*", U["u"], b2, outG["u"])

    def wavespeed_nodes(self, U, coords, direction):
        b = self.params.beta[direction]
        return np.full(np.shape(U["u"]), abs(b))

    def max_physical_speed(self, U, coords):
        return max(abs(self.params.beta[0]), abs(self.params.beta[1]))


def advection_model(beta) -> FluxModel:
    """Linear constant-coefficient advection, F = beta1 u, G = beta2 u."""
    return _AdvectionModel(beta)


def _check_positive(ctx: OpCtx, h_field: Field, where: str):
    hmin = float(region_values(h_field, ctx.rgn).min())
    if not hmin > 0.0:
        raise PositivityError(f"non-positive water height ({hmin:.3e}) at {where}")


class _SWEBase(FluxModel):
    n_vars = 3
    var_names = ("h", "hu", "hv")
    has_source = True

    def __init__(self, gravity: float, h_ref: float):
        if gravity <= 0:
            raise ValueError("gravity must be positive")
        self.gravity = float(gravity)
        # velocity-recovery floor; inert for the regimes run here
        self.h_floor = 1e-8 * float(h_ref)

    def _recover_velocities(self, ctx, U):
        """u = hu/h, v = hv/h with the height floored away from zero."""
        hf = ctx.ew("max", U["h"], self.h_floor, ctx.scratch("hf"))
        u = ctx.ew("/", U["hu"], hf, ctx.scratch("u"))
        v = ctx.ew("/", U["hv"], hf, ctx.scratch("v"))
        return u, v

    def _half_g_h2(self, ctx, U):
        h2 = ctx.ew("*", U["h"], U["h"], ctx.scratch("h2"))
        return ctx.ew("*", h2, 0.5 * self.gravity, ctx.scratch("gh2"))


class _PlanarSWEModel(_SWEBase):
    """Shallow water on the plane with an f-plane Coriolis source."""

    def __init__(self, gravity, coriolis_f, h_ref=1.0):
        super().__init__(gravity, h_ref)
        self.coriolis_f = float(coriolis_f)

    def flux(self, ctx, U, coords, outF, outG):
        _check_positive(ctx, U["h"], "flux evaluation")
        u, v = self._recover_velocities(ctx, U)
        gh2 = self._half_g_h2(ctx, U)
        huv = ctx.ew("*", U["hu"], v, ctx.scratch("huv"))
        if outF is not None:
            ctx.ew("*", U["hu"], 1.0, outF["h"])
            huu = ctx.ew("*", U["hu"], u, ctx.scratch("tmp"))
            ctx.ew("+", huu, gh2, outF["hu"])
            ctx.ew("*", huv, 1.0, outF["hv"])
        if outG is not None:
            ctx.ew("*", U["hv"], 1.0, outG["h"])
            ctx.ew("*", huv, 1.0, outG["hu"])
            hvv = ctx.ew("*", U["hv"], v, ctx.scratch("tmp"))
            ctx.ew("+", hvv, gh2, outG["hv"])

    def source(self, ctx, U, coords, outS):
        ctx.ew("*", U["hv"], self.coriolis_f, outS["hu"])
        ctx.ew("*", U["hu"], -self.coriolis_f, outS["hv"])

    def wavespeed_nodes(self, U, coords, direction):
        h = U["h"]
        mom = U["hu"] if direction == X_DIR else U["hv"]
        vel = mom / np.maximum(h, self.h_floor)
        return np.abs(vel) + np.sqrt(self.gravity * np.maximum(h, 0.0))

    def max_physical_speed(self, U, coords):
        return max(
            self.max_wavespeed(U, coords, X_DIR),
            self.max_wavespeed(U, coords, Y_DIR),
        )


class _SphereSWEModel(_SWEBase):
    """Flux-form shallow water in lat-lon coordinates."""

    is_spherical = True

    def __init__(self, constants: PhysicalConstants, h_ref=1.0):
        super().__init__(constants.gravity, h_ref)
        self.constants = constants

    def flux(self, ctx, U, coords, outF, outG):
        _check_positive(ctx, U["h"], "flux evaluation")
        R = self.constants.radius
        u, v = self._recover_velocities(ctx, U)
        gh2 = self._half_g_h2(ctx, U)
        huv = ctx.ew("*", U["hu"], v, ctx.scratch("huv"))
        if outF is not None:
            ctx.ew("*", U["hu"], 1.0 / R, outF["h"])
            huu = ctx.ew("*", U["hu"], u, ctx.scratch("tmp"))
            huu = ctx.ew("+", huu, gh2, huu)
            ctx.ew("*", huu, 1.0 / R, outF["hu"])
            ctx.ew("*", huv, 1.0 / R, outF["hv"])
        if outG is not None:
            cr = coords.cos_over_r
            ctx.ew("*", U["hv"], cr, outG["h"])
            ctx.ew("*", huv, cr, outG["hu"])
            hvv = ctx.ew("*", U["hv"], v, ctx.scratch("tmp"))
            hvv = ctx.ew("+", hvv, gh2, hvv)
            ctx.ew("*", hvv, cr, outG["hv"])

    def source(self, ctx, U, coords, outS):
        # t = f cos(theta) + u sin(theta)/R, shared by both momentum sources
        u, _ = self._recover_velocities(ctx, U)
        t = ctx.ew("*", u, coords.sin_over_r, ctx.scratch("tcor"))
        t = ctx.ew("+", t, coords.f_cos, t)
        ctx.ew("*", t, U["hv"], outS["hu"])
        gh2 = self._half_g_h2(ctx, U)
        s2 = ctx.ew("*", gh2, coords.sin_over_r, ctx.scratch("tmp"))
        thu = ctx.ew("*", t, U["hu"], ctx.scratch("tmp2"))
        s2 = ctx.ew("+", s2, thu, s2)
        ctx.ew("*", s2, -1.0, outS["hv"])

    def _speed_parts(self, U):
        h = np.maximum(U["h"], 0.0)
        hf = np.maximum(U["h"], self.h_floor)
        c = np.sqrt(self.gravity * h)
        return hf, c

    def wavespeed_nodes(self, U, coords, direction):
        """Coordinate characteristic speeds: d(lambda)/dt resp. d(theta)/dt."""
        R = self.constants.radius
        hf, c = self._speed_parts(U)
        if direction == X_DIR:
            u = U["hu"] / hf
            cos = np.cos(coords.theta)
            return (np.abs(u) + c) / (R * np.maximum(cos, 1e-14))
        v = U["hv"] / hf
        return (np.abs(v) + c) / R

    def alpha_nodes(self, U, coords, direction):
        """Directional flux-Jacobian radius: the cos-metric cancels the
        1/cos of the coordinate speed in lambda and multiplies theta."""
        R = self.constants.radius
        hf, c = self._speed_parts(U)
        if direction == X_DIR:
            u = U["hu"] / hf
            return (np.abs(u) + c) / R
        v = U["hv"] / hf
        return np.cos(coords.theta) * (np.abs(v) + c) / R

    def max_physical_speed(self, U, coords):
        hf, c = self._speed_parts(U)
        vel = np.maximum(np.abs(U["hu"] / hf), np.abs(U["hv"] / hf))
        return float(np.max(vel + c))


def swe_planar_model(gravity: float, coriolis_f: float, h_ref: float = 1.0) -> FluxModel:
    """Planar shallow water with constant Coriolis parameter f."""
    return _PlanarSWEModel(gravity, coriolis_f, h_ref)


def swe_sphere_model(constants: PhysicalConstants, h_ref: float = 1.0) -> FluxModel:
    """Spherical shallow water in flux form (lat-lon coordinates)."""
    return _SphereSWEModel(constants, h_ref)
