"""Initial conditions and run configurations for the validation problems.

Spherical cases follow the standard shallow-water test suite of
Williamson et al. (J. Comput. Phys. 102, 1992); the constants below cite
the suite's equation numbers.  All defaults reproduce the quoted run
parameters of each benchmark.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import mesh as msh
from .mesh import EARTH, PhysicalConstants
from .models import advection_model, swe_planar_model, swe_sphere_model

__all__ = [
    "CaseConfig",
    "RunSetup",
    "CASE_IDS",
    "default_config",
    "build_case",
    "ic_advection_sine",
    "ic_geostrophic_adjustment",
    "ic_williamson_tc2",
    "ic_williamson_tc6",
]

DAY = 86400.0

# -- Williamson suite constants -------------------------------------------

# test case 2 (global steady zonal flow), suite eqs. (90)-(95) with alpha=0:
# u = u0 cos(theta), v = 0, g h = g h0 - (R Omega u0 + u0^2/2) sin^2(theta)
TC2_U0 = 2.0 * math.pi * EARTH.radius / (12.0 * DAY)   # suite: 2 pi a / 12 days
TC2_GH0 = 2.94e4                                        # suite: g h0 [m^2 s^-2]

# test case 6 (Rossby-Haurwitz wave), suite eqs. (142)-(149):
TC6_OMEGA = 7.848e-6        # suite: omega [s^-1]
TC6_K = 7.848e-6            # suite: K [s^-1]
TC6_H0 = 8.0e3              # suite: h0 [m]
TC6_R = 4                   # suite: zonal wavenumber R

# geostrophic adjustment on the f-plane
ADJ_LENGTH = 1.0e7          # m
ADJ_H0 = 1000.0             # m
ADJ_H1 = 5.0                # m
ADJ_SIGMA = ADJ_LENGTH / 20.0
ADJ_F = 1.0e-4              # s^-1

CASE_IDS = (
    "advection_sine",
    "geostrophic_adjustment",
    "williamson_tc2",
    "williamson_tc6",
)


@dataclass(frozen=True)
class CaseConfig:
    """Fully-resolved run parameters (defaults match the benchmarks)."""

    case: str
    nx: int
    ny: int
    p: int
    rk: int
    t_final: float
    dt: float | None = None
    courant: float | None = None
    nz: int = 1
    alpha_mode: str = "local"
    alpha: float | None = None

    def override(self, **kwargs) -> "CaseConfig":
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **kwargs)


def default_config(case: str) -> CaseConfig:
    if case == "advection_sine":
        return CaseConfig(case=case, nx=20, ny=20, p=2, rk=4,
                          t_final=1.0, courant=0.2)
    if case == "geostrophic_adjustment":
        return CaseConfig(case=case, nx=50, ny=50, p=3, rk=4,
                          t_final=36000.0, dt=100.0)
    if case == "williamson_tc2":
        return CaseConfig(case=case, nx=20, ny=20, p=3, rk=4,
                          t_final=2.0 * DAY, courant=0.2)
    if case == "williamson_tc6":
        return CaseConfig(case=case, nx=40, ny=20, p=3, rk=4,
                          t_final=8.0 * DAY, dt=4.0)
    raise ValueError(f"unknown case {case!r}; choose from {CASE_IDS}")


def ic_advection_sine():
    """Smooth profile on the periodic unit square; the exact solution is
    the initial condition translated by beta*t (with wrap-around)."""
    beta = (1.0, 1.0)

    def u0(x, y):
        return np.sin(2.0 * math.pi * x) * np.sin(2.0 * math.pi * y)

    def exact(t):
        def u(x, y):
            return u0(np.mod(x - beta[0] * t, 1.0), np.mod(y - beta[1] * t, 1.0))
        return u

    return {"u": u0}, beta, exact


def ic_geostrophic_adjustment():
    """Gaussian height bump at rest; gravity and rotation then adjust."""

    def h0(x, y):
        r2 = (x - ADJ_LENGTH / 2) ** 2 + (y - ADJ_LENGTH / 2) ** 2
        return ADJ_H0 + ADJ_H1 * np.exp(-r2 / (2.0 * ADJ_SIGMA**2))

    zero = lambda x, y: np.zeros(np.broadcast(x, y).shape)
    return {"h": h0, "hu": zero, "hv": zero}


def ic_williamson_tc2(constants: PhysicalConstants = EARTH):
    """Steady zonal flow in exact geostrophic balance."""
    a = constants.radius
    g = constants.gravity
    u0 = TC2_U0
    gh_coef = a * constants.omega * u0 + 0.5 * u0 * u0

    def height(lam, th):
        return (TC2_GH0 - gh_coef * np.sin(th) ** 2) / g + 0.0 * lam

    def h_u(lam, th):
        return height(lam, th) * u0 * np.cos(th)

    zero = lambda lam, th: np.zeros(np.broadcast(lam, th).shape)
    return {"h": height, "hu": h_u, "hv": zero}, height


def tc6_fields(constants: PhysicalConstants = EARTH):
    """Wavenumber-4 Rossby-Haurwitz initial height and winds."""
    a = constants.radius
    g = constants.gravity
    Om = constants.omega
    w, K, R = TC6_OMEGA, TC6_K, TC6_R

    def winds(lam, th):
        cth = np.cos(th)
        u = a * w * cth + a * K * cth ** (R - 1) * (
            R * np.sin(th) ** 2 - cth**2) * np.cos(R * lam)
        v = -a * K * R * cth ** (R - 1) * np.sin(th) * np.sin(R * lam)
        return u, v

    def height(lam, th):
        cth = np.cos(th)
        A = 0.5 * w * (2.0 * Om + w) * cth**2 + 0.25 * K**2 * cth ** (2 * R) * (
            (R + 1) * cth**2 + (2 * R**2 - R - 2) - 2.0 * R**2 * cth ** (-2))
        B = (2.0 * (Om + w) * K) / ((R + 1) * (R + 2)) * cth**R * (
            (R**2 + 2 * R + 2) - (R + 1) ** 2 * cth**2)
        C = 0.25 * K**2 * cth ** (2 * R) * ((R + 1) * cth**2 - (R + 2))
        return TC6_H0 + (a * a / g) * (A + B * np.cos(R * lam)
                                       + C * np.cos(2 * R * lam))

    return height, winds


def ic_williamson_tc6(constants: PhysicalConstants = EARTH):
    height, winds = tc6_fields(constants)

    def h_u(lam, th):
        return height(lam, th) * winds(lam, th)[0]

    def h_v(lam, th):
        return height(lam, th) * winds(lam, th)[1]

    return {"h": height, "hu": h_u, "hv": h_v}


@dataclass
class RunSetup:
    """Everything needed to run one configured case."""

    config: CaseConfig
    mesh: msh.Mesh
    model: object
    ic: dict
    exact: object = None          # exact(t) -> reference function, if known
    constants: PhysicalConstants = EARTH


def build_case(config: CaseConfig, constants: PhysicalConstants = EARTH) -> RunSetup:
    case = config.case
    if case == "advection_sine":
        ic, beta, exact = ic_advection_sine()
        return RunSetup(config, msh.build_planar_mesh(config.nx, config.ny, 1.0),
                        advection_model(beta), ic, exact, constants)
    if case == "geostrophic_adjustment":
        ic = ic_geostrophic_adjustment()
        model = swe_planar_model(constants.gravity, ADJ_F, h_ref=ADJ_H0)
        return RunSetup(config, msh.build_planar_mesh(config.nx, config.ny, ADJ_LENGTH),
                        model, ic, None, constants)
    if case == "williamson_tc2":
        ic, height = ic_williamson_tc2(constants)
        model = swe_sphere_model(constants, h_ref=TC2_GH0 / constants.gravity)
        setup = RunSetup(config, msh.build_latlon_mesh(config.nx, config.ny,
                                                       constants.radius),
                         model, ic, None, constants)
        setup.exact = lambda t: height   # stationary solution
        return setup
    if case == "williamson_tc6":
        ic = ic_williamson_tc6(constants)
        model = swe_sphere_model(constants, h_ref=TC6_H0)
        return RunSetup(config, msh.build_latlon_mesh(config.nx, config.ny,
                                                      constants.radius),
                        model, ic, None, constants)
    raise ValueError(f"unknown case {case!r}; choose from {CASE_IDS}")
