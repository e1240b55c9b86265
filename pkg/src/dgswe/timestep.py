"""Explicit SSP Runge-Kutta stepping and the main integration loop."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .dg import State
from .fields import ExecutionRegion, create_field, elementwise
from .models import PositivityError

__all__ = [
    "ButcherTableau",
    "TimeControls",
    "DivergenceError",
    "tableau",
    "rk_step",
    "integrate",
    "StepLog",
]


class DivergenceError(RuntimeError):
    """Integration produced a non-finite or invalid state."""

    def __init__(self, message, step, t):
        super().__init__(f"{message} (step {step}, t={t:.6g})")
        self.step = step
        self.t = t


@dataclass(frozen=True)
class ButcherTableau:
    s: int
    a: tuple          # s x s, strictly lower triangular
    b: tuple
    c: tuple

    def __post_init__(self):
        if len(self.a) != self.s or len(self.b) != self.s or len(self.c) != self.s:
            raise ValueError("tableau dimensions inconsistent with stage count")
        for i, row in enumerate(self.a):
            if len(row) != self.s:
                raise ValueError("tableau matrix must be square")
            if any(row[j] != 0.0 for j in range(i, self.s)):
                raise ValueError("tableau must be strictly lower triangular")
        if abs(sum(self.b) - 1.0) > 1e-14:
            raise ValueError("stage weights must sum to one")
        for i, row in enumerate(self.a):
            if abs(sum(row) - self.c[i]) > 1e-14:
                raise ValueError("abscissae must equal the stage row sums")


_TABLEAUX = {
    1: ButcherTableau(1, ((0.0,),), (1.0,), (0.0,)),
    2: ButcherTableau(
        2,
        ((0.0, 0.0), (1.0, 0.0)),
        (0.5, 0.5),
        (0.0, 1.0),
    ),
    3: ButcherTableau(
        3,
        ((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.25, 0.25, 0.0)),
        (1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0),
        (0.0, 1.0, 0.5),
    ),
    4: ButcherTableau(
        4,
        (
            (0.0, 0.0, 0.0, 0.0),
            (0.5, 0.0, 0.0, 0.0),
            (0.0, 0.5, 0.0, 0.0),
            (0.0, 0.0, 1.0, 0.0),
        ),
        (1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0),
        (0.0, 0.5, 0.5, 1.0),
    ),
}


def tableau(order: int) -> ButcherTableau:
    """SSP Runge-Kutta tableaux of orders 1 to 4."""
    try:
        return _TABLEAUX[int(order)]
    except KeyError:
        raise ValueError(f"unsupported RK order {order}; choose 1..4") from None


@dataclass(frozen=True)
class TimeControls:
    """Step size, either direct or derived from a Courant number.

    With a Courant number C the step is dt = C * H / (p * c_max) using the
    polynomial degree p, minimum element diameter H, and the fastest
    signal speed c_max estimated from the initial state only.
    """

    t_final: float
    dt: float | None = None
    courant: float | None = None

    def __post_init__(self):
        if (self.dt is None) == (self.courant is None):
            raise ValueError("specify exactly one of dt or courant")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.courant is not None and self.courant <= 0:
            raise ValueError("courant number must be positive")
        if self.t_final < 0:
            raise ValueError("t_final must be non-negative")

    def resolve_dt(self, diameter: float, p: int, c_max: float) -> float:
        if self.dt is not None:
            return self.dt
        if c_max <= 0:
            raise ValueError("cannot derive dt from a zero wavespeed")
        return self.courant * diameter / (max(p, 1) * c_max)


class _RKWorkspace:
    def __init__(self, state: State, stages: int):
        self.stage_input = state.copy()
        self.k = [state.copy() for _ in range(stages)]
        shape = state.fields[state.names[0]].stored_shape
        self.tmp = create_field(shape, data_dims=(state.nphi,))


def _axpy(y: State, coef: float, x: State, tmp, rgn) -> None:
    # y += coef * x over the interior (halos are refreshed by the RHS)
    if coef == 0.0:
        return
    for name in y.names:
        elementwise("*", x.fields[name], coef, tmp, ExecutionRegion(
            rgn.domain, {"a": rgn.origin_for("_all_"), "out": (0, 0, 0)}))
        elementwise("+", y.fields[name], tmp, y.fields[name], ExecutionRegion(
            rgn.domain, {"a": rgn.origin_for("_all_"), "b": (0, 0, 0),
                         "out": rgn.origin_for("_all_")}))


def _copy_interior(dst: State, src: State, rgn) -> None:
    for name in dst.names:
        elementwise("*", src.fields[name], 1.0, dst.fields[name], rgn)


def rk_step(state: State, rhs_fn, dt: float, tab: ButcherTableau,
            workspace: _RKWorkspace | None = None) -> State:
    """One explicit RK step, updating ``state`` in place.

    ``rhs_fn(state, out=...)`` evaluates the semi-discrete right-hand side.
    Raises :class:`DivergenceError` when the updated state is non-finite.
    """
    ws = workspace or _RKWorkspace(state, tab.s)
    rgn = state.interior
    for i in range(tab.s):
        _copy_interior(ws.stage_input, state, rgn)
        for j in range(i):
            _axpy(ws.stage_input, dt * tab.a[i][j], ws.k[j], ws.tmp, rgn)
        rhs_fn(ws.stage_input, out=ws.k[i])
    for i in range(tab.s):
        _axpy(state, dt * tab.b[i], ws.k[i], ws.tmp, rgn)
    if not math.isfinite(state.max_abs()):
        raise DivergenceError("non-finite state after RK update", -1, float("nan"))
    return state


@dataclass
class StepLog:
    steps: int = 0
    t: float = 0.0
    dt: float = 0.0
    wall_seconds: float = 0.0
    c_max: float = 0.0
    diameter: float = 0.0


def integrate(state: State, operator, controls: TimeControls,
              tab: ButcherTableau, callbacks=(), check_positivity=None):
    """Advance the state to t_final, truncating the last step to land
    exactly on the final time.

    ``callbacks`` is a sequence of (cadence, fn) pairs; each fn(step, t,
    state) fires at t=0, every ``cadence`` steps, and at the final step.
    ``check_positivity`` names a variable whose cell mean must stay
    positive (checked once per step).
    """
    from .mesh import min_effective_diameter

    log = StepLog()
    log.diameter = min_effective_diameter(operator.mesh)
    c_max = operator.max_physical_speed(state)
    log.c_max = c_max
    dt = controls.resolve_dt(log.diameter, operator.p, c_max)
    log.dt = dt
    t_final = controls.t_final

    for _, fn in callbacks:
        fn(0, 0.0, state)
    if t_final == 0.0:
        return state, log

    n_steps = max(1, math.ceil(t_final / dt - 1e-12))
    ws = _RKWorkspace(state, tab.s)
    rhs = operator.assemble_rhs
    started = time.perf_counter()
    t = 0.0
    for step in range(1, n_steps + 1):
        step_dt = min(dt, t_final - t)
        try:
            rk_step(state, rhs, step_dt, tab, ws)
        except (PositivityError, DivergenceError) as exc:
            log.steps = step - 1
            log.t = t
            log.wall_seconds = time.perf_counter() - started
            raise DivergenceError(str(exc), step, t) from exc
        t = t_final if step == n_steps else t + step_dt
        if check_positivity is not None:
            means = state.interior_coeffs(check_positivity)[..., 0]
            if not float(means.min()) > 0.0:
                log.steps = step
                log.t = t
                raise DivergenceError(
                    f"cell-mean {check_positivity} lost positivity", step, t)
        for cadence, fn in callbacks:
            if step % cadence == 0 or step == n_steps:
                fn(step, t, state)
    log.steps = n_steps
    log.t = t
    log.wall_seconds = time.perf_counter() - started
    return state, log
