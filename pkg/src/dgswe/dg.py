"""Spatial DG operator: nodal evaluation, volume and boundary integrals,
Rusanov interface fluxes and right-hand-side assembly.

The semi-discrete update per element is

    d(coeffs)/dt = Minv (volume - boundary + source)

with the volume term contracted against the basis gradients, the boundary
term against the edge traces with outward normals, and sources against the
interior basis values.  The whole pipeline runs on engine fields: states
carry one halo element on each side so periodic wraps become plain halo
copies and neighbor traces become origin-shifted reads.

Element (i, j) of the mesh lives at field slot (i+1, j+1).  The x-interface
field ``fstar_x`` holds, at slot s, the numerical flux through the right
edge of the element in slot s; ``fstar_y`` likewise for top edges.  On
lat-lon meshes the interfaces touching the poles are never computed and the
pole edges contribute nothing to any boundary integral.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import basis as bs
from .fields import (
    ExecutionRegion,
    Field,
    create_field,
    constant_field,
    elementwise,
    matvec,
)
from .mesh import LEFT, RIGHT, BOTTOM, TOP, Mesh
from .models import FluxModel, OpCtx, SphereNodeCoords, X_DIR, Y_DIR

__all__ = [
    "RusanovParams",
    "State",
    "SpatialOperator",
    "rusanov_flux",
]


@dataclass(frozen=True)
class RusanovParams:
    """Stabilization mode: per-edge local maximum (default) or one global
    alpha per direction; ``alpha`` pins the global value explicitly."""

    mode: str = "local"
    alpha: float | None = None

    def __post_init__(self):
        if self.mode not in ("local", "global"):
            raise ValueError(f"mode must be 'local' or 'global', got {self.mode!r}")


@dataclass
class State:
    """Modal coefficients of the conserved variables, one field per
    variable, stored with a one-element halo ring."""

    fields: dict
    names: tuple
    nx: int
    ny: int
    nz: int
    nphi: int

    @property
    def interior(self) -> ExecutionRegion:
        return ExecutionRegion((self.nx, self.ny, self.nz), {"_all_": (1, 1, 0)})

    def interior_coeffs(self, name: str) -> np.ndarray:
        """(nx, ny, nz, nphi) view of one variable's coefficients."""
        return self.fields[name].data[1 : self.nx + 1, 1 : self.ny + 1]

    def copy(self) -> "State":
        return State(
            {k: f.copy() for k, f in self.fields.items()},
            self.names, self.nx, self.ny, self.nz, self.nphi,
        )

    def max_abs(self) -> float:
        return max(
            float(np.max(np.abs(self.interior_coeffs(n)))) for n in self.names
        )


def rusanov_flux(u_in, u_out, fn_in, fn_out, alpha, out, rgn, scratch):
    """Single-valued interface flux
    ``out = (fn_in + fn_out)/2 - (alpha/2) (u_out - u_in)``.

    ``fn_*`` are the physical fluxes dotted with the outward normal of the
    "in" side; ``alpha`` is a number or a per-point scalar field.  Operand
    origins are taken from ``rgn`` under the names used above; the two
    scratch fields are indexed from origin zero.
    """
    s_avg, s_jump = scratch
    dom = rgn.domain
    zero = (0, 0, 0)

    def sub(oa, ob, oout):
        return ExecutionRegion(dom, {"a": oa, "b": ob, "out": oout})

    elementwise("+", fn_in, fn_out, s_avg,
                sub(rgn.origin_for("fn_in"), rgn.origin_for("fn_out"), zero))
    elementwise("*", s_avg, 0.5, s_avg, sub(zero, zero, zero))
    elementwise("-", u_out, u_in, s_jump,
                sub(rgn.origin_for("u_out"), rgn.origin_for("u_in"), zero))
    if isinstance(alpha, Field):
        elementwise("*", s_jump, alpha, s_jump,
                    sub(zero, rgn.origin_for("alpha"), zero))
        elementwise("*", s_jump, 0.5, s_jump, sub(zero, zero, zero))
    else:
        elementwise("*", s_jump, 0.5 * float(alpha), s_jump, sub(zero, zero, zero))
    elementwise("-", s_avg, s_jump, out, sub(zero, zero, rgn.origin_for("out")))


class _Workspace:
    """Transient per-evaluation fields; no state survives between RHS calls."""

    def __init__(self, shape, names, nq, n1, nphi):
        self.shape = shape
        mk = lambda dd: create_field(shape, data_dims=dd)
        self.u_qp = {n: mk((nq,)) for n in names}
        self.F_qp = {n: mk((nq,)) for n in names}
        self.G_qp = {n: mk((nq,)) for n in names}
        self.S_qp = {n: mk((nq,)) for n in names}
        self.trace = {e: {n: mk((n1,)) for n in names} for e in range(4)}
        self.fx = {e: {n: mk((n1,)) for n in names} for e in (LEFT, RIGHT)}
        self.gy = {e: {n: mk((n1,)) for n in names} for e in (BOTTOM, TOP)}
        self.fstar_x = {n: mk((n1,)) for n in names}
        self.fstar_y = {n: mk((n1,)) for n in names}
        self.alpha_x = mk(())   # per-x-interface stabilization coefficient
        self.alpha_y = mk(())
        self.rus_scratch = (mk((n1,)), mk((n1,)))
        self.vol = {n: mk((nphi,)) for n in names}
        self.bnd = {n: mk((nphi,)) for n in names}
        self.src = {n: mk((nphi,)) for n in names}
        self.tmp_phi = mk((nphi,))
        self.pools = {}

    def pool_alloc(self, pool_name, dd):
        pool = self.pools.setdefault(pool_name, {})

        def alloc(tag):
            key = tag
            if key not in pool:
                pool[key] = create_field(self.shape, data_dims=dd)
            return pool[key]

        return alloc


class _NullTimer:
    def begin(self, phase):
        pass

    def end(self, phase):
        pass


class SpatialOperator:
    """Precomputed DG discretization of one model on one mesh.

    Quadrature uses p+1 Gauss points per direction for both interior and
    edge integrals; the quadrature weights and the affine map Jacobians
    are folded into the contraction matrices at setup.
    """

    def __init__(self, mesh: Mesh, p: int, model: FluxModel,
                 rusanov: RusanovParams | None = None, nz: int = 1,
                 timers=None):
        if model.is_spherical != (mesh.kind == "latlon"):
            raise ValueError("model/mesh geometry mismatch")
        self.mesh = mesh
        self.p = int(p)
        self.model = model
        self.rusanov = rusanov or RusanovParams()
        self.nz = int(nz)
        self.timers = timers or _NullTimer()

        self.quad = bs.gauss_legendre(self.p + 1)
        self.vander = bs.build_vander(self.p, self.quad)
        v = self.vander
        self.nphi, self.n1, self.nq = v.nphi, v.n_1d, v.n_q
        nxh, nyh = mesh.nx + 2, mesh.ny + 2
        self.halo_shape = (nxh, nyh, self.nz)

        # nodal evaluation matrices
        self.phi_f = constant_field(v.phi)
        self.trace_f = tuple(constant_field(v.edges[e]) for e in range(4))

        # volume contraction, jacobians and weights folded:
        #   determ * grad.T @ (flux * w) / bd_det
        self.volx_f = constant_field(
            (mesh.determ / mesh.bd_det_x) * (v.w[:, None] * v.grad_x))
        self.voly_f = constant_field(
            (mesh.determ / mesh.bd_det_y) * (v.w[:, None] * v.grad_y))

        # boundary contraction with outward-normal signs; left/right edges
        # extend along y and carry bd_det_y, bottom/top carry bd_det_x
        wacc = v.w_edge[:, None]
        self.bnd_f = {
            LEFT: constant_field(-mesh.bd_det_y * (wacc * v.edges[LEFT])),
            RIGHT: constant_field(+mesh.bd_det_y * (wacc * v.edges[RIGHT])),
            BOTTOM: constant_field(-mesh.bd_det_x * (wacc * v.edges[BOTTOM])),
            TOP: constant_field(+mesh.bd_det_x * (wacc * v.edges[TOP])),
        }
        self.src_f = constant_field(mesh.determ * (v.w[:, None] * v.phi))

        self._setup_mass()
        self._setup_coords()
        self.ws = _Workspace(self.halo_shape, model.var_names,
                             self.nq, self.n1, self.nphi)
        self._setup_regions()

    # -- precomputation ----------------------------------------------------

    def _setup_mass(self):
        mesh = self.mesh
        if mesh.kind == "planar":
            mm = bs.mass_matrix_planar(self.p, mesh.determ)
            self.M_rows = None
            self.M_planar = mm
            self.minv_f = constant_field(mm.Minv)
        else:
            M, Minv = bs.sphere_row_mass_matrices(self.p, mesh, self.quad)
            self.M_rows = M
            self.M_planar = None
            padded = np.empty((mesh.ny + 2, self.nphi, self.nphi))
            padded[:] = np.eye(self.nphi)  # halo rows, never used
            padded[1 : mesh.ny + 1] = Minv
            self.minv_f = Field.from_array(
                padded, mask=(False, True, False),
                data_dims=(self.nphi, self.nphi))

    def _coord_fields(self, theta, omega, radius):
        """SphereNodeCoords for nodes at latitudes ``theta`` (ny+2, k)."""
        k = theta.shape[-1]
        dd = (k,) if k > 1 else ()
        arr = theta if k > 1 else theta[..., 0]
        mk = lambda vals: Field.from_array(vals, mask=(False, True, False), data_dims=dd)
        return SphereNodeCoords(
            cos_over_r=mk(np.cos(arr) / radius),
            sin_over_r=mk(np.sin(arr) / radius),
            f_cos=mk(2.0 * omega * np.sin(arr) * np.cos(arr)),
            theta=theta.reshape((1, theta.shape[0], 1, k)),
        )

    def _setup_coords(self):
        mesh = self.mesh
        if mesh.kind == "planar":
            self.coords_int = self.coords_xe = None
            self.coords_yb = self.coords_yt = None
            return
        const = self.model.constants
        n1, nq = self.n1, self.nq
        nyh = mesh.ny + 2
        # theta of the 1-d nodes in each row slot; halo rows clamp to the
        # nearest real row (their values are never read)
        ylo = np.empty(nyh)
        ylo[1 : mesh.ny + 1] = mesh.y_edges[:-1]
        ylo[0], ylo[-1] = mesh.y_edges[0], mesh.y_edges[-2]
        th_nodes = ylo[:, None] + 0.5 * mesh.dy * (1.0 + self.vander.nodes)[None, :]

        # interior tensor nodes: theta depends on the eta index only
        th_int = np.repeat(th_nodes[:, None, :], n1, axis=1).reshape(nyh, nq)
        self.coords_int = self._coord_fields(th_int, const.omega, const.radius)
        # x-oriented (left/right) edges span theta with the same 1-d nodes
        self.coords_xe = self._coord_fields(th_nodes, const.omega, const.radius)
        # bottom/top edges sit at a single latitude per row slot
        yb = np.empty((nyh, 1))
        yb[1 : mesh.ny + 1, 0] = mesh.y_edges[:-1]
        yb[0, 0], yb[-1, 0] = mesh.y_edges[0], mesh.y_edges[-2]
        yt = np.empty((nyh, 1))
        yt[1 : mesh.ny + 1, 0] = mesh.y_edges[1:]
        yt[0, 0], yt[-1, 0] = mesh.y_edges[1], mesh.y_edges[-1]
        self.coords_yb = self._coord_fields(yb, const.omega, const.radius)
        self.coords_yt = self._coord_fields(yt, const.omega, const.radius)

    def _setup_regions(self):
        nx, ny, nz = self.mesh.nx, self.mesh.ny, self.nz
        planar = self.mesh.kind == "planar"
        at = lambda dom, ox, oy: ExecutionRegion(dom, {"_all_": (ox, oy, 0)})
        self.rgn_int = at((nx, ny, nz), 1, 1)
        # x traces / x-edge fluxes cover the halo columns too
        self.rgn_xcols = at((nx + 2, ny, nz), 0, 1)
        # y traces / y-edge fluxes cover halo rows only when y wraps
        self.rgn_yrows = at((nx, ny + 2, nz), 1, 0) if planar else self.rgn_int
        # interface strips; a one-row sphere has no interior y-interfaces
        self.rgn_ifx = at((nx + 1, ny, nz), 0, 1)
        if planar:
            self.rgn_ify = at((nx, ny + 1, nz), 1, 0)
        else:
            self.rgn_ify = at((nx, ny - 1, nz), 1, 1) if ny > 1 else None
        self.has_y_wrap = planar

    # -- state construction -------------------------------------------------

    def zero_state(self) -> State:
        mesh = self.mesh
        fields = {
            n: create_field(self.halo_shape, data_dims=(self.nphi,))
            for n in self.model.var_names
        }
        return State(fields, self.model.var_names, mesh.nx, mesh.ny,
                     self.nz, self.nphi)

    def state_from_coeffs(self, coeffs: dict) -> State:
        """Build a state from per-variable (nx, ny, nphi) coefficient arrays."""
        st = self.zero_state()
        for name, arr in coeffs.items():
            view = st.interior_coeffs(name)
            view[...] = np.asarray(arr)[:, :, None, :]
        return st

    def project_state(self, ic_funcs: dict) -> State:
        """L2-project initial condition functions (one per variable)."""
        return self.state_from_coeffs({
            name: bs.project_initial(f, self.mesh, self.vander)
            for name, f in ic_funcs.items()
        })

    # -- RHS assembly --------------------------------------------------------

    def _halo_exchange(self, state: State):
        nx, ny, nz = self.mesh.nx, self.mesh.ny, self.nz
        col = (1, ny, nz)
        for name in state.names:
            f = state.fields[name]
            elementwise("*", f, 1.0, f, ExecutionRegion(
                col, {"a": (nx, 1, 0), "out": (0, 1, 0)}))
            elementwise("*", f, 1.0, f, ExecutionRegion(
                col, {"a": (1, 1, 0), "out": (nx + 1, 1, 0)}))
        if self.has_y_wrap:
            row = (nx, 1, nz)
            for name in state.names:
                f = state.fields[name]
                elementwise("*", f, 1.0, f, ExecutionRegion(
                    row, {"a": (1, ny, 0), "out": (1, 0, 0)}))
                elementwise("*", f, 1.0, f, ExecutionRegion(
                    row, {"a": (1, 1, 0), "out": (1, ny + 1, 0)}))

    def nodal_eval(self, state: State):
        """Kernel 1a: modal -> nodal at interior points and edge traces."""
        ws = self.ws
        for name in state.names:
            coeff = state.fields[name]
            matvec(self.phi_f, coeff, ws.u_qp[name], self.rgn_int)
            for e in (LEFT, RIGHT):
                matvec(self.trace_f[e], coeff, ws.trace[e][name], self.rgn_xcols)
            for e in (BOTTOM, TOP):
                matvec(self.trace_f[e], coeff, ws.trace[e][name], self.rgn_yrows)

    def _pointwise_physics(self):
        """Kernel 1b: fluxes and sources at every node set."""
        ws, model = self.ws, self.model
        ctx_int = OpCtx(self.rgn_int, ws.pool_alloc("qp", (self.nq,)))
        model.flux(ctx_int, ws.u_qp, self.coords_int, ws.F_qp, ws.G_qp)
        if model.has_source:
            model.source(ctx_int, ws.u_qp, self.coords_int,
                         {n: ws.S_qp[n] for n in ("hu", "hv")})
        ctx_xe = OpCtx(self.rgn_xcols, ws.pool_alloc("xe", (self.n1,)))
        for e in (LEFT, RIGHT):
            model.flux(ctx_xe, ws.trace[e], self.coords_xe, ws.fx[e], None)
        ctx_ye = OpCtx(self.rgn_yrows, ws.pool_alloc("ye", (self.n1,)))
        model.flux(ctx_ye, ws.trace[BOTTOM], self.coords_yb, None, ws.gy[BOTTOM])
        model.flux(ctx_ye, ws.trace[TOP], self.coords_yt, None, ws.gy[TOP])

    def _edge_state_arrays(self, edge):
        """Host views of the trace values, restricted to valid slots."""
        nx, ny = self.mesh.nx, self.mesh.ny
        if edge in (LEFT, RIGHT):
            sl = (slice(0, nx + 2), slice(1, ny + 1))
        elif self.has_y_wrap:
            sl = (slice(1, nx + 1), slice(0, ny + 2))
        else:
            sl = (slice(1, nx + 1), slice(1, ny + 1))
        return {n: self.ws.trace[edge][n].data[sl] for n in self.model.var_names}, sl

    def _interface_alphas(self):
        """Per-interface Rusanov coefficients (directional Jacobian bounds)."""
        ws, model, mesh = self.ws, self.model, self.mesh
        nx, ny = mesh.nx, mesh.ny
        if self.rusanov.mode == "global" and self.rusanov.alpha is not None:
            ws.alpha_x.data.fill(self.rusanov.alpha)
            ws.alpha_y.data.fill(self.rusanov.alpha)
            return
        UR, slx = self._edge_state_arrays(RIGHT)
        UL, _ = self._edge_state_arrays(LEFT)
        th_x = None if self.coords_xe is None else _CoordsView(
            self.coords_xe.theta[:, slx[1]])
        a_r = model.alpha_nodes(UR, th_x, X_DIR).max(axis=-1)
        a_l = model.alpha_nodes(UL, th_x, X_DIR).max(axis=-1)
        UT, sly = self._edge_state_arrays(TOP)
        UB, _ = self._edge_state_arrays(BOTTOM)
        th_y = None if self.coords_yt is None else _CoordsView(
            self.coords_yt.theta[:, sly[1]])
        a_t = model.alpha_nodes(UT, th_y, Y_DIR).max(axis=-1)
        # the bottom trace of slot s+1 sits at the same interface latitude
        th_yb = None if self.coords_yb is None else _CoordsView(
            self.coords_yb.theta[:, sly[1]])
        a_b = model.alpha_nodes(UB, th_yb, Y_DIR).max(axis=-1)
        if self.rusanov.mode == "global":
            ws.alpha_x.data.fill(max(float(a_r.max()), float(a_l.max())))
            ws.alpha_y.data.fill(max(float(a_t.max()), float(a_b.max())))
            return
        axd = ws.alpha_x.data
        axd[0 : nx + 1, 1 : ny + 1, :] = np.maximum(
            a_r[0 : nx + 1], a_l[1 : nx + 2])
        ayd = ws.alpha_y.data
        if self.has_y_wrap:
            ayd[1 : nx + 1, 0 : ny + 1, :] = np.maximum(
                a_t[:, 0 : ny + 1], a_b[:, 1 : ny + 2])
        elif ny > 1:
            ayd[1 : nx + 1, 1 : ny, :] = np.maximum(
                a_t[:, 0 : ny - 1], a_b[:, 1 : ny])

    def _interface_fluxes(self):
        """Kernel 2: halo-aware Rusanov fluxes on both interface strips."""
        ws = self.ws
        for name in self.model.var_names:
            rusanov_flux(
                u_in=ws.trace[RIGHT][name], u_out=ws.trace[LEFT][name],
                fn_in=ws.fx[RIGHT][name], fn_out=ws.fx[LEFT][name],
                alpha=ws.alpha_x,
                out=ws.fstar_x[name],
                rgn=ExecutionRegion(self.rgn_ifx.domain, {
                    "u_in": (0, 1, 0), "fn_in": (0, 1, 0),
                    "u_out": (1, 1, 0), "fn_out": (1, 1, 0),
                    "alpha": (0, 1, 0), "out": (0, 1, 0),
                }),
                scratch=ws.rus_scratch,
            )
            if self.rgn_ify is None:
                continue
            oy = 0 if self.has_y_wrap else 1
            rusanov_flux(
                u_in=ws.trace[TOP][name], u_out=ws.trace[BOTTOM][name],
                fn_in=ws.gy[TOP][name], fn_out=ws.gy[BOTTOM][name],
                alpha=ws.alpha_y,
                out=ws.fstar_y[name],
                rgn=ExecutionRegion(self.rgn_ify.domain, {
                    "u_in": (1, oy, 0), "fn_in": (1, oy, 0),
                    "u_out": (1, oy + 1, 0), "fn_out": (1, oy + 1, 0),
                    "alpha": (1, oy, 0), "out": (1, oy, 0),
                }),
                scratch=ws.rus_scratch,
            )

    def _contract(self, state: State, out: State):
        """Kernel 3: volume/boundary/source contractions and mass solve."""
        ws = self.ws
        nx, ny, nz = self.mesh.nx, self.mesh.ny, self.nz
        rint = self.rgn_int
        for name in state.names:
            matvec(self.volx_f, ws.F_qp[name], ws.vol[name], rint, transpose=True)
            matvec(self.voly_f, ws.G_qp[name], ws.tmp_phi, rint, transpose=True)
            elementwise("+", ws.vol[name], ws.tmp_phi, ws.vol[name], rint)

            bnd = ws.bnd[name]
            # right and left edges read the x-interface strip at s and s-1
            matvec(self.bnd_f[RIGHT], ws.fstar_x[name], bnd, rint, transpose=True)
            matvec(self.bnd_f[LEFT], ws.fstar_x[name], ws.tmp_phi,
                   ExecutionRegion((nx, ny, nz), {
                       "matrix": (0, 0, 0), "vec": (0, 1, 0), "out": (1, 1, 0)}),
                   transpose=True)
            elementwise("+", bnd, ws.tmp_phi, bnd, rint)
            if self.has_y_wrap:
                top_rgn = rint
                bot_rgn = ExecutionRegion((nx, ny, nz), {
                    "matrix": (0, 0, 0), "vec": (1, 0, 0), "out": (1, 1, 0)})
                matvec(self.bnd_f[TOP], ws.fstar_y[name], ws.tmp_phi, top_rgn,
                       transpose=True)
                elementwise("+", bnd, ws.tmp_phi, bnd, rint)
                matvec(self.bnd_f[BOTTOM], ws.fstar_y[name], ws.tmp_phi, bot_rgn,
                       transpose=True)
                elementwise("+", bnd, ws.tmp_phi, bnd, rint)
            elif ny > 1:
                # pole-closed edges are skipped outright: the top term only
                # exists below the north row, the bottom term above the south
                top_rgn = ExecutionRegion((nx, ny - 1, nz), {"_all_": (1, 1, 0)})
                matvec(self.bnd_f[TOP], ws.fstar_y[name], ws.tmp_phi, top_rgn,
                       transpose=True)
                elementwise("+", bnd, ws.tmp_phi, bnd, top_rgn)
                bot_rgn = ExecutionRegion((nx, ny - 1, nz), {
                    "matrix": (0, 0, 0), "vec": (1, 1, 0), "out": (1, 2, 0)})
                matvec(self.bnd_f[BOTTOM], ws.fstar_y[name], ws.tmp_phi, bot_rgn,
                       transpose=True)
                elementwise("+", bnd, ws.tmp_phi, bnd, ExecutionRegion(
                    (nx, ny - 1, nz), {"_all_": (1, 2, 0)}))

            elementwise("-", ws.vol[name], bnd, ws.vol[name], rint)
            if self.model.has_source and name in ("hu", "hv"):
                matvec(self.src_f, ws.S_qp[name], ws.src[name], rint,
                       transpose=True)
                elementwise("+", ws.vol[name], ws.src[name], ws.vol[name], rint)
            matvec(self.minv_f, ws.vol[name], out.fields[name], rint)

    def assemble_rhs(self, state: State, out: State | None = None) -> State:
        """Full right-hand side Minv (volume - boundary + source)."""
        if out is None:
            out = self.zero_state()
        t = self.timers
        t.begin("rusanov")
        self._halo_exchange(state)
        t.end("rusanov")
        t.begin("common")
        self.nodal_eval(state)
        self._pointwise_physics()
        t.end("common")
        t.begin("rusanov")
        self._interface_alphas()
        self._interface_fluxes()
        t.end("rusanov")
        t.begin("main")
        self._contract(state, out)
        t.end("main")
        return out

    # -- host-side helpers used by diagnostics and step control --------------

    def interior_nodal_values(self, state: State) -> dict:
        """(nx, ny, nz, nq) nodal values per variable (host einsum path)."""
        return {
            n: np.einsum("qm,xyzm->xyzq", self.vander.phi,
                         state.interior_coeffs(n))
            for n in state.names
        }

    def interior_theta(self):
        if self.coords_int is None:
            return None
        return _CoordsView(self.coords_int.theta[:, 1 : self.mesh.ny + 1])

    def max_physical_speed(self, state: State) -> float:
        U = self.interior_nodal_values(state)
        return self.model.max_physical_speed(U, self.interior_theta())


class _CoordsView:
    """Duck-typed coords carrying only the host theta array."""

    __slots__ = ("theta",)

    def __init__(self, theta):
        self.theta = theta
