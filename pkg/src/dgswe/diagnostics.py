"""Error norms, convergence rates, conservation monitors and field export."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import basis as bs
from .dg import SpatialOperator, State
from .mesh import Mesh

__all__ = [
    "ConvergenceRecord",
    "l2_error",
    "convergence_rate",
    "mass_integral",
    "export_field",
    "read_field_dump",
    "write_convergence_csv",
    "read_convergence_csv",
]


@dataclass
class ConvergenceRecord:
    K: int            # element count
    h: float          # characteristic size
    epsilon: float
    rate: float | None = None


def _error_quadrature(op: SpatialOperator):
    """One-order-finer rule than assembly, so the norm is not aliased."""
    quad = bs.gauss_legendre(op.p + 2)
    vander = bs.build_vander(op.p, quad)
    return quad, vander


def l2_error(state: State, reference_fn, op: SpatialOperator,
             var: str | None = None, relative: bool = False,
             level: int = 0) -> float:
    """L2 norm of (numerical - reference) at the current state.

    Uses p+2 quadrature points per direction and the cos(theta) metric on
    lat-lon meshes.  The element reduction runs in ascending element order
    so repeated runs print identical digits.
    """
    mesh = op.mesh
    var = var or state.names[0]
    quad, vander = _error_quadrature(op)
    n1 = quad.n_1d
    coeffs = state.interior_coeffs(var)[:, :, level, :]
    vals = np.einsum("qm,xym->xyq", vander.phi, coeffs)
    x, y = bs._element_node_coords(mesh, quad.nodes)
    ref = reference_fn(x[:, None, :, None], y[None, :, None, :])
    ref = np.broadcast_to(ref, (mesh.nx, mesh.ny, n1, n1)).reshape(
        mesh.nx, mesh.ny, n1 * n1)
    w2 = np.outer(quad.weights, quad.weights).reshape(-1)
    if mesh.kind == "latlon":
        metric = np.cos(y)  # (ny, n1)
        w_rows = (w2.reshape(n1, n1)[None, :, :] * metric[:, None, :]).reshape(
            mesh.ny, n1 * n1)
        cell = mesh.determ * np.einsum("xyq,yq->xy", (vals - ref) ** 2, w_rows)
        cell_ref = mesh.determ * np.einsum("xyq,yq->xy", ref**2, w_rows)
    else:
        cell = mesh.determ * np.einsum("xyq,q->xy", (vals - ref) ** 2, w2)
        cell_ref = mesh.determ * np.einsum("xyq,q->xy", ref**2, w2)
    total = 0.0
    total_ref = 0.0
    for i in range(mesh.nx):
        for j in range(mesh.ny):
            total += cell[i, j]
            total_ref += cell_ref[i, j]
    err = math.sqrt(max(total, 0.0))
    if relative:
        return err / math.sqrt(max(total_ref, 1e-300))
    return err


def convergence_rate(eps1: float, h1: float, eps2: float, h2: float) -> float:
    """r = (log eps1 - log eps2) / (log h1 - log h2)."""
    if min(eps1, eps2, h1, h2) <= 0.0:
        raise ValueError("errors and mesh sizes must be positive")
    if h1 == h2:
        raise ValueError("mesh sizes must differ")
    return (math.log(eps1) - math.log(eps2)) / (math.log(h1) - math.log(h2))


def mass_integral(state: State, op: SpatialOperator,
                  var: str | None = None, level: int = 0) -> float:
    """Total integral of the mass variable: the mode-0 component of M u_hat
    summed over elements (carries the cos(theta) weight on the sphere)."""
    var = var or state.names[0]
    coeffs = state.interior_coeffs(var)[:, :, level, :]
    if op.M_rows is not None:
        row0 = op.M_rows[:, 0, :]                      # (ny, nphi)
        cell = np.einsum("ym,xym->xy", row0, coeffs)
    else:
        cell = np.einsum("m,xym->xy", op.M_planar.M[0, :], coeffs)
    total = 0.0
    for i in range(op.mesh.nx):
        for j in range(op.mesh.ny):
            total += cell[i, j]
    return total


def _lattice(mesh: Mesh, resolution):
    """Uniform plotting lattice with per-point element/local coordinates."""
    rx, ry = resolution if isinstance(resolution, tuple) else (resolution, resolution)
    lx = mesh.x_edges[-1] - mesh.x_edges[0]
    ly = mesh.y_edges[-1] - mesh.y_edges[0]
    # cell-centered samples avoid the ambiguity of points on element edges
    xs = mesh.x_edges[0] + (np.arange(rx) + 0.5) * lx / rx
    ys = mesh.y_edges[0] + (np.arange(ry) + 0.5) * ly / ry
    ex = np.minimum((xs - mesh.x_edges[0]) // mesh.dx, mesh.nx - 1).astype(int)
    ey = np.minimum((ys - mesh.y_edges[0]) // mesh.dy, mesh.ny - 1).astype(int)
    xi = 2.0 * (xs - mesh.x_edges[ex]) / mesh.dx - 1.0
    eta = 2.0 * (ys - mesh.y_edges[ey]) / mesh.dy - 1.0
    return xs, ys, ex, ey, xi, eta


def sample_on_lattice(state: State, op: SpatialOperator, resolution,
                      level: int = 0) -> dict:
    """Evaluate the modal solution of every variable on a uniform lattice."""
    xs, ys, ex, ey, xi, eta = _lattice(op.mesh, resolution)
    p = op.p
    Px = np.stack([bs.legendre_eval(a, xi) for a in range(p + 1)])   # (p+1, rx)
    Py = np.stack([bs.legendre_eval(b, eta) for b in range(p + 1)])  # (p+1, ry)
    out = {"x": xs, "y": ys}
    for name in state.names:
        coeffs = state.interior_coeffs(name)[:, :, level, :].reshape(
            op.mesh.nx, op.mesh.ny, p + 1, p + 1)
        ce = coeffs[ex][:, ey]                                       # (rx, ry, p+1, p+1)
        out[name] = np.einsum("xyab,ax,by->xy", ce, Px, Py)
    return out


def export_field(state: State, op: SpatialOperator, path, resolution,
                 case: str = "", t: float = 0.0, level: int = 0) -> None:
    """Write lattice samples as columnar text.

    Header: ``# case=<id> t=<seconds> vars=<names> nx=<..> ny=<..>`` then
    one row per lattice point: ``x y value...`` with 17 significant digits.
    """
    samples = sample_on_lattice(state, op, resolution, level)
    xs, ys = samples["x"], samples["y"]
    names = list(state.names)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(
                f"# case={case} t={t!r} vars={','.join(names)} "
                f"nx={len(xs)} ny={len(ys)}\n"
            )
            for jy in range(len(ys)):
                for ix in range(len(xs)):
                    row = [f"{xs[ix]:.17g}", f"{ys[jy]:.17g}"]
                    row += [f"{samples[n][ix, jy]:.17g}" for n in names]
                    fh.write(" ".join(row) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write field dump to {path}: {exc}") from exc


def read_field_dump(path):
    """Parse a dump written by :func:`export_field`."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("# "):
            raise ValueError(f"{path}: missing dump header")
        meta = dict(tok.split("=", 1) for tok in header[2:].split())
        rows = np.loadtxt(fh, ndmin=2)
    names = meta["vars"].split(",")
    nx, ny = int(meta["nx"]), int(meta["ny"])
    data = {"x": rows[:nx, 0], "y": rows[::nx, 1][:ny]}
    for i, n in enumerate(names):
        data[n] = rows[:, 2 + i].reshape(ny, nx).T
    data["meta"] = meta
    return data


def write_convergence_csv(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["K", "h", "epsilon", "rate"])
        for rec in records:
            writer.writerow([
                rec.K, f"{rec.h:.17g}", f"{rec.epsilon:.17g}",
                "" if rec.rate is None else f"{rec.rate:.17g}",
            ])


def read_convergence_csv(path):
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            records.append(ConvergenceRecord(
                K=int(row["K"]), h=float(row["h"]),
                epsilon=float(row["epsilon"]),
                rate=float(row["rate"]) if row["rate"] else None,
            ))
    return records
