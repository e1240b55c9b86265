"""Modal Legendre basis, Gauss quadrature, Vandermonde and mass matrices.

Everything here is precomputed once per run and immutable afterwards.

Conventions (fixed so that golden files stay stable):

* basis functions are tensor products of unnormalized Legendre
  polynomials, ``phi_(a,b)(xi, eta) = P_a(xi) * P_b(eta)``, with modal
  index ``a * (p+1) + b`` (a-major);
* interior quadrature nodes are the tensor product of the 1-d rule, node
  index ``qi * n_1d + qj`` where ``xi = nodes[qi]``, ``eta = nodes[qj]``;
* edge nodes run in ascending coordinate along the edge, shared between
  neighboring elements so traces align without interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mesh import LEFT, RIGHT, BOTTOM, TOP, Mesh

__all__ = [
    "Quadrature",
    "Vander",
    "MassMatrix",
    "gauss_legendre",
    "legendre_eval",
    "legendre_deriv",
    "build_vander",
    "mass_matrix_planar",
    "mass_matrix_sphere",
    "sphere_row_mass_matrices",
    "project_initial",
    "eval_modal_at_nodes",
]


@dataclass(frozen=True)
class Quadrature:
    """1-d Gauss-Legendre rule on [-1, 1]."""

    n_1d: int
    nodes: np.ndarray
    weights: np.ndarray


def gauss_legendre(n: int) -> Quadrature:
    """n-point Gauss-Legendre rule (exact through degree 2n-1)."""
    if n < 1:
        raise ValueError("need at least one quadrature point")
    nodes, weights = np.polynomial.legendre.leggauss(n)
    return Quadrature(n, nodes, weights)


def legendre_eval(j: int, x):
    """P_j(x) by the three-term recurrence."""
    x = np.asarray(x, dtype=np.float64)
    if j == 0:
        return np.ones_like(x)
    pm, p = np.ones_like(x), x.copy()
    for k in range(1, j):
        pm, p = p, ((2 * k + 1) * x * p - k * pm) / (k + 1)
    return p


def legendre_deriv(j: int, x):
    """P_j'(x), using P'_{k+1} = P'_{k-1} + (2k+1) P_k."""
    x = np.asarray(x, dtype=np.float64)
    if j == 0:
        return np.zeros_like(x)
    pm, p = np.ones_like(x), x.copy()
    dm, d = np.zeros_like(x), np.ones_like(x)
    for k in range(1, j):
        pn = ((2 * k + 1) * x * p - k * pm) / (k + 1)
        dn = dm + (2 * k + 1) * p
        pm, p = p, pn
        dm, d = d, dn
    return d


@dataclass(frozen=True)
class Vander:
    """Evaluation matrices of the modal basis of degree p.

    ``phi``, ``grad_x`` and ``grad_y`` map modal coefficients to values /
    reference derivatives at the interior quadrature nodes; ``edges[e]``
    maps them to the trace at edge e (left, right, bottom, top order).
    """

    p: int
    n_1d: int
    nphi: int
    phi: np.ndarray       # (n_q, nphi)
    grad_x: np.ndarray    # (n_q, nphi), d/dxi
    grad_y: np.ndarray    # (n_q, nphi), d/deta
    edges: tuple          # 4 x (n_1d, nphi)
    w: np.ndarray         # (n_q,) tensor weights
    w_edge: np.ndarray    # (n_1d,)
    nodes: np.ndarray     # (n_1d,) 1-d nodes

    @property
    def n_q(self) -> int:
        return self.phi.shape[0]


def build_vander(p: int, quad: Quadrature) -> Vander:
    if quad.n_1d < p + 1:
        raise ValueError(f"quadrature with {quad.n_1d} points cannot resolve degree {p}")
    n1 = quad.n_1d
    nphi = (p + 1) ** 2
    x = quad.nodes
    P = np.stack([legendre_eval(a, x) for a in range(p + 1)])    # (p+1, n1)
    D = np.stack([legendre_deriv(a, x) for a in range(p + 1)])
    Pm1 = np.array([legendre_eval(a, -1.0) for a in range(p + 1)]).reshape(p + 1)
    Pp1 = np.array([legendre_eval(a, 1.0) for a in range(p + 1)]).reshape(p + 1)

    phi = np.empty((n1 * n1, nphi))
    gx = np.empty_like(phi)
    gy = np.empty_like(phi)
    edges = [np.empty((n1, nphi)) for _ in range(4)]
    for a in range(p + 1):
        for b in range(p + 1):
            m = a * (p + 1) + b
            for qi in range(n1):
                for qj in range(n1):
                    q = qi * n1 + qj
                    phi[q, m] = P[a, qi] * P[b, qj]
                    gx[q, m] = D[a, qi] * P[b, qj]
                    gy[q, m] = P[a, qi] * D[b, qj]
            for q in range(n1):
                edges[LEFT][q, m] = Pm1[a] * P[b, q]
                edges[RIGHT][q, m] = Pp1[a] * P[b, q]
                edges[BOTTOM][q, m] = P[a, q] * Pm1[b]
                edges[TOP][q, m] = P[a, q] * Pp1[b]

    w2 = np.outer(quad.weights, quad.weights).reshape(-1)
    return Vander(
        p=p, n_1d=n1, nphi=nphi, phi=phi, grad_x=gx, grad_y=gy,
        edges=tuple(edges), w=w2, w_edge=quad.weights.copy(), nodes=x.copy(),
    )


@dataclass(frozen=True)
class MassMatrix:
    M: np.ndarray
    Minv: np.ndarray


def mass_matrix_planar(p: int, determ: float) -> MassMatrix:
    """Diagonal mass matrix of the orthogonal tensor Legendre basis."""
    norms = np.array([2.0 / (2 * a + 1) for a in range(p + 1)])
    diag = determ * np.outer(norms, norms).reshape(-1)
    return MassMatrix(np.diag(diag), np.diag(1.0 / diag))


def mass_matrix_sphere(p: int, theta_bounds, quad: Quadrature, dlam: float) -> MassMatrix:
    """cos(theta)-weighted mass matrix for one latitude row.

    M_ij = integral over the element of phi_i phi_j cos(theta); identical
    for every element in the row, so it is computed once per row.
    """
    tb, tt = theta_bounds
    vander = build_vander(p, quad)
    theta_q = 0.5 * (tb + tt) + 0.5 * (tt - tb) * quad.nodes
    cos_q = np.cos(theta_q)
    # tensor weights with the metric attached to the eta (theta) factor
    w_metric = np.outer(quad.weights, quad.weights * cos_q).reshape(-1)
    determ = dlam * (tt - tb) / 4.0
    M = determ * (vander.phi.T * w_metric) @ vander.phi
    M = 0.5 * (M + M.T)
    # p+1-point Gauss rules keep this SPD; a failure here means bad bounds
    np.linalg.cholesky(M)
    return MassMatrix(M, np.linalg.inv(M))


def sphere_row_mass_matrices(p: int, mesh: Mesh, quad: Quadrature):
    """Per-latitude-row mass matrices and inverses, arrays (ny, nphi, nphi)."""
    nphi = (p + 1) ** 2
    M = np.empty((mesh.ny, nphi, nphi))
    Minv = np.empty_like(M)
    for j in range(mesh.ny):
        mm = mass_matrix_sphere(
            p, (mesh.y_edges[j], mesh.y_edges[j + 1]), quad, mesh.dx
        )
        M[j] = mm.M
        Minv[j] = mm.Minv
    return M, Minv


def _element_node_coords(mesh: Mesh, nodes: np.ndarray):
    """Physical coordinates of tensor quadrature nodes, vectorized.

    Returns x of shape (nx, n1), y of shape (ny, n1).
    """
    n1 = nodes.shape[0]
    xl = mesh.x_edges[:-1]
    yb = mesh.y_edges[:-1]
    x = xl[:, None] + 0.5 * mesh.dx * (1.0 + nodes)[None, :]
    y = yb[:, None] + 0.5 * mesh.dy * (1.0 + nodes)[None, :]
    return x.reshape(mesh.nx, n1), y.reshape(mesh.ny, n1)


def project_initial(f, mesh: Mesh, vander: Vander) -> np.ndarray:
    """L2 projection of ``f(x, y)`` onto the modal basis, per element.

    Returns the coefficient array of shape (nx, ny, nphi).  On lat-lon
    meshes the projection uses the cos(theta)-weighted inner product so
    that it inverts against the metric mass matrix.
    """
    n1 = vander.n_1d
    x, y = _element_node_coords(mesh, vander.nodes)
    # values at all tensor nodes of all elements: (nx, ny, n1, n1)
    fv = f(x[:, None, :, None], y[None, :, None, :])
    fv = np.broadcast_to(fv, (mesh.nx, mesh.ny, n1, n1)).reshape(
        mesh.nx, mesh.ny, n1 * n1
    )
    quad_w = np.outer(vander.w_edge, vander.w_edge).reshape(-1)
    if mesh.kind == "latlon":
        cos_q = np.cos(y)  # (ny, n1)
        w_rows = quad_w.reshape(n1, n1)[None, :, :] * cos_q[:, None, :]
        w_rows = w_rows.reshape(mesh.ny, n1 * n1)
        rhs = mesh.determ * np.einsum("xyq,yq,qm->xym", fv, w_rows, vander.phi)
        quadr = gauss_legendre(vander.n_1d)
        _, Minv = sphere_row_mass_matrices(vander.p, mesh, quadr)
        coeffs = np.einsum("ymn,xyn->xym", Minv, rhs)
    else:
        rhs = mesh.determ * np.einsum("xyq,q,qm->xym", fv, quad_w, vander.phi)
        mm = mass_matrix_planar(vander.p, mesh.determ)
        coeffs = rhs * (1.0 / np.diag(mm.M))[None, None, :]
    return np.ascontiguousarray(coeffs)


def eval_modal_at_nodes(coeffs: np.ndarray, eval_matrix: np.ndarray) -> np.ndarray:
    """Nodal values ``eval_matrix @ coeffs`` per element (diagnostics path)."""
    return np.einsum("qm,...m->...q", eval_matrix, coeffs)
