"""Reference elements, quadrature rules and the structured fluid mesh.

Velocity uses isoparametric quadratic triangles (local node order: vertices
0, 1, 2 then edge midpoints 3 = (0,1), 4 = (1,2), 5 = (2,0)); pressure uses
linear triangles on the vertices.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


class MeshError(ValueError):
    pass


# ---------------------------------------------------------------- reference


def p2_basis(xi, eta):
    """Values ``(npts, 6)`` of the quadratic Lagrange basis on the unit triangle."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    l0 = 1.0 - xi - eta
    return np.stack(
        [
            l0 * (2 * l0 - 1),
            xi * (2 * xi - 1),
            eta * (2 * eta - 1),
            4 * l0 * xi,
            4 * xi * eta,
            4 * eta * l0,
        ],
        axis=-1,
    )


def p2_grad(xi, eta):
    """Reference gradients ``(npts, 6, 2)``."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    l0 = 1.0 - xi - eta
    dxi = np.stack(
        [-(4 * l0 - 1), 4 * xi - 1, 0 * xi, 4 * (l0 - xi), 4 * eta, -4 * eta], axis=-1
    )
    deta = np.stack(
        [-(4 * l0 - 1), 0 * xi, 4 * eta - 1, -4 * xi, 4 * xi, 4 * (l0 - eta)], axis=-1
    )
    return np.stack([dxi, deta], axis=-1)


def p2_hessian():
    """Constant reference Hessians ``(6, 2, 2)`` of the quadratic basis."""
    H = np.zeros((6, 2, 2))
    H[0] = [[4, 4], [4, 4]]
    H[1] = [[4, 0], [0, 0]]
    H[2] = [[0, 0], [0, 4]]
    H[3] = [[-8, -4], [-4, 0]]
    H[4] = [[0, 4], [4, 0]]
    H[5] = [[0, -4], [-4, -8]]
    return H


def p1_basis(xi, eta):
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    return np.stack([1.0 - xi - eta, xi, eta], axis=-1)


P1_GRAD = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])

P2_NODES = np.array([[0, 0], [1, 0], [0, 1], [0.5, 0], [0.5, 0.5], [0, 0.5]], dtype=float)


def triangle_rule(n: int = 3):
    """Collapsed (Duffy) Gauss rule on the unit triangle with ``n*n`` points.

    Gauss-Jacobi in the collapsed direction absorbs the Duffy Jacobian, so the
    rule integrates polynomials of total degree ``2n - 1`` exactly.
    """
    u, wu = roots_jacobi(n, 1.0, 0.0)  # weight (1 - u) on [-1, 1]
    v, wv = roots_legendre(n)
    u = 0.5 * (u + 1.0)
    wu = wu / 4.0  # (1-u_01) = (1-u)/2 and du_01 = du/2
    v = 0.5 * (v + 1.0)
    wv = 0.5 * wv
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv)
    xi = U.ravel()
    eta = ((1.0 - U) * V).ravel()
    return np.column_stack([xi, eta]), W.ravel()


def line_rule(n: int = 4):
    """Gauss-Legendre on ``[0, 1]``."""
    t, w = roots_legendre(n)
    return 0.5 * (t + 1.0), 0.5 * w


def p2_line_basis(t):
    """Quadratic Lagrange basis on ``[0,1]`` with nodes ``0, 1/2, 1`` (end, mid, end)."""
    t = np.asarray(t, dtype=float)
    return np.stack([(1 - t) * (1 - 2 * t), 4 * t * (1 - t), t * (2 * t - 1)], axis=-1)


def p2_line_grad(t):
    t = np.asarray(t, dtype=float)
    return np.stack([4 * t - 3, 4 - 8 * t, 4 * t - 1], axis=-1)


# ---------------------------------------------------------------- mesh


@dataclass(frozen=True, eq=False)
class Mesh:
    """Structured quadratic triangulation.

    ``nodes`` holds the quadratic node grid ``(2n+1) x (2m+1)`` in row-major
    order (row index ``j`` from the bottom). ``tri`` lists 6 node ids per
    element; ``ptri`` the 3 pressure (vertex) ids in the coarse vertex grid.
    """

    nodes: np.ndarray
    tri: np.ndarray
    ptri: np.ndarray
    pnodes: np.ndarray  # node id of each pressure vertex
    n: int
    m: int
    ell: float
    depth: float
    grading: float
    quad_order: int = 3
    tags: dict = field(default_factory=dict)
    curved_top: bool = True

    @property
    def nx(self) -> int:
        return 2 * self.n + 1

    @property
    def ny(self) -> int:
        return 2 * self.m + 1

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_pressure(self) -> int:
        return self.pnodes.size

    @property
    def n_elements(self) -> int:
        return self.tri.shape[0]

    def node_id(self, i, j):
        return j * self.nx + i

    @property
    def surface_nodes(self) -> np.ndarray:
        return self.tags["sigma"]

    @property
    def corner_ids(self) -> np.ndarray:
        s = self.tags["sigma"]
        return np.array([s[0], s[-1]])

    @property
    def corner_points(self) -> np.ndarray:
        return self.nodes[self.corner_ids]

    @property
    def surface_x(self) -> np.ndarray:
        return self.nodes[self.tags["sigma"], 0]

    @property
    def h_surface(self) -> float:
        return self.ell / self.n

    def boundary_edges(self, tag):
        """Quadratic boundary edges ``(k, 3)`` ordered (end, mid, end) along ``tag``."""
        ids = self.tags[tag]
        k = (ids.size - 1) // 2
        return np.stack([ids[0:-1:2], ids[1::2], ids[2::2]], axis=1)[:k]

    @cached_property
    def elem_geom(self) -> "ElementGeometry":
        return element_geometry(self, self.quad_order)

    def areas(self) -> np.ndarray:
        g = self.elem_geom
        return g.wdet.sum(axis=1)


@dataclass(frozen=True, eq=False)
class ElementGeometry:
    """Per-element quadrature data of the isoparametric map."""

    ref_points: np.ndarray  # (nq, 2)
    ref_weights: np.ndarray  # (nq,)
    points: np.ndarray  # (ne, nq, 2) physical quadrature points
    wdet: np.ndarray  # (ne, nq) weight * |det F|
    grads: np.ndarray  # (ne, nq, 6, 2) physical gradients of the P2 basis
    phi2: np.ndarray  # (nq, 6) P2 values
    phi1: np.ndarray  # (nq, 3) P1 values
    detF: np.ndarray  # (ne, nq)


def _iso_jacobian(X, dref):
    """``F[e,q] = sum_a X[e,a] (x) dref[q,a]`` for element coordinates ``X (ne,6,2)``."""
    return np.einsum("eai,qaj->eqij", X, dref)


def element_geometry(mesh: Mesh, order: int = 3) -> ElementGeometry:
    pts, w = triangle_rule(order)
    phi2 = p2_basis(pts[:, 0], pts[:, 1])
    dref = p2_grad(pts[:, 0], pts[:, 1])
    X = mesh.nodes[mesh.tri]
    F = _iso_jacobian(X, dref)
    det = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    if np.any(det <= 0):
        raise MeshError("degenerate or inverted element (non-positive Jacobian)")
    Finv = np.empty_like(F)
    Finv[..., 0, 0] = F[..., 1, 1] / det
    Finv[..., 1, 1] = F[..., 0, 0] / det
    Finv[..., 0, 1] = -F[..., 0, 1] / det
    Finv[..., 1, 0] = -F[..., 1, 0] / det
    # grad_x psi = F^{-T} grad_ref psi
    grads = np.einsum("eqji,qaj->eqai", Finv, dref)
    points = np.einsum("qa,eai->eqi", phi2, X)
    return ElementGeometry(
        ref_points=pts,
        ref_weights=w,
        points=points,
        wdet=det * w[None, :],
        grads=grads,
        phi2=phi2,
        phi1=p1_basis(pts[:, 0], pts[:, 1]),
        detF=det,
    )


def physical_gradients_at(mesh: Mesh, ref_pts):
    """Physical P2 gradients at arbitrary reference points ``(ne, np, 6, 2)``."""
    dref = p2_grad(ref_pts[:, 0], ref_pts[:, 1])
    X = mesh.nodes[mesh.tri]
    F = _iso_jacobian(X, dref)
    det = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    Finv = np.empty_like(F)
    Finv[..., 0, 0] = F[..., 1, 1] / det
    Finv[..., 1, 1] = F[..., 0, 0] / det
    Finv[..., 0, 1] = -F[..., 0, 1] / det
    Finv[..., 1, 0] = -F[..., 1, 0] / det
    return np.einsum("eqji,qaj->eqai", Finv, dref)


def iso_derivatives(X, ref_pts):
    """Values, physical gradients and Hessians of the quadratic basis on isoparametric elements.

    ``X`` holds element node coordinates ``(ne, 6, 2)``; ``ref_pts`` is
    ``(np, 2)`` shared by all elements or ``(ne, np, 2)`` per element.
    Returns ``(points, phi, grads, hess, det)`` with ``hess[e, q, a] =
    F^{-T} (H_a - sum_i (d_i phi_a) H x_i) F^{-1}``.
    """
    ref_pts = np.asarray(ref_pts, dtype=float)
    if ref_pts.ndim == 2:
        ref_pts = np.broadcast_to(ref_pts, (X.shape[0],) + ref_pts.shape)
    xi, eta = ref_pts[..., 0], ref_pts[..., 1]
    phi = p2_basis(xi, eta)  # (ne, nq, 6)
    dref = p2_grad(xi, eta)  # (ne, nq, 6, 2)
    F = np.einsum("eai,eqaj->eqij", X, dref)
    det = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    Finv = np.empty_like(F)
    Finv[..., 0, 0] = F[..., 1, 1] / det
    Finv[..., 1, 1] = F[..., 0, 0] / det
    Finv[..., 0, 1] = -F[..., 0, 1] / det
    Finv[..., 1, 0] = -F[..., 1, 0] / det
    grads = np.einsum("eqaj,eqjm->eqam", dref, Finv)
    H = p2_hessian()
    Hx = np.einsum("eai,ajl->eijl", X, H)  # reference Hessian of each coordinate
    T = H[None, None] - np.einsum("eqai,eijl->eqajl", grads, Hx)
    hess = np.einsum("eqjm,eqajl,eqln->eqamn", Finv, T, Finv)
    points = np.einsum("eqa,eai->eqi", phi, X)
    return points, phi, grads, hess, det


def duffy_jacobi_rule(n: int, vertex: int, beta: float = 0.0):
    """Collapsed rule on the unit triangle for ``int f(x) r^beta`` with ``r`` the distance to ``vertex``.

    Returns reference points ``(n*n, 2)``, weights, and the collapse
    coordinate ``1 - u`` per point. The weights already contain the factor
    ``(1 - u)^{1 + beta}``; the caller multiplies by ``(r / (1 - u))^beta``.
    """
    if beta <= -2:
        raise ValueError("weight exponent must exceed -2")
    V = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    a, b = [k for k in range(3) if k != vertex]
    alpha = 1.0 + beta
    t, wt = roots_jacobi(n, alpha, 0.0)
    u = 0.5 * (t + 1.0)
    wu = wt * 2.0 ** (-alpha - 1.0)
    v, wv = roots_legendre(n)
    v = 0.5 * (v + 1.0)
    wv = 0.5 * wv
    U, Vv = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv).ravel()
    U, Vv = U.ravel(), Vv.ravel()
    base = V[a] - V[vertex] + Vv[:, None] * (V[b] - V[a])
    P = V[vertex] + (1.0 - U)[:, None] * base
    return P, W, 1.0 - U


def graded_levels(m: int, grading: float) -> np.ndarray:
    """Vertical parameter ``s in [0,1]`` at the ``2m+1`` quadratic rows, clustered at ``s = 1``."""
    tv = np.linspace(0.0, 1.0, m + 1)
    sv = 1.0 - (1.0 - tv) ** grading
    s = np.empty(2 * m + 1)
    s[0::2] = sv
    # midpoint rows sit halfway between vertex rows so elements stay straight in s
    s[1::2] = 0.5 * (sv[:-1] + sv[1:])
    return s


def _structured(n, m, ell, x2_of, grading, depth, quad_order, curved_top):
    nx, ny = 2 * n + 1, 2 * m + 1
    x1 = np.linspace(-ell, ell, nx)
    s = graded_levels(m, grading)
    X1, S = np.meshgrid(x1, s, indexing="xy")  # (ny, nx)
    X2 = x2_of(X1, S)
    nodes = np.column_stack([X1.ravel(), X2.ravel()])

    def nid(i, j):
        return j * nx + i

    tris, ptris = [], []
    pid = lambda i, j: (j // 2) * (n + 1) + i // 2
    for jc in range(m):
        for ic in range(n):
            i0, j0 = 2 * ic, 2 * jc
            a, b, c, d = (i0, j0), (i0 + 2, j0), (i0 + 2, j0 + 2), (i0, j0 + 2)
            mid = lambda p, q: ((p[0] + q[0]) // 2, (p[1] + q[1]) // 2)
            if ic < n / 2:
                split = [(a, b, c), (a, c, d)]
            else:
                split = [(a, b, d), (b, c, d)]
            for v0, v1, v2 in split:
                verts = [v0, v1, v2, mid(v0, v1), mid(v1, v2), mid(v2, v0)]
                tris.append([nid(*v) for v in verts])
                ptris.append([pid(*v) for v in (v0, v1, v2)])
    tri = np.array(tris, dtype=np.int64)
    ptri = np.array(ptris, dtype=np.int64)
    pnodes = np.array([nid(2 * i, 2 * j) for j in range(m + 1) for i in range(n + 1)], dtype=np.int64)
    tags = {
        "sigma": np.array([nid(i, ny - 1) for i in range(nx)]),
        "left": np.array([nid(0, j) for j in range(ny)]),
        "right": np.array([nid(nx - 1, j) for j in range(ny)]),
        "bottom": np.array([nid(i, 0) for i in range(nx)]),
    }
    mesh = Mesh(
        nodes=nodes,
        tri=tri,
        ptri=ptri,
        pnodes=pnodes,
        n=n,
        m=m,
        ell=ell,
        depth=depth,
        grading=grading,
        quad_order=quad_order,
        tags=tags,
        curved_top=curved_top,
    )
    if np.any(mesh.areas() <= 0):
        raise MeshError("degenerate triangle (area <= 0)")
    return mesh


def default_grading(delta_omega: float) -> float:
    """Smallest admissible grading ``>= 1/(1 - delta_omega)``, never below 1."""
    return max(1.0, 1.0 / (1.0 - delta_omega))


def build_mesh(equilibrium, n_surface: int, depth: float = 1.0, grading: float | None = None, m: int | None = None, quad_order: int = 3) -> Mesh:
    """Triangulate ``{-ell < x1 < ell, -depth < x2 < zeta0(x1)}``.

    ``n_surface`` cells span the free surface uniformly (the surface grid must
    stay uniform for the spectral extension); rows are graded toward the free
    surface and hence toward both contact points with exponent ``grading``.
    """
    if n_surface < 8:
        raise MeshError("n_surface must be >= 8")
    if depth <= 0:
        raise MeshError("depth must be positive")
    if grading is None:
        grading = default_grading(equilibrium.delta_omega)
    if grading < 1:
        raise MeshError("grading must be >= 1")
    ell = equilibrium.params.ell
    if m is None:
        # roughly square cells: the vertical extent is max(zeta0) + depth
        height = float(np.max(equilibrium.zeta0)) + depth
        m = max(4, int(np.ceil(n_surface * height / (2.0 * ell))))

    def x2_of(X1, S):
        z0 = equilibrium.interp(X1.ravel())[0].reshape(X1.shape)
        return -depth + S * (z0 + depth)

    return _structured(n_surface, m, ell, x2_of, grading, depth, quad_order, True)


def rectangle_mesh(n: int, m: int, ell: float = 1.0, top: float = 0.0, depth: float = 1.0, grading: float = 1.0, quad_order: int = 3) -> Mesh:
    """Structured mesh of ``(-ell, ell) x (-depth, top)`` with the same layout as ``build_mesh``."""

    def x2_of(X1, S):
        return -depth + S * (top + depth)

    return _structured(n, m, ell, x2_of, grading, depth, quad_order, False)
