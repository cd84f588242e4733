"""Extension of the surface perturbation into the fluid and the flattening coefficients.

The surface grid is uniform, so the even reflection of ``eta`` to a
``4 ell``-periodic function is represented exactly by a DCT-I cosine series.
With ``theta = pi (x1 + ell) / (2 ell)`` and ``alpha = pi (x2 - zeta0(x1)) / (2 ell)``
each mode ``cos(k theta)`` extends as ``exp(k alpha) cos(k theta)``, i.e. the
series is the real part of the power series ``F(z) = sum_k c_k z^k`` at
``z = exp(alpha + i theta)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft

from . import core
from .fem import Mesh

# Quadrature points of curved top elements may sit O(h^3) above the graph of zeta0.
_ALPHA_SLACK = 1e-3


class GeometryError(ValueError):
    pass


def cosine_coefficients(eta_samples) -> np.ndarray:
    """Coefficients ``c_k`` with ``eta_j = sum_k c_k cos(pi k j / N)`` (DCT-I)."""
    eta = np.asarray(eta_samples, dtype=float)
    N = eta.size - 1
    if N < 1:
        raise GeometryError("need at least two surface samples")
    y = fft.dct(eta, type=1)
    c = y / N
    c[0] *= 0.5
    c[-1] *= 0.5
    return c


@dataclass(frozen=True, eq=False)
class SpectralExtension:
    """Poisson-type extension ``eta_bar`` of surface samples on a uniform grid."""

    coeffs: np.ndarray
    ell: float
    equilibrium: object

    @classmethod
    def from_samples(cls, eta_samples, equilibrium):
        return cls(cosine_coefficients(eta_samples), equilibrium.params.ell, equilibrium)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.coeffs)

    def evaluate(self, x1, x2, zeta=None, dzeta=None, strict: bool = True):
        """Return ``(eta_bar, d1 eta_bar, d2 eta_bar)`` at points ``(x1, x2)``.

        ``zeta``/``dzeta`` may pass precomputed ``zeta0``, ``zeta0'`` at ``x1``.
        """
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        if zeta is None or dzeta is None:
            zeta, dzeta, _ = self.equilibrium.interp(x1)
        k0 = math.pi / (2.0 * self.ell)
        alpha = k0 * (x2 - zeta)
        slack = 1e-12 if strict else _ALPHA_SLACK
        if np.any(alpha > slack):
            raise GeometryError("point above the graph of zeta0 (invalid mesh)")
        if strict:
            alpha = np.minimum(alpha, 0.0)
        theta = k0 * (x1 + self.ell)
        if self.is_zero:
            z = np.zeros_like(alpha)
            return z, z.copy(), z.copy()
        F, Gr, Gi = core.mode_sum(self.coeffs, alpha, theta)
        shape = alpha.shape
        d2 = k0 * Gr
        d1 = k0 * (-Gi - dzeta.ravel() * Gr)
        return F.reshape(shape), d1.reshape(shape), d2.reshape(shape)

    def trace(self, x1):
        """``(eta, eta')`` of the cosine series on the free surface."""
        x1 = np.asarray(x1, dtype=float)
        k0 = math.pi / (2.0 * self.ell)
        theta = k0 * (x1 + self.ell)
        F, Gr, Gi = core.mode_sum(self.coeffs, np.zeros_like(theta), theta)
        return F.reshape(x1.shape), (-k0 * Gi).reshape(x1.shape)


def poisson_extend(eta_samples, equilibrium, mesh: Mesh) -> np.ndarray:
    """Extension ``eta_bar`` at every mesh node."""
    ext = SpectralExtension.from_samples(eta_samples, equilibrium)
    return ext.evaluate(mesh.nodes[:, 0], mesh.nodes[:, 1])[0]


def _blend(t):
    """Smooth monotone step ``S(t) = e^{-1/t} / (e^{-1/t} + e^{-1/(1-t)})`` and ``S'``."""
    t = np.asarray(t, dtype=float)
    S = np.where(t >= 1.0, 1.0, 0.0)
    dS = np.zeros_like(t)
    mid = (t > 0.0) & (t < 1.0)
    tm = t[mid]
    # S = 1 / (1 + r) with r = e^{1/t - 1/(1-t)}; r overflows harmlessly to inf near t = 0
    with np.errstate(over="ignore"):
        r = np.exp(1.0 / tm - 1.0 / (1.0 - tm))
    Sm = 1.0 / (1.0 + r)
    S[mid] = Sm
    dS[mid] = Sm * (1.0 - Sm) * (1.0 / tm**2 + 1.0 / (1.0 - tm) ** 2)
    return S, dS


def cutoff_phi(z, min_zeta0: float, derivative: bool = False):
    """``phi(z) = z S(t)``, ``t = (z - m/4)/(m/4)``, with a smooth monotone step ``S``.

    ``phi = 0`` below ``m/4`` and ``phi = z`` above ``m/2``.
    """
    z = np.asarray(z, dtype=float)
    q = 0.25 * min_zeta0
    S, dS = _blend((z - q) / q)
    phi = z * S
    if not derivative:
        return phi
    return phi, S + z * dS / q


def _fields_at(ext: SpectralExtension, x1, x2, strict: bool):
    eq = ext.equilibrium
    zeta, dzeta, _ = eq.interp(x1)
    eb, d1, d2 = ext.evaluate(x1, x2, zeta, dzeta, strict=strict)
    phi, dphi = cutoff_phi(x2, eq.min_zeta0, derivative=True)
    W = phi / zeta
    A = W * d1 - (W / zeta) * dzeta * eb
    J = 1.0 + W * d2 + dphi * eb / zeta
    return {"eta_bar": eb, "d1": d1, "d2": d2, "W": W, "A": A, "J": J, "zeta": zeta, "dzeta": dzeta}


def acal_from(A, J):
    """``Acal = [[1, -A K], [0, K]]`` with ``K = 1/J``."""
    K = 1.0 / J
    out = np.zeros(np.shape(A) + (2, 2))
    out[..., 0, 0] = 1.0
    out[..., 0, 1] = -A * K
    out[..., 1, 1] = K
    return out


@dataclass(frozen=True, eq=False)
class GeometryFields:
    """Coefficient fields on mesh nodes, at element quadrature points and on the surface."""

    eta_bar: np.ndarray
    W_field: np.ndarray
    A_field: np.ndarray
    J_field: np.ndarray
    K_field: np.ndarray
    Acal: np.ndarray  # (n_nodes, 2, 2)
    grad_Phi: np.ndarray  # (n_nodes, 2, 2)
    M_mat: np.ndarray  # (n_nodes, 2, 2)
    Phi: np.ndarray  # (n_nodes, 2)
    N_vec: np.ndarray  # (n_surface, 2)
    N0_vec: np.ndarray
    T_vec: np.ndarray
    deta_surface: np.ndarray  # spectral trace derivative at surface nodes
    A_q: np.ndarray  # (ne, nq)
    J_q: np.ndarray
    Acal_q: np.ndarray  # (ne, nq, 2, 2)
    extension: SpectralExtension

    @property
    def is_identity(self) -> bool:
        return self.extension.is_zero


def coefficient_fields(eta_samples, equilibrium, mesh: Mesh) -> GeometryFields:
    """Build all flattening coefficients for surface samples ``eta`` on ``mesh``."""
    eta = np.asarray(eta_samples, dtype=float)
    if eta.size != mesh.nx:
        raise GeometryError(f"expected {mesh.nx} surface samples, got {eta.size}")
    ext = SpectralExtension.from_samples(eta, equilibrium)
    x1, x2 = mesh.nodes[:, 0], mesh.nodes[:, 1]
    f = _fields_at(ext, x1, x2, strict=True)
    if np.any(f["J"] <= 0):
        raise GeometryError("map degenerate: J <= 0")
    geo = mesh.elem_geom
    pts = geo.points
    fq = _fields_at(ext, pts[..., 0].ravel(), pts[..., 1].ravel(), strict=False)
    Jq = fq["J"].reshape(pts.shape[:2])
    Aq = fq["A"].reshape(pts.shape[:2])
    if np.any(Jq <= 0):
        raise GeometryError("map degenerate: J <= 0")

    grad_Phi = np.zeros((x1.size, 2, 2))
    grad_Phi[:, 0, 0] = 1.0
    grad_Phi[:, 1, 0] = f["A"]
    grad_Phi[:, 1, 1] = f["J"]
    Kf = 1.0 / f["J"]
    s = mesh.surface_nodes
    xs = mesh.nodes[s, 0]
    dz = equilibrium.interp(xs)[1]
    deta = ext.trace(xs)[1]
    N0 = np.column_stack([-dz, np.ones_like(dz)])
    N = N0 - np.column_stack([deta, np.zeros_like(deta)])
    T = np.column_stack([np.ones_like(dz), dz + deta])
    return GeometryFields(
        eta_bar=f["eta_bar"],
        W_field=f["W"],
        A_field=f["A"],
        J_field=f["J"],
        K_field=Kf,
        Acal=acal_from(f["A"], f["J"]),
        grad_Phi=grad_Phi,
        M_mat=Kf[:, None, None] * grad_Phi,
        Phi=np.column_stack([x1, x2 + f["W"] * f["eta_bar"]]),
        N_vec=N,
        N0_vec=N0,
        T_vec=T,
        deta_surface=deta,
        A_q=Aq,
        J_q=Jq,
        Acal_q=acal_from(Aq, Jq),
        extension=ext,
    )


def fields_at_points(fields: GeometryFields, x1, x2) -> dict:
    """Closed-form ``eta_bar``, ``A``, ``J`` and ``W`` at arbitrary points of the closed domain."""
    return _fields_at(fields.extension, np.asarray(x1, dtype=float), np.asarray(x2, dtype=float), strict=False)


def identity_fields(mesh: Mesh, equilibrium) -> GeometryFields:
    return coefficient_fields(np.zeros(mesh.nx), equilibrium, mesh)


def validate_geometry(fields: GeometryFields) -> dict:
    """Small-data gate ``||J - 1||_inf + ||A||_inf <= 1/2`` over nodes and quadrature points."""
    jdev = max(np.abs(fields.J_field - 1).max(), np.abs(fields.J_q - 1).max())
    aw = max(np.abs(fields.A_field).max(), np.abs(fields.A_q).max())
    return {"ok": bool(jdev + aw <= 0.5), "worst_J_dev": float(jdev), "worst_A": float(aw)}


# ---------------------------------------------------------------- discrete identities


_NODE_REF = np.array([[0, 0], [1, 0], [0, 1], [0.5, 0], [0.5, 0.5], [0, 0.5]], dtype=float)


def _nodal_element_gradients(mesh: Mesh, nodal):
    """Gradient of the quadratic interpolant of ``nodal`` at each element's own nodes.

    Returns ``(ne, 6, 2, ...)`` for ``nodal`` of shape ``(n_nodes, ...)``.
    """
    from .fem import physical_gradients_at

    G = physical_gradients_at(mesh, _NODE_REF)  # (ne, 6 points, 6 basis, 2)
    vals = nodal[mesh.tri]  # (ne, 6, ...)
    return np.einsum("epaj,ea...->ep...j", G, vals)


def piola_residual(fields: GeometryFields, mesh: Mesh, method: str = "weak") -> float:
    """Discrete size of ``d_k (J Acal_jk)``, max over interior nodes.

    ``method``:

    ``"weak"``
        ``int J Acal_jk d_k psi_a`` with the quadrature and basis gradients of
        the assembly, scaled by ``int |psi_a|``. This is the form in which the
        identity enters the discrete momentum balance.
    ``"nodal"``
        Element gradients of the quadratic interpolant of ``J Acal`` at element
        nodes, averaged over the elements sharing a node.
    ``"pointwise"``
        Central differences of the closed-form spectral fields at the nodes.
    """
    interior = _interior_mask(mesh)
    if not interior.any():
        return 0.0
    if method == "weak":
        geo = mesh.elem_geom
        JA = fields.J_q[..., None, None] * fields.Acal_q
        loc = np.einsum("eq,eqjk,eqak->eaj", geo.wdet, JA, geo.grads)
        acc = np.zeros((mesh.n_nodes, 2))
        np.add.at(acc, mesh.tri.ravel(), loc.reshape(-1, 2))
        mass = np.zeros(mesh.n_nodes)
        np.add.at(mass, mesh.tri.ravel(), np.einsum("eq,qa->ea", geo.wdet, np.abs(geo.phi2)).ravel())
        val = acc / mass[:, None]
    elif method == "nodal":
        JA = fields.J_field[:, None, None] * fields.Acal
        dJA = _nodal_element_gradients(mesh, JA)  # (ne, 6, 2, 2, 2): [.., j, k, d]
        div = np.einsum("epjkk->epj", dJA)
        acc = np.zeros((mesh.n_nodes, 2))
        cnt = np.zeros(mesh.n_nodes)
        np.add.at(acc, mesh.tri.ravel(), div.reshape(-1, 2))
        np.add.at(cnt, mesh.tri.ravel(), 1.0)
        val = acc / cnt[:, None]
    elif method == "pointwise":
        x1, x2 = mesh.nodes[interior, 0], mesh.nodes[interior, 1]
        ext = fields.extension
        d = 1e-5 * max(mesh.ell, 1.0)
        # J Acal = [[J, -A], [0, 1]]; only the first row can be nonzero
        at = lambda a, b: _fields_at(ext, a, b, strict=False)
        dJ1 = (at(x1 + d, x2)["J"] - at(x1 - d, x2)["J"]) / (2 * d)
        dA2 = (at(x1, x2 + d)["A"] - at(x1, x2 - d)["A"]) / (2 * d)
        return float(np.abs(dJ1 - dA2).max())
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(np.abs(val[interior]).max())


def inverse_transpose_defect(fields: GeometryFields, mesh: Mesh, norm: str = "max") -> float:
    """Size of ``Acal^T grad_h Phi - I`` with ``grad_h Phi`` from the quadratic interpolant of ``Phi``.

    ``norm="max"`` takes the largest entry at element nodes, ``norm="l2"`` the
    Frobenius ``L^2`` norm with the assembly quadrature.
    """
    if norm == "max":
        dPhi = _nodal_element_gradients(mesh, fields.Phi)  # (ne, 6, 2 comp, 2 deriv)
        Ae = fields.Acal[mesh.tri]
        prod = np.einsum("epji,epjk->epik", Ae, dPhi)
        return float(np.abs(prod - np.eye(2)).max())
    if norm == "l2":
        geo = mesh.elem_geom
        dPhi = np.einsum("eqai,eac->eqci", geo.grads, fields.Phi[mesh.tri])
        prod = np.einsum("eqji,eqjk->eqik", fields.Acal_q, dPhi) - np.eye(2)
        return float(np.sqrt(np.einsum("eq,eqik->", geo.wdet, prod**2)))
    raise ValueError(f"unknown norm {norm!r}")


def analytic_inverse_transpose_defect(fields: GeometryFields) -> float:
    """``max |Acal^T grad Phi - I|`` with the exact ``grad Phi = [[1, 0], [A, J]]`` at the nodes."""
    prod = np.einsum("nji,njk->nik", fields.Acal, fields.grad_Phi)
    return float(np.abs(prod - np.eye(2)).max())


def boundary_identity_defect(fields: GeometryFields, mesh: Mesh) -> dict:
    """Defect of ``J Acal nu = N / sqrt(1 + zeta0'^2)`` on the surface and ``= J nu`` on the walls."""
    s = mesh.surface_nodes
    N0 = fields.N0_vec
    nu = N0 / np.linalg.norm(N0, axis=1)[:, None]
    JA = fields.J_field[s, None, None] * fields.Acal[s]
    lhs = np.einsum("nij,nj->ni", JA, nu)
    rhs = fields.N_vec / np.sqrt(1.0 + N0[:, 0:1] ** 2)
    top = float(np.abs(lhs - rhs).max())
    side = 0.0
    for tag, nvec in (("left", (-1.0, 0.0)), ("right", (1.0, 0.0)), ("bottom", (0.0, -1.0))):
        ids = mesh.tags[tag]
        nu_s = np.broadcast_to(np.array(nvec), (ids.size, 2))
        JA = fields.J_field[ids, None, None] * fields.Acal[ids]
        lhs = np.einsum("nij,nj->ni", JA, nu_s)
        side = max(side, float(np.abs(lhs - fields.J_field[ids, None] * nu_s).max()))
    return {"sigma": top, "walls": side}


def _interior_mask(mesh: Mesh) -> np.ndarray:
    mask = np.ones(mesh.n_nodes, dtype=bool)
    for ids in mesh.tags.values():
        mask[ids] = False
    return mask


def export_fields_csv(fields: GeometryFields, mesh: Mesh, path) -> None:
    """Debug dump: one row per node."""
    with open(path, "w", newline="\n") as fh:
        fh.write("node,x1,x2,eta_bar,J,A,K,W\n")
        for i in range(mesh.n_nodes):
            row = (
                mesh.nodes[i, 0],
                mesh.nodes[i, 1],
                fields.eta_bar[i],
                fields.J_field[i],
                fields.A_field[i],
                fields.K_field[i],
                fields.W_field[i],
            )
            fh.write(f"{i}," + ",".join(f"{v:.17g}" for v in row) + "\n")
