"""Pure NumPy reference implementation of the hot kernels.

Mirrors ``_core.pyx`` exactly; selected automatically when the compiled
extension is not available.
"""
from __future__ import annotations

import numpy as np

_CHUNK = 4096


def mode_sum(c, alpha, theta):
    """Evaluate ``F = sum_k c_k z^k`` and ``G = sum_k k c_k z^k`` at ``z = exp(alpha + i theta)``.

    Returns ``(Re F, Re G, Im G)``.
    """
    c = np.ascontiguousarray(c, dtype=float)
    alpha = np.ascontiguousarray(alpha, dtype=float).ravel()
    theta = np.ascontiguousarray(theta, dtype=float).ravel()
    k = np.arange(c.size, dtype=float)
    F = np.empty_like(alpha)
    Gr = np.empty_like(alpha)
    Gi = np.empty_like(alpha)
    for s in range(0, alpha.size, _CHUNK):
        a = alpha[s : s + _CHUNK, None]
        t = theta[s : s + _CHUNK, None]
        mag = np.exp(a * k) * c
        cos = np.cos(t * k)
        sin = np.sin(t * k)
        F[s : s + _CHUNK] = (mag * cos).sum(axis=1)
        Gr[s : s + _CHUNK] = (mag * cos) @ k
        Gi[s : s + _CHUNK] = (mag * sin) @ k
    return F, Gr, Gi


def local_stokes(grads, wdet, acal, jac, phi1, mu):
    """Element matrices of the transformed viscous form and divergence.

    Parameters
    ----------
    grads : (ne, nq, 6, 2) physical gradients of the quadratic basis
    wdet : (ne, nq) quadrature weight times map determinant
    acal : (ne, nq, 2, 2) coefficient matrix field
    jac : (ne, nq) Jacobian field ``J``
    phi1 : (nq, 3) linear basis values
    mu : viscosity

    Returns
    -------
    K : (ne, 12, 12) with local dof ``c*6 + a``
    D : (ne, 3, 12)
    """
    w = wdet * jac
    g = np.einsum("eqij,eqaj->eqai", acal, grads)
    ne = g.shape[0]
    GG = np.einsum("eq,eqai,eqbi->eab", w, g, g)
    K = mu * np.einsum("eq,eqad,eqbc->ecadb", w, g, g)
    for c in range(2):
        K[:, c, :, c, :] += mu * GG
    D = np.einsum("eq,qp,eqac->epca", w, phi1, g)
    return K.reshape(ne, 12, 12), D.reshape(ne, 3, 12)
