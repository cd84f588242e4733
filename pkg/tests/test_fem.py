from math import factorial

import numpy as np
import pytest
from scipy import integrate

from contact_stokes.equilibrium import PhysicalParams, build_equilibrium
from contact_stokes.fem import (
    P2_NODES,
    MeshError,
    build_mesh,
    default_grading,
    duffy_jacobi_rule,
    graded_levels,
    iso_derivatives,
    line_rule,
    p2_basis,
    p2_grad,
    rectangle_mesh,
    triangle_rule,
)


def monomial_integral(a, b):
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_triangle_rule_is_exact_to_degree_2n_minus_1(n):
    pts, w = triangle_rule(n)
    for a in range(2 * n):
        for b in range(2 * n - a):
            got = np.sum(w * pts[:, 0] ** a * pts[:, 1] ** b)
            assert got == pytest.approx(monomial_integral(a, b), rel=1e-13)


def test_line_rule():
    t, w = line_rule(4)
    assert np.sum(w * t**7) == pytest.approx(1 / 8, rel=1e-14)


def test_p2_basis_is_nodal_and_gradient_matches_differences():
    assert np.allclose(p2_basis(P2_NODES[:, 0], P2_NODES[:, 1]), np.eye(6), atol=1e-15)
    x, y, h = 0.21, 0.33, 1e-6
    g = p2_grad(np.array([x]), np.array([y]))[0]
    gx = (p2_basis(x + h, y) - p2_basis(x - h, y)) / (2 * h)
    gy = (p2_basis(x, y + h) - p2_basis(x, y - h)) / (2 * h)
    assert np.allclose(g[:, 0], gx, atol=1e-9)
    assert np.allclose(g[:, 1], gy, atol=1e-9)


@pytest.mark.parametrize("vertex", [0, 1, 2])
@pytest.mark.parametrize("beta", [-1.2, 0.0, 0.7, 2.0])
def test_duffy_jacobi_rule_integrates_distance_powers(vertex, beta):
    V = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    # (r / (1 - u))^beta is smooth but not polynomial along the far edge
    P, W, one_minus_u = duffy_jacobi_rule(16, vertex, beta)
    r = np.linalg.norm(P - V[vertex], axis=1)
    f = 1.0 + P[:, 0] ** 2 - P[:, 1]
    got = np.sum(W * f * (r / one_minus_u) ** beta)

    # reference: rays from the vertex, radial weight t^(1+beta) handled by QUADPACK
    a, b = [k for k in range(3) if k != vertex]
    edge = V[b] - V[a]

    def ray(s):
        d = V[a] + s * edge - V[vertex]
        jac = abs(d[0] * edge[1] - d[1] * edge[0]) * np.hypot(*d) ** beta
        g = lambda t: 1.0 + (V[vertex, 0] + t * d[0]) ** 2 - (V[vertex, 1] + t * d[1])
        inner, _ = integrate.quad(g, 0, 1, weight="alg", wvar=(1 + beta, 0), epsabs=1e-14)
        return jac * inner

    ref, _ = integrate.quad(ray, 0, 1, epsabs=1e-13, epsrel=1e-13)
    assert got == pytest.approx(ref, rel=1e-9)


def test_duffy_rule_rejects_non_integrable_weight():
    with pytest.raises(ValueError):
        duffy_jacobi_rule(4, 0, -2.0)


def curved_element():
    X = np.array([[0.0, 0.0], [1.0, 0.1], [0.1, 0.9], [0.5, -0.05], [0.62, 0.55], [0.02, 0.45]])
    return X[None]


def test_iso_derivatives_reproduce_coordinates_on_curved_elements():
    X = curved_element()
    pts, _ = triangle_rule(4)
    points, phi, grads, hess, det = iso_derivatives(X, pts)
    assert np.all(det > 0)
    # coordinates lie in the isoparametric space: gradient identity, Hessian zero
    assert np.allclose(np.einsum("eqam,ai->eqim", grads, X[0]), np.eye(2), atol=1e-13)
    assert np.abs(np.einsum("eqamn,ai->eqimn", hess, X[0])).max() < 1e-12
    assert np.allclose(np.einsum("eqa,ai->eqi", phi, X[0]), points, atol=1e-15)


def test_iso_hessian_matches_finite_differences_of_the_mapped_basis():
    X = curved_element()
    ref = np.array([[0.3, 0.25]])
    points, phi, grads, hess, _ = iso_derivatives(X, ref)
    x0 = points[0, 0]

    # physical derivatives by differencing the gradients along physical directions
    def grad_at(x):
        # invert the map by Newton iteration
        s = ref[0].copy()
        for _ in range(30):
            p, _, _, _, _ = iso_derivatives(X, s[None])
            F = np.einsum("ai,aj->ij", X[0], p2_grad(s[:1], s[1:])[0])
            s = s - np.linalg.solve(F, p[0, 0] - x)
        return iso_derivatives(X, s[None])[2][0, 0]

    h = 1e-5
    for m in range(2):
        e = np.zeros(2)
        e[m] = h
        fd = (grad_at(x0 + e) - grad_at(x0 - e)) / (2 * h)
        assert np.allclose(fd, hess[0, 0, :, :, m], atol=1e-6)


def test_iso_derivatives_accept_per_element_points():
    X = np.repeat(curved_element(), 2, axis=0)
    pts = np.stack([triangle_rule(2)[0], triangle_rule(2)[0][::-1]])
    out = iso_derivatives(X, pts)
    assert out[2].shape == (2, 4, 6, 2)
    assert np.allclose(out[0][1], out[0][0][::-1])


def test_rectangle_mesh_area_tags_and_layout():
    mesh = rectangle_mesh(6, 4, ell=1.5, top=0.2, depth=1.0, grading=2.0)
    assert mesh.areas().sum() == pytest.approx(3.0 * 1.2, rel=1e-13)
    assert mesh.n_elements == 2 * 6 * 4
    assert mesh.n_pressure == 7 * 5
    assert np.allclose(mesh.nodes[mesh.tags["sigma"], 1], 0.2)
    assert np.allclose(mesh.nodes[mesh.tags["bottom"], 1], -1.0)
    assert np.allclose(mesh.corner_points, [[-1.5, 0.2], [1.5, 0.2]])
    # every pressure vertex coincides with a velocity vertex
    assert np.allclose(mesh.nodes[mesh.pnodes][mesh.ptri], mesh.nodes[mesh.tri[:, :3]])


def test_graded_levels_cluster_toward_the_surface():
    s = graded_levels(8, 3.0)
    assert s[0] == 0.0 and s[-1] == 1.0
    assert np.all(np.diff(s) > 0)
    gaps = np.diff(s[0::2])
    assert gaps[-1] < gaps[0] / 10


def test_build_mesh_follows_the_equilibrium_surface():
    eq = build_equilibrium(PhysicalParams(gamma_jump=0.5), n_samples=257)
    mesh = build_mesh(eq, 16)
    top = mesh.nodes[mesh.tags["sigma"]]
    assert np.allclose(top[:, 1], eq.interp(top[:, 0])[0], atol=1e-12)
    assert mesh.grading == default_grading(eq.delta_omega)
    assert np.all(mesh.areas() > 0)


@pytest.mark.parametrize("kw", [dict(n_surface=4), dict(n_surface=16, depth=0.0), dict(n_surface=16, grading=0.5)])
def test_build_mesh_rejects_bad_input(kw):
    eq = build_equilibrium(PhysicalParams(gamma_jump=0.5), n_samples=257)
    with pytest.raises(MeshError):
        build_mesh(eq, **kw)


def test_default_grading_is_never_below_one():
    assert default_grading(0.0) == 1.0
    assert default_grading(0.5) == 2.0
