import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contact_stokes.fem import build_mesh
from contact_stokes.geometry import (
    GeometryError,
    SpectralExtension,
    analytic_inverse_transpose_defect,
    boundary_identity_defect,
    coefficient_fields,
    cosine_coefficients,
    cutoff_phi,
    fields_at_points,
    identity_fields,
    piola_residual,
    poisson_extend,
    validate_geometry,
)


@pytest.fixture(scope="module")
def mesh16(eq_half):
    return build_mesh(eq_half, 16)


def test_cosine_coefficients_reproduce_the_samples(eq_half):
    rng = np.random.default_rng(3)
    eta = rng.normal(size=33)
    ext = SpectralExtension.from_samples(eta, eq_half)
    x = np.linspace(-1, 1, 33)
    assert np.allclose(ext.trace(x)[0], eta, atol=1e-13)
    j = np.arange(33)
    direct = np.cos(np.pi * np.outer(j, j) / 32) @ cosine_coefficients(eta)
    assert np.allclose(direct, eta, atol=1e-13)


def test_single_mode_extension_and_its_derivatives(eq_half):
    k = 3
    x = np.linspace(-1, 1, 65)
    eta = np.cos(k * np.pi * (x + 1) / 2)
    ext = SpectralExtension.from_samples(eta, eq_half)
    x1 = np.array([-0.4, 0.1, 0.7])
    zeta, dzeta, _ = eq_half.interp(x1)
    x2 = zeta - 0.3
    val, d1, d2 = ext.evaluate(x1, x2)
    k0 = np.pi / 2
    alpha = k0 * (x2 - zeta)
    theta = k0 * (x1 + 1)
    assert np.allclose(val, np.exp(k * alpha) * np.cos(k * theta), atol=1e-13)
    h = 1e-6
    fd1 = (ext.evaluate(x1 + h, x2, strict=False)[0] - ext.evaluate(x1 - h, x2, strict=False)[0]) / (2 * h)
    fd2 = (ext.evaluate(x1, x2 + h)[0] - ext.evaluate(x1, x2 - h)[0]) / (2 * h)
    assert np.allclose(d1, fd1, atol=1e-7)
    assert np.allclose(d2, fd2, atol=1e-7)


def test_extension_rejects_points_above_the_surface(eq_half):
    ext = SpectralExtension.from_samples(np.ones(17), eq_half)
    z = eq_half.interp(np.array([0.0]))[0]
    with pytest.raises(GeometryError):
        ext.evaluate(np.array([0.0]), z + 0.1)


@given(st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=20, deadline=None)
def test_extension_is_linear(eq_half, mesh16, a, b):
    rng = np.random.default_rng(0)
    e1, e2 = rng.normal(size=(2, mesh16.nx))
    lhs = poisson_extend(a * e1 + b * e2, eq_half, mesh16)
    rhs = a * poisson_extend(e1, eq_half, mesh16) + b * poisson_extend(e2, eq_half, mesh16)
    assert np.allclose(lhs, rhs, atol=1e-12 * (1 + abs(a) + abs(b)))


def test_cutoff_profile():
    m = 0.8
    z = np.linspace(-0.5, 2.0, 2001)
    phi, dphi = cutoff_phi(z, m, derivative=True)
    assert np.all(phi[z <= m / 4] == 0.0)
    assert np.allclose(phi[z >= m / 2], z[z >= m / 2])
    inside = (z > 0.2) & (z < 0.4)
    assert np.all(np.diff(phi[inside]) >= 0)
    h = z[1] - z[0]
    fd = np.gradient(phi, h)
    assert np.allclose(fd[1:-1], dphi[1:-1], atol=5e-3)
    # the slope joins 0 and 1 continuously at both ends of the blend
    assert dphi[np.searchsorted(z, m / 4 + 0.01)] < 1e-3
    assert abs(dphi[np.searchsorted(z, m / 2 - 0.01)] - 1.0) < 5e-2
    assert np.abs(np.diff(dphi)).max() < 0.2


def test_identity_fields(eq_half, mesh16):
    f = identity_fields(mesh16, eq_half)
    assert f.is_identity
    assert np.all(f.J_field == 1.0) and np.all(f.A_field == 0.0)
    assert np.allclose(f.Acal, np.eye(2))
    assert np.allclose(f.Phi, mesh16.nodes)
    assert validate_geometry(f)["ok"]
    assert piola_residual(f, mesh16) < 1e-12


def test_map_identities_for_a_small_perturbation(eq_half, mesh16, mode_eta):
    eta = mode_eta(mesh16.surface_x, amp=0.05, k=2)
    f = coefficient_fields(eta, eq_half, mesh16)
    assert not f.is_identity
    assert analytic_inverse_transpose_defect(f) < 1e-14
    b = boundary_identity_defect(f, mesh16)
    assert b["sigma"] < 1e-12 and b["walls"] < 1e-12
    # closed-form fields satisfy d1 J = d2 A up to differencing error
    assert piola_residual(f, mesh16, method="pointwise") < 1e-6
    # the surface moves to zeta0 + eta and the bottom stays put
    s = mesh16.surface_nodes
    assert np.allclose(f.Phi[s, 1] - mesh16.nodes[s, 1], eta, atol=1e-12)
    bottom = mesh16.tags["bottom"]
    assert np.allclose(f.Phi[bottom], mesh16.nodes[bottom])


def test_fields_at_points_agree_with_nodal_fields(eq_half, mesh16, mode_eta):
    f = coefficient_fields(mode_eta(mesh16.surface_x, amp=0.05), eq_half, mesh16)
    pts = mesh16.nodes[::37]
    g = fields_at_points(f, pts[:, 0], pts[:, 1])
    assert np.allclose(g["J"], f.J_field[::37], atol=1e-14)
    assert np.allclose(g["A"], f.A_field[::37], atol=1e-14)


def test_small_data_gate(eq_half, mesh16, mode_eta):
    small = coefficient_fields(mode_eta(mesh16.surface_x, amp=0.02), eq_half, mesh16)
    assert validate_geometry(small)["ok"]
    big = coefficient_fields(mode_eta(mesh16.surface_x, amp=0.2, k=2), eq_half, mesh16)
    gate = validate_geometry(big)
    assert not gate["ok"]
    assert gate["worst_J_dev"] + gate["worst_A"] > 0.5


def test_degenerate_map_raises(eq_half, mesh16, mode_eta):
    with pytest.raises(GeometryError, match="J <= 0"):
        coefficient_fields(mode_eta(mesh16.surface_x, amp=0.3, k=3), eq_half, mesh16)


def test_wrong_sample_count_raises(eq_half, mesh16):
    with pytest.raises(GeometryError):
        coefficient_fields(np.zeros(mesh16.nx + 1), eq_half, mesh16)


def test_unknown_methods_raise(eq_half, mesh16):
    f = identity_fields(mesh16, eq_half)
    f2 = coefficient_fields(np.full(mesh16.nx, 1e-3), eq_half, mesh16)
    with pytest.raises(ValueError):
        piola_residual(f2, mesh16, method="bogus")
    assert f.extension.is_zero
