import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contact_stokes.equilibrium import (
    EquilibriumError,
    PhysicalParams,
    build_equilibrium,
    compute_C,
    critical_weight,
    energy_functional,
    equilibrium_residual,
    export_profile_csv,
    h_function,
    mean_curvature,
    read_profile_csv,
    xi_inverse,
    xi_map,
)

# C for g = sigma = ell = 1, [[gamma]] = 0.5, from 60-digit arbitrary precision root finding
C_ORACLE = 1.08953276384971849651779


def test_C_oracle():
    C = compute_C(PhysicalParams(gamma_jump=0.5))
    assert abs(C - C_ORACLE) < 1e-12


def test_C_oracle_independent_mpmath():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 30
    zm = mpmath.asin(mpmath.mpf("0.5"))
    h = lambda r: mpmath.quad(lambda p: mpmath.cos(p) / mpmath.sqrt(r - mpmath.cos(p)), [0, zm])
    root = mpmath.findroot(lambda r: h(r) - mpmath.sqrt(2), 1.09)
    assert abs(float(root) - C_ORACLE) < 1e-15


def test_flat_branch():
    eq = build_equilibrium(PhysicalParams(gamma_jump=0.0, m_top=3.0))
    assert eq.flat and eq.c_const is None
    assert np.allclose(eq.zeta0, 1.5)
    assert eq.omega == pytest.approx(math.pi / 2)
    assert eq.delta_omega == 0.0
    assert max(equilibrium_residual(eq).values()) <= 1e-12


@pytest.mark.parametrize("gamma", [-0.8, -0.3, 0.3, 0.8])
def test_residuals_and_young(gamma):
    eq = build_equilibrium(PhysicalParams(gamma_jump=gamma))
    res = equilibrium_residual(eq)
    assert max(res.values()) <= 1e-8
    assert abs(math.cos(eq.theta_eq) + gamma) <= 1e-8
    assert np.allclose(eq.zeta0, eq.zeta0[::-1], atol=1e-13)


def test_wetting_sign_convention():
    up = build_equilibrium(PhysicalParams(gamma_jump=0.5))
    down = build_equilibrium(PhysicalParams(gamma_jump=-0.5))
    # a wetting wall pulls the surface up at the contact points
    assert up.zeta0[0] > up.zeta0[up.x.size // 2]
    assert down.zeta0[0] < down.zeta0[down.x.size // 2]
    assert up.omega < math.pi / 2 < down.omega


def test_critical_weight_examples():
    assert critical_weight(math.pi / 2) == 0.0
    assert critical_weight(3 * math.pi / 4) == pytest.approx(2.0 / 3.0)


@given(st.floats(-0.99, 0.99))
@settings(max_examples=25, deadline=None)
def test_xi_round_trip(s):
    p = PhysicalParams(gamma_jump=0.4)
    C = compute_C(p)
    x = s * p.ell
    z = xi_inverse(x, C, p)
    assert abs(xi_map(z, C, p) - x) < 1e-12


def test_xi_maps_onto_the_channel():
    p = PhysicalParams(gamma_jump=0.6)
    C = compute_C(p)
    assert float(xi_map(p.z_max, C, p)) == pytest.approx(p.ell, abs=1e-10)
    assert h_function(C, p) == pytest.approx(p.ell * math.sqrt(2 * p.g / p.sigma), abs=1e-10)


def test_profile_matches_interpolant(eq_half):
    x = np.linspace(-1, 1, 37)
    exact = eq_half.profile(x)
    fast = eq_half.interp(x)
    for a, b in zip(exact, fast):
        assert np.abs(a - b).max() < 1e-9


def test_mean_curvature_of_a_circle_arc():
    R = 2.0
    x = np.linspace(-1, 1, 801)
    z = -np.sqrt(R * R - x * x)
    h = x[1] - x[0]
    err = np.abs(mean_curvature(z, h, dzeta=x / -z) - 1.0 / R)
    # the one-sided end stencils lose about two digits
    assert err[2:-2].max() < 1e-9
    assert err.max() < 1e-8
    H = mean_curvature(z, h)
    assert np.abs(H - 1.0 / R)[4:-4].max() < 1e-9
    assert np.abs(H - 1.0 / R).max() < 1e-6


@pytest.mark.parametrize("kw", [dict(gamma_jump=1.0), dict(g=0.0), dict(gamma_jump=0.5, m_top=-1.0)])
def test_invalid_parameters(kw):
    with pytest.raises(EquilibriumError):
        PhysicalParams(**kw)


def test_insufficient_mass_and_spill():
    with pytest.raises(EquilibriumError, match="insufficient mass"):
        build_equilibrium(PhysicalParams(gamma_jump=-0.9, m_top=0.01))
    with pytest.raises(EquilibriumError, match="spills"):
        build_equilibrium(PhysicalParams(gamma_jump=0.5, wall_height=1.0))


def test_energy_minimal_against_perturbations(eq_half):
    p = eq_half.params
    I0 = energy_functional(eq_half.zeta0, p, dzeta=eq_half.dzeta0)
    x = eq_half.x
    for k in (1, 2, 3):
        for a in (1e-3, -1e-2):
            psi = a * np.cos(k * np.pi * (x + 1) / 2)
            dpsi = -a * k * np.pi / 2 * np.sin(k * np.pi * (x + 1) / 2)
            assert energy_functional(eq_half.zeta0 + psi, p, dzeta=eq_half.dzeta0 + dpsi) > I0


def test_profile_csv_round_trip(tmp_path, eq_half):
    path = tmp_path / "profile.csv"
    export_profile_csv(eq_half, path)
    data = read_profile_csv(path)
    assert np.array_equal(data["zeta0"], eq_half.zeta0)
    assert np.array_equal(data["x"], eq_half.x)
    assert b"\r" not in path.read_bytes()
